#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "densemtl/losses.hpp"

namespace densemtl {

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
};

/// One image with aligned labels for every task.
struct Sample {
  torch::Tensor image;    ///< float32 [3, H, W] in [0, 1]
  torch::Tensor seg;      ///< int64 [H, W] class ids (kIgnoreLabel allowed)
  torch::Tensor depth;    ///< float32 [H, W] meters, strictly positive
  torch::Tensor normals;  ///< float32 [3, H, W] unit vectors facing the camera
  torch::Tensor edges;    ///< uint8 [H, W] in {0, 1}
  Intrinsics intrinsics;

  int64_t height() const { return seg.size(0); }
  int64_t width() const { return seg.size(1); }
};

/// Pixel-wise normals of a z-depth map [H, W]. Each pixel is unprojected with
/// the intrinsics; the four cross products of consecutive neighbour pairs
/// (right/down, down/left, left/up, up/right) are normalised and averaged.
/// Borders only use the pairs whose neighbours exist. Normals point towards
/// the camera (n_z < 0). Returns float32 [3, H, W].
torch::Tensor normals_from_depth(const torch::Tensor& depth, const Intrinsics& intrinsics);

/// 1 where any 4-neighbour carries a different label.
torch::Tensor seg_boundaries(const torch::Tensor& seg);

struct SceneOptions {
  int64_t size = 64;
  int64_t num_classes = 4;
  double d_far = 20.0;
  bool ground = true;
  int min_objects = 2;
  int max_objects = 5;
};

/// Procedural scene: a back wall, an optional ground plane and a handful of
/// boxes and spheres standing on it, layered back to front. Labels are
/// consistent by construction and the result depends only on the seed.
Sample synthetic_scene(uint64_t seed, const SceneOptions& options);
Sample synthetic_scene(uint64_t seed, int64_t size, int64_t num_classes);

/// Violated invariants of a sample (empty when valid).
std::vector<std::string> check_sample(const Sample& sample, double d_far,
                                      int64_t num_classes = 0);

/// Scales each image of `pred` by median(gt) / median(pred). Accepts [H, W]
/// or any batched layout whose first dim indexes images.
torch::Tensor median_scale(const torch::Tensor& pred_depth, const torch::Tensor& gt_depth);

/// Relabelling over a closed label vocabulary. Every label maps to a label of
/// the same vocabulary or to ignore; mapped labels map to themselves, so the
/// relabelling is idempotent.
class ClassMap {
 public:
  ClassMap(std::vector<std::string> labels,
           std::map<std::string, std::optional<std::string>> mapping);

  /// VKITTI2 -> shared label space of the VKITTI2 / Cityscapes adaptation setup.
  static ClassMap vkitti2();
  /// Cityscapes -> the same shared label space.
  static ClassMap cityscapes();

  const std::vector<std::string>& labels() const { return labels_; }
  int64_t id_of(const std::string& name) const;
  /// Target name, or nullopt for ignore. Unknown names throw.
  std::optional<std::string> map(const std::string& name) const;
  /// Mapped labels in vocabulary order.
  std::vector<std::string> targets() const;

 private:
  std::vector<std::string> labels_;
  std::map<std::string, std::optional<std::string>> mapping_;
};

/// Relabels ids of `map.labels()`; ignore pixels stay ignore. Ids outside the
/// vocabulary throw.
torch::Tensor apply_class_map(const torch::Tensor& seg, const ClassMap& map,
                              int64_t ignore_id = kIgnoreLabel);

/// Stacks samples into a batch: image [B,3,H,W], seg [B,H,W], depth [B,1,H,W],
/// normals [B,3,H,W], edges [B,1,H,W] (float).
struct Batch {
  torch::Tensor image, seg, depth, normals, edges;
};
Batch collate(const std::vector<Sample>& samples);

}  // namespace densemtl
