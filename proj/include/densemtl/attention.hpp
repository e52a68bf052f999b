#pragma once

// Cross-task attention (xTAM), the multi-task exchange block (mTEB) and the
// PAD-Net style distillation baseline.
//
// Tensors follow the usual NCHW layout. Within one direction j -> i, task i is
// the receiver (queries come from f_i) and task j is the sender (keys and
// values come from f_j).

#include <torch/torch.h>

#include <cstdint>
#include <utility>
#include <vector>

#include "densemtl/tasks.hpp"

namespace densemtl {

/// Dense activation tensor, [batch, channels, height, width].
using FeatureMap = torch::Tensor;

enum class AttentionKind { Spatial, Channel, Both };
enum class FusionKind { Add, Concat, Prod };

std::string_view to_string(AttentionKind k);
std::string_view to_string(FusionKind k);
AttentionKind parse_attention_kind(std::string_view s);
FusionKind parse_fusion_kind(std::string_view s);

struct XtamOptions {
  int64_t channels = 0;
  /// Projection size d; 0 selects max(channels / 8, 8).
  int64_t proj_dim = 0;
  /// Downscale factor s. Queries are pooled by s, keys and values by s^2.
  int64_t downscale = 2;
  AttentionKind attention = AttentionKind::Spatial;
  bool use_self_attention = true;

  int64_t resolved_proj_dim() const;
  /// Channel count of the directional feature: 2c, or c without self-attention.
  int64_t output_channels() const { return use_self_attention ? 2 * channels : channels; }
};

struct GridSize {
  int64_t height = 0;
  int64_t width = 0;
  int64_t positions() const { return height * width; }
  bool operator==(const GridSize&) const = default;
};

/// Softmax-normalised cross-task correlation.
///
/// `spatial` is [B, N_i, N_j] (rows: receiver positions on the s-pooled grid,
/// columns: sender positions on the s^2-pooled grid). `channel` is [B, c, c]
/// (rows: receiver channels, columns: sender channels). Either may be undefined
/// depending on the attention kind. Every row sums to one.
struct CorrelationMatrix {
  torch::Tensor spatial;
  torch::Tensor channel;
  GridSize query_grid;
  GridSize key_grid;
};

/// Parameters of one direction j -> i.
class XtamDirectionImpl : public torch::nn::Module {
 public:
  explicit XtamDirectionImpl(XtamOptions options);

  /// Full directional feature f_{j->i}.
  FeatureMap forward(const FeatureMap& f_i, const FeatureMap& f_j);

  const XtamOptions& options() const { return options_; }

  // 1x1 projections. `query` reads the receiver, `key`/`value` read the sender.
  torch::nn::Conv2d query{nullptr};
  torch::nn::Conv2d key{nullptr};
  torch::nn::Conv2d value{nullptr};
  // Channel-attention projections (c -> c), only for Channel / Both.
  torch::nn::Conv2d channel_query{nullptr};
  torch::nn::Conv2d channel_key{nullptr};
  /// Per-channel gate alpha, starts at zero.
  torch::Tensor gate;
  // 3x3 feature and mask branches of the self-attention message.
  torch::nn::Conv2d self_feat{nullptr};
  torch::nn::Conv2d self_mask{nullptr};

 private:
  XtamOptions options_;
};
TORCH_MODULE(XtamDirection);

FeatureMap downscale(const FeatureMap& f, int64_t factor);

CorrelationMatrix correlation_matrix(const FeatureMap& f_i, const FeatureMap& f_j,
                                     XtamDirectionImpl& p);

/// Correlation-guided features: convex combinations of projected sender
/// features, upsampled back to the receiver resolution.
FeatureMap xtask_features(const FeatureMap& f_j, const CorrelationMatrix& corr,
                          XtamDirectionImpl& p);

/// F_f(f_j) * sigmoid(F_m(f_j)).
FeatureMap self_attention(const FeatureMap& f_j, XtamDirectionImpl& p);

/// [diag(alpha) * xtask, selfattn], or diag(alpha) * xtask when self-attention
/// is disabled (`selfattn` may then be undefined).
FeatureMap directional_feature(const FeatureMap& xtask, const FeatureMap& selfattn,
                               const XtamDirectionImpl& p);

/// Bidirectional xTAM for one task pair.
class XtamImpl : public torch::nn::Module {
 public:
  explicit XtamImpl(const XtamOptions& options);

  /// Returns (f_{j->i}, f_{i->j}).
  std::pair<FeatureMap, FeatureMap> forward(const FeatureMap& f_i, const FeatureMap& f_j);

  XtamDirection to_i{nullptr};
  XtamDirection to_j{nullptr};
};
TORCH_MODULE(Xtam);

std::pair<FeatureMap, FeatureMap> xtam_bidirectional(const FeatureMap& f_i, const FeatureMap& f_j,
                                                     XtamDirectionImpl& to_i,
                                                     XtamDirectionImpl& to_j);

struct MtebOptions {
  int64_t num_tasks = 0;
  XtamOptions xtam;
  FusionKind fusion = FusionKind::Add;
};

/// Multi-task exchange block: one bidirectional xTAM per unordered task pair,
/// one combiner (1x1 conv, batch norm, ReLU) per task, fused residually.
class MtebImpl : public torch::nn::Module {
 public:
  explicit MtebImpl(MtebOptions options);

  /// Features in task order; output shapes equal input shapes.
  std::vector<FeatureMap> forward(const std::vector<FeatureMap>& features);

  /// xTAM of the unordered pair (a, b), a < b.
  Xtam pair(size_t a, size_t b) const;
  torch::nn::Sequential combiner(size_t task) const { return combiners_.at(task); }
  /// Zero every combiner weight, bias and normalisation affine parameter.
  void zero_combiners();

  const MtebOptions& options() const { return options_; }

 private:
  MtebOptions options_;
  std::vector<Xtam> pairs_;
  std::vector<torch::nn::Sequential> combiners_;
  std::vector<torch::nn::Conv2d> concat_proj_;
};
TORCH_MODULE(Mteb);

std::vector<FeatureMap> mteb_refine(const std::vector<FeatureMap>& features, MtebImpl& block);

/// PAD-Net style distillation: every task adds the self-attention messages of
/// all other tasks to its own features.
class PadnetDistillImpl : public torch::nn::Module {
 public:
  PadnetDistillImpl(int64_t num_tasks, int64_t channels);

  std::vector<FeatureMap> forward(const std::vector<FeatureMap>& features);

  /// Message conv pair for direction j -> i (feat, mask).
  std::pair<torch::nn::Conv2d, torch::nn::Conv2d> message(size_t j, size_t i) const;

 private:
  int64_t num_tasks_;
  std::vector<torch::nn::Conv2d> feat_;
  std::vector<torch::nn::Conv2d> mask_;
};
TORCH_MODULE(PadnetDistill);

std::vector<FeatureMap> padnet_distill(const std::vector<FeatureMap>& features,
                                       PadnetDistillImpl& block);

}  // namespace densemtl
