#pragma once

#include <torch/torch.h>

#include <map>
#include <optional>
#include <set>
#include <vector>

#include "densemtl/tasks.hpp"

namespace densemtl {

inline constexpr int64_t kIgnoreLabel = 255;

struct SegLoss {
  torch::Tensor value;
  /// Every pixel carried the ignore label; `value` is then zero.
  bool all_ignored = false;
};

/// Mean cross-entropy over non-ignored pixels. logits [B, K, H, W], labels [B, H, W].
SegLoss seg_loss(const torch::Tensor& logits, const torch::Tensor& labels,
                 int64_t ignore_id = kIgnoreLabel);

/// Inverse depth normalisation: depth d is mapped to d_far / d.
struct DepthCodec {
  double d_far = 1.0;
  torch::Tensor encode(const torch::Tensor& depth) const { return d_far / depth; }
};

/// Reverse Huber on residuals: |r| when |r| <= c, (r^2 + c^2) / (2c) otherwise.
/// Without an explicit threshold, c = 0.2 * max|r| over the batch.
torch::Tensor berhu(const torch::Tensor& residual, std::optional<double> threshold = std::nullopt);

/// berHu on inverse-normalised depths. Both maps must be strictly positive.
torch::Tensor depth_loss(const torch::Tensor& pred_depth, const torch::Tensor& gt_depth,
                         const DepthCodec& codec);

/// Mean of 1 - cos(pred, gt) over pixels; normals are [B, 3, H, W].
torch::Tensor normal_loss(const torch::Tensor& pred_normals, const torch::Tensor& gt_normals);

/// Binary cross-entropy on edge probabilities with the positive class
/// reweighted by N_neg / N_pos.
torch::Tensor edge_loss(const torch::Tensor& pred_prob, const torch::Tensor& gt_edges,
                        double eps = 1e-7);

using TaskLosses = std::map<Task, torch::Tensor>;
using ScaleLosses = std::map<int, TaskLosses>;

/// (1/|S|) sum_s sum_t w_t L_t^s + sum_t w_t L_t^final. Empty S gives the
/// final-only sum.
torch::Tensor total_loss(const ScaleLosses& intermediate, const TaskLosses& final_losses,
                         const std::vector<TaskSpec>& tasks, const std::set<int>& scales);

}  // namespace densemtl
