#include "densemtl/losses.hpp"

#include <stdexcept>
#include <string>

namespace densemtl {

namespace F = torch::nn::functional;

SegLoss seg_loss(const torch::Tensor& logits, const torch::Tensor& labels, int64_t ignore_id) {
  if (logits.dim() != 4 || labels.dim() != 3 || logits.size(0) != labels.size(0) ||
      logits.size(2) != labels.size(1) || logits.size(3) != labels.size(2)) {
    throw ShapeError("seg_loss: expected logits [B,K,H,W] and labels [B,H,W]");
  }
  auto target = labels.to(torch::kLong);
  const auto valid = target != ignore_id;
  const int64_t k = logits.size(1);
  if (((target < 0) | (target >= k)).logical_and(valid).any().item<bool>()) {
    throw std::domain_error("seg_loss: label outside [0, K) that is not the ignore id");
  }
  if (!valid.any().item<bool>()) {
    return {(logits * 0).sum(), true};
  }
  auto loss = F::cross_entropy(
      logits, target,
      F::CrossEntropyFuncOptions().ignore_index(ignore_id).reduction(torch::kMean));
  return {loss, false};
}

torch::Tensor berhu(const torch::Tensor& residual, std::optional<double> threshold) {
  const auto abs_r = residual.abs();
  torch::Tensor c;
  if (threshold) {
    c = torch::full({}, *threshold, residual.options());
  } else {
    c = 0.2 * abs_r.max();
  }
  const auto safe_c = c.clamp_min(1e-12);
  const auto quad = (residual * residual + safe_c * safe_c) / (2 * safe_c);
  return torch::where(abs_r <= c, abs_r, quad).mean();
}

torch::Tensor depth_loss(const torch::Tensor& pred_depth, const torch::Tensor& gt_depth,
                         const DepthCodec& codec) {
  if (pred_depth.sizes() != gt_depth.sizes()) throw ShapeError("depth_loss: shape mismatch");
  if ((pred_depth <= 0).any().item<bool>() || (gt_depth <= 0).any().item<bool>()) {
    throw std::domain_error("depth_loss: depths must be strictly positive");
  }
  return berhu(codec.encode(pred_depth) - codec.encode(gt_depth));
}

torch::Tensor normal_loss(const torch::Tensor& pred_normals, const torch::Tensor& gt_normals) {
  if (pred_normals.sizes() != gt_normals.sizes() || pred_normals.dim() != 4 ||
      pred_normals.size(1) != 3) {
    throw ShapeError("normal_loss: expected matching [B,3,H,W] maps");
  }
  const auto pn = pred_normals.norm(2, 1);
  const auto gn = gt_normals.norm(2, 1);
  if ((pn == 0).any().item<bool>() || (gn == 0).any().item<bool>()) {
    throw std::domain_error("normal_loss: zero-length normal vector");
  }
  const auto cos = (pred_normals * gt_normals).sum(1) / (pn * gn);
  return (1 - cos).mean();
}

torch::Tensor edge_loss(const torch::Tensor& pred_prob, const torch::Tensor& gt_edges,
                        double eps) {
  if (pred_prob.sizes() != gt_edges.sizes()) throw ShapeError("edge_loss: shape mismatch");
  const auto y = gt_edges.to(pred_prob.dtype());
  const double n_pos = y.sum().item<double>();
  const double n_neg = static_cast<double>(y.numel()) - n_pos;
  const double w_pos = (n_pos > 0 && n_neg > 0) ? n_neg / n_pos : 1.0;
  const auto p = pred_prob.clamp(eps, 1 - eps);
  return -(w_pos * y * torch::log(p) + (1 - y) * torch::log(1 - p)).mean();
}

torch::Tensor total_loss(const ScaleLosses& intermediate, const TaskLosses& final_losses,
                         const std::vector<TaskSpec>& tasks, const std::set<int>& scales) {
  torch::Tensor final_sum;
  auto accumulate = [](torch::Tensor& acc, const torch::Tensor& term) {
    acc = acc.defined() ? acc + term : term;
  };
  for (const auto& t : tasks) {
    auto it = final_losses.find(t.id);
    if (it == final_losses.end()) {
      throw std::invalid_argument("total_loss: missing final loss for task " +
                                  std::string(task_code(t.id)));
    }
    accumulate(final_sum, t.weight * it->second);
  }
  torch::Tensor scale_sum;
  for (int s : scales) {
    auto sit = intermediate.find(s);
    if (sit == intermediate.end()) {
      throw std::invalid_argument("total_loss: missing losses for scale " + std::to_string(s));
    }
    for (const auto& t : tasks) {
      auto it = sit->second.find(t.id);
      if (it == sit->second.end()) {
        throw std::invalid_argument("total_loss: missing scale-" + std::to_string(s) +
                                    " loss for task " + std::string(task_code(t.id)));
      }
      accumulate(scale_sum, t.weight * it->second);
    }
  }
  if (!final_sum.defined()) final_sum = torch::zeros({});
  if (!scale_sum.defined()) return final_sum;
  return scale_sum / static_cast<double>(scales.size()) + final_sum;
}

}  // namespace densemtl
