#include "densemtl/metrics.hpp"

#include <cmath>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <string>

namespace densemtl {

namespace {

torch::Tensor confusion_matrix(const torch::Tensor& pred, const torch::Tensor& gt, int64_t k,
                               int64_t ignore_id) {
  auto p = pred.to(torch::kLong).flatten();
  auto g = gt.to(torch::kLong).flatten();
  auto keep = (g != ignore_id) & (g >= 0) & (g < k) & (p >= 0) & (p < k);
  p = p.masked_select(keep);
  g = g.masked_select(keep);
  return torch::bincount(g * k + p, {}, k * k).view({k, k}).to(torch::kDouble);
}

double miou_from_confusion(const torch::Tensor& conf) {
  const auto tp = conf.diag();
  const auto union_ = conf.sum(0) + conf.sum(1) - tp;
  const auto present = union_ > 0;
  if (!present.any().item<bool>()) return 1.0;
  return (tp.masked_select(present) / union_.masked_select(present)).mean().item<double>();
}

// Per-pixel angle in radians; atan2 keeps identical vectors at exactly zero.
torch::Tensor pixel_angles(const torch::Tensor& pred, const torch::Tensor& gt) {
  if (pred.sizes() != gt.sizes() || pred.dim() != 4 || pred.size(1) != 3) {
    throw ShapeError("mean_angular_error: expected matching [B,3,H,W] maps");
  }
  const auto a = pred.to(torch::kDouble);
  const auto b = gt.to(torch::kDouble);
  const auto cross = torch::linalg_cross(a, b, 1).norm(2, 1);
  const auto dot = (a * b).sum(1);
  return torch::atan2(cross, dot);
}

double f1_from_counts(double tp, double fp, double fn) {
  if (tp + fp + fn == 0) return 1.0;
  return 2 * tp / (2 * tp + fp + fn);
}

}  // namespace

double miou(const torch::Tensor& pred_labels, const torch::Tensor& gt_labels, int64_t num_classes,
            int64_t ignore_id) {
  if (pred_labels.sizes() != gt_labels.sizes()) throw ShapeError("miou: shape mismatch");
  return miou_from_confusion(confusion_matrix(pred_labels, gt_labels, num_classes, ignore_id));
}

double rmse(const torch::Tensor& pred, const torch::Tensor& gt) {
  if (pred.sizes() != gt.sizes()) throw ShapeError("rmse: shape mismatch");
  return (pred.to(torch::kDouble) - gt.to(torch::kDouble)).square().mean().sqrt().item<double>();
}

double mean_angular_error(const torch::Tensor& pred_normals, const torch::Tensor& gt_normals) {
  return pixel_angles(pred_normals, gt_normals).mean().item<double>() * 180.0 / std::numbers::pi;
}

double f1_score(const torch::Tensor& pred_prob, const torch::Tensor& gt_edges, double threshold) {
  if (pred_prob.sizes() != gt_edges.sizes()) throw ShapeError("f1_score: shape mismatch");
  const auto p = pred_prob >= threshold;
  const auto g = gt_edges > 0.5;
  const double tp = (p & g).sum().item<double>();
  const double fp = (p & g.logical_not()).sum().item<double>();
  const double fn = (p.logical_not() & g).sum().item<double>();
  return f1_from_counts(tp, fp, fn);
}

MetricAccumulator::MetricAccumulator(Task task, int64_t num_classes)
    : task_(task), num_classes_(num_classes) {
  if (task_ == Task::Segmentation) {
    if (num_classes_ <= 0) throw ConfigError("segmentation metric needs a class count");
    confusion_ = torch::zeros({num_classes_, num_classes_}, torch::kDouble);
  }
}

void MetricAccumulator::update(const torch::Tensor& pred, const torch::Tensor& gt) {
  torch::NoGradGuard guard;
  switch (task_) {
    case Task::Segmentation:
      confusion_ += confusion_matrix(pred.argmax(1), gt, num_classes_, kIgnoreLabel);
      break;
    case Task::Depth: {
      const auto d = pred.to(torch::kDouble).reshape(gt.sizes()) - gt.to(torch::kDouble);
      sum_ += d.square().sum().item<double>();
      count_ += static_cast<double>(d.numel());
      break;
    }
    case Task::Normals: {
      const auto ang = pixel_angles(pred, gt);
      sum_ += ang.sum().item<double>() * 180.0 / std::numbers::pi;
      count_ += static_cast<double>(ang.numel());
      break;
    }
    case Task::Edges: {
      const auto p = pred.reshape(gt.sizes()) >= 0.5;
      const auto g = gt > 0.5;
      tp_ += (p & g).sum().item<double>();
      fp_ += (p & g.logical_not()).sum().item<double>();
      fn_ += (p.logical_not() & g).sum().item<double>();
      break;
    }
  }
}

double MetricAccumulator::value() const {
  switch (task_) {
    case Task::Segmentation: return miou_from_confusion(confusion_);
    case Task::Depth: return count_ > 0 ? std::sqrt(sum_ / count_) : 0.0;
    case Task::Normals: return count_ > 0 ? sum_ / count_ : 0.0;
    case Task::Edges: return f1_from_counts(tp_, fp_, fn_);
  }
  return 0.0;
}

double delta_metric(const std::map<Task, double>& model, const std::map<Task, double>& baseline,
                    const std::map<Task, MetricDirection>& direction) {
  if (model.empty()) throw std::invalid_argument("delta_metric: no tasks");
  double sum = 0.0;
  for (const auto& [task, m] : model) {
    auto b = baseline.find(task);
    auto g = direction.find(task);
    if (b == baseline.end() || g == direction.end()) {
      throw std::invalid_argument("delta_metric: missing baseline or direction for task " +
                                  std::string(task_code(task)));
    }
    if (b->second == 0.0) throw std::domain_error("delta_metric: zero baseline metric");
    const double sign = g->second == MetricDirection::LowerBetter ? -1.0 : 1.0;
    sum += sign * (m - b->second) / b->second;
  }
  return 100.0 * sum / static_cast<double>(model.size());
}

DeltaReport make_delta_report(const std::map<Task, double>& model,
                              const std::map<Task, double>& baseline) {
  DeltaReport report;
  std::map<Task, MetricDirection> dirs;
  for (const auto& [task, m] : model) {
    dirs[task] = metric_direction(task);
    auto b = baseline.find(task);
    report.tasks[task] = {m, b == baseline.end() ? 0.0 : b->second, dirs[task]};
  }
  report.delta = delta_metric(model, baseline, dirs);
  return report;
}

void write_metric_csv(std::ostream& os, const std::map<Task, double>& metrics) {
  os << "task,metric,value,direction\n";
  for (const auto& [task, value] : metrics) {
    os << task_code(task) << ',' << metric_name(task) << ',' << value << ','
       << (metric_direction(task) == MetricDirection::HigherBetter ? "higher" : "lower") << '\n';
  }
}

}  // namespace densemtl
