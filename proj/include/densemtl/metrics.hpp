#pragma once

#include <torch/torch.h>

#include <iosfwd>
#include <map>

#include "densemtl/losses.hpp"
#include "densemtl/tasks.hpp"

namespace densemtl {

/// Mean IoU over classes that occur in the prediction or the ground truth.
/// Inputs are integer label maps of equal shape; `ignore_id` pixels are skipped.
double miou(const torch::Tensor& pred_labels, const torch::Tensor& gt_labels, int64_t num_classes,
            int64_t ignore_id = kIgnoreLabel);

/// Root mean square error, in the unit of the inputs (meters for depth).
double rmse(const torch::Tensor& pred, const torch::Tensor& gt);

/// Mean angle in degrees between [B,3,H,W] normal maps.
double mean_angular_error(const torch::Tensor& pred_normals, const torch::Tensor& gt_normals);

/// F1 score of edge maps binarised at `threshold`. Two empty maps score 1.
double f1_score(const torch::Tensor& pred_prob, const torch::Tensor& gt_edges,
                double threshold = 0.5);

/// Dataset-level accumulation of one task metric (confusion matrix for mIoU,
/// squared-error sum for RMSE, angle sum for mErr, TP/FP/FN for F1).
class MetricAccumulator {
 public:
  MetricAccumulator(Task task, int64_t num_classes = 0);

  /// `pred` is the head output (logits for segmentation), `gt` the label.
  void update(const torch::Tensor& pred, const torch::Tensor& gt);
  double value() const;
  Task task() const { return task_; }

 private:
  Task task_;
  int64_t num_classes_;
  torch::Tensor confusion_;
  double sum_ = 0.0;
  double count_ = 0.0;
  double tp_ = 0.0, fp_ = 0.0, fn_ = 0.0;
};

struct TaskMetric {
  double model = 0.0;
  double baseline = 0.0;
  MetricDirection direction = MetricDirection::HigherBetter;
};

struct DeltaReport {
  std::map<Task, TaskMetric> tasks;
  /// Percent.
  double delta = 0.0;
};

/// (100 / n) * sum_i (-1)^{g_i} (m_i - b_i) / b_i over the tasks of `model`.
double delta_metric(const std::map<Task, double>& model, const std::map<Task, double>& baseline,
                    const std::map<Task, MetricDirection>& direction);

DeltaReport make_delta_report(const std::map<Task, double>& model,
                              const std::map<Task, double>& baseline);

/// CSV rows "task,metric,value,direction" (with header).
void write_metric_csv(std::ostream& os, const std::map<Task, double>& metrics);

}  // namespace densemtl
