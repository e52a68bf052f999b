#include "densemtl/tasks.hpp"

#include <algorithm>

namespace densemtl {

std::string_view task_code(Task t) {
  switch (t) {
    case Task::Segmentation: return "S";
    case Task::Depth: return "D";
    case Task::Normals: return "N";
    case Task::Edges: return "E";
  }
  return "?";
}

std::string_view metric_name(Task t) {
  switch (t) {
    case Task::Segmentation: return "mIoU";
    case Task::Depth: return "RMSE";
    case Task::Normals: return "mErr";
    case Task::Edges: return "F1";
  }
  return "?";
}

Task parse_task(std::string_view code) {
  if (code == "S" || code == "seg" || code == "segmentation") return Task::Segmentation;
  if (code == "D" || code == "depth") return Task::Depth;
  if (code == "N" || code == "normals") return Task::Normals;
  if (code == "E" || code == "edges") return Task::Edges;
  throw ConfigError("unknown task '" + std::string(code) + "'");
}

MetricDirection metric_direction(Task t) {
  switch (t) {
    case Task::Segmentation:
    case Task::Edges:
      return MetricDirection::HigherBetter;
    case Task::Depth:
    case Task::Normals:
      return MetricDirection::LowerBetter;
  }
  return MetricDirection::HigherBetter;
}

int64_t head_channels(Task t, int64_t num_classes) {
  switch (t) {
    case Task::Segmentation: return num_classes;
    case Task::Depth: return 1;
    case Task::Normals: return 3;
    case Task::Edges: return 1;
  }
  return 1;
}

std::vector<TaskSpec> default_task_specs(const std::vector<Task>& tasks) {
  auto has = [&](Task t) { return std::find(tasks.begin(), tasks.end(), t) != tasks.end(); };
  const bool sd = tasks.size() >= 2 && has(Task::Segmentation) && has(Task::Depth);
  std::vector<TaskSpec> specs;
  for (Task t : tasks) {
    double w = 1.0;
    if (sd && tasks.size() == 2) {
      w = (t == Task::Segmentation) ? 50.0 : 1.0;
    } else if (sd && has(Task::Normals)) {
      switch (t) {
        case Task::Segmentation: w = 100.0; break;
        case Task::Depth: w = 1.0; break;
        case Task::Normals: w = 100.0; break;
        case Task::Edges: w = 50.0; break;
      }
    }
    specs.push_back({t, w});
  }
  return specs;
}

}  // namespace densemtl
