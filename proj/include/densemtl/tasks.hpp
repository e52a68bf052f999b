#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace densemtl {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense prediction tasks: semantic segmentation, depth, surface normals, edges.
enum class Task { Segmentation, Depth, Normals, Edges };

/// g_i of the delta metric: 0 when higher is better, 1 when lower is better.
enum class MetricDirection : int { HigherBetter = 0, LowerBetter = 1 };

std::string_view task_code(Task t);
std::string_view metric_name(Task t);
Task parse_task(std::string_view code);
MetricDirection metric_direction(Task t);

/// Output channel count of a task head.
int64_t head_channels(Task t, int64_t num_classes);

struct TaskSpec {
  Task id = Task::Segmentation;
  double weight = 1.0;

  MetricDirection direction() const { return metric_direction(id); }
};

/// Grid-searched defaults: S-D {50, 1}; S-D-N {100, 1, 100}; S-D-N-E {100, 1, 100, 50}.
/// Other task sets fall back to unit weights.
std::vector<TaskSpec> default_task_specs(const std::vector<Task>& tasks);

}  // namespace densemtl
