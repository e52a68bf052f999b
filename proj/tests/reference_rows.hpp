#pragma once

// Published multi-task results: model metrics, single-task baselines and the
// printed delta (percent, two decimals) for three urban datasets.

#include <map>
#include <string>
#include <vector>

#include "densemtl/tasks.hpp"

namespace densemtl::testing {

struct ReferenceRow {
  std::string label;
  std::map<Task, double> model;
  std::map<Task, double> baseline;
  double printed_delta;
  /// The printed value disagrees with its own metrics beyond rounding.
  bool known_mismatch = false;
};

inline std::vector<ReferenceRow> reference_rows() {
  using T = Task;
  struct Source {
    std::string dataset;
    double stl_s, stl_d, stl_n;
    struct Method {
      std::string name;
      double sd_s, sd_d, sd_delta;
      double sdn_s, sdn_d, sdn_n, sdn_sd_delta, sdn_delta;
    };
    std::vector<Method> methods;
  };
  const std::vector<Source> sources{
      {"synthia",
       67.43, 5.379, 19.61,
       {{"mtl", 69.83, 5.166, 3.76, 71.27, 5.108, 18.51, 5.37, 5.45},
        {"padnet", 70.87, 4.917, 6.85, 72.27, 4.949, 19.28, 7.58, 5.62},
        {"threeways_padnet", 77.50, 4.289, 17.60, 79.93, 4.218, 15.54, 20.06, 20.29},
        {"ours", 80.53, 4.161, 21.04, 82.99, 4.056, 14.30, 23.83, 24.92}}},
      {"vkitti2",
       84.53, 5.720, 23.14,
       {{"mtl", 87.73, 5.720, 1.89, 87.83, 5.714, 22.30, 2.00, 2.54},
        {"padnet", 88.43, 5.571, 3.63, 88.67, 5.543, 22.16, 4.09, 4.09},
        {"threeways_padnet", 96.13, 4.013, 21.78, 96.87, 3.756, 15.54, 24.46, 27.25},
        {"ours", 97.00, 3.423, 27.47, 97.53, 3.089, 14.44, 30.70, 33.00}}},
      {"cityscapes",
       67.93, 6.622, 44.10,
       {{"mtl", 70.43, 6.797, 0.52, 70.93, 6.736, 43.60, 1.34, 1.30},
        {"padnet", 70.23, 6.777, 0.52, 70.67, 6.755, 43.52, 1.00, 1.12},
        {"threeways_padnet", 75.00, 6.528, 5.91, 75.50, 6.491, 41.84, 6.56, 6.09},
        {"ours", 74.95, 6.649, 4.96, 76.08, 6.407, 40.05, 7.61, 8.15}}},
  };
  std::vector<ReferenceRow> rows;
  for (const auto& src : sources) {
    const std::map<Task, double> b_sd{{T::Segmentation, src.stl_s}, {T::Depth, src.stl_d}};
    const std::map<Task, double> b_sdn{{T::Segmentation, src.stl_s}, {T::Depth, src.stl_d}, {T::Normals, src.stl_n}};
    for (const auto& m : src.methods) {
      const std::string prefix = src.dataset + "/" + m.name;
      rows.push_back({prefix + "/SD", {{T::Segmentation, m.sd_s}, {T::Depth, m.sd_d}}, b_sd, m.sd_delta});
      rows.push_back({prefix + "/SDN:SD", {{T::Segmentation, m.sdn_s}, {T::Depth, m.sdn_d}}, b_sd, m.sdn_sd_delta,
                      src.dataset == "vkitti2" && m.name == "padnet"});
      rows.push_back({prefix + "/SDN",
                      {{T::Segmentation, m.sdn_s}, {T::Depth, m.sdn_d}, {T::Normals, m.sdn_n}},
                      b_sdn,
                      m.sdn_delta});
    }
  }
  return rows;
}

}  // namespace densemtl::testing
