#include "densemtl/experiments.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "densemtl/report.hpp"

namespace densemtl {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::map<Task, double> stl_baselines(const ExperimentConfig& cfg, const fs::path& out_dir) {
  std::map<Task, double> out;
  for (const auto& spec : cfg.model.tasks) {
    ExperimentConfig c = cfg;
    c.name = cfg.name + "_stl_" + std::string(task_code(spec.id));
    c.model.architecture = Architecture::Stl;
    c.model.tasks = {TaskSpec{spec.id, 1.0}};
    c.uda.reset();
    c.target_data.reset();
    c.baselines.reset();
    c.early_stop = {};
    const auto report = train(c, out_dir.empty() ? fs::path{} : out_dir / c.name);
    out[spec.id] = report.metrics.at(spec.id);
  }
  return out;
}

std::vector<WeightPoint> parse_grid(const json& j) {
  const json& points = j.is_object() && j.contains("points") ? j.at("points") : j;
  if (!points.is_array() || points.empty()) throw ConfigError("grid must be a non-empty array of weight points");
  std::vector<WeightPoint> grid;
  for (const auto& p : points) {
    WeightPoint w = metrics_from_json(p);
    for (const auto& [t, v] : w) {
      if (!(v > 0)) throw ConfigError("grid weights must be positive");
    }
    grid.push_back(std::move(w));
  }
  return grid;
}

std::vector<WeightPoint> load_grid(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open grid " + path.string());
  return parse_grid(json::parse(is));
}

namespace {

std::string weight_label(const WeightPoint& w) {
  std::string s;
  for (const auto& [t, v] : w) {
    if (!s.empty()) s += "_";
    std::ostringstream os;
    os << task_code(t) << v;
    s += os.str();
  }
  return s;
}

std::vector<double> weight_vector(const WeightPoint& w) {
  std::vector<double> v;
  for (const auto& [_, x] : w) v.push_back(x);
  return v;
}

}  // namespace

std::vector<GridRow> gridsearch(const ExperimentConfig& cfg, const std::vector<WeightPoint>& grid,
                                const fs::path& out_dir) {
  if (grid.empty()) throw ConfigError("gridsearch: empty grid");
  const auto baselines = cfg.baselines ? *cfg.baselines : stl_baselines(cfg, out_dir);
  std::vector<GridRow> rows;
  for (const auto& point : grid) {
    ExperimentConfig c = cfg;
    c.model.architecture = Architecture::Mtl;
    for (auto& spec : c.model.tasks) {
      auto it = point.find(spec.id);
      if (it == point.end()) {
        throw ConfigError("grid point is missing a weight for task " + std::string(task_code(spec.id)));
      }
      spec.weight = it->second;
    }
    c.baselines = baselines;
    c.name = cfg.name + "_grid_" + weight_label(point);
    rows.push_back({point, train(c, out_dir.empty() ? fs::path{} : out_dir / c.name)});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const GridRow& a, const GridRow& b) {
    if (a.report.delta->delta != b.report.delta->delta) return a.report.delta->delta > b.report.delta->delta;
    return weight_vector(a.weights) < weight_vector(b.weights);
  });
  if (!out_dir.empty()) {
    std::vector<RunReport> reports;
    for (const auto& r : rows) reports.push_back(r.report);
    write_results_table(out_dir / "gridsearch.csv", reports);
  }
  return rows;
}

std::string_view to_string(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::Scales: return "scales";
    case AblationAxis::Fusion: return "fusion";
    case AblationAxis::Attention: return "attention";
    case AblationAxis::NoSelfAttention: return "no_self_attention";
  }
  return "?";
}

AblationAxis parse_ablation_axis(std::string_view name) {
  for (auto a : {AblationAxis::Scales, AblationAxis::Fusion, AblationAxis::Attention, AblationAxis::NoSelfAttention}) {
    if (to_string(a) == name) return a;
  }
  throw ConfigError("unknown ablation axis '" + std::string(name) +
                    "' (expected scales, fusion, attention or no_self_attention)");
}

std::vector<AblationVariant> ablation_variants(const ExperimentConfig& base, AblationAxis axis) {
  ExperimentConfig ours = base;
  ours.model.architecture = Architecture::Ours;
  std::vector<AblationVariant> out;
  auto add = [&](std::string label, auto&& edit) {
    ExperimentConfig c = ours;
    edit(c.model);
    c.name = base.name + "_" + std::string(to_string(axis)) + "_" + label;
    c.model.validate();
    out.push_back({std::move(label), std::move(c)});
  };
  switch (axis) {
    case AblationAxis::Scales: {
      const std::vector<std::set<int>> sets{{4}, {3}, {2}, {1}, {1, 3}, {1, 2, 3}, {1, 2, 3, 4}};
      for (const auto& s : sets) {
        std::string label = "s";
        for (auto it = s.rbegin(); it != s.rend(); ++it) label += std::to_string(*it);
        add(label, [&](ModelConfig& m) { m.mteb_scales = s; });
      }
      break;
    }
    case AblationAxis::Fusion:
      for (auto f : {FusionKind::Concat, FusionKind::Prod, FusionKind::Add}) {
        add(std::string(to_string(f)), [&](ModelConfig& m) { m.fusion = f; });
      }
      break;
    case AblationAxis::Attention:
      for (auto a : {AttentionKind::Spatial, AttentionKind::Channel, AttentionKind::Both}) {
        add(std::string(to_string(a)), [&](ModelConfig& m) { m.attention = a; });
      }
      break;
    case AblationAxis::NoSelfAttention:
      add("with_self", [](ModelConfig& m) { m.use_self_attention = true; });
      add("without_self", [](ModelConfig& m) { m.use_self_attention = false; });
      break;
  }
  return out;
}

std::vector<AblationRow> ablate(const ExperimentConfig& cfg, AblationAxis axis, const fs::path& out_dir) {
  auto variants = ablation_variants(cfg, axis);
  const auto baselines = cfg.baselines ? *cfg.baselines : stl_baselines(cfg, out_dir);
  std::vector<AblationRow> rows;
  for (auto& v : variants) {
    v.config.baselines = baselines;
    rows.push_back({v.label, train(v.config, out_dir.empty() ? fs::path{} : out_dir / v.config.name)});
  }
  if (!out_dir.empty()) {
    std::vector<RunReport> reports;
    for (const auto& r : rows) reports.push_back(r.report);
    write_results_table(out_dir / ("ablation_" + std::string(to_string(axis)) + ".csv"), reports);
  }
  return rows;
}

}  // namespace densemtl
