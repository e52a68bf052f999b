#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "densemtl/config.hpp"
#include "densemtl/trainer.hpp"

namespace densemtl {

/// Trains one single-task network per task of `cfg` and returns their metrics.
std::map<Task, double> stl_baselines(const ExperimentConfig& cfg, const std::filesystem::path& out_dir = {});

using WeightPoint = std::map<Task, double>;

std::vector<WeightPoint> parse_grid(const nlohmann::json& j);
std::vector<WeightPoint> load_grid(const std::filesystem::path& path);

struct GridRow {
  WeightPoint weights;
  RunReport report;
};

/// Trains the plain multi-task network at every weight point and ranks the
/// points by delta against single-task baselines (cfg.baselines, or trained
/// on demand). Rows are sorted by decreasing delta; ties keep the
/// lexicographically smaller weight vector first. rows.front() is the pick.
std::vector<GridRow> gridsearch(const ExperimentConfig& cfg, const std::vector<WeightPoint>& grid,
                                const std::filesystem::path& out_dir = {});

enum class AblationAxis { Scales, Fusion, Attention, NoSelfAttention };

std::string_view to_string(AblationAxis axis);
AblationAxis parse_ablation_axis(std::string_view name);

struct AblationVariant {
  std::string label;
  ExperimentConfig config;
};

/// Configurations of the cross-task attention network along one axis.
std::vector<AblationVariant> ablation_variants(const ExperimentConfig& base, AblationAxis axis);

struct AblationRow {
  std::string label;
  RunReport report;
};

std::vector<AblationRow> ablate(const ExperimentConfig& cfg, AblationAxis axis,
                                const std::filesystem::path& out_dir = {});

}  // namespace densemtl
