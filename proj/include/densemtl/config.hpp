#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "densemtl/model.hpp"
#include "densemtl/uda.hpp"
#include "json.hpp"

namespace densemtl {

struct DatasetSpec {
  /// "synthetic" or "disk".
  std::string kind = "synthetic";
  std::string root;
  uint64_t seed = 0;
  int64_t count = 8;
  int64_t size = 64;
  double d_far = 20.0;
  bool strict = false;
};

struct OptimizerSpec {
  /// "adam" or "sgd".
  std::string kind = "adam";
  double encoder_lr = 2.0e-4;
  double decoder_lr = 3.0e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double momentum = 0.9;
  double weight_decay = 0.0;
  int64_t lr_decay_step = 30000;
  double lr_decay = 0.1;
  double grad_clip = 10.0;
};

/// Upper bounds a config declares for itself.
struct BudgetSpec {
  int64_t max_iterations = 2000;
  int64_t max_samples = 64;
};

/// Stop once every listed task metric reaches its target on the training set.
struct EarlyStopSpec {
  int64_t every = 0;
  std::map<Task, double> targets;
};

struct ExperimentConfig {
  std::string name = "experiment";
  ModelConfig model;
  DatasetSpec data;
  /// Unlabelled target domain for adaptation runs.
  std::optional<DatasetSpec> target_data;
  std::optional<UdaConfig> uda;
  /// Held-out split for final metrics; the training split when unset.
  std::optional<DatasetSpec> eval_data;
  OptimizerSpec optimizer;
  int64_t iterations = 500;
  int64_t batch_size = 8;
  int64_t log_every = 50;
  int64_t checkpoint_every = 0;
  uint64_t seed = 0;
  BudgetSpec budget;
  EarlyStopSpec early_stop;
  /// Single-task baseline metrics used for the delta metric, when known.
  std::optional<std::map<Task, double>> baselines;

  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& cfg);
void from_json(const nlohmann::json& j, ExperimentConfig& cfg);

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string dump_config(const ExperimentConfig& cfg);
/// FNV-1a of the canonical serialisation, hex encoded.
std::string config_hash(const ExperimentConfig& cfg);

nlohmann::json metrics_to_json(const std::map<Task, double>& metrics);
std::map<Task, double> metrics_from_json(const nlohmann::json& j);

}  // namespace densemtl
