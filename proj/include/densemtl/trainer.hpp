#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "densemtl/config.hpp"
#include "densemtl/data.hpp"
#include "densemtl/metrics.hpp"
#include "densemtl/model.hpp"
#include "densemtl/uda.hpp"
#include "json.hpp"

namespace densemtl {

struct RunReport {
  std::string name;
  std::string architecture;
  std::string config_hash;
  nlohmann::json config;
  /// Total loss at every iteration.
  std::vector<double> losses;
  /// Discriminator loss at every iteration of an adaptation run.
  std::vector<double> disc_losses;
  std::map<Task, double> metrics;
  std::optional<DeltaReport> delta;
  int64_t iterations = 0;
  double wall_time_s = 0.0;
  std::string checkpoint;
};

void to_json(nlohmann::json& j, const RunReport& r);
void from_json(const nlohmann::json& j, RunReport& r);
void write_report(const std::filesystem::path& path, const RunReport& r);
RunReport read_report(const std::filesystem::path& path);

/// DENSEMTL_DETERMINISTIC=1 selects deterministic kernels and a single thread.
void configure_determinism();

/// Materialises a dataset spec (synthetic scenes or an on-disk directory).
std::vector<Sample> load_samples(const DatasetSpec& spec, int64_t num_classes);

/// Labels resampled to the resolution of scale s (1 / 2^s).
Batch downsample_batch(const Batch& batch, int scale);

/// Per-task supervised losses of one prediction set.
TaskLosses task_losses(const TaskPredictions& pred, const Batch& gt, double d_far);

/// Accumulated metrics of the final predictions over a sample set.
std::map<Task, double> evaluate_model(MultiTaskNet& model, const std::vector<Sample>& samples,
                                      double d_far, bool median_scaling = false,
                                      int64_t batch_size = 8);

class Trainer {
 public:
  explicit Trainer(ExperimentConfig cfg);

  /// One optimisation step; returns the total loss.
  double step();
  int64_t iteration() const { return iteration_; }
  double last_disc_loss() const { return last_disc_loss_; }
  /// Current learning rate of each parameter group (encoder first).
  std::vector<double> learning_rates() const;

  MultiTaskNet& model() { return model_; }
  const ExperimentConfig& config() const { return cfg_; }
  const std::vector<Sample>& train_samples() const { return source_; }
  std::map<Task, double> evaluate();

  /// Trains for the configured iterations (or until the early-stop targets
  /// hold), evaluates, and writes report.json and checkpoint.bin to out_dir
  /// when it is non-empty.
  RunReport run(const std::filesystem::path& out_dir = {});

 private:
  Batch next_batch(const std::vector<Sample>& pool, std::vector<size_t>& order, size_t& cursor);
  bool targets_met(const std::map<Task, double>& metrics) const;
  void save(const std::filesystem::path& path);
  [[noreturn]] void abort_nan(const TaskLosses& final_losses, const ScaleLosses& inter);

  ExperimentConfig cfg_;
  MultiTaskNet model_{nullptr};
  std::unique_ptr<torch::optim::Optimizer> optimizer_;
  std::vector<Discriminator> discriminators_;  // per adapted output (task x scale)
  std::vector<std::pair<Task, int>> disc_slots_;  // scale 0 = final output
  std::unique_ptr<torch::optim::Optimizer> disc_optimizer_;
  std::vector<Sample> source_;
  std::vector<Sample> target_;
  std::vector<size_t> source_order_, target_order_;
  size_t source_cursor_ = 0, target_cursor_ = 0;
  std::mt19937_64 rng_;
  int64_t iteration_ = 0;
  double last_disc_loss_ = 0.0;
  std::filesystem::path out_dir_;
};

inline RunReport train(const ExperimentConfig& cfg, const std::filesystem::path& out_dir = {}) {
  return Trainer(cfg).run(out_dir);
}

/// Evaluates a checkpoint on an on-disk dataset, optionally against
/// single-task baseline metrics.
RunReport evaluate_checkpoint(const std::filesystem::path& checkpoint, const std::filesystem::path& data,
                              const std::optional<std::map<Task, double>>& baselines = std::nullopt);

/// Reads baseline metrics from a run report, an array of run reports, or a
/// plain {"S": value, ...} object.
std::map<Task, double> read_baselines(const std::filesystem::path& path);

}  // namespace densemtl
