// Command-line front end: train, eval, gridsearch, ablate, report, synth.

#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "densemtl/config.hpp"
#include "densemtl/dataset_io.hpp"
#include "densemtl/experiments.hpp"
#include "densemtl/report.hpp"
#include "densemtl/trainer.hpp"

namespace fs = std::filesystem;
using namespace densemtl;

namespace {

void print_metrics(const RunReport& r) {
  std::cout << "run " << r.name << " (" << r.architecture << ", " << r.iterations << " iterations, "
            << r.wall_time_s << " s)\n";
  write_metric_csv(std::cout, r.metrics);
  if (r.delta) std::cout << "delta," << r.delta->delta << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dense multi-task learning with cross-task attention"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "runs", ckpt, data, baseline, grid_path, axis, runs_dir;
  std::optional<uint64_t> seed;

  auto* train_cmd = app.add_subcommand("train", "Train a network from a JSON config");
  train_cmd->add_option("--config", config_path, "Experiment config")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--seed", seed, "Override the config seed");
  train_cmd->add_option("--out", out_dir, "Output directory");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on an on-disk dataset");
  eval_cmd->add_option("--ckpt", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", data, "Dataset root")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--stl-baseline", baseline, "Single-task baseline metrics (JSON)")->check(CLI::ExistingFile);
  std::string eval_out;
  eval_cmd->add_option("--out", eval_out, "Write report.json here");

  auto* grid_cmd = app.add_subcommand("gridsearch", "Search task weights of the multi-task baseline");
  grid_cmd->add_option("--config", config_path, "Experiment config")->required()->check(CLI::ExistingFile);
  grid_cmd->add_option("--grid", grid_path, "JSON array of {task: weight} points")->required()->check(CLI::ExistingFile);
  grid_cmd->add_option("--out", out_dir, "Output directory");

  auto* ablate_cmd = app.add_subcommand("ablate", "Train the attention network along one ablation axis");
  ablate_cmd->add_option("--config", config_path, "Experiment config")->required()->check(CLI::ExistingFile);
  ablate_cmd->add_option("--axis", axis, "scales | fusion | attention | no_self_attention")->required();
  ablate_cmd->add_option("--out", out_dir, "Output directory");

  auto* report_cmd = app.add_subcommand("report", "Tables and plots from finished runs");
  report_cmd->add_option("--runs", runs_dir, "Directory searched for report.json files")->required()->check(CLI::ExistingDirectory);
  report_cmd->add_option("--out", out_dir, "Output directory")->required();

  int64_t count = 16, size = 64, classes = 4;
  uint64_t synth_seed = 0;
  double d_far = 20.0;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic dataset to disk");
  synth_cmd->add_option("--out", out_dir, "Dataset root")->required();
  synth_cmd->add_option("--count", count, "Number of scenes")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--size", size, "Image side in pixels")->check(CLI::Range(32, 4096));
  synth_cmd->add_option("--classes", classes, "Number of semantic classes")->check(CLI::Range(3, 255));
  synth_cmd->add_option("--seed", synth_seed, "First scene seed");
  synth_cmd->add_option("--d-far", d_far, "Far-plane depth in meters")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      auto cfg = load_config(config_path);
      if (seed) cfg.seed = *seed;
      print_metrics(train(cfg, out_dir));
      std::cout << "wrote " << (fs::path(out_dir) / "report.json").string() << "\n";
    } else if (*eval_cmd) {
      std::optional<std::map<Task, double>> b;
      if (!baseline.empty()) b = read_baselines(baseline);
      const auto r = evaluate_checkpoint(ckpt, data, b);
      print_metrics(r);
      if (!eval_out.empty()) write_report(fs::path(eval_out) / "report.json", r);
    } else if (*grid_cmd) {
      const auto rows = gridsearch(load_config(config_path), load_grid(grid_path), out_dir);
      for (const auto& row : rows) std::cout << row.report.name << ',' << row.report.delta->delta << "\n";
      std::cout << "best," << rows.front().report.name << "\n";
    } else if (*ablate_cmd) {
      const auto rows = ablate(load_config(config_path), parse_ablation_axis(axis), out_dir);
      for (const auto& row : rows) {
        std::cout << row.label << ',' << (row.report.delta ? row.report.delta->delta : 0.0) << "\n";
      }
    } else if (*report_cmd) {
      const auto n = write_report_bundle(runs_dir, out_dir);
      std::cout << "summarised " << n << " runs into " << out_dir << "\n";
    } else if (*synth_cmd) {
      SceneOptions opts;
      opts.size = size;
      opts.num_classes = classes;
      opts.d_far = d_far;
      const auto first = synthetic_scene(synth_seed, opts);
      write_dataset_info(out_dir, {first.intrinsics, d_far, classes});
      for (int64_t i = 0; i < count; ++i) {
        save_sample(out_dir, i, i == 0 ? first : synthetic_scene(synth_seed + static_cast<uint64_t>(i), opts));
      }
      std::cout << "wrote " << count << " scenes to " << out_dir << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
