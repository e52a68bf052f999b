#include "densemtl/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>

#include "densemtl/checkpoint.hpp"
#include "densemtl/dataset_io.hpp"
#include "densemtl/losses.hpp"

namespace densemtl {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;
using json = nlohmann::json;

void to_json(json& j, const RunReport& r) {
  j = json{{"name", r.name},
           {"architecture", r.architecture},
           {"config_hash", r.config_hash},
           {"config", r.config},
           {"losses", r.losses},
           {"disc_losses", r.disc_losses},
           {"metrics", metrics_to_json(r.metrics)},
           {"iterations", r.iterations},
           {"wall_time_s", r.wall_time_s},
           {"checkpoint", r.checkpoint}};
  if (r.delta) {
    json tasks = json::object();
    for (const auto& [t, m] : r.delta->tasks) {
      tasks[std::string(task_code(t))] = {{"model", m.model},
                                          {"baseline", m.baseline},
                                          {"direction", m.direction == MetricDirection::HigherBetter ? "higher" : "lower"}};
    }
    j["delta"] = {{"value", r.delta->delta}, {"tasks", tasks}};
  } else {
    j["delta"] = nullptr;
  }
}

void from_json(const json& j, RunReport& r) {
  r = RunReport{};
  r.name = j.value("name", std::string{});
  r.architecture = j.value("architecture", std::string{});
  r.config_hash = j.value("config_hash", std::string{});
  r.config = j.value("config", json::object());
  r.losses = j.value("losses", std::vector<double>{});
  r.disc_losses = j.value("disc_losses", std::vector<double>{});
  if (j.contains("metrics")) r.metrics = metrics_from_json(j.at("metrics"));
  r.iterations = j.value("iterations", int64_t{0});
  r.wall_time_s = j.value("wall_time_s", 0.0);
  r.checkpoint = j.value("checkpoint", std::string{});
  if (j.contains("delta") && !j.at("delta").is_null()) {
    DeltaReport d;
    d.delta = j.at("delta").at("value").get<double>();
    for (const auto& [k, v] : j.at("delta").at("tasks").items()) {
      d.tasks[parse_task(k)] = {v.at("model").get<double>(), v.at("baseline").get<double>(),
                                v.at("direction") == "higher" ? MetricDirection::HigherBetter
                                                              : MetricDirection::LowerBetter};
    }
    r.delta = d;
  }
}

void write_report(const fs::path& path, const RunReport& r) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << json(r).dump(2) << '\n';
}

RunReport read_report(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return json::parse(is).get<RunReport>();
}

void configure_determinism() {
  const char* flag = std::getenv("DENSEMTL_DETERMINISTIC");
  if (flag && std::string(flag) == "1") {
    at::globalContext().setDeterministicAlgorithms(true, false);
    torch::set_num_threads(1);
  }
}

std::vector<Sample> load_samples(const DatasetSpec& spec, int64_t num_classes) {
  if (spec.kind == "disk") return load_dataset(spec.root, spec.strict);
  SceneOptions opts;
  opts.size = spec.size;
  opts.num_classes = num_classes;
  opts.d_far = spec.d_far;
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(spec.count));
  for (int64_t i = 0; i < spec.count; ++i) out.push_back(synthetic_scene(spec.seed + static_cast<uint64_t>(i), opts));
  return out;
}

Batch downsample_batch(const Batch& b, int scale) {
  if (scale == 0) return b;
  const int64_t f = int64_t{1} << scale;
  Batch out;
  out.image = F::avg_pool2d(b.image, F::AvgPool2dFuncOptions(f));
  const int64_t h = b.seg.size(1), w = b.seg.size(2);
  out.seg = b.seg.slice(1, f / 2, h, f).slice(2, f / 2, w, f).contiguous();
  out.depth = F::avg_pool2d(b.depth, F::AvgPool2dFuncOptions(f));
  auto n = F::avg_pool2d(b.normals, F::AvgPool2dFuncOptions(f));
  auto len = n.norm(2, 1, true);
  // Opposing normals can cancel; fall back to the camera-facing axis there.
  auto fallback = torch::zeros_like(n);
  fallback.select(1, 2).fill_(-1.0);
  out.normals = torch::where(len > 1e-6, n / len.clamp_min(1e-6), fallback);
  out.edges = F::max_pool2d(b.edges, F::MaxPool2dFuncOptions(f));
  return out;
}

TaskLosses task_losses(const TaskPredictions& pred, const Batch& gt, double d_far) {
  TaskLosses out;
  for (const auto& [task, p] : pred) {
    switch (task) {
      case Task::Segmentation: out[task] = seg_loss(p, gt.seg).value; break;
      case Task::Depth: out[task] = depth_loss(p, gt.depth, DepthCodec{d_far}); break;
      case Task::Normals: out[task] = normal_loss(p, gt.normals); break;
      case Task::Edges: out[task] = edge_loss(p, gt.edges); break;
    }
  }
  return out;
}

std::map<Task, double> evaluate_model(MultiTaskNet& model, const std::vector<Sample>& samples, double,
                                      bool median_scaling, int64_t batch_size) {
  const bool was_training = model->is_training();
  model->eval();
  torch::NoGradGuard guard;
  std::vector<MetricAccumulator> acc;
  for (Task t : model->config().task_ids()) acc.emplace_back(t, model->config().num_classes);
  for (size_t start = 0; start < samples.size(); start += static_cast<size_t>(batch_size)) {
    const size_t stop = std::min(samples.size(), start + static_cast<size_t>(batch_size));
    const Batch b = collate({samples.begin() + static_cast<std::ptrdiff_t>(start),
                             samples.begin() + static_cast<std::ptrdiff_t>(stop)});
    const auto out = model->forward(b.image);
    for (auto& a : acc) {
      const auto& p = out.final.at(a.task());
      switch (a.task()) {
        case Task::Segmentation: a.update(p, b.seg); break;
        case Task::Depth: a.update(median_scaling ? median_scale(p, b.depth) : p, b.depth); break;
        case Task::Normals: a.update(p, b.normals); break;
        case Task::Edges: a.update(p, b.edges); break;
      }
    }
  }
  model->train(was_training);
  std::map<Task, double> metrics;
  for (const auto& a : acc) metrics[a.task()] = a.value();
  return metrics;
}

namespace {

std::set<int> supervised_scales(const MTLOutput& out) {
  std::set<int> s;
  for (const auto& [scale, _] : out.intermediate) s.insert(scale);
  return s;
}

TaskPredictions slice_batch(const TaskPredictions& p, int64_t start, int64_t length) {
  TaskPredictions out;
  for (const auto& [t, v] : p) out[t] = v.narrow(0, start, length);
  return out;
}

/// Discriminator input for an output map: weighted self-information for
/// segmentation, normalised depth otherwise.
torch::Tensor adaptation_map(Task task, const torch::Tensor& pred, const UdaConfig& cfg) {
  if (task == Task::Segmentation) return weighted_self_information(torch::softmax(pred, 1));
  return normalize_depth(pred, cfg);
}

void set_requires_grad(torch::nn::Module& m, bool flag) {
  for (auto& p : m.parameters()) p.set_requires_grad(flag);
}

}  // namespace

Trainer::Trainer(ExperimentConfig cfg) : cfg_(std::move(cfg)), rng_(cfg_.seed) {
  cfg_.validate();
  configure_determinism();
  torch::manual_seed(cfg_.seed);
  model_ = build_model(cfg_.model);
  source_ = load_samples(cfg_.data, cfg_.model.num_classes);
  if (source_.empty()) throw std::runtime_error("training set is empty");
  if (cfg_.uda) target_ = load_samples(*cfg_.target_data, cfg_.model.num_classes);

  std::vector<torch::Tensor> enc, dec;
  for (const auto& item : model_->named_parameters()) {
    (item.key().rfind("encoder.", 0) == 0 ? enc : dec).push_back(item.value());
  }
  const auto& o = cfg_.optimizer;
  std::vector<torch::optim::OptimizerParamGroup> groups;
  if (o.kind == "adam") {
    auto make = [&](double lr) {
      return std::make_unique<torch::optim::AdamOptions>(
          torch::optim::AdamOptions(lr).betas({o.beta1, o.beta2}).weight_decay(o.weight_decay));
    };
    groups.emplace_back(enc, make(o.encoder_lr));
    groups.emplace_back(dec, make(o.decoder_lr));
    optimizer_ = std::make_unique<torch::optim::Adam>(std::move(groups),
                                                      torch::optim::AdamOptions(o.decoder_lr));
  } else {
    auto make = [&](double lr) {
      return std::make_unique<torch::optim::SGDOptions>(
          torch::optim::SGDOptions(lr).momentum(o.momentum).weight_decay(o.weight_decay));
    };
    groups.emplace_back(enc, make(o.encoder_lr));
    groups.emplace_back(dec, make(o.decoder_lr));
    optimizer_ = std::make_unique<torch::optim::SGD>(std::move(groups), torch::optim::SGDOptions(o.decoder_lr));
  }

  if (cfg_.uda) {
    std::vector<int> scales{0};
    scales.insert(scales.end(), cfg_.model.mteb_scales.begin(), cfg_.model.mteb_scales.end());
    if (cfg_.model.architecture == Architecture::Stl || cfg_.model.architecture == Architecture::Mtl) {
      scales = {0};
    }
    std::vector<torch::Tensor> disc_params;
    for (Task t : cfg_.model.task_ids()) {
      if (t != Task::Segmentation && t != Task::Depth) continue;
      for (int s : scales) {
        const int64_t in = t == Task::Segmentation ? cfg_.model.num_classes : 1;
        // Stride-2 stages halve the map; stop before it vanishes.
        const int64_t side = std::min(source_.front().height(), source_.front().width()) >> s;
        int64_t stages = 0;
        while (stages < cfg_.uda->disc_stages && (side >> (stages + 1)) >= 1) ++stages;
        auto d = Discriminator(in, cfg_.uda->disc_width, stages);
        const auto p = d->parameters();
        disc_params.insert(disc_params.end(), p.begin(), p.end());
        discriminators_.push_back(d);
        disc_slots_.emplace_back(t, s);
      }
    }
    if (!discriminators_.empty()) {
      disc_optimizer_ = std::make_unique<torch::optim::Adam>(
          disc_params, torch::optim::AdamOptions(cfg_.uda->disc_lr).betas({0.9, 0.99}));
    }
  }
  model_->train();
}

Batch Trainer::next_batch(const std::vector<Sample>& pool, std::vector<size_t>& order, size_t& cursor) {
  const size_t n = std::min(pool.size(), static_cast<size_t>(cfg_.batch_size));
  std::vector<Sample> picked;
  picked.reserve(n);
  while (picked.size() < n) {
    if (cursor >= order.size()) {
      order.resize(pool.size());
      std::iota(order.begin(), order.end(), size_t{0});
      std::shuffle(order.begin(), order.end(), rng_);
      cursor = 0;
    }
    picked.push_back(pool[order[cursor++]]);
  }
  return collate(picked);
}

void Trainer::abort_nan(const TaskLosses& final_losses, const ScaleLosses& inter) {
  json dump{{"iteration", iteration_}, {"config", cfg_}};
  for (const auto& [t, v] : final_losses) dump["final"][std::string(task_code(t))] = v.item<double>();
  for (const auto& [s, losses] : inter) {
    for (const auto& [t, v] : losses) dump["scale_" + std::to_string(s)][std::string(task_code(t))] = v.item<double>();
  }
  std::string where;
  if (!out_dir_.empty()) {
    fs::create_directories(out_dir_);
    const auto path = out_dir_ / "nan_dump.json";
    std::ofstream(path) << dump.dump(2) << '\n';
    where = " (diagnostics in " + path.string() + ")";
  } else {
    std::cerr << dump.dump(2) << '\n';
  }
  throw std::runtime_error("non-finite loss at iteration " + std::to_string(iteration_) + where);
}

double Trainer::step() {
  const auto& o = cfg_.optimizer;
  if (iteration_ > 0 && o.lr_decay_step > 0 && iteration_ % o.lr_decay_step == 0) {
    for (auto& g : optimizer_->param_groups()) g.options().set_lr(g.options().get_lr() * o.lr_decay);
  }
  const double d_far = cfg_.data.d_far;
  const Batch src = next_batch(source_, source_order_, source_cursor_);
  const int64_t ns = src.image.size(0);

  std::optional<Batch> trg;
  torch::Tensor images = src.image;
  if (cfg_.uda) {
    trg = next_batch(target_, target_order_, target_cursor_);
    images = torch::cat({src.image, trg->image}, 0);
  }
  const MTLOutput out = model_->forward(images);
  const int64_t nt = images.size(0) - ns;

  const auto scales = supervised_scales(out);
  ScaleLosses inter;
  for (int s : scales) {
    inter[s] = task_losses(slice_batch(out.intermediate.at(s), 0, ns), downsample_batch(src, s), d_far);
  }
  const TaskLosses fin = task_losses(slice_batch(out.final, 0, ns), src, d_far);

  torch::Tensor loss;
  std::vector<std::pair<torch::Tensor, torch::Tensor>> disc_inputs;  // (source, target) maps
  if (cfg_.uda && !discriminators_.empty()) {
    ScaleLosses adv_inter;
    TaskLosses adv_final;
    for (size_t k = 0; k < discriminators_.size(); ++k) {
      const auto [task, s] = disc_slots_[k];
      const auto& pred = s == 0 ? out.final.at(task) : out.intermediate.at(s).at(task);
      auto q_src = adaptation_map(task, pred.narrow(0, 0, ns), *cfg_.uda);
      auto q_trg = adaptation_map(task, pred.narrow(0, ns, nt), *cfg_.uda);
      set_requires_grad(*discriminators_[k], false);
      auto adv = adversarial_loss(*discriminators_[k], q_trg);
      set_requires_grad(*discriminators_[k], true);
      (s == 0 ? adv_final[task] : adv_inter[s][task]) = adv;
      disc_inputs.emplace_back(q_src.detach(), q_trg.detach());
    }
    loss = mtl_uda_total(inter, fin, adv_inter, adv_final, cfg_.model.tasks, scales, *cfg_.uda);
  } else {
    loss = total_loss(inter, fin, cfg_.model.tasks, scales);
  }

  const double value = loss.item<double>();
  if (!std::isfinite(value)) abort_nan(fin, inter);
  optimizer_->zero_grad();
  loss.backward();
  if (o.grad_clip > 0) torch::nn::utils::clip_grad_norm_(model_->parameters(), o.grad_clip);
  optimizer_->step();

  if (disc_optimizer_) {
    disc_optimizer_->zero_grad();
    torch::Tensor disc_total;
    for (size_t k = 0; k < discriminators_.size(); ++k) {
      auto l = discriminator_loss(*discriminators_[k], disc_inputs[k].first, disc_inputs[k].second);
      disc_total = disc_total.defined() ? disc_total + l : l;
    }
    disc_total.backward();
    disc_optimizer_->step();
    last_disc_loss_ = disc_total.item<double>() / static_cast<double>(discriminators_.size());
  }
  ++iteration_;
  return value;
}

std::vector<double> Trainer::learning_rates() const {
  std::vector<double> out;
  for (const auto& g : optimizer_->param_groups()) out.push_back(g.options().get_lr());
  return out;
}

std::map<Task, double> Trainer::evaluate() {
  if (cfg_.eval_data) {
    return evaluate_model(model_, load_samples(*cfg_.eval_data, cfg_.model.num_classes), cfg_.eval_data->d_far,
                          cfg_.uda.has_value());
  }
  if (cfg_.uda) return evaluate_model(model_, target_, cfg_.target_data->d_far, true);
  return evaluate_model(model_, source_, cfg_.data.d_far);
}

bool Trainer::targets_met(const std::map<Task, double>& metrics) const {
  if (cfg_.early_stop.targets.empty()) return false;
  for (const auto& [task, target] : cfg_.early_stop.targets) {
    auto it = metrics.find(task);
    if (it == metrics.end()) return false;
    const bool ok = metric_direction(task) == MetricDirection::HigherBetter ? it->second > target
                                                                             : it->second < target;
    if (!ok) return false;
  }
  return true;
}

void Trainer::save(const fs::path& path) {
  json extra{{"d_far", cfg_.data.d_far},
             {"iteration", iteration_},
             {"config_hash", config_hash(cfg_)},
             {"median_scaling", cfg_.uda.has_value()}};
  save_checkpoint(path, *model_, cfg_.model, extra);
}

RunReport Trainer::run(const fs::path& out_dir) {
  out_dir_ = out_dir;
  const auto t0 = std::chrono::steady_clock::now();
  RunReport report;
  report.name = cfg_.name;
  report.architecture = std::string(to_string(cfg_.model.architecture));
  report.config_hash = config_hash(cfg_);
  report.config = cfg_;

  while (iteration_ < cfg_.iterations) {
    report.losses.push_back(step());
    if (cfg_.uda) report.disc_losses.push_back(last_disc_loss_);
    if (cfg_.log_every > 0 && iteration_ % cfg_.log_every == 0) {
      std::cerr << "[" << cfg_.name << "] iter " << iteration_ << " loss " << report.losses.back() << '\n';
    }
    if (!out_dir_.empty() && cfg_.checkpoint_every > 0 && iteration_ % cfg_.checkpoint_every == 0) {
      save(out_dir_ / "checkpoint.bin");
    }
    if (cfg_.early_stop.every > 0 && iteration_ % cfg_.early_stop.every == 0 && targets_met(evaluate())) break;
  }
  report.iterations = iteration_;
  report.metrics = evaluate();
  if (cfg_.baselines) report.delta = make_delta_report(report.metrics, *cfg_.baselines);
  if (!out_dir_.empty()) {
    save(out_dir_ / "checkpoint.bin");
    report.checkpoint = (out_dir_ / "checkpoint.bin").string();
  }
  report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!out_dir_.empty()) write_report(out_dir_ / "report.json", report);
  return report;
}

std::map<Task, double> read_baselines(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read baselines " + path.string());
  const json j = json::parse(is);
  std::map<Task, double> out;
  auto merge = [&](const json& report) {
    for (const auto& [t, v] : metrics_from_json(report.at("metrics"))) out[t] = v;
  };
  if (j.is_array()) {
    for (const auto& r : j) merge(r);
  } else if (j.contains("metrics")) {
    merge(j);
  } else {
    out = metrics_from_json(j);
  }
  return out;
}

RunReport evaluate_checkpoint(const fs::path& checkpoint, const fs::path& data,
                              const std::optional<std::map<Task, double>>& baselines) {
  const auto t0 = std::chrono::steady_clock::now();
  json extra;
  MultiTaskNet model = load_model(checkpoint, &extra);
  const auto info = read_dataset_info(data);
  const auto samples = load_dataset(data);
  if (samples.empty()) throw std::runtime_error("no readable samples in " + data.string());
  RunReport r;
  r.name = checkpoint.parent_path().filename().string();
  if (r.name.empty()) r.name = checkpoint.stem().string();
  r.architecture = std::string(to_string(model->config().architecture));
  r.config_hash = extra.value("config_hash", std::string{});
  r.config = json{{"model", model->config()}};
  r.iterations = extra.value("iteration", int64_t{0});
  r.metrics = evaluate_model(model, samples, info.d_far, extra.value("median_scaling", false));
  if (baselines) r.delta = make_delta_report(r.metrics, *baselines);
  r.checkpoint = checkpoint.string();
  r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace densemtl
