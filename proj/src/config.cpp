#include "densemtl/config.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

namespace densemtl {

using json = nlohmann::json;

namespace {

json dataset_to_json(const DatasetSpec& d) {
  return {{"kind", d.kind}, {"root", d.root},   {"seed", d.seed},    {"count", d.count},
          {"size", d.size}, {"d_far", d.d_far}, {"strict", d.strict}};
}

DatasetSpec dataset_from_json(const json& j) {
  DatasetSpec d;
  d.kind = j.value("kind", d.kind);
  d.root = j.value("root", d.root);
  d.seed = j.value("seed", d.seed);
  d.count = j.value("count", d.count);
  d.size = j.value("size", d.size);
  d.d_far = j.value("d_far", d.d_far);
  d.strict = j.value("strict", d.strict);
  return d;
}

json uda_to_json(const UdaConfig& u) {
  return {{"lambda_adv", u.lambda_adv}, {"depth_min", u.depth_min},     {"depth_max", u.depth_max},
          {"disc_width", u.disc_width}, {"disc_stages", u.disc_stages}, {"disc_lr", u.disc_lr}};
}

UdaConfig uda_from_json(const json& j) {
  UdaConfig u;
  u.lambda_adv = j.value("lambda_adv", u.lambda_adv);
  u.depth_min = j.value("depth_min", u.depth_min);
  u.depth_max = j.value("depth_max", u.depth_max);
  u.disc_width = j.value("disc_width", u.disc_width);
  u.disc_stages = j.value("disc_stages", u.disc_stages);
  u.disc_lr = j.value("disc_lr", u.disc_lr);
  return u;
}

void validate_dataset(const DatasetSpec& d, const BudgetSpec& budget, const char* what) {
  if (d.kind != "synthetic" && d.kind != "disk") {
    throw ConfigError(std::string(what) + ": dataset kind must be 'synthetic' or 'disk'");
  }
  if (d.kind == "disk" && d.root.empty()) throw ConfigError(std::string(what) + ": disk dataset needs a root");
  if (d.kind == "synthetic") {
    if (d.count < 1) throw ConfigError(std::string(what) + ": count must be positive");
    if (d.count > budget.max_samples) {
      throw ConfigError(std::string(what) + ": " + std::to_string(d.count) +
                        " samples exceed the declared budget of " + std::to_string(budget.max_samples));
    }
    if (d.size < 32) throw ConfigError(std::string(what) + ": size must be at least 32");
  }
  if (d.d_far <= 0) throw ConfigError(std::string(what) + ": d_far must be positive");
}

}  // namespace

void ExperimentConfig::validate() const {
  model.validate();
  validate_dataset(data, budget, "data");
  if (target_data) validate_dataset(*target_data, budget, "target_data");
  if (eval_data) validate_dataset(*eval_data, budget, "eval_data");
  if (uda) {
    uda->validate();
    if (!target_data) throw ConfigError("adaptation runs need target_data");
  }
  if (iterations < 0) throw ConfigError("iterations must be nonnegative");
  if (iterations > budget.max_iterations) {
    throw ConfigError(std::to_string(iterations) + " iterations exceed the declared budget of " +
                      std::to_string(budget.max_iterations));
  }
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (optimizer.kind != "adam" && optimizer.kind != "sgd") {
    throw ConfigError("optimizer kind must be 'adam' or 'sgd'");
  }
  if (optimizer.encoder_lr <= 0 || optimizer.decoder_lr <= 0) throw ConfigError("learning rates must be positive");
}

void to_json(json& j, const ExperimentConfig& c) {
  const auto& o = c.optimizer;
  j = json{{"name", c.name},
           {"model", c.model},
           {"data", dataset_to_json(c.data)},
           {"target_data", c.target_data ? dataset_to_json(*c.target_data) : json(nullptr)},
           {"uda", c.uda ? uda_to_json(*c.uda) : json(nullptr)},
           {"eval_data", c.eval_data ? dataset_to_json(*c.eval_data) : json(nullptr)},
           {"optimizer",
            {{"kind", o.kind},
             {"encoder_lr", o.encoder_lr},
             {"decoder_lr", o.decoder_lr},
             {"beta1", o.beta1},
             {"beta2", o.beta2},
             {"momentum", o.momentum},
             {"weight_decay", o.weight_decay},
             {"lr_decay_step", o.lr_decay_step},
             {"lr_decay", o.lr_decay},
             {"grad_clip", o.grad_clip}}},
           {"iterations", c.iterations},
           {"batch_size", c.batch_size},
           {"log_every", c.log_every},
           {"checkpoint_every", c.checkpoint_every},
           {"seed", c.seed},
           {"budget", {{"max_iterations", c.budget.max_iterations}, {"max_samples", c.budget.max_samples}}},
           {"early_stop", {{"every", c.early_stop.every}, {"targets", metrics_to_json(c.early_stop.targets)}}},
           {"baselines", c.baselines ? metrics_to_json(*c.baselines) : json(nullptr)}};
}

void from_json(const json& j, ExperimentConfig& c) {
  c = ExperimentConfig{};
  c.name = j.value("name", c.name);
  if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
  if (j.contains("data")) c.data = dataset_from_json(j.at("data"));
  if (j.contains("target_data") && !j.at("target_data").is_null()) c.target_data = dataset_from_json(j.at("target_data"));
  if (j.contains("uda") && !j.at("uda").is_null()) c.uda = uda_from_json(j.at("uda"));
  if (j.contains("eval_data") && !j.at("eval_data").is_null()) c.eval_data = dataset_from_json(j.at("eval_data"));
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    auto& d = c.optimizer;
    d.kind = o.value("kind", d.kind);
    d.encoder_lr = o.value("encoder_lr", d.encoder_lr);
    d.decoder_lr = o.value("decoder_lr", d.decoder_lr);
    d.beta1 = o.value("beta1", d.beta1);
    d.beta2 = o.value("beta2", d.beta2);
    d.momentum = o.value("momentum", d.momentum);
    d.weight_decay = o.value("weight_decay", d.weight_decay);
    d.lr_decay_step = o.value("lr_decay_step", d.lr_decay_step);
    d.lr_decay = o.value("lr_decay", d.lr_decay);
    d.grad_clip = o.value("grad_clip", d.grad_clip);
  }
  c.iterations = j.value("iterations", c.iterations);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.log_every = j.value("log_every", c.log_every);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.seed = j.value("seed", c.seed);
  if (j.contains("budget")) {
    c.budget.max_iterations = j.at("budget").value("max_iterations", c.budget.max_iterations);
    c.budget.max_samples = j.at("budget").value("max_samples", c.budget.max_samples);
  }
  if (j.contains("early_stop")) {
    c.early_stop.every = j.at("early_stop").value("every", int64_t{0});
    if (j.at("early_stop").contains("targets")) c.early_stop.targets = metrics_from_json(j.at("early_stop").at("targets"));
  }
  if (j.contains("baselines") && !j.at("baselines").is_null()) c.baselines = metrics_from_json(j.at("baselines"));
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg = json::parse(text).get<ExperimentConfig>();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

std::string dump_config(const ExperimentConfig& cfg) { return json(cfg).dump(2) + "\n"; }

std::string config_hash(const ExperimentConfig& cfg) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : dump_config(cfg)) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

json metrics_to_json(const std::map<Task, double>& metrics) {
  json j = json::object();
  for (const auto& [t, v] : metrics) j[std::string(task_code(t))] = v;
  return j;
}

std::map<Task, double> metrics_from_json(const json& j) {
  std::map<Task, double> m;
  for (const auto& [k, v] : j.items()) m[parse_task(k)] = v.get<double>();
  return m;
}

}  // namespace densemtl
