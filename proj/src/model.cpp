#include "densemtl/model.hpp"

#include <algorithm>
#include <string>

namespace densemtl {

namespace F = torch::nn::functional;
using json = nlohmann::json;

std::string_view to_string(Architecture a) {
  switch (a) {
    case Architecture::Stl: return "stl";
    case Architecture::Mtl: return "mtl";
    case Architecture::Padnet: return "padnet";
    case Architecture::ThreewaysPadnet: return "threeways_padnet";
    case Architecture::Ours: return "ours";
  }
  return "?";
}

Architecture parse_architecture(std::string_view s) {
  if (s == "stl") return Architecture::Stl;
  if (s == "mtl") return Architecture::Mtl;
  if (s == "padnet") return Architecture::Padnet;
  if (s == "threeways_padnet") return Architecture::ThreewaysPadnet;
  if (s == "ours") return Architecture::Ours;
  throw ConfigError("unknown architecture '" + std::string(s) + "'");
}

void ModelConfig::validate() const {
  std::set<Task> seen;
  for (const auto& t : tasks) {
    if (!seen.insert(t.id).second) throw ConfigError("duplicate task " + std::string(task_code(t.id)));
    if (t.weight < 0) throw ConfigError("task weights must be nonnegative");
  }
  if (architecture == Architecture::Stl && tasks.size() != 1) {
    throw ConfigError("stl architecture takes exactly one task");
  }
  if (seen.count(Task::Segmentation) && num_classes < 1) {
    throw ConfigError("segmentation needs num_classes >= 1");
  }
  if (encoder.widths.empty() || encoder.blocks_per_stage < 1) {
    throw ConfigError("encoder needs at least one stage and one block per stage");
  }
  for (auto w : encoder.widths)
    if (w <= 0) throw ConfigError("encoder widths must be positive");
  if (static_cast<int64_t>(decoder.widths.size()) != encoder.stages() + 1) {
    throw ConfigError("decoder widths need one entry per scale (" +
                      std::to_string(encoder.stages() + 1) + ")");
  }
  for (auto w : decoder.widths)
    if (w <= 0) throw ConfigError("decoder widths must be positive");
  if (decoder.aspp_rates.empty()) throw ConfigError("ASPP needs at least one rate");
  for (int s : mteb_scales) {
    if (s < 1 || s > encoder.stages()) {
      throw ConfigError("exchange scale " + std::to_string(s) + " outside decoder range [1, " +
                        std::to_string(encoder.stages()) + "]");
    }
  }
  if (downscale < 1 || proj_dim < 0) throw ConfigError("invalid xTAM downscale or projection size");
}

bool ModelConfig::uses_aspp() const {
  if (decoder.use_aspp) return *decoder.use_aspp;
  return architecture == Architecture::ThreewaysPadnet || architecture == Architecture::Ours;
}

std::vector<Task> ModelConfig::task_ids() const {
  std::vector<Task> ids;
  for (const auto& t : tasks) ids.push_back(t.id);
  return ids;
}

XtamOptions ModelConfig::xtam_options(int64_t channels) const {
  XtamOptions o;
  o.channels = channels;
  o.proj_dim = proj_dim;
  o.downscale = downscale;
  o.attention = attention;
  o.use_self_attention = use_self_attention;
  return o;
}

int64_t ModelConfig::decoder_width(int scale) const {
  return decoder.widths.at(static_cast<size_t>(encoder.stages() - scale));
}

void to_json(json& j, const ModelConfig& c) {
  json tasks = json::array();
  for (const auto& t : c.tasks) tasks.push_back({{"id", task_code(t.id)}, {"weight", t.weight}});
  json decoder{{"aspp_rates", c.decoder.aspp_rates}, {"widths", c.decoder.widths}};
  decoder["use_aspp"] = c.decoder.use_aspp ? json(*c.decoder.use_aspp) : json(nullptr);
  j = json{{"architecture", to_string(c.architecture)},
           {"tasks", tasks},
           {"num_classes", c.num_classes},
           {"encoder", {{"widths", c.encoder.widths}, {"blocks_per_stage", c.encoder.blocks_per_stage}}},
           {"decoder", decoder},
           {"mteb_scales", c.mteb_scales},
           {"attention", to_string(c.attention)},
           {"fusion", to_string(c.fusion)},
           {"use_self_attention", c.use_self_attention},
           {"proj_dim", c.proj_dim},
           {"downscale", c.downscale}};
}

void from_json(const json& j, ModelConfig& c) {
  c = ModelConfig{};
  if (j.contains("architecture")) c.architecture = parse_architecture(j.at("architecture").get<std::string>());
  if (j.contains("tasks")) {
    std::vector<Task> ids;
    std::vector<std::optional<double>> weights;
    for (const auto& t : j.at("tasks")) {
      if (t.is_string()) {
        ids.push_back(parse_task(t.get<std::string>()));
        weights.emplace_back();
      } else {
        ids.push_back(parse_task(t.at("id").get<std::string>()));
        weights.push_back(t.contains("weight") ? std::optional(t.at("weight").get<double>()) : std::nullopt);
      }
    }
    c.tasks = default_task_specs(ids);
    for (size_t i = 0; i < ids.size(); ++i)
      if (weights[i]) c.tasks[i].weight = *weights[i];
  }
  c.num_classes = j.value("num_classes", c.num_classes);
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    c.encoder.widths = e.value("widths", c.encoder.widths);
    c.encoder.blocks_per_stage = e.value("blocks_per_stage", c.encoder.blocks_per_stage);
  }
  if (j.contains("decoder")) {
    const auto& d = j.at("decoder");
    if (d.contains("use_aspp") && !d.at("use_aspp").is_null()) c.decoder.use_aspp = d.at("use_aspp").get<bool>();
    c.decoder.aspp_rates = d.value("aspp_rates", c.decoder.aspp_rates);
    c.decoder.widths = d.value("widths", c.decoder.widths);
  }
  if (j.contains("mteb_scales")) c.mteb_scales = j.at("mteb_scales").get<std::set<int>>();
  if (j.contains("attention")) c.attention = parse_attention_kind(j.at("attention").get<std::string>());
  if (j.contains("fusion")) c.fusion = parse_fusion_kind(j.at("fusion").get<std::string>());
  c.use_self_attention = j.value("use_self_attention", c.use_self_attention);
  c.proj_dim = j.value("proj_dim", c.proj_dim);
  c.downscale = j.value("downscale", c.downscale);
}

torch::Tensor apply_head(Task task, const torch::Tensor& raw) {
  switch (task) {
    case Task::Segmentation: return raw;
    case Task::Depth: return F::softplus(raw) + 1e-4;
    case Task::Normals: return F::normalize(raw, F::NormalizeFuncOptions().dim(1).eps(1e-12));
    case Task::Edges: return torch::sigmoid(raw);
  }
  return raw;
}

namespace {

torch::nn::Sequential conv_bn_relu(int64_t in, int64_t out, int64_t kernel, int64_t stride = 1,
                                   int64_t dilation = 1) {
  const int64_t pad = (kernel / 2) * dilation;
  return torch::nn::Sequential(
      torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, kernel)
                            .stride(stride)
                            .padding(pad)
                            .dilation(dilation)
                            .bias(false)),
      torch::nn::BatchNorm2d(out), torch::nn::ReLU());
}

void append_conv_bn_relu(torch::nn::Sequential& seq, int64_t in, int64_t out, int64_t kernel,
                         int64_t stride = 1) {
  seq->push_back(torch::nn::Conv2d(
      torch::nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2).bias(false)));
  seq->push_back(torch::nn::BatchNorm2d(out));
  seq->push_back(torch::nn::ReLU());
}

torch::nn::Conv2d head_conv(int64_t in, int64_t out) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1));
}

torch::Tensor upsample_like(const torch::Tensor& x, const torch::Tensor& ref) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{ref.size(2), ref.size(3)})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

}  // namespace

EncoderImpl::EncoderImpl(const EncoderSpec& spec) {
  int64_t in = 3;
  for (size_t k = 0; k < spec.widths.size(); ++k) {
    const int64_t w = spec.widths[k];
    torch::nn::Sequential stage;
    append_conv_bn_relu(stage, in, w, 3, 2);
    for (int64_t b = 1; b < spec.blocks_per_stage; ++b) append_conv_bn_relu(stage, w, w, 3);
    stages_.push_back(register_module("stage" + std::to_string(k + 1), stage));
    in = w;
  }
}

std::vector<torch::Tensor> EncoderImpl::forward(const torch::Tensor& x) {
  std::vector<torch::Tensor> out;
  auto h = x;
  for (auto& stage : stages_) {
    h = stage->forward(h);
    out.push_back(h);
  }
  return out;
}

AsppImpl::AsppImpl(int64_t in, int64_t out, const std::vector<int64_t>& rates) {
  for (size_t i = 0; i < rates.size(); ++i) {
    const int64_t r = rates[i];
    auto branch = r == 1 ? conv_bn_relu(in, out, 1) : conv_bn_relu(in, out, 3, 1, r);
    branches_.push_back(register_module("branch" + std::to_string(i), branch));
  }
  // Image-level branch has a single spatial position; no batch norm there.
  pool_ = register_module(
      "pool", torch::nn::Sequential(torch::nn::AdaptiveAvgPool2d(1),
                                    torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1)),
                                    torch::nn::ReLU()));
  project_ = register_module(
      "project", conv_bn_relu(static_cast<int64_t>(rates.size() + 1) * out, out, 1));
}

torch::Tensor AsppImpl::forward(const torch::Tensor& x) {
  std::vector<torch::Tensor> parts;
  for (auto& b : branches_) parts.push_back(b->forward(x));
  parts.push_back(pool_->forward(x).expand({-1, -1, x.size(2), x.size(3)}));
  return project_->forward(torch::cat(parts, 1));
}

DecoderImpl::DecoderImpl(const ModelConfig& cfg) : stages_(cfg.encoder.stages()) {
  const auto& enc = cfg.encoder.widths;
  const int64_t top = enc.back();
  const int64_t w_top = cfg.decoder_width(static_cast<int>(stages_));
  if (cfg.uses_aspp()) {
    aspp_ = register_module("aspp", Aspp(top, w_top, cfg.decoder.aspp_rates));
  } else {
    plain_center_ = register_module("center", conv_bn_relu(top, w_top, 3));
  }
  ups_.resize(static_cast<size_t>(stages_), torch::nn::Sequential(nullptr));
  for (int s = static_cast<int>(stages_); s >= 1; --s) {
    const int64_t skip = s - 1 >= 1 ? enc[static_cast<size_t>(s - 2)] : 3;
    ups_[static_cast<size_t>(s - 1)] = register_module(
        "up" + std::to_string(s),
        conv_bn_relu(cfg.decoder_width(s) + skip, cfg.decoder_width(s - 1), 3));
  }
}

torch::Tensor DecoderImpl::start(const std::vector<torch::Tensor>& encoder_features) {
  const auto& top = encoder_features.back();
  return aspp_ ? aspp_->forward(top) : plain_center_->forward(top);
}

torch::Tensor DecoderImpl::up(int scale, const torch::Tensor& x, const torch::Tensor& skip) {
  auto h = torch::cat({upsample_like(x, skip), skip}, 1);
  return ups_.at(static_cast<size_t>(scale - 1))->forward(h);
}

MultiTaskNetImpl::MultiTaskNetImpl(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  encoder_ = register_module("encoder", Encoder(cfg_.encoder));
  const auto n = static_cast<int64_t>(cfg_.tasks.size());
  for (const auto& t : cfg_.tasks) {
    const std::string code(task_code(t.id));
    const int64_t out = head_channels(t.id, cfg_.num_classes);
    decoders_.push_back(register_module("decoder_" + code, Decoder(cfg_)));
    final_heads_.push_back(register_module("head_" + code, head_conv(cfg_.decoder_width(0), out)));
  }
  if (n == 0) return;
  for (int s : cfg_.mteb_scales) {
    const int64_t w = cfg_.decoder_width(s);
    auto& heads = inter_heads_[s];
    for (const auto& t : cfg_.tasks) {
      heads.push_back(register_module("inter_head_s" + std::to_string(s) + "_" + std::string(task_code(t.id)),
                                      head_conv(w, head_channels(t.id, cfg_.num_classes))));
    }
    switch (cfg_.architecture) {
      case Architecture::Ours:
        mtebs_.emplace(s, register_module("mteb_s" + std::to_string(s),
                                          Mteb(MtebOptions{n, cfg_.xtam_options(w), cfg_.fusion})));
        break;
      case Architecture::Padnet:
      case Architecture::ThreewaysPadnet:
        distills_.emplace(s, register_module("distill_s" + std::to_string(s), PadnetDistill(n, w)));
        break;
      default:
        break;
    }
  }
}

Mteb MultiTaskNetImpl::mteb(int scale) const {
  auto it = mtebs_.find(scale);
  return it == mtebs_.end() ? Mteb(nullptr) : it->second;
}

PadnetDistill MultiTaskNetImpl::distill(int scale) const {
  auto it = distills_.find(scale);
  return it == distills_.end() ? PadnetDistill(nullptr) : it->second;
}

void MultiTaskNetImpl::zero_exchange_combiners() {
  for (auto& [s, block] : mtebs_) block->zero_combiners();
}

MTLOutput MultiTaskNetImpl::forward(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3) throw ShapeError("forward: expected images [B,3,H,W]");
  const int64_t stages = cfg_.encoder.stages();
  const int64_t factor = int64_t{1} << stages;
  if (images.size(2) % factor != 0 || images.size(3) % factor != 0) {
    throw ShapeError("forward: input " + std::to_string(images.size(2)) + "x" +
                     std::to_string(images.size(3)) + " not divisible by " + std::to_string(factor));
  }
  const auto enc = encoder_->forward(images);
  MTLOutput out;
  const size_t n = cfg_.tasks.size();
  if (n == 0) return out;

  std::vector<torch::Tensor> feats(n);
  for (size_t t = 0; t < n; ++t) feats[t] = decoders_[t]->start(enc);

  for (int s = static_cast<int>(stages); s >= 1; --s) {
    if (auto hit = inter_heads_.find(s); hit != inter_heads_.end()) {
      auto& preds = out.intermediate[s];
      for (size_t t = 0; t < n; ++t) {
        const Task id = cfg_.tasks[t].id;
        preds[id] = apply_head(id, hit->second[t]->forward(feats[t]));
      }
      if (auto m = mtebs_.find(s); m != mtebs_.end()) feats = m->second->forward(feats);
      if (auto d = distills_.find(s); d != distills_.end()) feats = d->second->forward(feats);
    }
    const auto& skip = s >= 2 ? enc[static_cast<size_t>(s - 2)] : images;
    for (size_t t = 0; t < n; ++t) feats[t] = decoders_[t]->up(s, feats[t], skip);
  }
  for (size_t t = 0; t < n; ++t) {
    const Task id = cfg_.tasks[t].id;
    out.final[id] = apply_head(id, final_heads_[t]->forward(feats[t]));
  }
  return out;
}

MultiTaskNet build_model(const ModelConfig& cfg) {
  cfg.validate();
  return MultiTaskNet(cfg);
}

int64_t parameter_count(const torch::nn::Module& module) {
  int64_t total = 0;
  for (const auto& p : module.parameters()) {
    if (p.requires_grad()) total += p.numel();
  }
  return total;
}

}  // namespace densemtl
