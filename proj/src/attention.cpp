#include "densemtl/attention.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace densemtl {

namespace F = torch::nn::functional;

std::string_view to_string(AttentionKind k) {
  switch (k) {
    case AttentionKind::Spatial: return "spatial";
    case AttentionKind::Channel: return "channel";
    case AttentionKind::Both: return "both";
  }
  return "?";
}

std::string_view to_string(FusionKind k) {
  switch (k) {
    case FusionKind::Add: return "add";
    case FusionKind::Concat: return "concat";
    case FusionKind::Prod: return "prod";
  }
  return "?";
}

AttentionKind parse_attention_kind(std::string_view s) {
  if (s == "spatial") return AttentionKind::Spatial;
  if (s == "channel") return AttentionKind::Channel;
  if (s == "both") return AttentionKind::Both;
  throw ConfigError("unknown attention kind '" + std::string(s) + "'");
}

FusionKind parse_fusion_kind(std::string_view s) {
  if (s == "add") return FusionKind::Add;
  if (s == "concat") return FusionKind::Concat;
  if (s == "prod") return FusionKind::Prod;
  throw ConfigError("unknown fusion kind '" + std::string(s) + "'");
}

int64_t XtamOptions::resolved_proj_dim() const {
  return proj_dim > 0 ? proj_dim : std::max<int64_t>(channels / 8, 8);
}

namespace {

torch::nn::Conv2d conv1x1(int64_t in, int64_t out, bool bias = true) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1).bias(bias));
}

torch::nn::Conv2d conv3x3(int64_t in, int64_t out) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1));
}

void require_4d(const torch::Tensor& t, const char* what) {
  if (!t.defined() || t.dim() != 4) {
    throw ShapeError(std::string(what) + ": expected a [B, C, H, W] feature map");
  }
  if (t.size(1) <= 0 || t.size(2) <= 0 || t.size(3) <= 0) {
    throw ShapeError(std::string(what) + ": channels and spatial dims must be positive");
  }
}

void require_divisible(const torch::Tensor& t, int64_t factor, const char* what) {
  if (t.size(2) % factor != 0 || t.size(3) % factor != 0) {
    throw ShapeError(std::string(what) + ": spatial size " + std::to_string(t.size(2)) + "x" +
                     std::to_string(t.size(3)) + " is not divisible by downscale factor " +
                     std::to_string(factor));
  }
}

FeatureMap upsample_to(const FeatureMap& x, int64_t h, int64_t w) {
  if (x.size(2) == h && x.size(3) == w) return x;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{h, w})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

}  // namespace

FeatureMap downscale(const FeatureMap& f, int64_t factor) {
  if (factor == 1) return f;
  return F::avg_pool2d(f, F::AvgPool2dFuncOptions(factor).stride(factor));
}

XtamDirectionImpl::XtamDirectionImpl(XtamOptions options) : options_(options) {
  const int64_t c = options_.channels;
  if (c <= 0) throw ConfigError("xTAM channel count must be positive");
  if (options_.downscale <= 0) throw ConfigError("xTAM downscale factor must be positive");
  const int64_t d = options_.resolved_proj_dim();

  if (options_.attention != AttentionKind::Channel) {
    query = register_module("query", conv1x1(c, d));
    // A key bias shifts each softmax row by a constant and never trains.
    key = register_module("key", conv1x1(c, d, false));
  }
  if (options_.attention != AttentionKind::Spatial) {
    channel_query = register_module("channel_query", conv1x1(c, c));
    channel_key = register_module("channel_key", conv1x1(c, c));
  }
  value = register_module("value", conv1x1(c, c));
  gate = register_parameter("gate", torch::zeros({c}));
  if (options_.use_self_attention) {
    self_feat = register_module("self_feat", conv3x3(c, c));
    self_mask = register_module("self_mask", conv3x3(c, c));
  }
}

FeatureMap XtamDirectionImpl::forward(const FeatureMap& f_i, const FeatureMap& f_j) {
  auto corr = correlation_matrix(f_i, f_j, *this);
  auto xtask = xtask_features(f_j, corr, *this);
  FeatureMap selfattn;
  if (options_.use_self_attention) selfattn = self_attention(f_j, *this);
  return directional_feature(xtask, selfattn, *this);
}

CorrelationMatrix correlation_matrix(const FeatureMap& f_i, const FeatureMap& f_j,
                                     XtamDirectionImpl& p) {
  require_4d(f_i, "correlation_matrix(f_i)");
  require_4d(f_j, "correlation_matrix(f_j)");
  if (f_i.size(0) != f_j.size(0)) throw ShapeError("correlation_matrix: batch sizes differ");
  const auto& opt = p.options();
  const int64_t s = opt.downscale;
  require_divisible(f_i, s, "correlation_matrix(f_i)");
  require_divisible(f_j, s * s, "correlation_matrix(f_j)");

  const auto pooled_i = downscale(f_i, s);
  const auto pooled_j = downscale(f_j, s * s);

  CorrelationMatrix corr;
  corr.query_grid = {pooled_i.size(2), pooled_i.size(3)};
  corr.key_grid = {pooled_j.size(2), pooled_j.size(3)};

  if (opt.attention != AttentionKind::Channel) {
    const double d = static_cast<double>(opt.resolved_proj_dim());
    auto q = p.query->forward(pooled_i).flatten(2);  // [B, d, N_i]
    auto k = p.key->forward(pooled_j).flatten(2);    // [B, d, N_j]
    auto logits = torch::bmm(q.transpose(1, 2), k) / std::sqrt(d);
    corr.spatial = torch::softmax(logits, -1);
  }
  if (opt.attention != AttentionKind::Spatial) {
    const double c = static_cast<double>(opt.channels);
    auto q = p.channel_query->forward(pooled_i).mean({2, 3});  // [B, c]
    auto k = p.channel_key->forward(pooled_j).mean({2, 3});    // [B, c]
    auto logits = q.unsqueeze(2) * k.unsqueeze(1) / std::sqrt(c);
    corr.channel = torch::softmax(logits, -1);
  }
  return corr;
}

FeatureMap xtask_features(const FeatureMap& f_j, const CorrelationMatrix& corr,
                          XtamDirectionImpl& p) {
  require_4d(f_j, "xtask_features(f_j)");
  const int64_t s = p.options().downscale;
  require_divisible(f_j, s * s, "xtask_features(f_j)");
  auto v = p.value->forward(downscale(f_j, s * s));
  const int64_t b = v.size(0);
  const int64_t c = v.size(1);
  const GridSize vgrid{v.size(2), v.size(3)};
  auto flat = v.flatten(2);  // [B, c, N_j]

  if (corr.channel.defined()) {
    if (corr.channel.size(0) != b || corr.channel.size(1) != c || corr.channel.size(2) != c) {
      throw ShapeError("xtask_features: channel correlation does not match value channels");
    }
    flat = torch::bmm(corr.channel, flat);
  }
  if (corr.spatial.defined()) {
    if (corr.spatial.dim() != 3 || corr.spatial.size(0) != b ||
        corr.spatial.size(2) != vgrid.positions()) {
      throw ShapeError("xtask_features: correlation has " +
                       std::to_string(corr.spatial.size(-1)) + " sender positions, values have " +
                       std::to_string(vgrid.positions()));
    }
    if (corr.spatial.size(1) != corr.query_grid.positions()) {
      throw ShapeError("xtask_features: correlation rows do not match the query grid");
    }
    auto out = torch::bmm(flat, corr.spatial.transpose(1, 2));  // [B, c, N_i]
    out = out.view({b, c, corr.query_grid.height, corr.query_grid.width});
    return upsample_to(out, corr.query_grid.height * s, corr.query_grid.width * s);
  }
  if (!corr.channel.defined()) throw ShapeError("xtask_features: empty correlation");
  auto out = flat.view({b, c, vgrid.height, vgrid.width});
  return upsample_to(out, vgrid.height * s * s, vgrid.width * s * s);
}

FeatureMap self_attention(const FeatureMap& f_j, XtamDirectionImpl& p) {
  require_4d(f_j, "self_attention(f_j)");
  if (!p.self_feat || !p.self_mask) {
    throw ConfigError("self_attention: direction was built without self-attention");
  }
  return p.self_feat->forward(f_j) * torch::sigmoid(p.self_mask->forward(f_j));
}

FeatureMap directional_feature(const FeatureMap& xtask, const FeatureMap& selfattn,
                               const XtamDirectionImpl& p) {
  require_4d(xtask, "directional_feature(xtask)");
  if (xtask.size(1) != p.gate.numel()) {
    throw ConfigError("directional_feature: gate has " + std::to_string(p.gate.numel()) +
                      " entries but xtask has " + std::to_string(xtask.size(1)) + " channels");
  }
  auto gated = xtask * p.gate.view({1, -1, 1, 1});
  if (!p.options().use_self_attention) return gated;
  require_4d(selfattn, "directional_feature(selfattn)");
  if (selfattn.sizes() != xtask.sizes()) {
    throw ShapeError("directional_feature: xtask and selfattn shapes differ");
  }
  return torch::cat({gated, selfattn}, 1);
}

XtamImpl::XtamImpl(const XtamOptions& options) {
  to_i = register_module("to_i", XtamDirection(options));
  to_j = register_module("to_j", XtamDirection(options));
}

std::pair<FeatureMap, FeatureMap> XtamImpl::forward(const FeatureMap& f_i, const FeatureMap& f_j) {
  return xtam_bidirectional(f_i, f_j, *to_i, *to_j);
}

std::pair<FeatureMap, FeatureMap> xtam_bidirectional(const FeatureMap& f_i, const FeatureMap& f_j,
                                                     XtamDirectionImpl& to_i,
                                                     XtamDirectionImpl& to_j) {
  return {to_i.forward(f_i, f_j), to_j.forward(f_j, f_i)};
}

MtebImpl::MtebImpl(MtebOptions options) : options_(options) {
  const int64_t n = options_.num_tasks;
  const int64_t c = options_.xtam.channels;
  if (n < 1) throw ConfigError("mTEB needs at least one task");
  for (int64_t a = 0; a < n; ++a) {
    for (int64_t b = a + 1; b < n; ++b) {
      pairs_.push_back(register_module("pair_" + std::to_string(a) + "_" + std::to_string(b),
                                       Xtam(options_.xtam)));
    }
  }
  if (n == 1) return;
  const int64_t in = (n - 1) * options_.xtam.output_channels();
  for (int64_t i = 0; i < n; ++i) {
    torch::nn::Sequential seq(conv1x1(in, c, false), torch::nn::BatchNorm2d(c), torch::nn::ReLU());
    combiners_.push_back(register_module("combiner_" + std::to_string(i), seq));
    if (options_.fusion == FusionKind::Concat) {
      concat_proj_.push_back(
          register_module("concat_proj_" + std::to_string(i), conv1x1(2 * c, c)));
    }
  }
}

Xtam MtebImpl::pair(size_t a, size_t b) const {
  const size_t n = static_cast<size_t>(options_.num_tasks);
  if (a >= b || b >= n) throw std::out_of_range("mTEB pair index");
  // Row-major index into the strict upper triangle.
  const size_t idx = a * n - a * (a + 1) / 2 + (b - a - 1);
  return pairs_.at(idx);
}

void MtebImpl::zero_combiners() {
  torch::NoGradGuard guard;
  for (auto& seq : combiners_) {
    for (auto& p : seq->parameters()) p.zero_();
  }
}

std::vector<FeatureMap> MtebImpl::forward(const std::vector<FeatureMap>& features) {
  const size_t n = features.size();
  if (static_cast<int64_t>(n) != options_.num_tasks) {
    throw ShapeError("mTEB built for " + std::to_string(options_.num_tasks) + " tasks, got " +
                     std::to_string(n));
  }
  if (n == 1) return features;
  for (size_t t = 0; t < n; ++t) {
    require_4d(features[t], "mteb_refine");
    if (features[t].sizes() != features[0].sizes()) {
      throw ShapeError("mteb_refine: task features have inconsistent shapes");
    }
  }

  std::vector<std::vector<FeatureMap>> incoming(n);
  for (size_t a = 0; a < n; ++a) {
    for (size_t b = a + 1; b < n; ++b) {
      auto [to_a, to_b] = pair(a, b)->forward(features[a], features[b]);
      incoming[a].push_back(std::move(to_a));
      incoming[b].push_back(std::move(to_b));
    }
  }

  std::vector<FeatureMap> refined;
  refined.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    auto residual = combiners_[i]->forward(torch::cat(incoming[i], 1));
    switch (options_.fusion) {
      case FusionKind::Add:
        refined.push_back(features[i] + residual);
        break;
      case FusionKind::Prod:
        refined.push_back(features[i] * (1 + residual));
        break;
      case FusionKind::Concat:
        refined.push_back(concat_proj_[i]->forward(torch::cat({features[i], residual}, 1)));
        break;
    }
  }
  return refined;
}

std::vector<FeatureMap> mteb_refine(const std::vector<FeatureMap>& features, MtebImpl& block) {
  return block.forward(features);
}

PadnetDistillImpl::PadnetDistillImpl(int64_t num_tasks, int64_t channels) : num_tasks_(num_tasks) {
  if (num_tasks < 1) throw ConfigError("distillation block needs at least one task");
  const auto n = static_cast<size_t>(num_tasks);
  feat_.resize(n * n, torch::nn::Conv2d(nullptr));
  mask_.resize(n * n, torch::nn::Conv2d(nullptr));
  for (size_t j = 0; j < n; ++j) {
    for (size_t i = 0; i < n; ++i) {
      if (i == j) continue;
      const std::string tag = std::to_string(j) + "_" + std::to_string(i);
      feat_[j * n + i] = register_module("msg_feat_" + tag, conv3x3(channels, channels));
      mask_[j * n + i] = register_module("msg_mask_" + tag, conv3x3(channels, channels));
    }
  }
}

std::pair<torch::nn::Conv2d, torch::nn::Conv2d> PadnetDistillImpl::message(size_t j,
                                                                           size_t i) const {
  const auto n = static_cast<size_t>(num_tasks_);
  if (i == j || i >= n || j >= n) throw std::out_of_range("distillation message index");
  return {feat_[j * n + i], mask_[j * n + i]};
}

std::vector<FeatureMap> PadnetDistillImpl::forward(const std::vector<FeatureMap>& features) {
  const size_t n = features.size();
  if (static_cast<int64_t>(n) != num_tasks_) {
    throw ShapeError("distillation block built for " + std::to_string(num_tasks_) +
                     " tasks, got " + std::to_string(n));
  }
  if (n == 1) return features;
  for (const auto& f : features) {
    require_4d(f, "padnet_distill");
    if (f.sizes() != features[0].sizes()) {
      throw ShapeError("padnet_distill: task features have inconsistent shapes");
    }
  }
  std::vector<FeatureMap> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    auto acc = features[i];
    for (size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      auto [feat, mask] = message(j, i);
      acc = acc + feat->forward(features[j]) * torch::sigmoid(mask->forward(features[j]));
    }
    out.push_back(acc);
  }
  return out;
}

std::vector<FeatureMap> padnet_distill(const std::vector<FeatureMap>& features,
                                       PadnetDistillImpl& block) {
  return block.forward(features);
}

}  // namespace densemtl
