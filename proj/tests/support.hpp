#pragma once

// Test-only helpers: loop oracles and a finite-difference gradient checker.

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "densemtl/attention.hpp"

namespace densemtl::testing {

inline torch::TensorOptions f64() { return torch::TensorOptions().dtype(torch::kDouble); }

/// Plain nested-vector image: [c][y][x].
using Grid3 = std::vector<std::vector<std::vector<double>>>;

inline Grid3 to_grid(const torch::Tensor& chw) {
  auto t = chw.to(torch::kDouble).contiguous();
  auto a = t.accessor<double, 3>();
  Grid3 g(static_cast<size_t>(t.size(0)),
          std::vector<std::vector<double>>(static_cast<size_t>(t.size(1)),
                                           std::vector<double>(static_cast<size_t>(t.size(2)))));
  for (int64_t c = 0; c < t.size(0); ++c)
    for (int64_t y = 0; y < t.size(1); ++y)
      for (int64_t x = 0; x < t.size(2); ++x) g[c][y][x] = a[c][y][x];
  return g;
}

inline torch::Tensor from_grid(const Grid3& g) {
  const int64_t c = static_cast<int64_t>(g.size()), h = static_cast<int64_t>(g[0].size()),
                w = static_cast<int64_t>(g[0][0].size());
  auto t = torch::empty({c, h, w}, f64());
  auto a = t.accessor<double, 3>();
  for (int64_t k = 0; k < c; ++k)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) a[k][y][x] = g[k][y][x];
  return t;
}

inline Grid3 loop_avg_pool(const Grid3& in, int64_t f) {
  const size_t c = in.size(), h = in[0].size() / f, w = in[0][0].size() / f;
  Grid3 out(c, std::vector<std::vector<double>>(h, std::vector<double>(w, 0.0)));
  for (size_t k = 0; k < c; ++k)
    for (size_t y = 0; y < h; ++y)
      for (size_t x = 0; x < w; ++x) {
        double s = 0;
        for (int64_t dy = 0; dy < f; ++dy)
          for (int64_t dx = 0; dx < f; ++dx) s += in[k][y * f + dy][x * f + dx];
        out[k][y][x] = s / static_cast<double>(f * f);
      }
  return out;
}

/// 1x1 convolution from explicit weight [out, in, 1, 1] and bias.
inline Grid3 loop_conv1x1(const Grid3& in, const torch::nn::Conv2d& conv) {
  auto w = conv->weight.detach().to(torch::kDouble).contiguous();
  auto b = conv->options.bias() ? conv->bias.detach().to(torch::kDouble) : torch::zeros({w.size(0)}, f64());
  auto wa = w.accessor<double, 4>();
  auto ba = b.accessor<double, 1>();
  const size_t h = in[0].size(), wd = in[0][0].size();
  Grid3 out(static_cast<size_t>(w.size(0)), std::vector<std::vector<double>>(h, std::vector<double>(wd)));
  for (int64_t o = 0; o < w.size(0); ++o)
    for (size_t y = 0; y < h; ++y)
      for (size_t x = 0; x < wd; ++x) {
        double s = ba[o];
        for (int64_t i = 0; i < w.size(1); ++i) s += wa[o][i][0][0] * in[static_cast<size_t>(i)][y][x];
        out[static_cast<size_t>(o)][y][x] = s;
      }
  return out;
}

/// Bilinear upsampling by an integer factor, half-pixel centres, edge clamped.
inline Grid3 loop_bilinear_up(const Grid3& in, int64_t f) {
  const int64_t h = static_cast<int64_t>(in[0].size()), w = static_cast<int64_t>(in[0][0].size());
  Grid3 out(in.size(), std::vector<std::vector<double>>(static_cast<size_t>(h * f),
                                                        std::vector<double>(static_cast<size_t>(w * f))));
  auto src = [f](int64_t dst, int64_t n, int64_t& i0, int64_t& i1, double& t) {
    double p = (static_cast<double>(dst) + 0.5) / static_cast<double>(f) - 0.5;
    if (p < 0) p = 0;
    i0 = std::min(static_cast<int64_t>(std::floor(p)), n - 1);
    i1 = std::min(i0 + 1, n - 1);
    t = p - static_cast<double>(i0);
  };
  for (size_t k = 0; k < in.size(); ++k)
    for (int64_t y = 0; y < h * f; ++y)
      for (int64_t x = 0; x < w * f; ++x) {
        int64_t y0, y1, x0, x1;
        double ty, tx;
        src(y, h, y0, y1, ty);
        src(x, w, x0, x1, tx);
        const auto& g = in[k];
        out[k][y][x] = (1 - ty) * ((1 - tx) * g[y0][x0] + tx * g[y0][x1]) + ty * ((1 - tx) * g[y1][x0] + tx * g[y1][x1]);
      }
  return out;
}

struct LoopAttention {
  std::vector<std::vector<double>> corr;  // [N_i][N_j]
  Grid3 xtask;                            // [c][H][W]
};

/// Spatial correlation and correlation-guided features for batch item 0,
/// recomputed position by position.
inline LoopAttention loop_attention(const torch::Tensor& f_i, const torch::Tensor& f_j, XtamDirectionImpl& p) {
  const int64_t s = p.options().downscale;
  const double d = static_cast<double>(p.options().resolved_proj_dim());
  const auto pi = loop_avg_pool(to_grid(f_i[0]), s);
  const auto pj = loop_avg_pool(to_grid(f_j[0]), s * s);
  const auto q = loop_conv1x1(pi, p.query);
  const auto k = loop_conv1x1(pj, p.key);
  const auto v = loop_conv1x1(pj, p.value);
  const size_t hi = pi[0].size(), wi = pi[0][0].size(), hj = pj[0].size(), wj = pj[0][0].size();
  LoopAttention out;
  out.corr.assign(hi * wi, std::vector<double>(hj * wj));
  for (size_t a = 0; a < hi * wi; ++a) {
    std::vector<double> logits(hj * wj);
    for (size_t b = 0; b < hj * wj; ++b) {
      double dot = 0;
      for (size_t dd = 0; dd < q.size(); ++dd) dot += q[dd][a / wi][a % wi] * k[dd][b / wj][b % wj];
      logits[b] = dot / std::sqrt(d);
    }
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    for (double& l : logits) z += (l = std::exp(l - m));
    for (size_t b = 0; b < hj * wj; ++b) out.corr[a][b] = logits[b] / z;
  }
  Grid3 small(v.size(), std::vector<std::vector<double>>(hi, std::vector<double>(wi, 0.0)));
  for (size_t c = 0; c < v.size(); ++c)
    for (size_t a = 0; a < hi * wi; ++a) {
      double acc = 0;
      for (size_t b = 0; b < hj * wj; ++b) acc += out.corr[a][b] * v[c][b / wj][b % wj];
      small[c][a / wi][a % wi] = acc;
    }
  out.xtask = loop_bilinear_up(small, s);
  return out;
}

inline double max_abs_diff(const Grid3& a, const Grid3& b) {
  double m = 0;
  for (size_t c = 0; c < a.size(); ++c)
    for (size_t y = 0; y < a[c].size(); ++y)
      for (size_t x = 0; x < a[c][y].size(); ++x) m = std::max(m, std::abs(a[c][y][x] - b[c][y][x]));
  return m;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;
  size_t checked = 0;
};

/// Central finite differences against autograd for every element of every
/// leaf. `fn` must return a scalar built from the leaves. The error of a leaf
/// is ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-8).
inline GradCheckResult gradcheck(const std::function<torch::Tensor()>& fn,
                                 const std::vector<std::pair<std::string, torch::Tensor>>& leaves,
                                 double step = 1e-5) {
  for (const auto& [_, t] : leaves) {
    if (t.grad().defined()) t.mutable_grad().zero_();
  }
  fn().backward();
  GradCheckResult res;
  for (const auto& [name, leaf] : leaves) {
    auto analytic = leaf.grad().defined() ? leaf.grad().clone() : torch::zeros_like(leaf);
    auto numeric = torch::zeros_like(leaf);
    {
      torch::NoGradGuard guard;
      auto flat = leaf.view(-1);
      auto nflat = numeric.view(-1);
      for (int64_t k = 0; k < flat.numel(); ++k) {
        const double orig = flat[k].item<double>();
        flat[k].fill_(orig + step);
        const double up = fn().item<double>();
        flat[k].fill_(orig - step);
        const double down = fn().item<double>();
        flat[k].fill_(orig);
        nflat[k].fill_((up - down) / (2 * step));
      }
    }
    const double diff = (analytic - numeric).norm().item<double>();
    const double scale = std::max({analytic.norm().item<double>(), numeric.norm().item<double>(), 1e-8});
    const double rel = diff / scale;
    ++res.checked;
    if (rel > res.max_rel_error) {
      res.max_rel_error = rel;
      res.worst = name;
    }
  }
  return res;
}

/// Leaves of a module's parameters, named.
inline std::vector<std::pair<std::string, torch::Tensor>> parameter_leaves(torch::nn::Module& m,
                                                                           const std::string& prefix = "") {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : m.named_parameters()) out.emplace_back(prefix + item.key(), item.value());
  return out;
}

}  // namespace densemtl::testing
