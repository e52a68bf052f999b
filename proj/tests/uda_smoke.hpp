#pragma once

// Two-player toy game on 1-channel 8x8 maps. Source maps sit near 0.8, the
// target "generator" is a free per-pixel logit map that starts near 0.2.
// Phase 1 trains only the discriminator; phase 2 alternates generator steps on
// the adversarial loss with discriminator steps.

#include <torch/torch.h>

#include "densemtl/uda.hpp"

namespace densemtl::testing {

struct TwoPlayerResult {
  double separated_loss = 0;  ///< discriminator loss after phase 1
  int separated_at = -1;      ///< first phase-1 step with loss < 0.3
  double confused_loss = 0;   ///< discriminator loss when phase 2 stopped
  int confused_at = -1;       ///< first phase-2 step with loss > 0.5
};

inline TwoPlayerResult two_player_smoke(uint64_t seed, int phase1_steps = 200, int phase2_steps = 500) {
  torch::manual_seed(seed);
  constexpr int64_t kSide = 8, kBatch = 4;
  Discriminator disc(1, 16, 2);
  torch::optim::Adam d_opt(disc->parameters(), torch::optim::AdamOptions(1e-3).betas({0.9, 0.99}));
  auto gen = torch::full({1, 1, kSide, kSide}, -1.4).requires_grad_(true);
  torch::optim::Adam g_opt({gen}, torch::optim::AdamOptions(2e-2));

  auto source = [] { return torch::sigmoid(1.4 + 0.3 * torch::randn({kBatch, 1, kSide, kSide})); };
  auto target = [&] { return torch::sigmoid(gen + 0.3 * torch::randn({kBatch, 1, kSide, kSide})); };
  auto d_step = [&] {
    d_opt.zero_grad();
    auto l = discriminator_loss(*disc, source(), target().detach());
    l.backward();
    d_opt.step();
    return l.item<double>();
  };

  TwoPlayerResult r;
  for (int i = 0; i < phase1_steps; ++i) {
    r.separated_loss = d_step();
    if (r.separated_at < 0 && r.separated_loss < 0.3) r.separated_at = i;
  }
  for (int i = 0; i < phase2_steps; ++i) {
    for (auto& p : disc->parameters()) p.set_requires_grad(false);
    g_opt.zero_grad();
    adversarial_loss(*disc, target()).backward();
    g_opt.step();
    for (auto& p : disc->parameters()) p.set_requires_grad(true);
    r.confused_loss = d_step();
    if (r.confused_loss > 0.5) {
      r.confused_at = i;
      break;
    }
  }
  return r;
}

}  // namespace densemtl::testing
