#pragma once

// Output-level adversarial domain adaptation: alignment maps, a patch
// discriminator, and the combined source-supervised / target-adversarial loss.

#include <torch/torch.h>

#include <set>
#include <vector>

#include "densemtl/losses.hpp"

namespace densemtl {

struct UdaConfig {
  double lambda_adv = 5.0e-3;
  /// Source-domain depth range used to normalise depth outputs.
  double depth_min = 0.0;
  double depth_max = 20.0;
  int64_t disc_width = 64;
  int64_t disc_stages = 4;
  double disc_lr = 1e-4;

  void validate() const;
};

/// -P * log(P) per entry with 0 * log 0 := 0 (log clamped at eps).
torch::Tensor weighted_self_information(const torch::Tensor& probs, double eps = 1e-12);

/// (d - min) / (max - min) clamped to [0, 1].
torch::Tensor normalize_depth(const torch::Tensor& depth, const UdaConfig& cfg);

/// Patch discriminator: stride-2 4x4 convs with leaky ReLU, then a 3x3
/// classifier producing one logit per patch.
class DiscriminatorImpl : public torch::nn::Module {
 public:
  DiscriminatorImpl(int64_t in_channels, int64_t width = 64, int64_t stages = 4);
  torch::Tensor forward(const torch::Tensor& q);

 private:
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(Discriminator);

/// Mean of the source BCE against 1 and the target BCE against 0, on
/// discriminator probabilities.
torch::Tensor discriminator_loss(const torch::Tensor& d_src, const torch::Tensor& d_trg,
                                 double eps = 1e-12);
/// Same on logits.
torch::Tensor discriminator_loss_logits(const torch::Tensor& src_logits,
                                        const torch::Tensor& trg_logits);
torch::Tensor discriminator_loss(DiscriminatorImpl& d, const torch::Tensor& q_src,
                                 const torch::Tensor& q_trg);

/// BCE of target outputs against the source label 1.
torch::Tensor adversarial_loss(const torch::Tensor& d_trg, double eps = 1e-12);
torch::Tensor adversarial_loss_logits(const torch::Tensor& trg_logits);
torch::Tensor adversarial_loss(DiscriminatorImpl& d, const torch::Tensor& q_trg);

/// (1/|S|) sum_s sum_t (w_t L_t^s + lambda L_adv_t^s) + sum_t (w_t L_t^final + lambda L_adv_t^final).
/// Tasks without an adversarial term contribute only their supervised loss.
torch::Tensor mtl_uda_total(const ScaleLosses& task_intermediate, const TaskLosses& task_final,
                            const ScaleLosses& adv_intermediate, const TaskLosses& adv_final,
                            const std::vector<TaskSpec>& tasks, const std::set<int>& scales,
                            const UdaConfig& cfg);

}  // namespace densemtl
