#include "densemtl/uda.hpp"

#include <string>

namespace densemtl {

namespace F = torch::nn::functional;

void UdaConfig::validate() const {
  if (lambda_adv < 0) throw ConfigError("lambda_adv must be nonnegative");
  if (!(depth_min < depth_max)) throw ConfigError("uda depth range needs min < max");
  if (disc_width <= 0 || disc_stages <= 0) throw ConfigError("invalid discriminator spec");
}

torch::Tensor weighted_self_information(const torch::Tensor& probs, double eps) {
  return -probs * torch::log(probs.clamp_min(eps));
}

torch::Tensor normalize_depth(const torch::Tensor& depth, const UdaConfig& cfg) {
  cfg.validate();
  return ((depth - cfg.depth_min) / (cfg.depth_max - cfg.depth_min)).clamp(0.0, 1.0);
}

DiscriminatorImpl::DiscriminatorImpl(int64_t in_channels, int64_t width, int64_t stages) {
  torch::nn::Sequential body;
  int64_t in = in_channels;
  for (int64_t s = 0; s < stages; ++s) {
    body->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, width, 4).stride(2).padding(1)));
    body->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)));
    in = width;
  }
  body->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, 1, 3).padding(1)));
  body_ = register_module("body", body);
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& q) { return body_->forward(q); }

namespace {

torch::Tensor bce_prob(const torch::Tensor& p, double label, double eps) {
  const auto c = p.clamp(eps, 1.0 - eps);
  return label == 1.0 ? -torch::log(c).mean() : -torch::log(1 - c).mean();
}

torch::Tensor bce_logits(const torch::Tensor& logits, double label) {
  return F::binary_cross_entropy_with_logits(logits, torch::full_like(logits, label));
}

}  // namespace

torch::Tensor discriminator_loss(const torch::Tensor& d_src, const torch::Tensor& d_trg, double eps) {
  return 0.5 * (bce_prob(d_src, 1.0, eps) + bce_prob(d_trg, 0.0, eps));
}

torch::Tensor discriminator_loss_logits(const torch::Tensor& src_logits,
                                        const torch::Tensor& trg_logits) {
  return 0.5 * (bce_logits(src_logits, 1.0) + bce_logits(trg_logits, 0.0));
}

torch::Tensor discriminator_loss(DiscriminatorImpl& d, const torch::Tensor& q_src,
                                 const torch::Tensor& q_trg) {
  return discriminator_loss_logits(d.forward(q_src), d.forward(q_trg));
}

torch::Tensor adversarial_loss(const torch::Tensor& d_trg, double eps) {
  return bce_prob(d_trg, 1.0, eps);
}

torch::Tensor adversarial_loss_logits(const torch::Tensor& trg_logits) {
  return bce_logits(trg_logits, 1.0);
}

torch::Tensor adversarial_loss(DiscriminatorImpl& d, const torch::Tensor& q_trg) {
  return adversarial_loss_logits(d.forward(q_trg));
}

torch::Tensor mtl_uda_total(const ScaleLosses& task_intermediate, const TaskLosses& task_final,
                            const ScaleLosses& adv_intermediate, const TaskLosses& adv_final,
                            const std::vector<TaskSpec>& tasks, const std::set<int>& scales,
                            const UdaConfig& cfg) {
  cfg.validate();
  auto term = [&](const TaskLosses& sup, const TaskLosses* adv, const TaskSpec& t,
                  const std::string& where) {
    auto it = sup.find(t.id);
    if (it == sup.end()) {
      throw std::invalid_argument("mtl_uda_total: missing " + where + " loss for task " +
                                  std::string(task_code(t.id)));
    }
    torch::Tensor v = t.weight * it->second;
    if (adv) {
      if (auto a = adv->find(t.id); a != adv->end()) v = v + cfg.lambda_adv * a->second;
    }
    return v;
  };

  torch::Tensor final_sum = torch::zeros({});
  for (const auto& t : tasks) final_sum = final_sum + term(task_final, &adv_final, t, "final");
  if (scales.empty()) return final_sum;

  torch::Tensor scale_sum = torch::zeros({});
  for (int s : scales) {
    auto sit = task_intermediate.find(s);
    if (sit == task_intermediate.end()) {
      throw std::invalid_argument("mtl_uda_total: missing losses for scale " + std::to_string(s));
    }
    auto ait = adv_intermediate.find(s);
    const TaskLosses* adv = ait == adv_intermediate.end() ? nullptr : &ait->second;
    for (const auto& t : tasks) scale_sum = scale_sum + term(sit->second, adv, t, "scale-" + std::to_string(s));
  }
  return scale_sum / static_cast<double>(scales.size()) + final_sum;
}

}  // namespace densemtl
