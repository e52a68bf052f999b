#pragma once

// Shared-encoder / per-task-decoder networks: STL, MTL, PAD-Net,
// 3-ways PAD-Net and the cross-task attention model.
//
// Scale s denotes decoder features at 1/2^s of the input resolution. With an
// L-stage encoder the decoder starts at scale L (after ASPP) and each of the L
// upsampling blocks halves s until full resolution (s = 0). Exchange blocks
// and intermediate supervision taps sit at scales in [1, L].

#include <torch/torch.h>

#include <map>
#include <optional>
#include <set>
#include <vector>

#include "densemtl/attention.hpp"
#include "densemtl/tasks.hpp"
#include "json.hpp"

namespace densemtl {

enum class Architecture { Stl, Mtl, Padnet, ThreewaysPadnet, Ours };

std::string_view to_string(Architecture a);
Architecture parse_architecture(std::string_view s);

struct EncoderSpec {
  std::vector<int64_t> widths{32, 64, 128, 256};
  int64_t blocks_per_stage = 2;

  int64_t stages() const { return static_cast<int64_t>(widths.size()); }
};

struct DecoderSpec {
  /// ASPP centre block; unset picks it for 3-ways PAD-Net and ours.
  std::optional<bool> use_aspp;
  std::vector<int64_t> aspp_rates{1, 2, 3};
  /// Feature widths at scales L, L-1, ..., 0 (L + 1 entries).
  std::vector<int64_t> widths{128, 64, 48, 32, 32};
};

struct ModelConfig {
  Architecture architecture = Architecture::Ours;
  std::vector<TaskSpec> tasks;
  int64_t num_classes = 4;
  EncoderSpec encoder;
  DecoderSpec decoder;
  /// Exchange-block insertion scales; also the intermediate supervision scales.
  std::set<int> mteb_scales{1};
  AttentionKind attention = AttentionKind::Spatial;
  FusionKind fusion = FusionKind::Add;
  bool use_self_attention = true;
  int64_t proj_dim = 0;
  int64_t downscale = 2;

  void validate() const;
  bool uses_aspp() const;
  std::vector<Task> task_ids() const;
  XtamOptions xtam_options(int64_t channels) const;
  int64_t decoder_width(int scale) const;
};

void to_json(nlohmann::json& j, const ModelConfig& cfg);
void from_json(const nlohmann::json& j, ModelConfig& cfg);

using TaskPredictions = std::map<Task, torch::Tensor>;

/// Head outputs: segmentation logits [B,K,H,W], depth [B,1,H,W] (> 0), unit
/// normals [B,3,H,W], edge probabilities [B,1,H,W].
struct MTLOutput {
  /// Predictions read before the exchange block of each supervised scale.
  std::map<int, TaskPredictions> intermediate;
  TaskPredictions final;
};

/// Maps raw head activations to the prediction space of a task.
torch::Tensor apply_head(Task task, const torch::Tensor& raw);

class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const EncoderSpec& spec);
  /// Stage outputs; entry k-1 is at scale k.
  std::vector<torch::Tensor> forward(const torch::Tensor& x);

 private:
  std::vector<torch::nn::Sequential> stages_;
};
TORCH_MODULE(Encoder);

class AsppImpl : public torch::nn::Module {
 public:
  AsppImpl(int64_t in, int64_t out, const std::vector<int64_t>& rates);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  std::vector<torch::nn::Sequential> branches_;
  torch::nn::Sequential pool_{nullptr};
  torch::nn::Sequential project_{nullptr};
};
TORCH_MODULE(Aspp);

/// Decoder of one task: centre block followed by upsampling blocks with skips.
class DecoderImpl : public torch::nn::Module {
 public:
  explicit DecoderImpl(const ModelConfig& cfg);

  /// Features at the coarsest scale L.
  torch::Tensor start(const std::vector<torch::Tensor>& encoder_features);
  /// Features at scale s - 1 from features at scale s.
  torch::Tensor up(int scale, const torch::Tensor& x, const torch::Tensor& skip);

 private:
  int64_t stages_;
  Aspp aspp_{nullptr};
  torch::nn::Sequential plain_center_{nullptr};
  std::vector<torch::nn::Sequential> ups_;  // ups_[s - 1] maps scale s -> s - 1
};
TORCH_MODULE(Decoder);

class MultiTaskNetImpl : public torch::nn::Module {
 public:
  explicit MultiTaskNetImpl(ModelConfig cfg);

  MTLOutput forward(const torch::Tensor& images);

  const ModelConfig& config() const { return cfg_; }
  Encoder encoder() const { return encoder_; }
  Decoder decoder(size_t task) const { return decoders_.at(task); }
  /// Exchange block at a scale (ours), or nullptr.
  Mteb mteb(int scale) const;
  PadnetDistill distill(int scale) const;
  /// Zero the combiners of every exchange block.
  void zero_exchange_combiners();

 private:
  ModelConfig cfg_;
  Encoder encoder_{nullptr};
  std::vector<Decoder> decoders_;
  std::vector<torch::nn::Conv2d> final_heads_;
  std::map<int, std::vector<torch::nn::Conv2d>> inter_heads_;
  std::map<int, Mteb> mtebs_;
  std::map<int, PadnetDistill> distills_;
};
TORCH_MODULE(MultiTaskNet);

/// Validates the configuration and constructs the network.
MultiTaskNet build_model(const ModelConfig& cfg);

/// Number of trainable scalars.
int64_t parameter_count(const torch::nn::Module& module);

}  // namespace densemtl
