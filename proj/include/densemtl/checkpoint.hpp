#pragma once

// Checkpoint container:
//
//   bytes 0..7    magic "DMTLCKPT"
//   bytes 8..11   uint32 format version (1)
//   bytes 12..19  uint64 manifest size M
//   next M bytes  JSON manifest: {"config": ..., "extra": ..., "arrays": [
//                   {"name", "dtype", "shape", "offset", "nbytes"}, ...]}
//   remainder     raw little-endian array data; offsets are relative to it
//
// Arrays cover every named parameter and buffer of the model.

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <string>

#include "densemtl/model.hpp"
#include "json.hpp"

namespace densemtl {

struct Checkpoint {
  ModelConfig config;
  nlohmann::json extra;
  std::map<std::string, torch::Tensor> arrays;
};

void save_checkpoint(const std::filesystem::path& path, torch::nn::Module& model,
                     const ModelConfig& config, const nlohmann::json& extra = {});

Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies named arrays into the parameters and buffers of `model`. Every
/// model tensor must be present with a matching shape.
void load_state(torch::nn::Module& model, const std::map<std::string, torch::Tensor>& arrays);

/// Rebuilds the network described by a checkpoint and restores its state.
MultiTaskNet load_model(const std::filesystem::path& path, nlohmann::json* extra = nullptr);

}  // namespace densemtl
