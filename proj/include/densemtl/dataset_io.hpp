#pragma once

// On-disk dataset layout:
//
//   root/intrinsics.json                 {"fx", "fy", "cx", "cy", "d_far", "num_classes"}
//   root/images/NNNNNN.png               8-bit RGB
//   root/seg/NNNNNN.png                  8-bit class ids (255 = ignore)
//   root/depth/NNNNNN.pfm                little-endian float32 PFM, meters
//   root/normals/NNNNNN.pfm              little-endian float32 3-channel PFM
//   root/edges/NNNNNN.png                8-bit {0, 255}

#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "densemtl/data.hpp"

namespace densemtl {

struct DatasetInfo {
  Intrinsics intrinsics;
  double d_far = 20.0;
  int64_t num_classes = 0;
};

/// [H, W] or [3, H, W] float tensor <-> PFM ("Pf" / "PF", scale -1, rows bottom-up).
void write_pfm(const std::filesystem::path& path, const torch::Tensor& data);
torch::Tensor read_pfm(const std::filesystem::path& path);

std::string sample_stem(int64_t index);

void write_dataset_info(const std::filesystem::path& root, const DatasetInfo& info);
DatasetInfo read_dataset_info(const std::filesystem::path& root);

void save_sample(const std::filesystem::path& root, int64_t index, const Sample& sample);
/// Reads one sample; nullopt with `error` filled when a modality is missing or unreadable.
std::optional<Sample> read_sample(const std::filesystem::path& root, const std::string& stem,
                                  const DatasetInfo& info, std::string* error = nullptr);

/// Streams samples in file-name order. Missing modalities or violated sample
/// invariants skip the sample with a warning on stderr, or throw in strict mode.
class DatasetReader {
 public:
  explicit DatasetReader(std::filesystem::path root, bool strict = false);

  std::optional<Sample> next();
  const DatasetInfo& info() const { return info_; }
  size_t skipped() const { return skipped_; }

 private:
  std::filesystem::path root_;
  bool strict_;
  DatasetInfo info_;
  std::vector<std::string> stems_;
  size_t cursor_ = 0;
  size_t skipped_ = 0;
};

std::vector<Sample> load_dataset(const std::filesystem::path& root, bool strict = false);

}  // namespace densemtl
