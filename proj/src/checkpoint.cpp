#include "densemtl/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

namespace densemtl {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::array<char, 8> kMagic{'D', 'M', 'T', 'L', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat: return "float32";
    case torch::kDouble: return "float64";
    case torch::kLong: return "int64";
    default: throw std::runtime_error("checkpoint: unsupported dtype");
  }
}

torch::ScalarType parse_dtype(const std::string& s) {
  if (s == "float32") return torch::kFloat;
  if (s == "float64") return torch::kDouble;
  if (s == "int64") return torch::kLong;
  throw std::runtime_error("checkpoint: unknown dtype '" + s + "'");
}

std::map<std::string, torch::Tensor> named_state(torch::nn::Module& model) {
  std::map<std::string, torch::Tensor> state;
  for (const auto& p : model.named_parameters()) state[p.key()] = p.value();
  for (const auto& b : model.named_buffers()) state[b.key()] = b.value();
  return state;
}

}  // namespace

void save_checkpoint(const fs::path& path, torch::nn::Module& model, const ModelConfig& config,
                     const json& extra) {
  const auto state = named_state(model);
  json arrays = json::array();
  std::vector<torch::Tensor> blobs;
  uint64_t offset = 0;
  for (const auto& [name, tensor] : state) {
    auto t = tensor.detach().cpu().contiguous();
    const uint64_t nbytes = static_cast<uint64_t>(t.numel()) * t.element_size();
    arrays.push_back({{"name", name},
                      {"dtype", dtype_name(t.scalar_type())},
                      {"shape", t.sizes().vec()},
                      {"offset", offset},
                      {"nbytes", nbytes}});
    offset += nbytes;
    blobs.push_back(t);
  }
  const json manifest{{"config", config}, {"extra", extra}, {"arrays", arrays}};
  const std::string text = manifest.dump();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  const uint64_t size = text.size();
  os.write(kMagic.data(), kMagic.size());
  os.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
  os.write(reinterpret_cast<const char*>(&size), sizeof(size));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : blobs) {
    os.write(static_cast<const char*>(t.data_ptr()),
             static_cast<std::streamsize>(t.numel() * t.element_size()));
  }
}

Checkpoint read_checkpoint(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read checkpoint " + path.string());
  std::array<char, 8> magic{};
  uint32_t version = 0;
  uint64_t size = 0;
  is.read(magic.data(), magic.size());
  is.read(reinterpret_cast<char*>(&version), sizeof(version));
  is.read(reinterpret_cast<char*>(&size), sizeof(size));
  if (!is || magic != kMagic) throw std::runtime_error(path.string() + " is not a densemtl checkpoint");
  if (version != kVersion) throw std::runtime_error("unsupported checkpoint version");
  std::string text(size, '\0');
  is.read(text.data(), static_cast<std::streamsize>(size));
  const json manifest = json::parse(text);
  const auto data_start = is.tellg();

  Checkpoint ckpt;
  ckpt.config = manifest.at("config").get<ModelConfig>();
  ckpt.extra = manifest.value("extra", json::object());
  for (const auto& a : manifest.at("arrays")) {
    auto t = torch::empty(a.at("shape").get<std::vector<int64_t>>(),
                          parse_dtype(a.at("dtype").get<std::string>()));
    const auto nbytes = a.at("nbytes").get<uint64_t>();
    if (nbytes != static_cast<uint64_t>(t.numel()) * t.element_size()) {
      throw std::runtime_error("checkpoint: array size mismatch for " + a.at("name").get<std::string>());
    }
    is.seekg(data_start + static_cast<std::streamoff>(a.at("offset").get<uint64_t>()));
    is.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
    if (!is) throw std::runtime_error("checkpoint: truncated data");
    ckpt.arrays[a.at("name").get<std::string>()] = t;
  }
  return ckpt;
}

void load_state(torch::nn::Module& model, const std::map<std::string, torch::Tensor>& arrays) {
  torch::NoGradGuard guard;
  for (auto& [name, target] : named_state(model)) {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw std::runtime_error("checkpoint: missing array " + name);
    if (it->second.sizes() != target.sizes()) {
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    }
    target.copy_(it->second);
  }
}

MultiTaskNet load_model(const fs::path& path, json* extra) {
  auto ckpt = read_checkpoint(path);
  auto model = build_model(ckpt.config);
  load_state(*model, ckpt.arrays);
  if (extra) *extra = ckpt.extra;
  return model;
}

}  // namespace densemtl
