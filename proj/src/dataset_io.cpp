#include "densemtl/dataset_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace densemtl {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "PFM writer assumes little-endian host");

void write_png(const fs::path& path, const cv::Mat& mat) {
  fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), mat)) throw std::runtime_error("cannot write " + path.string());
}

cv::Mat read_png(const fs::path& path, int flags) {
  cv::Mat m = cv::imread(path.string(), flags);
  if (m.empty()) throw std::runtime_error("cannot read " + path.string());
  return m;
}

cv::Mat to_u8_mat(const torch::Tensor& hw) {
  auto t = hw.to(torch::kUInt8).contiguous();
  cv::Mat m(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), CV_8UC1);
  std::memcpy(m.data, t.data_ptr<uint8_t>(), static_cast<size_t>(t.numel()));
  return m;
}

torch::Tensor from_u8_mat(const cv::Mat& m) {
  return torch::from_blob(m.data, {m.rows, m.cols}, torch::kUInt8).clone();
}

}  // namespace

void write_pfm(const fs::path& path, const torch::Tensor& data) {
  const bool color = data.dim() == 3;
  if (!(data.dim() == 2 || (color && data.size(0) == 3))) {
    throw ShapeError("write_pfm: expected [H, W] or [3, H, W]");
  }
  // Interleave channels (HWC) and flip rows: PFM stores the bottom row first.
  auto hwc = color ? data.permute({1, 2, 0}) : data.unsqueeze(-1);
  hwc = hwc.flip(0).to(torch::kFloat).contiguous();
  const int64_t h = hwc.size(0), w = hwc.size(1);
  fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << (color ? "PF" : "Pf") << '\n' << w << ' ' << h << '\n' << "-1.0" << '\n';
  os.write(reinterpret_cast<const char*>(hwc.data_ptr<float>()),
           static_cast<std::streamsize>(hwc.numel() * sizeof(float)));
}

torch::Tensor read_pfm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::string magic;
  int64_t w = 0, h = 0;
  double scale = 0;
  is >> magic >> w >> h >> scale;
  is.get();  // single whitespace before the raster
  if ((magic != "PF" && magic != "Pf") || w <= 0 || h <= 0 || scale == 0) {
    throw std::runtime_error("malformed PFM header in " + path.string());
  }
  if (scale > 0) throw std::runtime_error("big-endian PFM not supported: " + path.string());
  const int64_t c = magic == "PF" ? 3 : 1;
  auto t = torch::empty({h, w, c}, torch::kFloat);
  is.read(reinterpret_cast<char*>(t.data_ptr<float>()),
          static_cast<std::streamsize>(t.numel() * sizeof(float)));
  if (!is) throw std::runtime_error("truncated PFM raster in " + path.string());
  t = t.flip(0);
  return c == 3 ? t.permute({2, 0, 1}).contiguous() : t.squeeze(-1).contiguous();
}

std::string sample_stem(int64_t index) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << index;
  return os.str();
}

void write_dataset_info(const fs::path& root, const DatasetInfo& info) {
  fs::create_directories(root);
  json j{{"fx", info.intrinsics.fx},   {"fy", info.intrinsics.fy}, {"cx", info.intrinsics.cx},
         {"cy", info.intrinsics.cy},   {"d_far", info.d_far},      {"num_classes", info.num_classes}};
  std::ofstream(root / "intrinsics.json") << j.dump(2) << '\n';
}

DatasetInfo read_dataset_info(const fs::path& root) {
  std::ifstream is(root / "intrinsics.json");
  if (!is) throw std::runtime_error("missing " + (root / "intrinsics.json").string());
  const json j = json::parse(is);
  DatasetInfo info;
  info.intrinsics = {j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(),
                     j.at("cy").get<double>()};
  info.d_far = j.at("d_far").get<double>();
  info.num_classes = j.value("num_classes", int64_t{0});
  return info;
}

void save_sample(const fs::path& root, int64_t index, const Sample& s) {
  const auto stem = sample_stem(index);
  {
    auto rgb = (s.image.clamp(0, 1) * 255.0).round().to(torch::kUInt8).permute({1, 2, 0}).contiguous();
    cv::Mat m(static_cast<int>(rgb.size(0)), static_cast<int>(rgb.size(1)), CV_8UC3,
              rgb.data_ptr<uint8_t>());
    cv::Mat bgr;
    cv::cvtColor(m, bgr, cv::COLOR_RGB2BGR);
    write_png(root / "images" / (stem + ".png"), bgr);
  }
  if (((s.seg < 0) | (s.seg > 255)).any().item<bool>()) {
    throw std::domain_error("save_sample: class ids must fit in 8 bits");
  }
  write_png(root / "seg" / (stem + ".png"), to_u8_mat(s.seg));
  write_pfm(root / "depth" / (stem + ".pfm"), s.depth);
  write_pfm(root / "normals" / (stem + ".pfm"), s.normals);
  write_png(root / "edges" / (stem + ".png"), to_u8_mat((s.edges != 0).to(torch::kUInt8) * 255));
}

std::optional<Sample> read_sample(const fs::path& root, const std::string& stem,
                                  const DatasetInfo& info, std::string* error) {
  const std::array<fs::path, 5> files{root / "images" / (stem + ".png"), root / "seg" / (stem + ".png"),
                                      root / "depth" / (stem + ".pfm"),
                                      root / "normals" / (stem + ".pfm"),
                                      root / "edges" / (stem + ".png")};
  for (const auto& f : files) {
    if (!fs::exists(f)) {
      if (error) *error = "missing " + f.string();
      return std::nullopt;
    }
  }
  try {
    Sample s;
    s.intrinsics = info.intrinsics;
    cv::Mat bgr = read_png(files[0], cv::IMREAD_COLOR);
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    s.image = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8)
                  .permute({2, 0, 1})
                  .to(torch::kFloat)
                  .div(255.0)
                  .contiguous();
    s.seg = from_u8_mat(read_png(files[1], cv::IMREAD_GRAYSCALE)).to(torch::kLong);
    s.depth = read_pfm(files[2]);
    s.normals = read_pfm(files[3]);
    s.edges = (from_u8_mat(read_png(files[4], cv::IMREAD_GRAYSCALE)) > 127).to(torch::kUInt8);
    return s;
  } catch (const std::exception& e) {
    if (error) *error = e.what();
    return std::nullopt;
  }
}

DatasetReader::DatasetReader(fs::path root, bool strict)
    : root_(std::move(root)), strict_(strict), info_(read_dataset_info(root_)) {
  std::set<std::string> stems;
  for (const auto* dir : {"images", "seg", "depth", "normals", "edges"}) {
    if (!fs::is_directory(root_ / dir)) continue;
    for (const auto& entry : fs::directory_iterator(root_ / dir)) {
      if (entry.is_regular_file()) stems.insert(entry.path().stem().string());
    }
  }
  stems_.assign(stems.begin(), stems.end());
}

std::optional<Sample> DatasetReader::next() {
  while (cursor_ < stems_.size()) {
    const auto& stem = stems_[cursor_++];
    std::string error;
    auto sample = read_sample(root_, stem, info_, &error);
    if (sample) {
      const auto problems = check_sample(*sample, info_.d_far, info_.num_classes);
      if (problems.empty()) return sample;
      error = "sample " + stem + ": " + problems.front();
    }
    if (strict_) throw std::runtime_error("dataset " + root_.string() + ": " + error);
    std::cerr << "warning: skipping " << stem << " (" << error << ")\n";
    ++skipped_;
  }
  return std::nullopt;
}

std::vector<Sample> load_dataset(const fs::path& root, bool strict) {
  DatasetReader reader(root, strict);
  std::vector<Sample> out;
  while (auto s = reader.next()) out.push_back(std::move(*s));
  return out;
}

}  // namespace densemtl
