#include "test_framework.hpp"

#include <filesystem>
#include <numbers>
#include <random>

#include "densemtl/data.hpp"
#include "densemtl/dataset_io.hpp"
#include "densemtl/metrics.hpp"

using namespace densemtl;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("densemtl_data_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Depth of the plane Z = a X + b Y + c seen through pinhole intrinsics.
torch::Tensor plane_depth(double a, double b, double c, const Intrinsics& k, int64_t h, int64_t w) {
  auto d = torch::empty({h, w}, torch::kDouble);
  auto acc = d.accessor<double, 2>();
  for (int64_t v = 0; v < h; ++v)
    for (int64_t u = 0; u < w; ++u) {
      const double rx = (u - k.cx) / k.fx, ry = (v - k.cy) / k.fy;
      acc[v][u] = c / (1.0 - a * rx - b * ry);
    }
  return d;
}

torch::Tensor interior(const torch::Tensor& chw) { return chw.slice(1, 1, -1).slice(2, 1, -1); }

double mean_interior_error_deg(const torch::Tensor& n, const torch::Tensor& expect) {
  return mean_angular_error(interior(n).unsqueeze(0).to(torch::kDouble),
                            interior(expect).unsqueeze(0).to(torch::kDouble));
}

// One pixel, written out: unproject the pixel and its four neighbours, average
// the four normalised cross products, orient towards the camera.
std::array<double, 3> pixel_normal_oracle(const torch::Tensor& depth, const Intrinsics& k, int64_t y, int64_t x) {
  auto d = depth.to(torch::kDouble);
  auto P = [&](int64_t v, int64_t u) {
    const double z = d[v][u].item<double>();
    return std::array<double, 3>{(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z};
  };
  auto sub = [](const std::array<double, 3>& p, const std::array<double, 3>& q) {
    return std::array<double, 3>{p[0] - q[0], p[1] - q[1], p[2] - q[2]};
  };
  auto cross = [](const std::array<double, 3>& p, const std::array<double, 3>& q) {
    return std::array<double, 3>{p[1] * q[2] - p[2] * q[1], p[2] * q[0] - p[0] * q[2], p[0] * q[1] - p[1] * q[0]};
  };
  auto unit = [](std::array<double, 3> p) {
    const double n = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    return std::array<double, 3>{p[0] / n, p[1] / n, p[2] / n};
  };
  const auto c = P(y, x);
  const auto r = sub(P(y, x + 1), c), dn = sub(P(y + 1, x), c), l = sub(P(y, x - 1), c), up = sub(P(y - 1, x), c);
  std::array<double, 3> sum{};
  for (const auto& [a, b] : {std::pair{r, dn}, {dn, l}, {l, up}, {up, r}}) {
    const auto n = unit(cross(a, b));
    for (int i = 0; i < 3; ++i) sum[i] += n[i];
  }
  auto n = unit(sum);
  if (n[2] > 0) n = {-n[0], -n[1], -n[2]};
  return n;
}

const Intrinsics kIntr{48.0, 48.0, 23.5, 23.5};

}  // namespace

TEST_SUITE("normals_from_depth") {
  TEST_CASE("fronto-parallel plane faces the camera") {
    auto n = normals_from_depth(torch::full({16, 16}, 5.0), kIntr);
    CHECK(interior(n).select(0, 0).abs().max().item<double>() < 1e-6);
    CHECK(interior(n).select(0, 1).abs().max().item<double>() < 1e-6);
    CHECK((interior(n).select(0, 2) + 1).abs().max().item<double>() < 1e-6);
  }

  TEST_CASE("slanted plane matches the analytic normal") {
    const double a = 0.6;
    auto n = normals_from_depth(plane_depth(a, 0.0, 6.0, kIntr, 48, 48), kIntr);
    auto expect = torch::tensor({a, 0.0, -1.0}, torch::kDouble).view({3, 1, 1}).expand({3, 48, 48}) /
                  std::sqrt(a * a + 1);
    CHECK(mean_interior_error_deg(n, expect) < 1.0);
  }

  TEST_CASE("random planes stay under one degree") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> slope(-1.0, 1.0), offset(3.0, 15.0);
    double worst = 0;
    for (int i = 0; i < 50; ++i) {
      const double a = slope(rng), b = slope(rng);
      auto n = normals_from_depth(plane_depth(a, b, offset(rng), kIntr, 48, 48), kIntr);
      auto expect = torch::tensor({a, b, -1.0}, torch::kDouble).view({3, 1, 1}).expand({3, 48, 48}) /
                    std::sqrt(a * a + b * b + 1);
      worst = std::max(worst, mean_interior_error_deg(n, expect));
    }
    INFO("worst mean error " << worst);
    CHECK(worst < 1.0);
  }

  TEST_CASE("single pixel matches an explicit cross-product oracle") {
    torch::manual_seed(11);
    // Smooth positive surface: low-frequency sinusoids on a base depth.
    auto yy = torch::arange(24, torch::kDouble).view({24, 1}), xx = torch::arange(24, torch::kDouble).view({1, 24});
    auto depth = 6.0 + 0.8 * torch::sin(yy * 0.3) * torch::cos(xx * 0.2) + 0.05 * xx;
    Intrinsics k{30.0, 28.0, 11.0, 12.5};
    auto n = normals_from_depth(depth, k);
    for (auto [y, x] : {std::pair<int64_t, int64_t>{5, 7}, {12, 12}, {20, 3}}) {
      const auto o = pixel_normal_oracle(depth, k, y, x);
      for (int c = 0; c < 3; ++c) CHECK(std::abs(n[c][y][x].item<double>() - o[c]) < 1e-5);
    }
  }

  TEST_CASE("borders are unit and camera facing") {
    auto n = normals_from_depth(plane_depth(0.3, -0.4, 8.0, kIntr, 20, 20), kIntr);
    CHECK(((n.norm(2, 0) - 1).abs() < 1e-5).all().item<bool>());
    CHECK((n.select(0, 2) < 0).all().item<bool>());
  }

  TEST_CASE("bad inputs") {
    CHECK_THROWS_AS(normals_from_depth(torch::ones({3, 4, 4}), kIntr), ShapeError);
    CHECK_THROWS_AS(normals_from_depth(torch::zeros({4, 4}), kIntr), std::domain_error);
  }
}

TEST_SUITE("synthetic_scene") {
  TEST_CASE("deterministic per seed") {
    auto a = synthetic_scene(42, 48, 4), b = synthetic_scene(42, 48, 4), c = synthetic_scene(43, 48, 4);
    CHECK(torch::equal(a.image, b.image));
    CHECK(torch::equal(a.seg, b.seg));
    CHECK(torch::equal(a.depth, b.depth));
    CHECK(torch::equal(a.normals, b.normals));
    CHECK(torch::equal(a.edges, b.edges));
    CHECK(!torch::equal(a.depth, c.depth));
  }

  TEST_CASE("background only") {
    SceneOptions opt;
    opt.size = 32;
    opt.ground = false;
    opt.min_objects = opt.max_objects = 0;
    auto s = synthetic_scene(5, opt);
    CHECK((s.seg == s.seg[0][0]).all().item<bool>());
    CHECK(s.edges.sum().item<int64_t>() == 0);
    auto expect = torch::tensor({0.0f, 0.0f, -1.0f}).view({3, 1, 1});
    CHECK((s.normals - expect).abs().max().item<double>() < 1e-5);
  }

  TEST_CASE("sample invariants hold over many seeds") {
    for (uint64_t seed = 0; seed < 25; ++seed) {
      SceneOptions opt;
      opt.size = 32 + 16 * static_cast<int64_t>(seed % 3);
      opt.num_classes = 3 + static_cast<int64_t>(seed % 4);
      auto s = synthetic_scene(seed, opt);
      const auto problems = check_sample(s, opt.d_far, opt.num_classes);
      INFO("seed " << seed << ": " << (problems.empty() ? std::string{} : problems.front()));
      CHECK(problems.empty());
      CHECK(torch::equal(s.normals, normals_from_depth(s.depth, s.intrinsics)));
      CHECK(torch::equal(s.edges, seg_boundaries(s.seg)));
    }
  }

  TEST_CASE("scenes use several classes") {
    auto s = synthetic_scene(3, 64, 4);
    CHECK(std::get<0>(torch::_unique(s.seg)).numel() >= 3);
  }

  TEST_CASE("size guard") { CHECK_THROWS_AS(synthetic_scene(1, 16, 4), ConfigError); }
}

TEST_SUITE("check_sample") {
  TEST_CASE("violations are reported") {
    auto s = synthetic_scene(9, 32, 4);
    CHECK(check_sample(s, 20.0, 4).empty());
    CHECK(!check_sample(s, 1.0, 4).empty());  // depth beyond d_far
    auto bad = s;
    bad.normals = s.normals * 2;
    CHECK(!check_sample(bad, 20.0, 4).empty());
    bad = s;
    bad.edges = torch::ones_like(s.edges);
    CHECK(!check_sample(bad, 20.0, 4).empty());
    bad = s;
    bad.seg = s.seg.clone();
    bad.seg[0][0] = 7;
    bad.edges = seg_boundaries(bad.seg);
    CHECK(!check_sample(bad, 20.0, 4).empty());
  }
}

TEST_SUITE("class maps") {
  TEST_CASE("published entries") {
    const auto vk = ClassMap::vkitti2();
    CHECK((vk.map("tree") == std::optional<std::string>("vegetation")));
    CHECK((vk.map("terrain") == std::nullopt));
    CHECK((vk.map("sky") == std::optional<std::string>("sky")));
    CHECK((vk.map("car") == std::optional<std::string>("vehicle")));
    const auto cs = ClassMap::cityscapes();
    CHECK((cs.map("sidewalk") == std::nullopt));
    CHECK((cs.map("bus") == std::optional<std::string>("vehicle")));
    CHECK((cs.map("sky") == std::optional<std::string>("sky")));
  }

  TEST_CASE("both sides share the mapped label space") {
    CHECK(ClassMap::vkitti2().targets().size() == ClassMap::cityscapes().targets().size());
    auto a = ClassMap::vkitti2().targets(), b = ClassMap::cityscapes().targets();
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK((a == b));
  }

  TEST_CASE("relabelling is total and idempotent") {
    for (const auto& map : {ClassMap::vkitti2(), ClassMap::cityscapes()}) {
      const auto n = static_cast<int64_t>(map.labels().size());
      auto seg = torch::cat({torch::arange(n, torch::kLong), torch::tensor({kIgnoreLabel})}).view({1, -1});
      auto once = apply_class_map(seg, map);
      CHECK(once[0][n].item<int64_t>() == kIgnoreLabel);
      CHECK(torch::equal(apply_class_map(once, map), once));
    }
  }

  TEST_CASE("unknown labels are errors") {
    const auto vk = ClassMap::vkitti2();
    CHECK_THROWS(vk.map("unicorn"));
    CHECK_THROWS(apply_class_map(torch::tensor({100}, torch::kLong), vk));
    CHECK_THROWS_AS(ClassMap({"a", "b"}, {{"a", "a"}}), ConfigError);
    CHECK_THROWS_AS(ClassMap({"a", "b"}, {{"a", "b"}, {"b", "a"}}), ConfigError);
  }
}

TEST_SUITE("median_scale") {
  TEST_CASE("doubling is undone") {
    auto gt = torch::rand({2, 1, 6, 6}, torch::kDouble) + 0.5;
    CHECK(torch::equal(median_scale(2 * gt, gt), gt));
    CHECK(torch::equal(median_scale(gt, gt), gt));
  }

  TEST_CASE("medians match per image") {
    torch::manual_seed(4);
    for (int i = 0; i < 20; ++i) {
      auto pred = torch::rand({3, 1, 5, 7}, torch::kDouble) * 10 + 0.1;
      auto gt = torch::rand({3, 1, 5, 7}, torch::kDouble) * 10 + 0.1;
      auto out = median_scale(pred, gt);
      for (int64_t b = 0; b < 3; ++b)
        CHECK(std::abs(out[b].median().item<double>() - gt[b].median().item<double>()) < 1e-6);
    }
  }

  TEST_CASE("errors") {
    CHECK_THROWS(median_scale(torch::ones({2, 2}), torch::ones({3, 2})));
    CHECK_THROWS(median_scale(torch::zeros({2, 2}), torch::ones({2, 2})));
  }
}

TEST_SUITE("dataset io") {
  TEST_CASE("PFM round trip is exact") {
    TempDir tmp;
    auto gray = torch::rand({5, 7}) * 30;
    auto color = torch::randn({3, 4, 6});
    write_pfm(tmp.path / "a.pfm", gray);
    write_pfm(tmp.path / "b.pfm", color);
    CHECK(torch::equal(read_pfm(tmp.path / "a.pfm"), gray));
    CHECK(torch::equal(read_pfm(tmp.path / "b.pfm"), color));
  }

  TEST_CASE("sample round trip") {
    TempDir tmp;
    auto s = synthetic_scene(21, 48, 5);
    write_dataset_info(tmp.path, {s.intrinsics, 20.0, 5});
    save_sample(tmp.path, 0, s);
    auto loaded = load_dataset(tmp.path, true);
    REQUIRE(loaded.size() == 1);
    const auto& r = loaded[0];
    CHECK(torch::equal(r.seg, s.seg));
    CHECK(torch::equal(r.edges, s.edges));
    CHECK(((r.depth - s.depth).abs() / s.depth).max().item<double>() <= 1e-3);
    CHECK((r.normals - s.normals).abs().max().item<double>() <= 1e-3);
    CHECK((r.image - s.image).abs().max().item<double>() <= 0.5 / 255.0 + 1e-6);
    CHECK(r.intrinsics.fx == s.intrinsics.fx);
    CHECK(r.intrinsics.cy == s.intrinsics.cy);
  }

  TEST_CASE("missing modality: skip or fail") {
    TempDir tmp;
    write_dataset_info(tmp.path, {kIntr, 20.0, 4});
    for (int64_t i = 0; i < 3; ++i) save_sample(tmp.path, i, synthetic_scene(100 + i, 32, 4));
    fs::remove(tmp.path / "normals" / (sample_stem(1) + ".pfm"));
    DatasetReader reader(tmp.path);
    int count = 0;
    while (reader.next()) ++count;
    CHECK(count == 2);
    CHECK(reader.skipped() == 1);
    CHECK_THROWS_AS(load_dataset(tmp.path, true), std::runtime_error);
  }

  TEST_CASE("invariant violations are caught on load") {
    TempDir tmp;
    auto s = synthetic_scene(31, 32, 4);
    write_dataset_info(tmp.path, {s.intrinsics, 5.0, 4});  // d_far smaller than the scene
    save_sample(tmp.path, 0, s);
    CHECK(load_dataset(tmp.path).empty());
    CHECK_THROWS(load_dataset(tmp.path, true));
  }

  TEST_CASE("missing sidecar") {
    TempDir tmp;
    CHECK_THROWS(DatasetReader(tmp.path));
  }
}

TEST_CASE("collate stacks every modality") {
  auto b = collate({synthetic_scene(1, 32, 4), synthetic_scene(2, 32, 4)});
  CHECK((b.image.sizes() == torch::IntArrayRef{2, 3, 32, 32}));
  CHECK((b.seg.sizes() == torch::IntArrayRef{2, 32, 32}));
  CHECK((b.depth.sizes() == torch::IntArrayRef{2, 1, 32, 32}));
  CHECK((b.normals.sizes() == torch::IntArrayRef{2, 3, 32, 32}));
  CHECK((b.edges.sizes() == torch::IntArrayRef{2, 1, 32, 32}));
  CHECK((b.edges.scalar_type() == torch::kFloat));
  CHECK_THROWS(collate({}));
}
