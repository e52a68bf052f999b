#include "densemtl/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <stdexcept>

namespace densemtl {

namespace {

constexpr double kNoHit = std::numeric_limits<double>::infinity();

struct Ray {
  double x, y;  // direction (x, y, 1)
};

struct Hit {
  double z = kNoHit;
  std::array<double, 3> point{};
};

enum class Shape { Wall, Ground, Box, Sphere };

struct Primitive {
  Shape shape;
  int64_t label;
  double order_depth;  // painter's key: larger is painted first
  std::array<double, 3> center{};
  std::array<double, 3> half{};  // box half extents, sphere radius in half[0]
};

Hit intersect(const Primitive& p, const Ray& r, double wall_z, double ground_y) {
  Hit h;
  const std::array<double, 3> dir{r.x, r.y, 1.0};
  switch (p.shape) {
    case Shape::Wall:
      h.z = wall_z;
      break;
    case Shape::Ground:
      if (r.y > 1e-9) {
        const double z = ground_y / r.y;
        if (z < wall_z) h.z = z;
      }
      break;
    case Shape::Box: {
      double t_near = -kNoHit, t_far = kNoHit;
      for (int a = 0; a < 3; ++a) {
        const double lo = p.center[a] - p.half[a];
        const double hi = p.center[a] + p.half[a];
        if (std::abs(dir[a]) < 1e-12) {
          if (0.0 < lo || 0.0 > hi) return h;
          continue;
        }
        double t0 = lo / dir[a], t1 = hi / dir[a];
        if (t0 > t1) std::swap(t0, t1);
        t_near = std::max(t_near, t0);
        t_far = std::min(t_far, t1);
      }
      if (t_near <= t_far && t_near > 0) h.z = t_near;
      break;
    }
    case Shape::Sphere: {
      const double r2 = p.half[0] * p.half[0];
      const double dd = dir[0] * dir[0] + dir[1] * dir[1] + 1.0;
      const double dc = dir[0] * p.center[0] + dir[1] * p.center[1] + p.center[2];
      const double cc =
          p.center[0] * p.center[0] + p.center[1] * p.center[1] + p.center[2] * p.center[2];
      const double disc = dc * dc - dd * (cc - r2);
      if (disc >= 0) {
        const double t = (dc - std::sqrt(disc)) / dd;
        if (t > 0) h.z = t;
      }
      break;
    }
  }
  if (std::isfinite(h.z)) h.point = {dir[0] * h.z, dir[1] * h.z, h.z};
  return h;
}

// Per-class albedo pairs, blended by a world-space checker of class-specific period.
constexpr std::array<std::array<double, 3>, 8> kPalette{{
    {0.55, 0.70, 0.90},
    {0.45, 0.42, 0.40},
    {0.85, 0.30, 0.25},
    {0.25, 0.70, 0.30},
    {0.90, 0.80, 0.20},
    {0.60, 0.30, 0.75},
    {0.20, 0.65, 0.70},
    {0.95, 0.55, 0.15},
}};

std::array<double, 3> albedo(int64_t label, Shape shape, const std::array<double, 3>& pt) {
  const auto& base = kPalette[static_cast<size_t>(label) % kPalette.size()];
  const double period = 0.5 + 0.25 * static_cast<double>(label % 4);
  double a = pt[0], b = pt[1];
  if (shape == Shape::Ground) b = pt[2];
  if (shape == Shape::Box || shape == Shape::Sphere) b = pt[1] + pt[2];
  const auto cell = static_cast<int64_t>(std::floor(a / period) + std::floor(b / period));
  const double k = (cell & 1) ? 0.7 : 1.0;
  return {base[0] * k, base[1] * k, base[2] * k};
}

}  // namespace

torch::Tensor normals_from_depth(const torch::Tensor& depth, const Intrinsics& k) {
  if (depth.dim() != 2 || depth.size(0) < 2 || depth.size(1) < 2) {
    throw ShapeError("normals_from_depth: expected an [H, W] depth map with H, W >= 2");
  }
  const auto z = depth.to(torch::kDouble);
  if ((z <= 0).any().item<bool>()) throw std::domain_error("normals_from_depth: nonpositive depth");
  const int64_t h = z.size(0), w = z.size(1);
  const auto opts = z.options();
  const auto u = torch::arange(w, opts).view({1, w}).expand({h, w});
  const auto v = torch::arange(h, opts).view({h, 1}).expand({h, w});
  const auto pts = torch::stack({(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z}, 0);

  // Offsets to the right / down / left / up neighbours plus their validity.
  auto diff = [&](int64_t dim, bool forward) {
    auto d = torch::zeros_like(pts);
    auto m = torch::zeros({h, w}, torch::kBool);
    const int64_t n = pts.size(dim);
    if (forward) {
      d.slice(dim, 0, n - 1).copy_(pts.slice(dim, 1, n) - pts.slice(dim, 0, n - 1));
      m.slice(dim - 1, 0, n - 1).fill_(true);
    } else {
      d.slice(dim, 1, n).copy_(pts.slice(dim, 0, n - 1) - pts.slice(dim, 1, n));
      m.slice(dim - 1, 1, n).fill_(true);
    }
    return std::pair{d, m};
  };
  const auto [right, m_right] = diff(2, true);
  const auto [down, m_down] = diff(1, true);
  const auto [left, m_left] = diff(2, false);
  const auto [up, m_up] = diff(1, false);

  const std::array<std::pair<const torch::Tensor*, const torch::Tensor*>, 4> pairs{{
      {&right, &down}, {&down, &left}, {&left, &up}, {&up, &right}}};
  const std::array<torch::Tensor, 4> masks{m_right & m_down, m_down & m_left, m_left & m_up,
                                           m_up & m_right};

  auto sum = torch::zeros_like(pts);
  for (size_t i = 0; i < pairs.size(); ++i) {
    auto c = torch::linalg_cross(*pairs[i].first, *pairs[i].second, 0);
    const auto norm = c.norm(2, 0, true);
    c = torch::where(norm > 0, c / norm.clamp_min(1e-300), torch::zeros_like(c));
    sum += c * masks[i].unsqueeze(0).to(c.dtype());
  }
  auto n = sum / sum.norm(2, 0, true).clamp_min(1e-300);
  // Consecutive pairs wind so that camera-facing surfaces give +z; flip to face the camera.
  n = -n;
  n = torch::where(n.select(0, 2).unsqueeze(0) > 0, -n, n);
  return n.to(torch::kFloat);
}

torch::Tensor seg_boundaries(const torch::Tensor& seg) {
  if (seg.dim() != 2) throw ShapeError("seg_boundaries: expected [H, W]");
  const int64_t h = seg.size(0), w = seg.size(1);
  auto e = torch::zeros({h, w}, torch::kBool);
  if (w > 1) {
    const auto dx = seg.slice(1, 1, w) != seg.slice(1, 0, w - 1);
    e.slice(1, 1, w) |= dx;
    e.slice(1, 0, w - 1) |= dx;
  }
  if (h > 1) {
    const auto dy = seg.slice(0, 1, h) != seg.slice(0, 0, h - 1);
    e.slice(0, 1, h) |= dy;
    e.slice(0, 0, h - 1) |= dy;
  }
  return e.to(torch::kUInt8);
}

Sample synthetic_scene(uint64_t seed, int64_t size, int64_t num_classes) {
  SceneOptions opt;
  opt.size = size;
  opt.num_classes = num_classes;
  return synthetic_scene(seed, opt);
}

Sample synthetic_scene(uint64_t seed, const SceneOptions& opt) {
  if (opt.size < 32) throw ConfigError("synthetic_scene: size must be at least 32");
  if (opt.num_classes < 1) throw ConfigError("synthetic_scene: need at least one class");
  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  const int64_t s = opt.size;
  Intrinsics k{static_cast<double>(s), static_cast<double>(s), (s - 1) / 2.0, (s - 1) / 2.0};
  const double wall_z = uniform(0.55, 0.8) * opt.d_far;
  const double cam_h = uniform(1.2, 1.8);
  const int64_t ground_label = std::min<int64_t>(1, opt.num_classes - 1);

  std::vector<Primitive> prims;
  prims.push_back({Shape::Wall, 0, kNoHit});
  if (opt.ground) prims.push_back({Shape::Ground, ground_label, wall_z});

  const int count = opt.max_objects > 0
                        ? std::uniform_int_distribution<int>(opt.min_objects, opt.max_objects)(rng)
                        : 0;
  for (int i = 0; i < count; ++i) {
    const int64_t label = opt.num_classes > 2 ? 2 + (i % (opt.num_classes - 2)) : opt.num_classes - 1;
    const double cz = uniform(0.25, 0.6) * wall_z;
    const double cx = uniform(-0.22, 0.22) * cz;
    Primitive p{Shape::Box, label, cz};
    if (rng() % 2 == 0) {
      p.half = {uniform(0.4, 1.0), uniform(0.4, 1.2), uniform(0.4, 1.0)};
      p.center = {cx, cam_h - p.half[1], cz};
    } else {
      p.shape = Shape::Sphere;
      p.half = {uniform(0.5, 1.2), 0, 0};
      p.center = {cx, cam_h - p.half[0], cz};
    }
    prims.push_back(p);
  }
  std::stable_sort(prims.begin(), prims.end(),
                   [](const Primitive& a, const Primitive& b) { return a.order_depth > b.order_depth; });

  auto depth = torch::empty({s, s}, torch::kDouble);
  auto seg = torch::empty({s, s}, torch::kLong);
  auto rgb = torch::empty({3, s, s}, torch::kDouble);
  auto da = depth.accessor<double, 2>();
  auto sa = seg.accessor<int64_t, 2>();
  auto ra = rgb.accessor<double, 3>();
  for (int64_t y = 0; y < s; ++y) {
    for (int64_t x = 0; x < s; ++x) {
      const Ray ray{(x - k.cx) / k.fx, (y - k.cy) / k.fy};
      for (const auto& p : prims) {
        const Hit hit = intersect(p, ray, wall_z, cam_h);
        if (!std::isfinite(hit.z)) continue;
        da[y][x] = hit.z;
        sa[y][x] = p.label;
        const auto c = albedo(p.label, p.shape, hit.point);
        for (int ch = 0; ch < 3; ++ch) ra[ch][y][x] = c[static_cast<size_t>(ch)];
      }
    }
  }

  Sample out;
  out.intrinsics = k;
  out.depth = depth.to(torch::kFloat);
  out.seg = seg;
  out.normals = normals_from_depth(out.depth, k);
  out.edges = seg_boundaries(seg);

  const auto light = torch::tensor({0.3, -0.8, -0.5}, torch::kDouble);
  const auto lambert =
      (out.normals.to(torch::kDouble) * (light / light.norm()).view({3, 1, 1})).sum(0).clamp_min(0);
  std::normal_distribution<double> noise(0.0, 0.01);
  auto shaded = rgb * (0.4 + 0.6 * lambert).unsqueeze(0);
  auto sh = shaded.accessor<double, 3>();
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < s; ++y)
      for (int64_t x = 0; x < s; ++x) sh[c][y][x] += noise(rng);
  out.image = shaded.clamp(0.0, 1.0).to(torch::kFloat);
  return out;
}

std::vector<std::string> check_sample(const Sample& s, double d_far, int64_t num_classes) {
  std::vector<std::string> errors;
  if (!s.image.defined() || !s.seg.defined() || !s.depth.defined() || !s.normals.defined() ||
      !s.edges.defined()) {
    errors.emplace_back("missing modality");
    return errors;
  }
  const int64_t h = s.seg.size(0), w = s.seg.size(1);
  if (s.image.sizes() != torch::IntArrayRef{3, h, w}) errors.emplace_back("image shape");
  if (s.depth.sizes() != torch::IntArrayRef{h, w}) errors.emplace_back("depth shape");
  if (s.normals.sizes() != torch::IntArrayRef{3, h, w}) errors.emplace_back("normals shape");
  if (s.edges.sizes() != torch::IntArrayRef{h, w}) errors.emplace_back("edges shape");
  if (!errors.empty()) return errors;

  if ((s.image < 0).any().item<bool>() || (s.image > 1).any().item<bool>())
    errors.emplace_back("image outside [0, 1]");
  if ((s.depth <= 0).any().item<bool>()) errors.emplace_back("nonpositive depth");
  if ((s.depth > d_far).any().item<bool>()) errors.emplace_back("depth beyond d_far");
  const auto norm = s.normals.to(torch::kDouble).norm(2, 0);
  if (((norm - 1).abs() > 1e-3).any().item<bool>()) errors.emplace_back("normals not unit length");
  const auto edges = s.edges != 0;
  if ((edges & (seg_boundaries(s.seg) == 0)).any().item<bool>())
    errors.emplace_back("edge pixel without a label change");
  if (num_classes > 0) {
    const auto bad = (s.seg != kIgnoreLabel) & ((s.seg < 0) | (s.seg >= num_classes));
    if (bad.any().item<bool>()) errors.emplace_back("label outside class range");
  }
  return errors;
}

torch::Tensor median_scale(const torch::Tensor& pred, const torch::Tensor& gt) {
  if (pred.sizes() != gt.sizes()) throw ShapeError("median_scale: shape mismatch");
  if ((pred <= 0).any().item<bool>() || (gt <= 0).any().item<bool>()) {
    throw std::domain_error("median_scale: depths must be positive");
  }
  if (pred.dim() <= 2) return pred * (gt.median() / pred.median());
  const int64_t b = pred.size(0);
  const auto gm = std::get<0>(gt.reshape({b, -1}).median(1));
  const auto pm = std::get<0>(pred.reshape({b, -1}).median(1));
  std::vector<int64_t> shape(static_cast<size_t>(pred.dim()), 1);
  shape[0] = b;
  return pred * (gm / pm).view(shape);
}

ClassMap::ClassMap(std::vector<std::string> labels,
                   std::map<std::string, std::optional<std::string>> mapping)
    : labels_(std::move(labels)), mapping_(std::move(mapping)) {
  std::set<std::string> vocab(labels_.begin(), labels_.end());
  if (vocab.size() != labels_.size()) throw ConfigError("ClassMap: duplicate label names");
  for (const auto& name : labels_) {
    auto it = mapping_.find(name);
    if (it == mapping_.end()) throw ConfigError("ClassMap: no mapping for '" + name + "'");
    if (it->second && !vocab.count(*it->second)) {
      throw ConfigError("ClassMap: target '" + *it->second + "' is not a label");
    }
  }
  for (const auto& [name, target] : mapping_) {
    if (!vocab.count(name)) throw ConfigError("ClassMap: mapping for unknown label '" + name + "'");
    if (target && mapping_.at(*target) != target) {
      throw ConfigError("ClassMap: target '" + *target + "' does not map to itself");
    }
  }
}

ClassMap ClassMap::vkitti2() {
  const std::optional<std::string> ignore;
  return ClassMap({"terrain", "sky", "tree", "vegetation", "building", "road", "guardrail", "sign",
                   "light", "pole", "misc", "truck", "car", "van", "vehicle"},
                  {{"terrain", ignore},
                   {"sky", "sky"},
                   {"tree", "vegetation"},
                   {"vegetation", "vegetation"},
                   {"building", "building"},
                   {"road", "road"},
                   {"guardrail", ignore},
                   {"sign", "sign"},
                   {"light", "light"},
                   {"pole", "pole"},
                   {"misc", ignore},
                   {"truck", "vehicle"},
                   {"car", "vehicle"},
                   {"van", "vehicle"},
                   {"vehicle", "vehicle"}});
}

ClassMap ClassMap::cityscapes() {
  const std::optional<std::string> ignore;
  return ClassMap({"road", "sidewalk", "building", "wall", "fence", "pole", "light", "sign",
                   "vegetation", "sky", "person", "rider", "car", "bus", "mbike", "bike",
                   "vehicle"},
                  {{"road", "road"},
                   {"sidewalk", ignore},
                   {"building", "building"},
                   {"wall", "vegetation"},
                   {"fence", ignore},
                   {"pole", "pole"},
                   {"light", "light"},
                   {"sign", "sign"},
                   {"vegetation", "vegetation"},
                   {"sky", "sky"},
                   {"person", ignore},
                   {"rider", ignore},
                   {"car", "vehicle"},
                   {"bus", "vehicle"},
                   {"mbike", ignore},
                   {"bike", ignore},
                   {"vehicle", "vehicle"}});
}

int64_t ClassMap::id_of(const std::string& name) const {
  auto it = std::find(labels_.begin(), labels_.end(), name);
  if (it == labels_.end()) throw std::out_of_range("ClassMap: unknown label '" + name + "'");
  return it - labels_.begin();
}

std::optional<std::string> ClassMap::map(const std::string& name) const {
  auto it = mapping_.find(name);
  if (it == mapping_.end()) throw std::out_of_range("ClassMap: unknown label '" + name + "'");
  return it->second;
}

std::vector<std::string> ClassMap::targets() const {
  std::vector<std::string> out;
  for (const auto& name : labels_) {
    if (mapping_.at(name) == name) out.push_back(name);
  }
  return out;
}

torch::Tensor apply_class_map(const torch::Tensor& seg, const ClassMap& map, int64_t ignore_id) {
  const auto n = static_cast<int64_t>(map.labels().size());
  std::vector<int64_t> lut(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const auto target = map.map(map.labels()[static_cast<size_t>(i)]);
    lut[static_cast<size_t>(i)] = target ? map.id_of(*target) : ignore_id;
  }
  auto ids = seg.to(torch::kLong);
  const auto ignored = ids == ignore_id;
  if (((ids < 0) | (ids >= n)).logical_and(ignored.logical_not()).any().item<bool>()) {
    throw std::out_of_range("apply_class_map: label id outside the source vocabulary");
  }
  const auto table = torch::tensor(lut, torch::kLong);
  const auto safe = torch::where(ignored, torch::zeros_like(ids), ids);
  return torch::where(ignored, ids, table.index_select(0, safe.flatten()).view(ids.sizes()))
      .to(seg.scalar_type());
}

Batch collate(const std::vector<Sample>& samples) {
  if (samples.empty()) throw std::invalid_argument("collate: empty batch");
  std::vector<torch::Tensor> img, seg, depth, normals, edges;
  for (const auto& s : samples) {
    img.push_back(s.image);
    seg.push_back(s.seg);
    depth.push_back(s.depth.unsqueeze(0));
    normals.push_back(s.normals);
    edges.push_back(s.edges.to(torch::kFloat).unsqueeze(0));
  }
  return {torch::stack(img), torch::stack(seg), torch::stack(depth), torch::stack(normals),
          torch::stack(edges)};
}

}  // namespace densemtl
