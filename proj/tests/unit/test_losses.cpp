#include "test_framework.hpp"

#include <cmath>

#include "densemtl/losses.hpp"

using namespace densemtl;

namespace {
torch::TensorOptions f64() { return torch::TensorOptions().dtype(torch::kDouble); }
}  // namespace

TEST_SUITE("seg_loss") {
  TEST_CASE("confident correct logits approach zero") {
    auto labels = torch::tensor({0, 1, 2, 3}, torch::kLong).view({1, 2, 2});
    auto logits = torch::one_hot(labels, 4).permute({0, 3, 1, 2}).to(torch::kDouble) * 100.0;
    CHECK(seg_loss(logits, labels).value.item<double>() < 1e-12);
  }

  TEST_CASE("uniform logits give ln K") {
    auto logits = torch::zeros({2, 4, 3, 3}, f64());
    auto labels = torch::randint(0, 4, {2, 3, 3}, torch::kLong);
    CHECK(seg_loss(logits, labels).value.item<double>() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }

  TEST_CASE("2x2 hand case") {
    // Two classes; logits per pixel (l0, l1), labels {0, 1, 1, ignore}.
    auto logits = torch::tensor({1.0, -1.0, 0.5, 3.0, 2.0, 0.0, 0.2, 0.2}, f64()).view({1, 2, 2, 2});
    auto labels = torch::tensor({0, 1, 1, static_cast<int>(kIgnoreLabel)}, torch::kLong).view({1, 2, 2});
    auto ce = [](double lt, double lo) { return -lt + std::log(std::exp(lt) + std::exp(lo)); };
    // Channel-major layout: class 0 logits {1, -1, 0.5, 3}, class 1 logits {2, 0, 0.2, 0.2}.
    const double expect = (ce(1.0, 2.0) + ce(0.0, -1.0) + ce(0.2, 0.5)) / 3.0;
    CHECK(seg_loss(logits, labels).value.item<double>() == doctest::Approx(expect).epsilon(1e-12));
  }

  TEST_CASE("all pixels ignored gives zero with a flag") {
    auto logits = torch::randn({1, 3, 2, 2}, f64()).requires_grad_(true);
    auto r = seg_loss(logits, torch::full({1, 2, 2}, kIgnoreLabel, torch::kLong));
    CHECK(r.all_ignored);
    CHECK(r.value.item<double>() == 0.0);
    r.value.backward();
    CHECK(logits.grad().abs().max().item<double>() == 0.0);
    CHECK(!seg_loss(logits, torch::zeros({1, 2, 2}, torch::kLong)).all_ignored);
  }

  TEST_CASE("invalid labels and shapes are rejected") {
    CHECK_THROWS_AS(seg_loss(torch::zeros({1, 3, 2, 2}), torch::full({1, 2, 2}, 3, torch::kLong)), std::domain_error);
    CHECK_THROWS_AS(seg_loss(torch::zeros({1, 3, 2, 2}), torch::zeros({1, 3, 2}, torch::kLong)), ShapeError);
  }
}

TEST_SUITE("berhu") {
  TEST_CASE("equal depths give zero") {
    auto d = torch::rand({1, 1, 4, 4}, f64()) * 10 + 1;
    CHECK(depth_loss(d, d, DepthCodec{20}).item<double>() == 0.0);
  }

  TEST_CASE("both branches by hand") {
    CHECK(berhu(torch::tensor({0.1, 1.0}, f64()), 0.2).item<double>() == doctest::Approx(1.35).epsilon(1e-12));
  }

  TEST_CASE("L1 branch below the threshold") {
    CHECK(berhu(torch::tensor({-0.3}, f64()), 0.5).item<double>() == doctest::Approx(0.3).epsilon(1e-15));
    // Adaptive threshold: a single residual sits above c = 0.2 |r|.
    const double r = 2.0, c = 0.4;
    CHECK(berhu(torch::tensor({r}, f64())).item<double>() == doctest::Approx((r * r + c * c) / (2 * c)).epsilon(1e-12));
  }

  TEST_CASE("adaptive threshold is 0.2 of the largest residual") {
    auto r = torch::tensor({0.1, -0.5, 2.0, 0.3}, f64());
    const double c = 0.4;
    const double expect = (0.1 + (0.25 + c * c) / (2 * c) + (4.0 + c * c) / (2 * c) + 0.3) / 4.0;
    CHECK(berhu(r).item<double>() == doctest::Approx(expect).epsilon(1e-12));
  }

  TEST_CASE("continuous and once differentiable at the threshold") {
    const double c = 0.8, h = 1e-7;
    auto f = [&](double r) { return berhu(torch::tensor({r}, f64()), c).item<double>(); };
    CHECK(std::abs(f(c - 1e-12) - f(c + 1e-12)) < 1e-6);
    const double left = (f(c) - f(c - h)) / h;
    const double right = (f(c + h) - f(c)) / h;
    CHECK(std::abs(left - right) < 1e-6);
    CHECK(std::abs(left - 1.0) < 1e-6);
  }

  TEST_CASE("depth loss works on inverse normalised depth") {
    auto pred = torch::tensor({2.0, 4.0}, f64());
    auto gt = torch::tensor({4.0, 4.0}, f64());
    // r = 20/2 - 20/4 = 5 and 0; c = 1.
    const double expect = ((25.0 + 1.0) / 2.0 + 0.0) / 2.0;
    CHECK(depth_loss(pred, gt, DepthCodec{20}).item<double>() == doctest::Approx(expect).epsilon(1e-12));
  }

  TEST_CASE("nonpositive depth is an error") {
    CHECK_THROWS_AS(depth_loss(torch::tensor({0.0, 1.0}), torch::tensor({1.0, 1.0}), DepthCodec{10}), std::domain_error);
    CHECK_THROWS_AS(depth_loss(torch::tensor({1.0, 1.0}), torch::tensor({-1.0, 1.0}), DepthCodec{10}), std::domain_error);
    CHECK_THROWS_AS(depth_loss(torch::ones({2}), torch::ones({3}), DepthCodec{10}), ShapeError);
  }
}

TEST_SUITE("normal_loss") {
  TEST_CASE("identical, opposite and orthogonal normals") {
    auto n = torch::nn::functional::normalize(torch::randn({2, 3, 4, 4}, f64()),
                                              torch::nn::functional::NormalizeFuncOptions().dim(1));
    CHECK(normal_loss(n, n).item<double>() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(normal_loss(-n, n).item<double>() == doctest::Approx(2.0).epsilon(1e-12));
    auto x = torch::zeros({1, 3, 2, 2}, f64()), y = torch::zeros({1, 3, 2, 2}, f64());
    x.select(1, 0).fill_(1.0);
    y.select(1, 1).fill_(1.0);
    CHECK(normal_loss(x, y).item<double>() == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("zero vectors are rejected") {
    auto z = torch::zeros({1, 3, 2, 2});
    auto n = torch::ones({1, 3, 2, 2});
    CHECK_THROWS_AS(normal_loss(z, n), std::domain_error);
    CHECK_THROWS_AS(normal_loss(n, z), std::domain_error);
  }
}

TEST_SUITE("edge_loss") {
  TEST_CASE("perfect prediction tends to zero") {
    auto gt = (torch::rand({1, 1, 8, 8}) > 0.7).to(torch::kDouble);
    CHECK(edge_loss(gt, gt).item<double>() < 1e-5);
  }

  TEST_CASE("constant 0.5 gives the weighted ln 2 combination") {
    auto gt = torch::zeros({1, 1, 4, 4}, f64());
    gt.view(-1).narrow(0, 0, 4).fill_(1.0);  // 4 positives, 12 negatives
    const double w = 12.0 / 4.0;
    const double expect = (w * 4 * std::log(2.0) + 12 * std::log(2.0)) / 16.0;
    CHECK(edge_loss(torch::full({1, 1, 4, 4}, 0.5, f64()), gt).item<double>() == doctest::Approx(expect).epsilon(1e-12));
  }

  TEST_CASE("all background with zero prediction is the clamp limit") {
    auto l = edge_loss(torch::zeros({1, 1, 4, 4}, f64()), torch::zeros({1, 1, 4, 4}, f64())).item<double>();
    CHECK(l >= 0.0);
    CHECK(l < 1e-6);
  }
}

TEST_SUITE("total_loss") {
  const auto one = [](double v) { return torch::tensor(v, f64()); };

  TEST_CASE("zero weights give zero") {
    std::vector<TaskSpec> tasks{{Task::Segmentation, 0.0}, {Task::Depth, 0.0}};
    TaskLosses l{{Task::Segmentation, one(3.0)}, {Task::Depth, one(4.0)}};
    CHECK(total_loss({{1, l}}, l, tasks, {1}).item<double>() == 0.0);
  }

  TEST_CASE("single task plugged into the formula") {
    std::vector<TaskSpec> tasks{{Task::Depth, 2.0}};
    CHECK(total_loss({{1, {{Task::Depth, one(0.5)}}}}, {{Task::Depth, one(1.0)}}, tasks, {1}).item<double>() ==
          doctest::Approx(3.0));
  }

  TEST_CASE("segmentation-depth pair with default weights and unit losses") {
    auto tasks = default_task_specs({Task::Segmentation, Task::Depth});
    TaskLosses l{{Task::Segmentation, one(1.0)}, {Task::Depth, one(1.0)}};
    CHECK(total_loss({{1, l}}, l, tasks, {1}).item<double>() == doctest::Approx(102.0));
  }

  TEST_CASE("intermediate terms are averaged over scales") {
    std::vector<TaskSpec> tasks{{Task::Depth, 1.0}};
    ScaleLosses inter{{1, {{Task::Depth, one(1.0)}}}, {2, {{Task::Depth, one(3.0)}}}};
    CHECK(total_loss(inter, {{Task::Depth, one(0.5)}}, tasks, {1, 2}).item<double>() == doctest::Approx(2.5));
  }

  TEST_CASE("empty scale set is the final-only sum") {
    std::vector<TaskSpec> tasks{{Task::Depth, 4.0}};
    CHECK(total_loss({}, {{Task::Depth, one(0.5)}}, tasks, {}).item<double>() == doctest::Approx(2.0));
  }

  TEST_CASE("missing losses are errors") {
    std::vector<TaskSpec> tasks{{Task::Depth, 1.0}, {Task::Normals, 1.0}};
    CHECK_THROWS(total_loss({}, {{Task::Depth, one(1.0)}}, tasks, {}));
    TaskLosses full{{Task::Depth, one(1.0)}, {Task::Normals, one(1.0)}};
    CHECK_THROWS(total_loss({{1, {{Task::Depth, one(1.0)}}}}, full, tasks, {1}));
    CHECK_THROWS(total_loss({}, full, tasks, {1}));
  }
}

TEST_CASE("default task weights") {
  auto sd = default_task_specs({Task::Segmentation, Task::Depth});
  CHECK(sd[0].weight == 50.0);
  CHECK(sd[1].weight == 1.0);
  auto sdn = default_task_specs({Task::Segmentation, Task::Depth, Task::Normals});
  CHECK(sdn[0].weight == 100.0);
  CHECK(sdn[1].weight == 1.0);
  CHECK(sdn[2].weight == 100.0);
  auto sdne = default_task_specs({Task::Segmentation, Task::Depth, Task::Normals, Task::Edges});
  CHECK(sdne[0].weight == 100.0);
  CHECK(sdne[2].weight == 100.0);
  CHECK(sdne[3].weight == 50.0);
}

TEST_CASE("losses are nonnegative on random inputs") {
  torch::manual_seed(3);
  bool ok = true;
  for (int i = 0; i < 50; ++i) {
    auto logits = torch::randn({1, 4, 4, 4}, f64()) * 3;
    ok &= seg_loss(logits, torch::randint(0, 4, {1, 4, 4}, torch::kLong)).value.item<double>() >= 0;
    ok &= depth_loss(torch::rand({1, 1, 4, 4}, f64()) * 10 + 0.1, torch::rand({1, 1, 4, 4}, f64()) * 10 + 0.1,
                     DepthCodec{20})
              .item<double>() >= 0;
    ok &= normal_loss(torch::randn({1, 3, 4, 4}, f64()), torch::randn({1, 3, 4, 4}, f64())).item<double>() >= 0;
    ok &= edge_loss(torch::rand({1, 1, 4, 4}, f64()), (torch::rand({1, 1, 4, 4}) > 0.5).to(torch::kDouble))
              .item<double>() >= 0;
  }
  CHECK(ok);
}
