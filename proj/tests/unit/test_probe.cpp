#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "nadapt/error.hpp"
#include "nadapt/probe.hpp"

using namespace nadapt;

namespace {

std::vector<Image> small_set(int n, std::uint64_t seed) {
  std::vector<Image> out;
  for (int i = 0; i < n; ++i) out.push_back(test::random_image(3, 8, 8, seed + static_cast<std::uint64_t>(i)));
  return out;
}

// Recovers eps exactly when the condition equals the clean image.
torch::Tensor oracle(const torch::Tensor& noisy, const torch::Tensor& cond, const torch::Tensor& sab) {
  auto s = sab.to(torch::kDouble).view({-1, 1, 1, 1});
  return ((noisy.to(torch::kDouble) - s * cond.to(torch::kDouble)) / (1 - s * s).sqrt()).to(torch::kFloat);
}

}  // namespace

TEST_SUITE("probe") {
  TEST_CASE("spearman") {
    CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 45}) == doctest::Approx(1.0));
    CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
    CHECK(spearman({1, 2, 2, 3}, {1, 2, 3, 4}) == doctest::Approx(4.5 / std::sqrt(22.5)).epsilon(1e-12));
    CHECK(spearman({0, 10, 20}, {0.1, 0.3, 0.2}) == doctest::Approx(0.5));
    CHECK_THROWS_AS(spearman({1}, {1}), ValueError);
    CHECK_THROWS_AS(spearman({1, 2}, {1, 2, 3}), ValueError);
  }

  TEST_CASE("sweep with an exact predictor scales with sigma squared") {
    const auto sched = linear_schedule();
    const auto imgs = small_set(20, 1);
    auto r = corruption_sweep(oracle, imgs, {0, 10, 20, 40, 80}, sched, 3, 7);
    CHECK(r.n_images == 20);
    CHECK(r.mse[0] < 1e-6);
    for (std::size_t i = 2; i < r.sigma.size(); ++i) {
      const double a = r.mse[i] / (r.sigma[i] * r.sigma[i]);
      const double b = r.mse[1] / (r.sigma[1] * r.sigma[1]);
      CHECK(a == doctest::Approx(b).epsilon(1e-3));
    }
    CHECK(spearman(r.sigma, r.mse) == doctest::Approx(1.0));
  }

  TEST_CASE("sweep with a zero predictor measures the noise power") {
    const auto sched = linear_schedule();
    EpsPredictor zero = [](const torch::Tensor& n, const torch::Tensor&, const torch::Tensor&) {
      return torch::zeros_like(n);
    };
    auto r = corruption_sweep(zero, small_set(30, 2), {0, 50}, sched, 4, 3);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(std::abs(r.mse[i] - 1.0) < 4 * r.stderr_mse[i] + 1e-9);
      CHECK(r.stderr_mse[i] > 0);
    }
    // Common random numbers: the condition never matters to this predictor.
    CHECK(r.mse[0] == r.mse[1]);
  }

  TEST_CASE("sweep determinism, draws and chunking") {
    const auto sched = linear_schedule();
    torch::manual_seed(4);
    auto net = build_eps_net(3, 3, 4);
    net->eval();
    EpsPredictor f = [&](const torch::Tensor& n, const torch::Tensor& c, const torch::Tensor& s) {
      return net->forward(n, c, s);
    };
    const auto imgs = small_set(12, 3);
    auto a = corruption_sweep(f, imgs, {0, 40, 80}, sched, 4, 9);
    auto b = corruption_sweep(f, imgs, {0, 40, 80}, sched, 4, 9, 5);
    CHECK(a.to_csv() == corruption_sweep(f, imgs, {0, 40, 80}, sched, 4, 9).to_csv());
    for (std::size_t i = 0; i < 3; ++i) CHECK(a.mse[i] == doctest::Approx(b.mse[i]).epsilon(1e-9));
    auto c = corruption_sweep(f, imgs, {0, 40, 80}, sched, 8, 10);
    for (std::size_t i = 0; i < 3; ++i) {
      const double tol = 4 * std::sqrt(a.stderr_mse[i] * a.stderr_mse[i] + c.stderr_mse[i] * c.stderr_mse[i]);
      CHECK(std::abs(a.mse[i] - c.mse[i]) <= tol);
    }
    CHECK(a.to_csv().rfind("sigma,mse,stderr\n", 0) == 0);
  }

  TEST_CASE("sweep input validation") {
    const auto sched = linear_schedule();
    const auto imgs = small_set(2, 5);
    CHECK_THROWS_AS(corruption_sweep(oracle, {}, {0, 10}, sched, 1, 0), ValueError);
    CHECK_THROWS_AS(corruption_sweep(oracle, imgs, {0, 90}, sched, 1, 0), ValueError);
    CHECK_THROWS_AS(corruption_sweep(oracle, imgs, {-1, 10}, sched, 1, 0), ValueError);
    CHECK_THROWS_AS(corruption_sweep(oracle, imgs, {10, 10}, sched, 1, 0), ValueError);
    CHECK_THROWS_AS(corruption_sweep(oracle, imgs, {0, 10}, sched, 0, 0), ValueError);
  }

  TEST_CASE("probe training reduces the loss and is reproducible") {
    const auto sched = linear_schedule();
    auto imgs = probe_images("", 16, 16, 1);
    ProbeTrainOptions o;
    o.steps = 120;
    o.batch = 8;
    o.lr = 2e-3;
    o.base_channels = 4;
    o.patch = 16;
    o.seed = 2;
    auto m = train_probe_model(imgs, sched, o);
    REQUIRE(m.losses.size() == 120);
    double first = 0, last = 0;
    for (int i = 0; i < 20; ++i) {
      first += m.losses[static_cast<std::size_t>(i)];
      last += m.losses[m.losses.size() - 1 - static_cast<std::size_t>(i)];
    }
    CHECK(last < first);
    o.steps = 10;
    CHECK(train_probe_model(imgs, sched, o).losses == train_probe_model(imgs, sched, o).losses);
    CHECK_THROWS_AS(train_probe_model({}, sched, o), ValueError);
  }

  TEST_CASE("probe images and plot") {
    auto a = probe_images("", 5, 32, 3);
    auto b = probe_images("", 5, 32, 3);
    REQUIRE(a.size() == 5);
    CHECK(a[0].height() == 32);
    CHECK(torch::equal(a[4].tensor(), b[4].tensor()));
    test::TempDir dir("probe");
    std::filesystem::create_directories(dir / "src");
    save_image(test::random_image(3, 40, 50, 1), dir / "src" / "x.png");
    auto c = probe_images((dir / "src").string(), 4, 32, 0);
    REQUIRE(c.size() == 1);
    CHECK(c[0].width() == 32);
    SweepResult r;
    r.sigma = {0, 40, 80};
    r.mse = {0.1, 0.2, 0.4};
    r.stderr_mse = {0.01, 0.01, 0.01};
    write_sweep_plot(r, dir / "plot.png");
    auto img = load_image(dir / "plot.png");
    CHECK(img.width() == 480);
    CHECK(img.height() == 320);
    r.write_csv(dir / "sweep.csv");
    CHECK(test::slurp(dir / "sweep.csv") == r.to_csv());
  }
}
