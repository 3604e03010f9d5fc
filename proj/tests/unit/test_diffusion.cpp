#include <doctest.h>

#include "helpers.hpp"
#include "nadapt/diffusion.hpp"
#include "nadapt/error.hpp"

using namespace nadapt;

TEST_SUITE("diffusion") {
  TEST_CASE("linear schedule endpoints and products") {
    auto s = linear_schedule();
    REQUIRE(s.steps() == 1000);
    CHECK(s.beta[0] == doctest::Approx(1e-6).epsilon(1e-12));
    CHECK(s.beta[999] == doctest::Approx(1e-2).epsilon(1e-12));
    CHECK(s.alpha_bar[0] == doctest::Approx(1 - 1e-6).epsilon(1e-15));
    long double prod = 1;
    for (int i = 0; i < 1000; ++i) {
      prod *= 1.0L - (1e-6L + i * (1e-2L - 1e-6L) / 999.0L);
      if (i > 0) {
        CHECK(s.beta[static_cast<std::size_t>(i)] > s.beta[static_cast<std::size_t>(i - 1)]);
        CHECK(s.alpha_bar[static_cast<std::size_t>(i)] < s.alpha_bar[static_cast<std::size_t>(i - 1)]);
      }
    }
    CHECK(std::abs(s.alpha_bar[999] / static_cast<double>(prod) - 1) < 0.05);
    CHECK(s.alpha_bar[999] == doctest::Approx(6.6e-3).epsilon(0.05));
    CHECK(s.alpha_bar[999] > 0);
    CHECK_THROWS_AS(linear_schedule(1), ValueError);
    CHECK_THROWS_AS(linear_schedule(10, 0.1, 0.01), ValueError);
    CHECK_THROWS_AS(linear_schedule(10, 0.0, 0.01), ValueError);
  }

  TEST_CASE("forward sample definition and limits") {
    auto s = linear_schedule();
    auto y = torch::rand({3, 1, 4, 4});
    auto eps = torch::randn({3, 1, 4, 4});
    auto t = torch::tensor({0, 500, 999}, torch::kLong);
    auto b = forward_sample(y, t, eps, s);
    for (int i = 0; i < 3; ++i) {
      const double ab = s.alpha_bar[static_cast<std::size_t>(t[i].item<int64_t>())];
      auto ref = std::sqrt(ab) * y[i] + std::sqrt(1 - ab) * eps[i];
      CHECK((b.noisy[i] - ref).abs().max().item<double>() < 1e-6);
      CHECK(b.sqrt_alpha_bar[i].item<double>() == doctest::Approx(std::sqrt(ab)).epsilon(1e-6));
    }
    auto zero = forward_sample(y, t, torch::zeros_like(eps), s);
    for (int i = 0; i < 3; ++i) {
      const double ab = s.alpha_bar[static_cast<std::size_t>(t[i].item<int64_t>())];
      CHECK((zero.noisy[i] - std::sqrt(ab) * y[i]).abs().max().item<double>() < 1e-6);
    }
    NoiseSchedule one{{0.0}, {1.0}, {1.0}};
    CHECK(torch::allclose(forward_sample(y.slice(0, 0, 1), torch::zeros({1}, torch::kLong), eps.slice(0, 0, 1), one).noisy,
                          y.slice(0, 0, 1)));
    auto scaled = forward_sample(2.5 * y, t, 2.5 * eps, s).noisy;
    CHECK(torch::allclose(scaled, 2.5 * b.noisy, 1e-5, 1e-6));
    CHECK_THROWS_AS(forward_sample(y, torch::tensor({0, 1, 1000}, torch::kLong), eps, s), ValueError);
    CHECK_THROWS_AS(forward_sample(y, torch::tensor({-1, 1, 2}, torch::kLong), eps, s), ValueError);
  }

  TEST_CASE("timestep sampling stays inside the range and is uniform") {
    auto s = linear_schedule();
    Rng rng(3);
    auto t = sample_timesteps(20000, {1, 100}, s, rng);
    CHECK(t.min().item<int64_t>() == 0);
    CHECK(t.max().item<int64_t>() == 99);
    CHECK(t.to(torch::kDouble).mean().item<double>() == doctest::Approx(49.5).epsilon(0.02));
    CHECK_THROWS_AS(sample_timesteps(4, {0, 10}, s, rng), ValueError);
    CHECK_THROWS_AS(sample_timesteps(4, {1, 1001}, s, rng), ValueError);
  }

  TEST_CASE("eps net shape, conditioning and condition gradient") {
    torch::manual_seed(2);
    auto net = build_eps_net(3, 6, 8);
    auto noisy = torch::randn({2, 3, 16, 16});
    auto cond = torch::rand({2, 6, 16, 16}).requires_grad_(true);
    auto ab = torch::tensor({0.9f, 0.2f});
    auto e1 = net->forward(noisy, cond, ab);
    CHECK(e1.sizes() == noisy.sizes());
    auto e2 = net->forward(noisy, cond.detach() + 0.1 * torch::randn_like(cond), ab);
    CHECK((e1 - e2).norm().item<double>() > 0);
    auto e3 = net->forward(noisy, cond, ab);
    CHECK(torch::equal(e1, e3));
    auto eps = torch::randn_like(noisy);
    (eps - e1).square().sum().sqrt().backward();
    CHECK(cond.grad().norm().item<double>() > 0);
    CHECK_THROWS_AS(build_eps_net(3, 4, 8), ShapeError);
    CHECK_THROWS_AS(net->forward(noisy, torch::rand({2, 3, 16, 16}), ab), ShapeError);
  }

  TEST_CASE("EMA recurrence") {
    torch::manual_seed(5);
    auto live = build_eps_net(1, 2, 4);
    auto st0 = ema_init(*live, 0.0);
    {
      torch::NoGradGuard g;
      for (auto& p : live->parameters()) p.add_(1.0);
    }
    ema_update(st0, *live);
    auto params = live->parameters();
    for (std::size_t i = 0; i < params.size(); ++i) CHECK(torch::equal(st0.shadow[i], params[i]));

    auto frozen = ema_init(*live, 1.0);
    auto before = frozen.shadow[0].clone();
    {
      torch::NoGradGuard g;
      for (auto& p : live->parameters()) p.add_(3.0);
    }
    ema_update(frozen, *live);
    CHECK(torch::equal(frozen.shadow[0], before));

    // Constant live weights: error shrinks by decay^k.
    auto st = ema_init(*live, 0.9);
    const auto w0 = st.shadow[0].clone();
    {
      torch::NoGradGuard g;
      for (auto& p : live->parameters()) p.sub_(2.0);
    }
    const auto w = live->parameters()[0].detach().clone();
    const double e0 = (w0 - w).norm().item<double>();
    for (int k = 1; k <= 5; ++k) {
      ema_update(st, *live);
      CHECK((st.shadow[0] - w).norm().item<double>() == doctest::Approx(std::pow(0.9, k) * e0).epsilon(1e-4));
    }
    auto target = build_eps_net(1, 2, 4);
    ema_copy_to(st, *target);
    CHECK(torch::equal(target->parameters()[0], st.shadow[0]));
    auto other = build_eps_net(1, 2, 8);
    CHECK_THROWS_AS(ema_update(st, *other), ShapeError);
  }
}
