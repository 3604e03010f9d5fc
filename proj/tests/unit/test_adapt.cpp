#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "nadapt/adapt.hpp"
#include "nadapt/diffusion.hpp"
#include "nadapt/error.hpp"

using namespace nadapt;

namespace {

// Mean of the chi distribution with k degrees of freedom.
double chi_mean(double k) { return std::sqrt(2.0) * std::exp(std::lgamma((k + 1) / 2) - std::lgamma(k / 2)); }

double l2(const torch::Tensor& a, const torch::Tensor& b) {
  auto va = test::to_vec(a), vb = test::to_vec(b);
  double s = 0;
  for (std::size_t i = 0; i < va.size(); ++i) s += (va[i] - vb[i]) * (va[i] - vb[i]);
  return std::sqrt(s);
}

}  // namespace

TEST_SUITE("adapt") {
  TEST_CASE("condition packing preserves content in the recorded order") {
    auto syn = torch::rand({3, 2, 4, 4});
    auto real = torch::rand({3, 2, 4, 4});
    auto fixed = fixed_order(syn, real);
    CHECK(torch::equal(fixed.concat.slice(1, 0, 2), syn));
    CHECK(torch::equal(fixed.concat.slice(1, 2, 4), real));
    auto p = pack_conditions(syn, real, {ConditionOrder::real_first, ConditionOrder::syn_first, ConditionOrder::real_first});
    CHECK(torch::equal(p.concat[0].slice(0, 0, 2), real[0]));
    CHECK(torch::equal(p.concat[0].slice(0, 2, 4), syn[0]));
    CHECK(torch::equal(p.concat[1].slice(0, 0, 2), syn[1]));
    CHECK_THROWS_AS(pack_conditions(syn, real.slice(3, 0, 2), fixed.order), ShapeError);
    CHECK_THROWS_AS(pack_conditions(syn, real, {ConditionOrder::syn_first}), ShapeError);
  }

  TEST_CASE("channel shuffle is fair and reproducible") {
    auto syn = torch::zeros({100, 1, 1, 1});
    auto real = torch::ones({100, 1, 1, 1});
    Rng rng(17);
    int syn_first = 0, total = 0;
    for (int k = 0; k < 100; ++k) {
      auto p = channel_shuffle(syn, real, rng);
      for (std::size_t i = 0; i < p.order.size(); ++i) {
        const bool sf = p.order[i] == ConditionOrder::syn_first;
        syn_first += sf ? 1 : 0;
        ++total;
        CHECK(p.concat[static_cast<int64_t>(i)][0].item<float>() == (sf ? 0.0f : 1.0f));
      }
    }
    CHECK(std::abs(syn_first / static_cast<double>(total) - 0.5) < 0.02);
    Rng a(3), b(3);
    CHECK((channel_shuffle(syn, real, a).order == channel_shuffle(syn, real, b).order));
  }

  TEST_CASE("noise distances") {
    auto a = torch::randn({2, 3, 4, 4});
    auto b = torch::randn({2, 3, 4, 4});
    auto d = noise_distance(a, b, LossNorm::l2);
    auto m = noise_distance(a, b, LossNorm::squared);
    for (int i = 0; i < 2; ++i) {
      CHECK(d[i].item<double>() == doctest::Approx(l2(a[i], b[i])).epsilon(1e-6));
      CHECK(m[i].item<double>() == doctest::Approx(l2(a[i], b[i]) * l2(a[i], b[i]) / 48).epsilon(1e-6));
    }
    CHECK(loss_norm_from_string("squared") == LossNorm::squared);
    CHECK_THROWS_AS(loss_norm_from_string("l1"), ConfigError);
  }

  TEST_CASE("diffusion loss with stub predictors") {
    auto s = linear_schedule();
    auto y = torch::rand({64, 3, 8, 8});
    Rng rng(2);
    auto eps = rng.randn(y.sizes());
    auto t = sample_timesteps(64, {1, 1000}, s, rng);
    auto fb = forward_sample(y, t, eps, s);
    auto pack = fixed_order(y, y);
    EpsPredictor oracle = [&](const torch::Tensor&, const torch::Tensor&, const torch::Tensor&) { return eps; };
    CHECK(diffusion_loss(oracle, fb.noisy, pack, fb.sqrt_alpha_bar, eps).loss.item<double>() < 1e-5);
    EpsPredictor zero = [&](const torch::Tensor& n, const torch::Tensor&, const torch::Tensor&) {
      return torch::zeros_like(n);
    };
    const double mean = diffusion_loss(zero, fb.noisy, pack, fb.sqrt_alpha_bar, eps).loss.item<double>();
    // 64 samples of chi_192 have standard error about 0.09.
    CHECK(std::abs(mean - chi_mean(192)) < 0.3);
    EpsPredictor nan = [&](const torch::Tensor& n, const torch::Tensor&, const torch::Tensor&) {
      return torch::full_like(n, std::nan(""));
    };
    CHECK_THROWS_AS(diffusion_loss(nan, fb.noisy, pack, fb.sqrt_alpha_bar, eps), NonFiniteError);
  }

  TEST_CASE("residual swap") {
    auto xs = torch::rand({2, 3, 4, 4}), xr = torch::rand({2, 3, 4, 4});
    auto rs = torch::randn({2, 3, 4, 4}), rr = torch::randn({2, 3, 4, 4});
    auto sw = residual_swap(xs, xr, rs, rr);
    auto a = test::to_vec(sw.syn_with_real_residual), b = test::to_vec(sw.real_with_syn_residual);
    auto vxs = test::to_vec(xs), vxr = test::to_vec(xr), vrs = test::to_vec(rs), vrr = test::to_vec(rr);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i] == doctest::Approx(vxs[i] + vrr[i]).epsilon(1e-6));
      CHECK(b[i] == doctest::Approx(vxr[i] + vrs[i]).epsilon(1e-6));
    }
    auto same = residual_swap(xs, xr, rs, rs);
    CHECK(torch::equal(same.syn_with_real_residual, xs + rs));
    CHECK(torch::equal(same.real_with_syn_residual, xr + rs));
    CHECK(torch::equal(residual_swap(xs, xr, rs, torch::zeros_like(rr)).syn_with_real_residual, xs));
    CHECK_THROWS_AS(residual_swap(xs, xr.slice(2, 0, 2), rs, rr), ShapeError);
  }

  TEST_CASE("contrastive loss oracle and properties") {
    auto eps = torch::randn({4, 1, 4, 4});
    auto pos = torch::randn({4, 1, 4, 4});
    auto neg = torch::randn({4, 1, 4, 4});
    const double delta = 0.1;
    double ref = 0;
    for (int i = 0; i < 4; ++i) ref += std::max(l2(eps[i], pos[i]) - l2(eps[i], neg[i]) + delta, 0.0) / 4;
    CHECK(contrastive_loss(eps, pos, neg, delta).item<double>() == doctest::Approx(ref).epsilon(1e-6));
    CHECK(contrastive_loss(eps, pos, pos, 0.05).item<double>() == doctest::Approx(0.05).epsilon(1e-6));
    // d_pos = 0, d_neg = 2 delta
    auto dir = torch::randn({4, 1, 4, 4});
    auto unit = dir / dir.flatten(1).norm(2, 1).view({4, 1, 1, 1});
    CHECK(contrastive_loss(eps, eps, eps + 0.2 * unit, 0.1).item<double>() == doctest::Approx(0.0).epsilon(1e-6));
    // Depends only on the two distances: reflect both predictions through eps.
    auto l1 = contrastive_loss(eps, pos, neg, delta).item<double>();
    auto l2v = contrastive_loss(eps, 2 * eps - pos, 2 * eps - neg, delta).item<double>();
    CHECK(l1 == doctest::Approx(l2v).epsilon(1e-6));
    const auto lc = contrastive_loss(eps, pos, neg, delta).item<double>();
    CHECK(lc >= 0);
    CHECK(lc <= noise_distance(eps, pos, LossNorm::l2).mean().item<double>() + delta + 1e-9);
    CHECK_THROWS_AS(contrastive_loss(eps, pos, neg, -0.1), ValueError);
  }

  TEST_CASE("a contrastive step repels the negative prediction") {
    auto eps = torch::randn({2, 1, 6, 6});
    auto pos = (eps + 0.5 * torch::randn_like(eps));
    auto neg = (eps + 0.4 * torch::randn_like(eps)).requires_grad_(true);
    const double before = noise_distance(eps, neg.detach(), LossNorm::l2).sum().item<double>();
    auto loss = contrastive_loss(eps, pos, neg, 10.0);
    loss.backward();
    auto stepped = neg.detach() - 0.01 * neg.grad();
    CHECK(noise_distance(eps, stepped, LossNorm::l2).sum().item<double>() >= before);
  }

  TEST_CASE("lambda schedule values") {
    CHECK(lambda_schedule({0, 10}) == 0.0);
    CHECK(lambda_schedule({10, 10}) == doctest::Approx(0.197322).epsilon(1e-6 / 0.197322));
    CHECK(std::abs(lambda_schedule({10, 10}) - 0.197322) <= 1e-6);
    CHECK(std::abs(lambda_schedule({5, 10}) - 0.169656) <= 1e-6);
    CHECK(lambda_schedule({30, 10}) == lambda_schedule({10, 10}));
    double prev = -1;
    for (int n = 0; n <= 60; ++n) {
      const double l = lambda_schedule({n, 60});
      CHECK(l >= prev);
      CHECK(l <= 0.2);
      prev = l;
    }
    CHECK_THROWS_AS(lambda_schedule({1, 0}), ValueError);
    CHECK_THROWS_AS(lambda_schedule({-1, 4}), ValueError);
  }

  TEST_CASE("combined loss") {
    CHECK(combined_loss(0.3, 5.0, 1.0, 0.0) == 0.3);
    CHECK(combined_loss(0.3, 1.0, 1.0, 0.2) == doctest::Approx(0.5));
    Rng rng(4);
    for (int i = 0; i < 20; ++i) {
      const double a = rng.uniform(), b = rng.uniform(0, 50), c = rng.uniform(), l = rng.uniform(0, 0.2);
      CHECK(combined_loss(a, b, c, l) == doctest::Approx(a + l * (b + c) / 2).epsilon(1e-12));
      auto t = combined_loss(torch::tensor(a, torch::kDouble), torch::tensor(b, torch::kDouble),
                             torch::tensor(c, torch::kDouble), l);
      CHECK(t.item<double>() == doctest::Approx(a + l * (b + c) / 2).epsilon(1e-12));
    }
    CHECK_THROWS_AS(combined_loss(std::nan(""), 1, 1, 0.1), NonFiniteError);
    CHECK_THROWS_AS(combined_loss(torch::tensor(1.0), torch::tensor(INFINITY), torch::tensor(0.0), 0.1),
                    NonFiniteError);
  }

  TEST_CASE("diffusion target selection") {
    auto ys = torch::rand({3, 1, 4, 4});
    Rng rng(9);
    CHECK(torch::equal(pick_diffusion_target(TargetMode::paired, ys, std::nullopt, rng).clean, ys));
    auto one = torch::rand({1, 1, 4, 4});
    auto t1 = pick_diffusion_target(TargetMode::unpaired, ys, one, rng);
    for (int i = 0; i < 3; ++i) CHECK(torch::equal(t1.clean[i], one[0]));
    auto pool = torch::rand({4, 1, 4, 4});
    std::vector<int> counts(4, 0);
    int total = 0;
    for (int k = 0; k < 2500; ++k) {
      auto t = pick_diffusion_target(TargetMode::unpaired, pool.slice(0, 0, 4), pool, rng);
      for (int idx : t.pool_indices) {
        ++counts[static_cast<std::size_t>(idx)];
        ++total;
      }
    }
    for (int c : counts) CHECK(std::abs(c / static_cast<double>(total) - 0.25) < 0.02);
    CHECK_THROWS_AS(pick_diffusion_target(TargetMode::unpaired, ys, std::nullopt, rng), ValueError);
    CHECK_THROWS_AS(pick_diffusion_target(TargetMode::unpaired, ys, torch::zeros({0, 1, 4, 4}), rng), ValueError);
    CHECK(target_mode_from_string("unpaired") == TargetMode::unpaired);
  }

  TEST_CASE("scale_gradient is an identity that rescales and measures the gradient") {
    auto x = torch::randn({2, 3}).requires_grad_(true);
    auto probe = std::make_shared<GradProbe>();
    auto y = scale_gradient(x, 0.25, probe);
    CHECK(torch::equal(y, x));
    (y * 2).sum().backward();
    CHECK(probe->fired);
    CHECK(probe->norm == doctest::Approx(std::sqrt(6.0 * 4.0)));
    CHECK(torch::allclose(x.grad(), torch::full({2, 3}, 0.5)));
    auto z = torch::randn({2});
    CHECK_FALSE(scale_gradient(z, 2.0).requires_grad());
    auto w = torch::randn({3}).requires_grad_(true);
    scale_gradient(w, 0.0).sum().backward();
    CHECK(w.grad().abs().sum().item<double>() == 0.0);
  }

  TEST_CASE("shuffled loss distribution does not depend on condition labels") {
    torch::manual_seed(8);
    auto net = build_eps_net(1, 2, 4);
    net->eval();
    torch::NoGradGuard guard;
    auto a = torch::rand({2, 1, 8, 8});
    auto b = torch::rand({2, 1, 8, 8});
    auto noisy = torch::randn({2, 1, 8, 8});
    auto eps = torch::randn({2, 1, 8, 8});
    auto ab = torch::tensor({0.5f, 0.7f});
    EpsPredictor f = [&](const torch::Tensor& n, const torch::Tensor& c, const torch::Tensor& s) {
      return net->forward(n, c, s);
    };
    Rng r1(1), r2(2);
    std::vector<double> la, lb;
    for (int k = 0; k < 1000; ++k) {
      la.push_back(diffusion_loss(f, noisy, channel_shuffle(a, b, r1), ab, eps).loss.item<double>());
      lb.push_back(diffusion_loss(f, noisy, channel_shuffle(b, a, r2), ab, eps).loss.item<double>());
    }
    CHECK(test::ks_two(la, lb) < test::ks_crit_01(500));
  }
}
