#include "nadapt/diffusion.hpp"

#include <cmath>

#include <fmt/format.h>
#include <torch/torch.h>

#include "nadapt/error.hpp"

namespace nadapt {

NoiseSchedule linear_schedule(int steps, double beta_lo, double beta_hi) {
  if (steps < 2) throw ValueError("linear_schedule: need at least two steps");
  if (!(beta_lo > 0.0 && beta_lo < beta_hi && beta_hi < 1.0)) {
    throw ValueError(fmt::format("linear_schedule: invalid bounds [{}, {}]", beta_lo, beta_hi));
  }
  NoiseSchedule s;
  s.beta.resize(static_cast<std::size_t>(steps));
  s.alpha.resize(s.beta.size());
  s.alpha_bar.resize(s.beta.size());
  double prod = 1.0;
  for (int i = 0; i < steps; ++i) {
    const auto u = static_cast<std::size_t>(i);
    s.beta[u] = beta_lo + i * (beta_hi - beta_lo) / (steps - 1);
    s.alpha[u] = 1.0 - s.beta[u];
    prod *= s.alpha[u];
    s.alpha_bar[u] = prod;
  }
  return s;
}

DiffusionBatch forward_sample(const torch::Tensor& clean, const torch::Tensor& t, const torch::Tensor& eps,
                              const NoiseSchedule& sched) {
  if (clean.sizes() != eps.sizes()) throw ShapeError("forward_sample: eps must match the clean batch");
  if (t.dim() != 1 || t.size(0) != clean.size(0)) throw ShapeError("forward_sample: one timestep per sample");
  auto idx = t.to(torch::kInt64).contiguous();
  const auto n = idx.size(0);
  std::vector<float> signal(static_cast<std::size_t>(n));
  std::vector<float> noise(static_cast<std::size_t>(n));
  const auto* ti = idx.data_ptr<std::int64_t>();
  for (std::int64_t i = 0; i < n; ++i) {
    if (ti[i] < 0 || ti[i] >= sched.steps()) {
      throw ValueError(fmt::format("forward_sample: timestep index {} outside [0, {}]", ti[i], sched.steps() - 1));
    }
    const double ab = sched.alpha_bar[static_cast<std::size_t>(ti[i])];
    signal[static_cast<std::size_t>(i)] = static_cast<float>(std::sqrt(ab));
    noise[static_cast<std::size_t>(i)] = static_cast<float>(std::sqrt(1.0 - ab));
  }
  auto sa = torch::tensor(signal);
  auto sn = torch::tensor(noise);
  std::vector<std::int64_t> bshape(static_cast<std::size_t>(clean.dim()), 1);
  bshape[0] = n;
  DiffusionBatch b;
  b.noisy = clean * sa.view(bshape) + eps * sn.view(bshape);
  b.eps = eps;
  b.t = idx;
  b.sqrt_alpha_bar = sa;
  return b;
}

torch::Tensor sample_timesteps(int n, Range<int> one_based, const NoiseSchedule& sched, Rng& rng) {
  if (one_based.lo < 1 || one_based.hi > sched.steps() || one_based.lo > one_based.hi) {
    throw ValueError(fmt::format("t_range [{}, {}] must lie within [1, {}]", one_based.lo, one_based.hi, sched.steps()));
  }
  std::vector<std::int64_t> t(static_cast<std::size_t>(n));
  for (auto& v : t) v = rng.uniform_int(one_based.lo, one_based.hi) - 1;
  return torch::tensor(t, torch::kInt64);
}

EpsNetImpl::EpsNetImpl(int image_channels, int cond_channels, int base_channels)
    : image_channels_(image_channels), cond_channels_(cond_channels) {
  if (image_channels < 1 || cond_channels < image_channels || cond_channels % image_channels != 0) {
    throw ShapeError(fmt::format("build_eps_net: cond_channels {} is not a multiple of image_channels {}",
                                 cond_channels, image_channels));
  }
  UNetOptions o;
  o.in_channels = image_channels + cond_channels;
  o.out_channels = image_channels;
  o.base_channels = base_channels;
  o.embed_dim = base_channels % 2 == 0 ? base_channels : base_channels + 1;
  net_ = register_module("unet", UNet(o));
}

torch::Tensor EpsNetImpl::forward(const torch::Tensor& noisy, const torch::Tensor& cond,
                                  const torch::Tensor& sqrt_alpha_bar) {
  if (noisy.dim() != 4 || noisy.size(1) != image_channels_) throw ShapeError("EpsNet: bad noisy-input channels");
  if (cond.dim() != 4 || cond.size(1) != cond_channels_) throw ShapeError("EpsNet: bad condition channels");
  return net_(torch::cat({noisy, cond}, 1), sqrt_alpha_bar);
}

EpsNet build_eps_net(int image_channels, int cond_channels, int base_channels) {
  return EpsNet(image_channels, cond_channels, base_channels);
}

EmaState ema_init(const torch::nn::Module& live, double decay) {
  if (decay < 0.0 || decay > 1.0) throw ValueError("ema: decay must lie in [0, 1]");
  EmaState s;
  s.decay = decay;
  for (const auto& p : live.parameters()) s.shadow.push_back(p.detach().clone());
  return s;
}

void ema_update(EmaState& state, const torch::nn::Module& live) {
  torch::NoGradGuard guard;
  const auto params = live.parameters();
  if (params.size() != state.shadow.size()) throw ShapeError("ema_update: parameter count drifted");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].sizes() != state.shadow[i].sizes()) throw ShapeError("ema_update: parameter shape drifted");
  }
  if (state.decay == 1.0) return;
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.shadow[i].mul_(state.decay).add_(params[i].detach(), 1.0 - state.decay);
  }
}

void ema_copy_to(const EmaState& state, torch::nn::Module& target) {
  torch::NoGradGuard guard;
  auto params = target.parameters();
  if (params.size() != state.shadow.size()) throw ShapeError("ema_copy_to: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) params[i].copy_(state.shadow[i]);
}

}  // namespace nadapt
