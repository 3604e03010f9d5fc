#pragma once

#include <cstdint>
#include <vector>

#include <torch/types.h>

#include "nadapt/degrade.hpp"
#include "nadapt/rng.hpp"
#include "nadapt/unet.hpp"

namespace nadapt {

/// Per-step DDPM quantities, indexed 0..T-1 (index i is the 1-based
/// timestep i + 1).
struct NoiseSchedule {
  std::vector<double> beta;
  std::vector<double> alpha;      // 1 - beta
  std::vector<double> alpha_bar;  // cumulative product of alpha

  int steps() const noexcept { return static_cast<int>(beta.size()); }
};

/// beta[i] = beta_lo + i * (beta_hi - beta_lo) / (T - 1).
NoiseSchedule linear_schedule(int steps = 1000, double beta_lo = 1e-6, double beta_hi = 1e-2);

struct DiffusionBatch {
  torch::Tensor noisy;           // sqrt(ab_t) y + sqrt(1 - ab_t) eps
  torch::Tensor eps;
  torch::Tensor t;               // (N,) int64 schedule indices
  torch::Tensor sqrt_alpha_bar;  // (N,) float32
};

/// Forward process for a batch; `t` holds one schedule index per sample.
/// Throws ValueError for indices outside [0, T-1].
DiffusionBatch forward_sample(const torch::Tensor& clean, const torch::Tensor& t, const torch::Tensor& eps,
                              const NoiseSchedule& sched);

/// Uniform per-sample timesteps from an inclusive 1-based range, returned as
/// 0-based schedule indices.
torch::Tensor sample_timesteps(int n, Range<int> one_based, const NoiseSchedule& sched, Rng& rng);

/// Conditional epsilon-predictor: a U-Net over the channel concatenation of
/// the noisy target and the condition blocks, modulated by a sinusoidal
/// embedding of sqrt(alpha_bar).
class EpsNetImpl : public torch::nn::Module {
 public:
  EpsNetImpl(int image_channels, int cond_channels, int base_channels);

  torch::Tensor forward(const torch::Tensor& noisy, const torch::Tensor& cond, const torch::Tensor& sqrt_alpha_bar);

  int image_channels() const noexcept { return image_channels_; }
  int cond_channels() const noexcept { return cond_channels_; }

 private:
  int image_channels_;
  int cond_channels_;
  UNet net_{nullptr};
};
TORCH_MODULE(EpsNet);

/// cond_channels must be a positive multiple of image_channels (one block
/// per condition image); throws ShapeError otherwise.
EpsNet build_eps_net(int image_channels, int cond_channels, int base_channels = 64);

/// Exponential moving average of a module's parameters.
struct EmaState {
  double decay = 0.9999;
  std::vector<torch::Tensor> shadow;
};

EmaState ema_init(const torch::nn::Module& live, double decay = 0.9999);
/// shadow <- decay * shadow + (1 - decay) * live. Throws ShapeError when the
/// parameter list no longer matches the shadow.
void ema_update(EmaState& state, const torch::nn::Module& live);
/// Copies the shadow weights into `target` (same architecture as `live`).
void ema_copy_to(const EmaState& state, torch::nn::Module& target);

}  // namespace nadapt
