#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <torch/types.h>

#include "nadapt/rng.hpp"

namespace nadapt {

// ---------------------------------------------------------------------------
// Condition packing and channel shuffling
// ---------------------------------------------------------------------------

enum class ConditionOrder : std::uint8_t { syn_first, real_first };

/// Channel concatenation of the two condition batches, per-sample ordered.
struct ConditionPack {
  torch::Tensor concat;               // (N, 2C, H, W)
  std::vector<ConditionOrder> order;  // one entry per sample
};

/// Concatenates in the given per-sample order. Gradients flow to both inputs.
ConditionPack pack_conditions(const torch::Tensor& syn, const torch::Tensor& real,
                              const std::vector<ConditionOrder>& order);

/// Fair coin per sample decides which condition occupies the first block.
ConditionPack channel_shuffle(const torch::Tensor& syn, const torch::Tensor& real, Rng& rng);

/// Synthetic condition always first (shuffling disabled).
ConditionPack fixed_order(const torch::Tensor& syn, const torch::Tensor& real);

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Per-sample distance used by the diffusion and contrastive losses.
/// l2: un-squared Euclidean norm over all elements of a sample.
/// squared: mean squared error over the elements of a sample.
enum class LossNorm { l2, squared };

std::string to_string(LossNorm n);
LossNorm loss_norm_from_string(const std::string& s);

/// (N,) distances between two batches.
torch::Tensor noise_distance(const torch::Tensor& eps_true, const torch::Tensor& eps_pred, LossNorm norm);

using EpsPredictor = std::function<torch::Tensor(const torch::Tensor& noisy, const torch::Tensor& cond,
                                                 const torch::Tensor& sqrt_alpha_bar)>;

struct DiffusionLoss {
  torch::Tensor loss;      // scalar L_Dif
  torch::Tensor eps_pred;  // eps^pos
};

/// L_Dif = batch mean of distance(eps_true, eps_net(noisy, pack, sqrt_ab)).
/// Throws NonFiniteError if the prediction is not finite.
DiffusionLoss diffusion_loss(const EpsPredictor& eps_net, const torch::Tensor& noisy, const ConditionPack& pack,
                             const torch::Tensor& sqrt_alpha_bar, const torch::Tensor& eps_true,
                             LossNorm norm = LossNorm::l2);

struct SwappedConditions {
  torch::Tensor syn_with_real_residual;  // x^s + R^r
  torch::Tensor real_with_syn_residual;  // x^r + R^s
};

SwappedConditions residual_swap(const torch::Tensor& x_syn, const torch::Tensor& x_real,
                                const torch::Tensor& r_syn, const torch::Tensor& r_real);

/// Batch mean of max(d(eps, eps_pos) - d(eps, eps_neg) + delta, 0).
torch::Tensor contrastive_loss(const torch::Tensor& eps_true, const torch::Tensor& eps_pos,
                               const torch::Tensor& eps_neg, double delta, LossNorm norm = LossNorm::l2);

// ---------------------------------------------------------------------------
// Loss weighting
// ---------------------------------------------------------------------------

struct ScheduleState {
  int epoch = 0;         // n
  int total_epochs = 1;  // N
  double gamma = 5.0;
  double beta = 0.2;

  double progress() const;  // min(n / N, 1)
};

/// (2 / (1 + exp(-gamma p)) - 1) * beta.
double lambda_schedule(const ScheduleState& s);

/// L_Res + lambda * (L_Dif + L_Con) / 2. Throws NonFiniteError on
/// non-finite inputs.
torch::Tensor combined_loss(const torch::Tensor& l_res, const torch::Tensor& l_dif, const torch::Tensor& l_con,
                            double lambda_dif);
double combined_loss(double l_res, double l_dif, double l_con, double lambda_dif);

// ---------------------------------------------------------------------------
// Diffusion target selection
// ---------------------------------------------------------------------------

enum class TargetMode { paired, unpaired };

std::string to_string(TargetMode m);
TargetMode target_mode_from_string(const std::string& s);

struct DiffusionTarget {
  torch::Tensor clean;
  std::vector<int> pool_indices;  // empty in paired mode
};

/// Paired: returns y_syn itself. Unpaired: one uniform draw from the pool per
/// sample. Throws ValueError for an empty pool in unpaired mode.
DiffusionTarget pick_diffusion_target(TargetMode mode, const torch::Tensor& y_syn,
                                      const std::optional<torch::Tensor>& clean_pool, Rng& rng);

// ---------------------------------------------------------------------------
// Gradient routing
// ---------------------------------------------------------------------------

/// Receives the norm of the gradient arriving at a tapped tensor.
struct GradProbe {
  double norm = 0.0;
  bool fired = false;
};

/// Identity in the forward pass; multiplies the incoming gradient by `scale`
/// in the backward pass, recording its pre-scaling norm in `probe`.
torch::Tensor scale_gradient(const torch::Tensor& x, double scale, std::shared_ptr<GradProbe> probe = nullptr);

}  // namespace nadapt
