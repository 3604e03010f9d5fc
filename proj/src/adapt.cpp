#include "nadapt/adapt.hpp"

#include <cmath>

#include <fmt/format.h>
#include <torch/torch.h>

#include "nadapt/error.hpp"
#include "nadapt/image.hpp"

namespace nadapt {

ConditionPack pack_conditions(const torch::Tensor& syn, const torch::Tensor& real,
                              const std::vector<ConditionOrder>& order) {
  require_same_shape(syn, real, "channel_shuffle");
  if (syn.dim() != 4) throw ShapeError("channel_shuffle: expected (N, C, H, W) conditions");
  if (order.size() != static_cast<std::size_t>(syn.size(0))) {
    throw ShapeError("channel_shuffle: one order flag per sample required");
  }
  std::vector<float> first_is_syn(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) first_is_syn[i] = order[i] == ConditionOrder::syn_first ? 1.f : 0.f;
  auto m = torch::tensor(first_is_syn).view({-1, 1, 1, 1}).to(torch::kBool);
  ConditionPack p;
  p.concat = torch::cat({torch::where(m, syn, real), torch::where(m, real, syn)}, 1);
  p.order = order;
  return p;
}

ConditionPack channel_shuffle(const torch::Tensor& syn, const torch::Tensor& real, Rng& rng) {
  std::vector<ConditionOrder> order(static_cast<std::size_t>(syn.dim() > 0 ? syn.size(0) : 0));
  for (auto& o : order) o = rng.bernoulli(0.5) ? ConditionOrder::syn_first : ConditionOrder::real_first;
  return pack_conditions(syn, real, order);
}

ConditionPack fixed_order(const torch::Tensor& syn, const torch::Tensor& real) {
  return pack_conditions(syn, real,
                         std::vector<ConditionOrder>(static_cast<std::size_t>(syn.size(0)), ConditionOrder::syn_first));
}

std::string to_string(LossNorm n) { return n == LossNorm::l2 ? "l2" : "squared"; }

LossNorm loss_norm_from_string(const std::string& s) {
  if (s == "l2") return LossNorm::l2;
  if (s == "squared") return LossNorm::squared;
  throw ConfigError(fmt::format("unknown loss norm '{}' (expected l2 or squared)", s));
}

torch::Tensor noise_distance(const torch::Tensor& eps_true, const torch::Tensor& eps_pred, LossNorm norm) {
  require_same_shape(eps_true, eps_pred, "noise_distance");
  auto sq = (eps_true - eps_pred).square().flatten(1);
  if (norm == LossNorm::squared) return sq.mean(1);
  // d||v||/dv is undefined at 0; the epsilon keeps the gradient finite there.
  return (sq.sum(1) + 1e-12).sqrt();
}

DiffusionLoss diffusion_loss(const EpsPredictor& eps_net, const torch::Tensor& noisy, const ConditionPack& pack,
                             const torch::Tensor& sqrt_alpha_bar, const torch::Tensor& eps_true, LossNorm norm) {
  auto pred = eps_net(noisy, pack.concat, sqrt_alpha_bar);
  require_finite(pred.detach(), "diffusion_loss");
  return {noise_distance(eps_true, pred, norm).mean(), pred};
}

SwappedConditions residual_swap(const torch::Tensor& x_syn, const torch::Tensor& x_real, const torch::Tensor& r_syn,
                                const torch::Tensor& r_real) {
  require_same_shape(x_syn, x_real, "residual_swap");
  require_same_shape(x_syn, r_syn, "residual_swap");
  require_same_shape(x_syn, r_real, "residual_swap");
  return {x_syn + r_real, x_real + r_syn};
}

torch::Tensor contrastive_loss(const torch::Tensor& eps_true, const torch::Tensor& eps_pos,
                               const torch::Tensor& eps_neg, double delta, LossNorm norm) {
  if (delta < 0) throw ValueError(fmt::format("contrastive_loss: negative margin {}", delta));
  require_same_shape(eps_true, eps_pos, "contrastive_loss");
  require_same_shape(eps_true, eps_neg, "contrastive_loss");
  auto d_pos = noise_distance(eps_true, eps_pos, norm);
  auto d_neg = noise_distance(eps_true, eps_neg, norm);
  return torch::clamp_min(d_pos - d_neg + delta, 0.0).mean();
}

double ScheduleState::progress() const {
  if (total_epochs <= 0) throw ValueError("lambda_schedule: total epochs must be >= 1");
  if (epoch < 0) throw ValueError("lambda_schedule: epoch must be >= 0");
  return std::min(static_cast<double>(epoch) / total_epochs, 1.0);
}

double lambda_schedule(const ScheduleState& s) {
  const double p = s.progress();
  return (2.0 / (1.0 + std::exp(-s.gamma * p)) - 1.0) * s.beta;
}

torch::Tensor combined_loss(const torch::Tensor& l_res, const torch::Tensor& l_dif, const torch::Tensor& l_con,
                            double lambda_dif) {
  if (!std::isfinite(lambda_dif)) throw NonFiniteError("combined_loss: non-finite lambda");
  for (const auto* t : {&l_res, &l_dif, &l_con}) require_finite(t->detach(), "combined_loss");
  return l_res + lambda_dif * ((l_dif + l_con) / 2.0);
}

double combined_loss(double l_res, double l_dif, double l_con, double lambda_dif) {
  for (double v : {l_res, l_dif, l_con, lambda_dif}) {
    if (!std::isfinite(v)) throw NonFiniteError("combined_loss: non-finite input");
  }
  return l_res + lambda_dif * ((l_dif + l_con) / 2.0);
}

std::string to_string(TargetMode m) { return m == TargetMode::paired ? "paired" : "unpaired"; }

TargetMode target_mode_from_string(const std::string& s) {
  if (s == "paired") return TargetMode::paired;
  if (s == "unpaired") return TargetMode::unpaired;
  throw ConfigError(fmt::format("unknown adaptation mode '{}' (expected paired or unpaired)", s));
}

DiffusionTarget pick_diffusion_target(TargetMode mode, const torch::Tensor& y_syn,
                                      const std::optional<torch::Tensor>& clean_pool, Rng& rng) {
  if (mode == TargetMode::paired) return {y_syn, {}};
  if (!clean_pool || !clean_pool->defined() || clean_pool->size(0) == 0) {
    throw ValueError("pick_diffusion_target: unpaired mode needs a non-empty clean pool");
  }
  if (clean_pool->sizes().slice(1) != y_syn.sizes().slice(1)) {
    throw ShapeError("pick_diffusion_target: clean pool patches differ in shape from the synthetic batch");
  }
  DiffusionTarget out;
  const auto n = y_syn.size(0);
  out.pool_indices.resize(static_cast<std::size_t>(n));
  for (auto& i : out.pool_indices) i = static_cast<int>(rng.uniform_int(0, clean_pool->size(0) - 1));
  std::vector<std::int64_t> idx(out.pool_indices.begin(), out.pool_indices.end());
  out.clean = clean_pool->index_select(0, torch::tensor(idx, torch::kInt64));
  return out;
}

torch::Tensor scale_gradient(const torch::Tensor& x, double scale, std::shared_ptr<GradProbe> probe) {
  auto y = x.clone();
  if (!y.requires_grad()) return y;
  // The hook sees the gradient accumulated over every consumer of `y`.
  y.register_hook([scale, probe = std::move(probe)](torch::Tensor grad) {
    if (probe) {
      probe->norm = grad.norm().item<double>();
      probe->fired = true;
    }
    return grad * scale;
  });
  return y;
}

}  // namespace nadapt
