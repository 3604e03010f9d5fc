#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nadapt/adapt.hpp"
#include "nadapt/config.hpp"
#include "nadapt/diffusion.hpp"
#include "nadapt/image.hpp"

namespace nadapt {

struct ProbeTrainOptions {
  int steps = 3000;
  int batch = 16;
  double lr = 2e-4;
  int base_channels = 16;
  int patch = 32;
  LossNorm norm = LossNorm::l2;
  std::uint64_t seed = 0;
  int divergence_patience = 10;
};

struct ProbeModel {
  EpsNet net{nullptr};
  std::vector<double> losses;  // one entry per optimizer step
};

/// Trains an epsilon-predictor conditioned on the clean image itself (one
/// condition block) with the plain noise-prediction objective.
ProbeModel train_probe_model(const std::vector<Image>& clean, const NoiseSchedule& sched,
                             const ProbeTrainOptions& opts);

struct SweepResult {
  std::vector<double> sigma;
  std::vector<double> mse;
  std::vector<double> stderr_mse;  // standard error over (image, draw) samples
  int n_images = 0;

  std::string to_csv() const;  // header `sigma,mse,stderr`
  void write_csv(const std::filesystem::path& path) const;
};

/// For every sigma the condition is clean + AWGN(sigma); the score is the mean
/// squared error between true and predicted noise over all test images and
/// `draws` (t, eps) samples per image. The same t, eps and unit corruption
/// noise are reused across sigmas. Throws ValueError for an empty test set or
/// sigmas outside [0, 80] / not strictly increasing.
SweepResult corruption_sweep(const EpsPredictor& model, const std::vector<Image>& test,
                             const std::vector<double>& sigmas, const NoiseSchedule& sched, int draws,
                             std::uint64_t seed, int chunk = 50);

/// Rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

/// Line plot of mse against sigma as an RGB PNG.
void write_sweep_plot(const SweepResult& r, const std::filesystem::path& path);

/// Clean images for the probe: PNGs from `dir` center-cropped to `size`, or
/// `count` procedural images when `dir` is empty.
std::vector<Image> probe_images(const std::string& dir, int count, int size, std::uint64_t seed);

}  // namespace nadapt
