#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include <ATen/core/Generator.h>
#include <torch/types.h>

namespace nadapt {

/// splitmix64 finalizer; used to derive independent child seeds.
std::uint64_t mix_seed(std::uint64_t x) noexcept;

/// Seeded random source pairing a 64-bit engine for scalar draws with a torch
/// generator for tensor draws. Child streams derived with `split` are
/// independent of how many values the parent has consumed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }

  /// Child stream keyed by a tag; depends only on (seed, tag).
  Rng split(std::string_view tag) const;
  /// Child stream keyed by an integer; depends only on (seed, index).
  Rng split(std::uint64_t index) const;

  std::uint64_t next_u64();
  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  /// Uniform real in [lo, hi).
  double uniform(double lo = 0.0, double hi = 1.0);
  bool bernoulli(double p = 0.5);

  torch::Tensor randn(at::IntArrayRef shape);
  at::Generator& generator() { return gen_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  at::Generator gen_;
};

}  // namespace nadapt
