#include "nadapt/rng.hpp"

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

namespace nadapt {

std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

namespace {

std::uint64_t hash_tag(std::string_view tag) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

Rng::Rng(std::uint64_t seed)
    : seed_(seed),
      engine_(mix_seed(seed)),
      gen_(at::make_generator<at::CPUGeneratorImpl>(mix_seed(seed ^ 0x5bd1e995ULL))) {}

Rng Rng::split(std::string_view tag) const { return Rng(mix_seed(seed_ ^ hash_tag(tag))); }

Rng Rng::split(std::uint64_t index) const {
  return Rng(mix_seed(mix_seed(seed_) + index * 0x9e3779b97f4a7c15ULL));
}

std::uint64_t Rng::next_u64() { return engine_(); }

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  std::uniform_int_distribution<std::int64_t> dist(lo, hi);
  return dist(engine_);
}

double Rng::uniform(double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  return dist(engine_);
}

bool Rng::bernoulli(double p) { return uniform() < p; }

torch::Tensor Rng::randn(at::IntArrayRef shape) {
  return torch::randn(shape, gen_, torch::kFloat32);
}

}  // namespace nadapt
