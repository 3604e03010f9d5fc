#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/types.h>

#include "nadapt/unet.hpp"

namespace nadapt {

enum class UnetVariant { T, S, B };

struct VariantInfo {
  UnetVariant variant;
  const char* name;
  int base_channels;
  std::int64_t target_params;  // reference parameter count of the variant
};

const VariantInfo& variant_info(UnetVariant v);
/// Accepts "T", "S", "B" (also "Unet-T" etc.); throws ConfigError otherwise.
UnetVariant variant_from_string(const std::string& s);
std::string to_string(UnetVariant v);

struct RestorerOutput {
  torch::Tensor residual;  // R
  torch::Tensor restored;  // x + R
};

/// Residual-predicting restoration network G. The head is zero-initialized,
/// so a fresh network is the identity map.
class RestorerImpl : public torch::nn::Module {
 public:
  RestorerImpl(UnetVariant variant, int in_channels);

  RestorerOutput forward(const torch::Tensor& degraded);

  UnetVariant variant() const noexcept { return variant_; }
  int channels() const noexcept { return channels_; }

 private:
  UnetVariant variant_;
  int channels_;
  UNet net_{nullptr};
};
TORCH_MODULE(Restorer);

Restorer build_restorer(UnetVariant variant, int in_channels);

/// Inference on a batch of any spatial size: reflect-pads up to the network's
/// spatial multiple, restores, and crops back. Throws NonFiniteError on
/// non-finite input.
RestorerOutput restore(Restorer& net, const torch::Tensor& degraded);

/// mean(sqrt((pred - target)^2 + eps^2)).
torch::Tensor charbonnier_loss(const torch::Tensor& pred, const torch::Tensor& target, double eps = 1e-3);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[] = "NADAPT1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Named float32 tensors plus a JSON metadata block.
struct TensorArchive {
  nlohmann::json meta;
  std::map<std::string, torch::Tensor> tensors;
};

/// Layout: magic "NADAPT1", u32 version, u64 meta length, meta JSON,
/// u64 tensor count, then per tensor: u32 name length, name, u32 rank,
/// i64 dims, u64 byte count, little-endian float32 data.
void write_archive(const TensorArchive& archive, const std::filesystem::path& path);
TensorArchive read_archive(const std::filesystem::path& path);

TensorArchive archive_module(const torch::nn::Module& m, nlohmann::json meta);
/// Copies tensors into `m` by name; throws ShapeError on any missing tensor
/// or shape disagreement.
void restore_module(torch::nn::Module& m, const TensorArchive& archive);

void save_restorer(const Restorer& net, const std::filesystem::path& path, const std::string& config_hash);
Restorer load_restorer(const std::filesystem::path& path);

}  // namespace nadapt
