#pragma once

#include <vector>

#include <torch/nn/module.h>
#include <torch/nn/modules/container/modulelist.h>
#include <torch/nn/modules/conv.h>
#include <torch/nn/modules/linear.h>
#include <torch/nn/modules/normalization.h>

namespace nadapt {

/// conv3x3 -> GroupNorm -> LeakyReLU(0.2).
class ConvBlockImpl : public torch::nn::Module {
 public:
  ConvBlockImpl(int in_channels, int out_channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv_{nullptr};
  torch::nn::GroupNorm norm_{nullptr};
};
TORCH_MODULE(ConvBlock);

struct UNetOptions {
  int in_channels = 3;
  int out_channels = 3;
  int base_channels = 32;
  /// Width of the sinusoidal noise-level embedding; 0 disables it.
  int embed_dim = 0;
  /// Zero-initialize the output convolution.
  bool zero_head = false;
};

/// Encoder/decoder with skip connections. Three encoder stages at C, 2C, 4C
/// plus an 8C bottleneck, each holding two conv blocks; stride-2 2x2
/// convolutions downsample, bilinear upsampling + 1x1 convolutions go back up,
/// and a 1x1 convolution fuses each skip. When an embedding is enabled, a
/// projected noise-level vector is added after the first block of every stage.
class UNetImpl : public torch::nn::Module {
 public:
  static constexpr int kLevels = 3;
  /// Input height and width must be multiples of this.
  static constexpr int kSpatialMultiple = 1 << kLevels;

  explicit UNetImpl(const UNetOptions& options);

  /// `noise_level` is an (N,) tensor, required iff embed_dim > 0.
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& noise_level = {});

  const UNetOptions& options() const noexcept { return options_; }

 private:
  torch::Tensor embed(const torch::Tensor& noise_level);

  UNetOptions options_;
  torch::nn::Conv2d in_proj_{nullptr};
  torch::nn::ModuleList enc_{nullptr};
  torch::nn::ModuleList down_{nullptr};
  torch::nn::ModuleList mid_{nullptr};
  torch::nn::ModuleList up_{nullptr};
  torch::nn::ModuleList fuse_{nullptr};
  torch::nn::ModuleList dec_{nullptr};
  torch::nn::Conv2d head_{nullptr};
  torch::nn::Linear emb_in_{nullptr};
  torch::nn::Linear emb_out_{nullptr};
  torch::nn::ModuleList emb_proj_{nullptr};
};
TORCH_MODULE(UNet);

/// Sinusoidal features of a continuous scalar, shape (N, dim).
torch::Tensor sinusoidal_embedding(const torch::Tensor& values, int dim, double scale = 1000.0);

std::int64_t parameter_count(const torch::nn::Module& m);

}  // namespace nadapt
