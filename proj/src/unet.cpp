#include "nadapt/unet.hpp"

#include <cmath>
#include <numeric>

#include <torch/torch.h>

#include "nadapt/error.hpp"

namespace nadapt {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

ConvBlockImpl::ConvBlockImpl(int in_channels, int out_channels) {
  conv_ = register_module("conv", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 3).padding(1)));
  norm_ = register_module("norm", nn::GroupNorm(std::gcd(8, out_channels), out_channels));
}

torch::Tensor ConvBlockImpl::forward(const torch::Tensor& x) {
  return F::leaky_relu(norm_(conv_(x)), F::LeakyReLUFuncOptions().negative_slope(0.2));
}

UNetImpl::UNetImpl(const UNetOptions& options) : options_(options) {
  const int c = options.base_channels;
  if (c < 1 || options.in_channels < 1 || options.out_channels < 1) {
    throw ValueError("UNet: channel counts must be positive");
  }
  in_proj_ = register_module("in_proj", nn::Conv2d(nn::Conv2dOptions(options.in_channels, c, 3).padding(1)));
  enc_ = register_module("enc", nn::ModuleList());
  down_ = register_module("down", nn::ModuleList());
  up_ = register_module("up", nn::ModuleList());
  fuse_ = register_module("fuse", nn::ModuleList());
  dec_ = register_module("dec", nn::ModuleList());
  for (int l = 0; l < kLevels; ++l) {
    const int ch = c << l;
    enc_->push_back(ConvBlock(ch, ch));
    enc_->push_back(ConvBlock(ch, ch));
    down_->push_back(nn::Conv2d(nn::Conv2dOptions(ch, 2 * ch, 2).stride(2)));
    up_->push_back(nn::Conv2d(nn::Conv2dOptions(2 * ch, ch, 1)));
    fuse_->push_back(nn::Conv2d(nn::Conv2dOptions(2 * ch, ch, 1)));
    dec_->push_back(ConvBlock(ch, ch));
    dec_->push_back(ConvBlock(ch, ch));
  }
  const int deep = c << kLevels;
  mid_ = register_module("mid", nn::ModuleList(ConvBlock(deep, deep), ConvBlock(deep, deep)));
  head_ = register_module("head", nn::Conv2d(nn::Conv2dOptions(c, options.out_channels, 3).padding(1)));
  if (options.zero_head) {
    torch::NoGradGuard guard;
    head_->weight.zero_();
    head_->bias.zero_();
  }
  if (options.embed_dim > 0) {
    if (options.embed_dim % 2 != 0) throw ValueError("UNet: embed_dim must be even");
    const int hidden = 4 * c;
    emb_in_ = register_module("emb_in", nn::Linear(options.embed_dim, hidden));
    emb_out_ = register_module("emb_out", nn::Linear(hidden, hidden));
    emb_proj_ = register_module("emb_proj", nn::ModuleList());
    // Encoder levels, bottleneck, decoder levels (deepest first).
    for (int l = 0; l < kLevels; ++l) emb_proj_->push_back(nn::Linear(hidden, c << l));
    emb_proj_->push_back(nn::Linear(hidden, deep));
    for (int l = kLevels - 1; l >= 0; --l) emb_proj_->push_back(nn::Linear(hidden, c << l));
  }
}

torch::Tensor sinusoidal_embedding(const torch::Tensor& values, int dim, double scale) {
  const int half = dim / 2;
  auto freqs = torch::exp(torch::arange(half, torch::kFloat32) * (-std::log(10000.0) / std::max(1, half - 1)));
  auto args = values.to(torch::kFloat32).view({-1, 1}) * scale * freqs.view({1, -1});
  return torch::cat({torch::sin(args), torch::cos(args)}, 1);
}

torch::Tensor UNetImpl::embed(const torch::Tensor& noise_level) {
  auto e = sinusoidal_embedding(noise_level, options_.embed_dim);
  return F::silu(emb_out_(F::silu(emb_in_(e))));
}

torch::Tensor UNetImpl::forward(const torch::Tensor& x, const torch::Tensor& noise_level) {
  if (x.dim() != 4 || x.size(1) != options_.in_channels) {
    throw ShapeError("UNet: expected (N, " + std::to_string(options_.in_channels) + ", H, W) input");
  }
  if (x.size(2) % kSpatialMultiple != 0 || x.size(3) % kSpatialMultiple != 0) {
    throw ShapeError("UNet: spatial size must be a multiple of " + std::to_string(kSpatialMultiple));
  }
  torch::Tensor emb;
  if (options_.embed_dim > 0) {
    if (!noise_level.defined() || noise_level.numel() != x.size(0)) {
      throw ShapeError("UNet: one noise level per sample is required");
    }
    emb = embed(noise_level);
  }
  int inject = 0;
  auto add_emb = [&](torch::Tensor h) {
    if (!emb.defined()) return h;
    auto v = emb_proj_[static_cast<std::size_t>(inject++)]->as<nn::Linear>()->forward(emb);
    return h + v.unsqueeze(-1).unsqueeze(-1);
  };

  auto h = in_proj_(x);
  std::vector<torch::Tensor> skips;
  for (int l = 0; l < kLevels; ++l) {
    h = add_emb(enc_[static_cast<std::size_t>(2 * l)]->as<ConvBlock>()->forward(h));
    h = enc_[static_cast<std::size_t>(2 * l + 1)]->as<ConvBlock>()->forward(h);
    skips.push_back(h);
    h = down_[static_cast<std::size_t>(l)]->as<nn::Conv2d>()->forward(h);
  }
  h = add_emb(mid_[0]->as<ConvBlock>()->forward(h));
  h = mid_[1]->as<ConvBlock>()->forward(h);
  for (int l = kLevels - 1; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    h = F::interpolate(h, F::InterpolateFuncOptions()
                              .scale_factor(std::vector<double>{2.0, 2.0})
                              .mode(torch::kBilinear)
                              .align_corners(false));
    h = up_[li]->as<nn::Conv2d>()->forward(h);
    h = fuse_[li]->as<nn::Conv2d>()->forward(torch::cat({h, skips[li]}, 1));
    h = add_emb(dec_[2 * li]->as<ConvBlock>()->forward(h));
    h = dec_[2 * li + 1]->as<ConvBlock>()->forward(h);
  }
  return head_(h);
}

std::int64_t parameter_count(const torch::nn::Module& m) {
  std::int64_t n = 0;
  for (const auto& p : m.parameters()) n += p.numel();
  return n;
}

}  // namespace nadapt
