#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <torch/types.h>

namespace nadapt {

/// A single image stored as a contiguous float32 tensor of shape (C, H, W)
/// with C in {1, 3}. Values are nominally in [0, 1] but are not clamped, so
/// that unclipped synthetic noise survives a round trip through the type.
class Image {
 public:
  Image() = default;

  /// Validates shape and finiteness; throws ShapeError / NonFiniteError.
  static Image from_tensor(torch::Tensor chw);
  static Image zeros(int channels, int height, int width);
  static Image full(int channels, int height, int width, float value);

  const torch::Tensor& tensor() const noexcept { return data_; }
  int channels() const { return static_cast<int>(data_.size(0)); }
  int height() const { return static_cast<int>(data_.size(1)); }
  int width() const { return static_cast<int>(data_.size(2)); }
  bool empty() const noexcept { return !data_.defined(); }

  /// Batch of one: (1, C, H, W).
  torch::Tensor batched() const { return data_.unsqueeze(0); }
  Image clipped() const;

 private:
  explicit Image(torch::Tensor t) : data_(std::move(t)) {}
  torch::Tensor data_;
};

/// Throws NonFiniteError if `t` holds NaN or Inf.
void require_finite(const torch::Tensor& t, const char* what);
/// Throws ShapeError unless both tensors have identical sizes.
void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what);

// ---------------------------------------------------------------------------
// PNG IO. 8-bit data is scaled by 1/255, 16-bit by 1/65535. Gray and RGB are
// supported; palette images are expanded to RGB. Alpha channels and sub-byte
// gray depths are rejected.
// ---------------------------------------------------------------------------
Image load_image(const std::filesystem::path& path);

enum class BitDepth { u8 = 8, u16 = 16 };
/// Values are clipped to [0, 1] and rounded to the nearest code.
void save_image(const Image& img, const std::filesystem::path& path, BitDepth depth = BitDepth::u8);

/// PNG files of a directory in lexicographic order.
std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Color and metrics
// ---------------------------------------------------------------------------

/// BT.601 luma Y = 0.299 R + 0.587 G + 0.114 B. One-channel input is
/// returned unchanged.
Image to_luma(const Image& img);

inline constexpr double kPsnrCapDb = 100.0;

/// 10 log10(peak^2 / MSE), computed in double precision. Zero MSE returns
/// kPsnrCapDb.
double psnr(const Image& pred, const Image& target, double peak = 1.0);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

/// Gaussian-window SSIM over the valid region, averaged over channels.
double ssim(const Image& pred, const Image& target, const SsimOptions& opts = {});

enum class MetricMode { rgb, luma };

struct ImageScore {
  std::string image_id;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct MetricReport {
  double psnr_db = 0.0;
  double ssim = 0.0;
  std::vector<ImageScore> per_image;

  void add(ImageScore s);
  /// Recomputes the aggregates as arithmetic means of the rows.
  void finalize();
  /// CSV with header `image_id,psnr_db,ssim`, one row per image.
  void write_csv(const std::filesystem::path& path) const;
  std::string to_csv() const;
};

/// PSNR and SSIM of one pair, on luma when mode == luma.
ImageScore score_pair(const std::string& id, const Image& pred, const Image& target, MetricMode mode);

}  // namespace nadapt
