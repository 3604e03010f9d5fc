#include "nadapt/image.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <png.h>
#include <torch/torch.h>

#include "nadapt/error.hpp"

namespace nadapt {

namespace fs = std::filesystem;

void require_finite(const torch::Tensor& t, const char* what) {
  if (!torch::isfinite(t).all().item<bool>()) {
    throw NonFiniteError(fmt::format("{}: tensor contains NaN or Inf", what));
  }
}

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) {
    throw ShapeError(fmt::format("{}: shape mismatch {} vs {}", what, fmt::join(a.sizes(), "x"),
                                 fmt::join(b.sizes(), "x")));
  }
}

Image Image::from_tensor(torch::Tensor chw) {
  if (!chw.defined() || chw.dim() != 3) throw ShapeError("Image: expected a (C, H, W) tensor");
  const auto c = chw.size(0);
  if (c != 1 && c != 3) throw ShapeError(fmt::format("Image: channels must be 1 or 3, got {}", c));
  if (chw.size(1) < 1 || chw.size(2) < 1) throw ShapeError("Image: empty spatial extent");
  auto t = chw.to(torch::kFloat32).contiguous();
  require_finite(t, "Image");
  return Image(std::move(t));
}

Image Image::zeros(int channels, int height, int width) {
  return from_tensor(torch::zeros({channels, height, width}));
}

Image Image::full(int channels, int height, int width, float value) {
  return from_tensor(torch::full({channels, height, width}, value));
}

Image Image::clipped() const { return Image(data_.clamp(0.0, 1.0)); }

// ---------------------------------------------------------------------------
// PNG
// ---------------------------------------------------------------------------

namespace {

struct MemReader {
  const std::vector<unsigned char>* bytes;
  std::size_t pos;
};

void read_from_memory(png_structp png, png_bytep out, png_size_t n) {
  auto* src = static_cast<MemReader*>(png_get_io_ptr(png));
  if (src->pos + n > src->bytes->size()) png_error(png, "truncated PNG stream");
  std::memcpy(out, src->bytes->data() + src->pos, n);
  src->pos += n;
}

void silent_warning(png_structp, png_const_charp) {}

struct Decoded {
  int width = 0;
  int height = 0;
  int channels = 0;
  int depth = 0;
  std::vector<unsigned char> pixels;  // row-major, native-endian for 16-bit
};

enum class DecodeStatus { ok, bad_depth, bad_format, corrupt };

// Only trivially destructible locals live across setjmp.
DecodeStatus decode_png(const std::vector<unsigned char>& bytes, Decoded& out) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, silent_warning);
  if (png == nullptr) return DecodeStatus::corrupt;
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    return DecodeStatus::corrupt;
  }
  MemReader reader{&bytes, 0};
  DecodeStatus status = DecodeStatus::ok;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return DecodeStatus::corrupt;
  }
  png_set_read_fn(png, &reader, read_from_memory);
  png_read_info(png, info);

  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) {
    status = DecodeStatus::bad_format;
  } else if (color == PNG_COLOR_TYPE_PALETTE) {
    png_set_palette_to_rgb(png);
  } else if (depth != 8 && depth != 16) {
    status = DecodeStatus::bad_depth;
  }
  if (status != DecodeStatus::ok) {
    png_destroy_read_struct(&png, &info, nullptr);
    return status;
  }
  if (depth == 16) png_set_swap(png);
  png_read_update_info(png, info);

  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  out.depth = png_get_bit_depth(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  out.pixels.resize(row_bytes * static_cast<std::size_t>(out.height));
  for (int y = 0; y < out.height; ++y) {
    png_read_row(png, out.pixels.data() + row_bytes * static_cast<std::size_t>(y), nullptr);
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return DecodeStatus::ok;
}

bool encode_png(std::FILE* fp, const unsigned char* pixels, int width, int height, int channels,
                int depth) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, silent_warning);
  if (png == nullptr) return false;
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), depth,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (depth == 16) png_set_swap(png);
  const std::size_t row_bytes = static_cast<std::size_t>(width) * channels * (depth / 8);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, pixels + row_bytes * static_cast<std::size_t>(y));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f != nullptr) std::fclose(f);
  }
};

}  // namespace

Image load_image(const fs::path& path) {
  if (!fs::exists(path)) {
    throw IoError(IoErrc::missing_file, fmt::format("no such image: {}", path.string()));
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrc::read_failed, fmt::format("cannot open {}", path.string()));
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw IoError(IoErrc::unsupported_format, fmt::format("{} is not a PNG file", path.string()));
  }

  Decoded d;
  switch (decode_png(bytes, d)) {
    case DecodeStatus::ok:
      break;
    case DecodeStatus::bad_depth:
      throw IoError(IoErrc::unsupported_bit_depth,
                    fmt::format("{}: only 8- and 16-bit PNGs are supported", path.string()));
    case DecodeStatus::bad_format:
      throw IoError(IoErrc::unsupported_format,
                    fmt::format("{}: alpha channels are not supported", path.string()));
    case DecodeStatus::corrupt:
      throw IoError(IoErrc::read_failed, fmt::format("{}: corrupt PNG", path.string()));
  }

  const auto hwc = std::vector<std::int64_t>{d.height, d.width, d.channels};
  torch::Tensor t;
  if (d.depth == 8) {
    t = torch::from_blob(d.pixels.data(), hwc, torch::kUInt8).to(torch::kFloat32).div_(255.0);
  } else {
    // uint16 has no direct torch dtype in older releases; widen through int32.
    std::vector<std::int32_t> wide(d.pixels.size() / 2);
    const auto* src = reinterpret_cast<const std::uint16_t*>(d.pixels.data());
    std::copy(src, src + wide.size(), wide.begin());
    t = torch::from_blob(wide.data(), hwc, torch::kInt32).to(torch::kFloat32).div_(65535.0);
  }
  return Image::from_tensor(t.permute({2, 0, 1}).contiguous());
}

void save_image(const Image& img, const fs::path& path, BitDepth depth) {
  if (img.empty()) throw ShapeError("save_image: empty image");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const int bits = static_cast<int>(depth);
  const double scale = depth == BitDepth::u8 ? 255.0 : 65535.0;
  auto hwc = img.tensor().clamp(0.0, 1.0).mul(scale).round().permute({1, 2, 0}).contiguous();

  std::vector<unsigned char> pixels;
  if (depth == BitDepth::u8) {
    auto u8 = hwc.to(torch::kUInt8).contiguous();
    pixels.assign(u8.data_ptr<std::uint8_t>(), u8.data_ptr<std::uint8_t>() + u8.numel());
  } else {
    auto i32 = hwc.to(torch::kInt32).contiguous();
    pixels.resize(static_cast<std::size_t>(i32.numel()) * 2);
    auto* dst = reinterpret_cast<std::uint16_t*>(pixels.data());
    const auto* src = i32.data_ptr<std::int32_t>();
    for (std::int64_t i = 0; i < i32.numel(); ++i) dst[i] = static_cast<std::uint16_t>(src[i]);
  }

  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw IoError(IoErrc::write_failed, fmt::format("cannot write {}", path.string()));
  if (!encode_png(fp.get(), pixels.data(), img.width(), img.height(), img.channels(), bits)) {
    throw IoError(IoErrc::write_failed, fmt::format("PNG encoding failed for {}", path.string()));
  }
}

std::vector<fs::path> list_pngs(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    throw IoError(IoErrc::missing_file, fmt::format("no such directory: {}", dir.string()));
  }
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Color and metrics
// ---------------------------------------------------------------------------

Image to_luma(const Image& img) {
  if (img.channels() == 1) return img;
  const auto& t = img.tensor();
  auto y = t[0].mul(0.299).add_(t[1], 0.587).add_(t[2], 0.114);
  return Image::from_tensor(y.unsqueeze(0));
}

double psnr(const Image& pred, const Image& target, double peak) {
  require_same_shape(pred.tensor(), target.tensor(), "psnr");
  // Symmetric by construction: (a - b)^2 == (b - a)^2 bitwise.
  const double mse =
      (pred.tensor().to(torch::kFloat64) - target.tensor().to(torch::kFloat64)).square().mean().item<double>();
  if (mse <= 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(peak * peak / mse));
}

namespace {

torch::Tensor gaussian_window(int size, double sigma) {
  auto x = torch::arange(size, torch::kFloat64) - (size - 1) / 2.0;
  auto g = torch::exp(-(x * x) / (2.0 * sigma * sigma));
  g = g / g.sum();
  return torch::outer(g, g).view({1, 1, size, size});
}

}  // namespace

double ssim(const Image& pred, const Image& target, const SsimOptions& opts) {
  require_same_shape(pred.tensor(), target.tensor(), "ssim");
  if (pred.height() < opts.window || pred.width() < opts.window) {
    throw ShapeError(fmt::format("ssim: image {}x{} is smaller than the {}x{} window", pred.height(),
                                 pred.width(), opts.window, opts.window));
  }
  const double c1 = std::pow(opts.k1 * opts.dynamic_range, 2);
  const double c2 = std::pow(opts.k2 * opts.dynamic_range, 2);
  const auto w = gaussian_window(opts.window, opts.sigma);

  // Channels become the batch dimension so one filter serves all of them.
  auto a = pred.tensor().to(torch::kFloat64).unsqueeze(1);
  auto b = target.tensor().to(torch::kFloat64).unsqueeze(1);
  auto filt = [&](const torch::Tensor& x) { return torch::conv2d(x, w); };
  auto mu_a = filt(a);
  auto mu_b = filt(b);
  auto var_a = filt(a * a) - mu_a * mu_a;
  auto var_b = filt(b * b) - mu_b * mu_b;
  auto cov = filt(a * b) - mu_a * mu_b;
  auto map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
             ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
  // Per-channel mean, then mean over channels.
  return map.mean({1, 2, 3}).mean().item<double>();
}

void MetricReport::add(ImageScore s) { per_image.push_back(std::move(s)); }

void MetricReport::finalize() {
  if (per_image.empty()) {
    psnr_db = ssim = 0.0;
    return;
  }
  double p = 0.0;
  double s = 0.0;
  for (const auto& row : per_image) {
    p += row.psnr_db;
    s += row.ssim;
  }
  psnr_db = p / static_cast<double>(per_image.size());
  ssim = s / static_cast<double>(per_image.size());
}

std::string MetricReport::to_csv() const {
  std::string out = "image_id,psnr_db,ssim\n";
  for (const auto& row : per_image) {
    out += fmt::format("{},{:.6f},{:.6f}\n", row.image_id, row.psnr_db, row.ssim);
  }
  return out;
}

void MetricReport::write_csv(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(IoErrc::write_failed, fmt::format("cannot write {}", path.string()));
  out << to_csv();
}

ImageScore score_pair(const std::string& id, const Image& pred, const Image& target, MetricMode mode) {
  if (mode == MetricMode::luma) {
    const auto p = to_luma(pred);
    const auto t = to_luma(target);
    return {id, psnr(p, t), ssim(p, t)};
  }
  return {id, psnr(pred, target), ssim(pred, target)};
}

}  // namespace nadapt
