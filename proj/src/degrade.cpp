#include "nadapt/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "nadapt/error.hpp"

namespace nadapt {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(DegradeKind k) {
  switch (k) {
    case DegradeKind::awgn: return "awgn";
    case DegradeKind::motion_blur: return "motion_blur";
    case DegradeKind::rain: return "rain";
    case DegradeKind::poisson_gaussian: return "poisson_gaussian";
  }
  return "awgn";
}

DegradeKind degrade_kind_from_string(const std::string& s) {
  if (s == "awgn") return DegradeKind::awgn;
  if (s == "motion_blur") return DegradeKind::motion_blur;
  if (s == "rain") return DegradeKind::rain;
  if (s == "poisson_gaussian") return DegradeKind::poisson_gaussian;
  throw ConfigError(fmt::format("unknown degradation kind '{}'", s));
}

void DegradeSpec::validate() const {
  auto check = [](auto r, const char* name) {
    if (r.lo > r.hi) throw ValueError(fmt::format("{}: lo > hi", name));
  };
  check(sigma, "sigma_range");
  check(kernel_len, "kernel_len_range");
  check(rain.count, "rain.count");
  check(rain.length, "rain.length");
  check(rain.angle, "rain.angle");
  if (sigma.lo < 0) throw ValueError("sigma_range: negative sigma");
  if (kernel_len.lo < 1) throw ValueError("kernel_len_range: kernel_len must be >= 1");
  if (rain.count.lo < 0) throw ValueError("rain.count: negative count");
  if (rain.opacity < 0 || rain.opacity > 1) throw ValueError("rain.opacity must lie in [0, 1]");
  if (sensor.shot < 0 || sensor.read < 0 || sensor.correlation < 0) {
    throw ValueError("sensor noise parameters must be non-negative");
  }
}

namespace {

template <typename T>
json range_json(Range<T> r) {
  return json::array({r.lo, r.hi});
}

template <typename T>
Range<T> range_from(const json& j, Range<T> fallback) {
  if (j.is_null()) return fallback;
  if (!j.is_array() || j.size() != 2) throw ConfigError("ranges are written as [lo, hi]");
  return {j[0].get<T>(), j[1].get<T>()};
}

}  // namespace

void to_json(json& j, const DegradeSpec& s) {
  j = json{{"kind", to_string(s.kind)},
           {"sigma_range", range_json(s.sigma)},
           {"kernel_len_range", range_json(s.kernel_len)},
           {"rain",
            {{"count", range_json(s.rain.count)},
             {"length", range_json(s.rain.length)},
             {"angle", range_json(s.rain.angle)},
             {"opacity", s.rain.opacity}}},
           {"sensor", {{"shot", s.sensor.shot}, {"read", s.sensor.read}, {"correlation", s.sensor.correlation}}},
           {"clip", s.clip},
           {"post_sensor", s.post_sensor},
           {"seed", s.seed}};
}

void from_json(const json& j, DegradeSpec& s) {
  DegradeSpec d = s;
  if (j.contains("kind")) d.kind = degrade_kind_from_string(j.at("kind").get<std::string>());
  d.sigma = range_from(j.value("sigma_range", json()), d.sigma);
  d.kernel_len = range_from(j.value("kernel_len_range", json()), d.kernel_len);
  if (j.contains("rain")) {
    const auto& r = j.at("rain");
    d.rain.count = range_from(r.value("count", json()), d.rain.count);
    d.rain.length = range_from(r.value("length", json()), d.rain.length);
    d.rain.angle = range_from(r.value("angle", json()), d.rain.angle);
    d.rain.opacity = r.value("opacity", d.rain.opacity);
  }
  if (j.contains("sensor")) {
    const auto& n = j.at("sensor");
    d.sensor.shot = n.value("shot", d.sensor.shot);
    d.sensor.read = n.value("read", d.sensor.read);
    d.sensor.correlation = n.value("correlation", d.sensor.correlation);
  }
  d.clip = j.value("clip", d.clip);
  d.post_sensor = j.value("post_sensor", d.post_sensor);
  d.seed = j.value("seed", d.seed);
  d.validate();
  s = d;
}

// ---------------------------------------------------------------------------
// Operators
// ---------------------------------------------------------------------------

Image awgn(const Image& clean, double sigma, Rng& rng, bool clip) {
  if (sigma < 0) throw ValueError(fmt::format("awgn: negative sigma {}", sigma));
  if (sigma == 0) return clean;
  auto noise = rng.randn(clean.tensor().sizes()).mul_(sigma / 255.0);
  auto out = clean.tensor() + noise;
  if (clip) out.clamp_(0.0, 1.0);
  return Image::from_tensor(out);
}

torch::Tensor motion_kernel(int kernel_len, double angle_deg) {
  if (kernel_len < 1) throw ValueError("motion_kernel: kernel_len must be >= 1");
  const int size = kernel_len % 2 == 1 ? kernel_len : kernel_len + 1;
  const double c = (size - 1) / 2.0;
  const double rad = angle_deg * std::numbers::pi / 180.0;
  const double dx = std::cos(rad);
  const double dy = -std::sin(rad);  // image rows grow downward
  std::vector<double> k(static_cast<std::size_t>(size * size), 0.0);
  auto splat = [&](double x, double y, double w) {
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const double fx = x - x0;
    const double fy = y - y0;
    const std::array<std::array<double, 3>, 4> taps{{{0, 0, (1 - fx) * (1 - fy)},
                                                     {1, 0, fx * (1 - fy)},
                                                     {0, 1, (1 - fx) * fy},
                                                     {1, 1, fx * fy}}};
    for (const auto& t : taps) {
      const int xi = std::clamp(x0 + static_cast<int>(t[0]), 0, size - 1);
      const int yi = std::clamp(y0 + static_cast<int>(t[1]), 0, size - 1);
      k[static_cast<std::size_t>(yi * size + xi)] += w * t[2];
    }
  };
  for (int j = 0; j < kernel_len; ++j) {
    const double s = -(kernel_len - 1) / 2.0 + j;
    splat(c + s * dx + 1e-12, c + s * dy + 1e-12, 1.0 / kernel_len);
  }
  auto t = torch::tensor(k, torch::kFloat64).view({size, size});
  return (t / t.sum()).to(torch::kFloat32);
}

Image motion_blur(const Image& clean, int kernel_len, double angle_deg) {
  if (kernel_len < 1) throw ValueError("motion_blur: kernel_len must be >= 1");
  auto k = motion_kernel(kernel_len, angle_deg);
  const int size = static_cast<int>(k.size(0));
  if (size > clean.height() || size > clean.width()) {
    throw ShapeError(fmt::format("motion_blur: kernel {}x{} larger than image {}x{}", size, size,
                                 clean.height(), clean.width()));
  }
  if (size == 1) return clean;
  const int pad = size / 2;
  namespace F = torch::nn::functional;
  // reflect padding requires pad < dim; guaranteed since size <= dim.
  auto x = F::pad(clean.batched().transpose(0, 1),
                  F::PadFuncOptions({pad, pad, pad, pad}).mode(torch::kReflect));
  auto y = torch::conv2d(x, k.view({1, 1, size, size}));
  return Image::from_tensor(y.transpose(0, 1).squeeze(0));
}

Image rain_streaks(const Image& clean, const RainParams& params, Rng& rng) {
  if (clean.channels() != 3) throw ShapeError("rain_streaks: expects a 3-channel image");
  const int count = static_cast<int>(rng.uniform_int(params.count.lo, params.count.hi));
  if (count == 0 || params.opacity <= 0) return clean;
  const int h = clean.height();
  const int w = clean.width();
  std::vector<float> layer(static_cast<std::size_t>(h * w), 0.0f);
  const double base_angle = rng.uniform(params.angle.lo, params.angle.hi);
  for (int s = 0; s < count; ++s) {
    const double len = rng.uniform(params.length.lo, params.length.hi);
    const double ang = (base_angle + rng.uniform(-3.0, 3.0)) * std::numbers::pi / 180.0;
    const double x0 = rng.uniform(0.0, w);
    const double y0 = rng.uniform(0.0, h);
    const float opacity = static_cast<float>(rng.uniform(params.opacity / 2, params.opacity));
    const double dx = std::sin(ang);
    const double dy = std::cos(ang);
    const int steps = std::max(1, static_cast<int>(std::ceil(len * 2)));
    for (int i = 0; i <= steps; ++i) {
      const double u = len * i / steps;
      const int xi = static_cast<int>(std::lround(x0 + u * dx));
      const int yi = static_cast<int>(std::lround(y0 + u * dy));
      if (xi < 0 || xi >= w || yi < 0 || yi >= h) continue;
      auto& px = layer[static_cast<std::size_t>(yi * w + xi)];
      px = std::max(px, opacity);
    }
  }
  auto streaks = torch::from_blob(layer.data(), {1, h, w}, torch::kFloat32).clone();
  return Image::from_tensor((clean.tensor() + streaks).clamp_(0.0, 1.0));
}

namespace {

torch::Tensor gaussian_blur_1ch(const torch::Tensor& nchw, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
  auto x = torch::arange(-radius, radius + 1, torch::kFloat32);
  auto g = torch::exp(-(x * x) / (2 * sigma * sigma));
  g = g / g.sum();
  const int n = 2 * radius + 1;
  namespace F = torch::nn::functional;
  auto padded = F::pad(nchw, F::PadFuncOptions({radius, radius, radius, radius}).mode(torch::kReflect));
  auto y = torch::conv2d(padded, g.view({1, 1, 1, n}));
  return torch::conv2d(y, g.view({1, 1, n, 1}));
}

}  // namespace

Image sensor_noise(const Image& clean, const SensorNoiseParams& params, Rng& rng) {
  auto white = rng.randn(clean.tensor().sizes());
  if (params.correlation > 0) {
    if (3 * params.correlation >= std::min(clean.height(), clean.width())) {
      throw ShapeError("sensor_noise: correlation width too large for the image");
    }
    auto corr = gaussian_blur_1ch(white.unsqueeze(1), params.correlation).squeeze(1);
    // Renormalize to unit variance per channel.
    white = corr / corr.std({1, 2}, /*unbiased=*/true, /*keepdim=*/true).clamp_min(1e-8);
  }
  auto var = clean.tensor().clamp(0.0, 1.0).mul(params.shot).add_(params.read * params.read);
  return Image::from_tensor(clean.tensor() + var.sqrt() * white);
}

Image dead_leaves(int channels, int height, int width, Rng& rng, const DeadLeavesParams& params) {
  if (channels != 1 && channels != 3) throw ShapeError("dead_leaves: channels must be 1 or 3");
  const int ss = 2;
  const int H = height * ss;
  const int W = width * ss;
  auto yy = torch::arange(H, torch::kFloat32).view({H, 1}).expand({H, W});
  auto xx = torch::arange(W, torch::kFloat32).view({1, W}).expand({H, W});
  auto img = torch::full({channels, H, W}, static_cast<float>(rng.uniform(0.2, 0.8)));
  auto covered = torch::zeros({H, W}, torch::kBool);
  const double rmin = params.min_radius * ss;
  const double rmax = params.max_radius * ss;
  // Front-to-back: each new disk only paints pixels not yet covered.
  for (int i = 0; i < params.disks; ++i) {
    // Inverse CDF of p(r) ~ r^-3 on [rmin, rmax].
    const double u = rng.uniform();
    const double inv = 1.0 / (rmin * rmin) - u * (1.0 / (rmin * rmin) - 1.0 / (rmax * rmax));
    const double r = 1.0 / std::sqrt(inv);
    const double cx = rng.uniform(-r, W + r);
    const double cy = rng.uniform(-r, H + r);
    auto mask = ((xx - cx).square() + (yy - cy).square()).lt(r * r).logical_and(covered.logical_not());
    std::vector<float> color(static_cast<std::size_t>(channels));
    const double base = rng.uniform(0.05, 0.95);
    for (auto& c : color) c = static_cast<float>(std::clamp(base + rng.uniform(-0.25, 0.25), 0.0, 1.0));
    // Mild linear shading inside the disk.
    const double gx = rng.uniform(-0.15, 0.15) / r;
    const double gy = rng.uniform(-0.15, 0.15) / r;
    auto shade = (xx - cx) * gx + (yy - cy) * gy;
    for (int c = 0; c < channels; ++c) {
      auto plane = img[c];
      plane.copy_(torch::where(mask, (shade + color[static_cast<std::size_t>(c)]).clamp(0.0, 1.0), plane));
    }
    covered.logical_or_(mask);
    if (i % 32 == 31 && covered.all().item<bool>()) break;
  }
  auto down = torch::avg_pool2d(img.unsqueeze(0), ss).squeeze(0);
  return Image::from_tensor(down.clamp(0.0, 1.0));
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

void to_json(json& j, const DegradationRecord& r) {
  j = json{{"kind", to_string(r.kind)},
           {"sigma", r.sigma},
           {"kernel_len", r.kernel_len},
           {"angle", r.angle},
           {"noise_seed", r.noise_seed}};
}

DegradationRecord sample_degradation(const DegradeSpec& spec, Rng& rng) {
  DegradationRecord r;
  r.kind = spec.kind;
  switch (spec.kind) {
    case DegradeKind::awgn:
      r.sigma = rng.uniform(spec.sigma.lo, std::nextafter(spec.sigma.hi, spec.sigma.hi + 1));
      break;
    case DegradeKind::motion_blur:
      r.kernel_len = static_cast<int>(rng.uniform_int(spec.kernel_len.lo, spec.kernel_len.hi));
      r.angle = rng.uniform(0.0, 180.0);
      break;
    case DegradeKind::rain:
    case DegradeKind::poisson_gaussian:
      break;
  }
  r.noise_seed = rng.next_u64();
  return r;
}

Image apply_degradation(const DegradeSpec& spec, const DegradationRecord& rec, const Image& clean) {
  Rng noise(rec.noise_seed);
  Image out;
  switch (rec.kind) {
    case DegradeKind::awgn:
      out = awgn(clean, rec.sigma, noise, spec.clip);
      break;
    case DegradeKind::motion_blur:
      out = motion_blur(clean, rec.kernel_len, rec.angle);
      break;
    case DegradeKind::rain:
      out = rain_streaks(clean, spec.rain, noise);
      break;
    case DegradeKind::poisson_gaussian:
      out = sensor_noise(clean, spec.sensor, noise);
      break;
  }
  if (spec.post_sensor && rec.kind != DegradeKind::poisson_gaussian) {
    Rng post = noise.split("post_sensor");
    out = sensor_noise(out, spec.sensor, post);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Patch streams
// ---------------------------------------------------------------------------

torch::Tensor extract_patch(const Image& img, int top, int left, int p, int rotation, bool flip) {
  auto crop = img.tensor().slice(1, top, top + p).slice(2, left, left + p);
  if (rotation % 4 != 0) crop = torch::rot90(crop, rotation % 4, {1, 2});
  if (flip) crop = crop.flip({2});
  return crop.contiguous();
}

PatchStream::PatchStream(std::vector<Image> images, int patch, bool augment, Rng rng)
    : images_(std::move(images)), patch_(patch), augment_(augment), rng_(std::move(rng)) {
  if (patch_ < 1) throw ValueError("PatchStream: patch size must be positive");
  if (images_.empty()) throw IoError(IoErrc::empty_directory, "PatchStream: no images");
  for (const auto& im : images_) {
    if (im.height() < patch_ || im.width() < patch_) {
      throw ShapeError(fmt::format("PatchStream: image {}x{} smaller than patch {}", im.height(), im.width(), patch_));
    }
    if (im.channels() != images_.front().channels()) throw ShapeError("PatchStream: mixed channel counts");
  }
}

PatchStream PatchStream::from_directory(const fs::path& dir, int patch, bool augment, Rng rng) {
  std::vector<Image> images;
  for (const auto& p : list_pngs(dir)) {
    auto im = load_image(p);
    if (im.height() < patch || im.width() < patch) {
      std::cerr << fmt::format("warning: skipping {} ({}x{} < patch {})\n", p.string(), im.height(),
                               im.width(), patch);
      continue;
    }
    images.push_back(std::move(im));
  }
  if (images.empty()) {
    throw IoError(IoErrc::empty_directory, fmt::format("no usable images in {}", dir.string()));
  }
  return PatchStream(std::move(images), patch, augment, std::move(rng));
}

Patch PatchStream::next() {
  Patch p;
  p.source = static_cast<int>(rng_.uniform_int(0, static_cast<std::int64_t>(images_.size()) - 1));
  const auto& im = images_[static_cast<std::size_t>(p.source)];
  p.top = static_cast<int>(rng_.uniform_int(0, im.height() - patch_));
  p.left = static_cast<int>(rng_.uniform_int(0, im.width() - patch_));
  if (augment_) {
    p.rotation = (rng_.bernoulli() ? 1 : 0) + (rng_.bernoulli() ? 2 : 0);
    p.flip = rng_.bernoulli();
  }
  p.data = extract_patch(im, p.top, p.left, patch_, p.rotation, p.flip);
  return p;
}

torch::Tensor PatchStream::next_batch(int n, std::vector<Patch>* info) {
  std::vector<torch::Tensor> parts;
  parts.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto p = next();
    parts.push_back(p.data);
    if (info != nullptr) info->push_back(std::move(p));
  }
  return torch::stack(parts);
}

void to_json(json& j, const PatchRecord& r) {
  j = json{{"source", r.patch.source},
           {"top", r.patch.top},
           {"left", r.patch.left},
           {"rotation", r.patch.rotation},
           {"flip", r.patch.flip},
           {"degradation", r.degradation}};
}

DomainSampler::DomainSampler(PatchStream syn, std::optional<PatchStream> real, std::optional<PatchStream> pool,
                             DegradeSpec syn_spec, Rng rng)
    : syn_(std::move(syn)), real_(std::move(real)), pool_(std::move(pool)), spec_(syn_spec), rng_(std::move(rng)) {
  spec_.validate();
  auto check = [&](const std::optional<PatchStream>& s, const char* name) {
    if (s && (s->patch() != syn_.patch() || s->channels() != syn_.channels())) {
      throw ShapeError(fmt::format("DomainSampler: {} stream differs in patch size or channels", name));
    }
  };
  check(real_, "real");
  check(pool_, "clean pool");
}

DomainBatch DomainSampler::next(int batch) {
  if (batch < 1) throw ValueError("DomainSampler: batch must be positive");
  DomainBatch b;
  std::vector<Patch> info;
  b.syn_clean = syn_.next_batch(batch, &info);
  std::vector<torch::Tensor> degraded;
  for (auto& p : info) {
    PatchRecord rec;
    rec.degradation = sample_degradation(spec_, rng_);
    degraded.push_back(apply_degradation(spec_, rec.degradation, Image::from_tensor(p.data)).tensor());
    p.data = torch::Tensor();
    rec.patch = std::move(p);
    if (log_ != nullptr) *log_ << json(rec).dump() << '\n';
    b.records.push_back(std::move(rec));
  }
  b.syn_degraded = torch::stack(degraded);
  if (real_) b.real_degraded = real_->next_batch(batch);
  if (pool_) b.clean_pool = pool_->next_batch(batch);
  return b;
}

// ---------------------------------------------------------------------------
// Dataset synthesis
// ---------------------------------------------------------------------------

DegradeSpec default_syn_spec(const std::string& task) {
  DegradeSpec s;
  if (task == "denoise") {
    s.kind = DegradeKind::awgn;
    s.sigma = {0.0, 75.0};
  } else if (task == "derain") {
    s.kind = DegradeKind::rain;
  } else if (task == "deblur") {
    s.kind = DegradeKind::motion_blur;
    s.kernel_len = {3, 15};
  } else {
    throw ConfigError(fmt::format("unknown task '{}'", task));
  }
  return s;
}

DegradeSpec default_real_spec(const std::string& task) {
  DegradeSpec s;
  s.sensor = {0.01, 4.0 / 255.0, 0.8};
  if (task == "denoise") {
    s.kind = DegradeKind::poisson_gaussian;
  } else if (task == "derain") {
    s.kind = DegradeKind::rain;
    s.rain.angle = {-45.0, -25.0};
    s.rain.length = {10.0, 24.0};
    s.rain.opacity = 0.45;
    s.post_sensor = true;
    s.sensor = {0.002, 2.0 / 255.0, 0.8};
  } else if (task == "deblur") {
    s.kind = DegradeKind::motion_blur;
    s.kernel_len = {5, 17};
    s.post_sensor = true;
    s.sensor = {0.002, 2.0 / 255.0, 0.8};
  } else {
    throw ConfigError(fmt::format("unknown task '{}'", task));
  }
  return s;
}

namespace {

std::string indexed_name(int i) { return fmt::format("{:03d}.png", i); }

}  // namespace

DatasetSummary synthesize_dataset(const DatasetPlan& plan) {
  if (!fs::is_directory(plan.source_dir)) {
    throw ConfigError(fmt::format("source directory {} does not exist", plan.source_dir.string()));
  }
  const auto sources = list_pngs(plan.source_dir);
  if (sources.empty()) {
    throw IoError(IoErrc::empty_directory, fmt::format("no PNG images in {}", plan.source_dir.string()));
  }
  if (fs::exists(plan.out_root) && !fs::is_empty(plan.out_root)) {
    if (!plan.force) {
      throw ConfigError(fmt::format("output {} exists; pass --force to overwrite", plan.out_root.string()));
    }
    for (const char* sub : {"syn_clean", "syn_degraded", "real_degraded", "clean_pool", "real_eval", "real_gt_eval"}) {
      fs::remove_all(plan.out_root / sub);
    }
  }
  plan.syn.validate();
  plan.real.validate();

  const int n = static_cast<int>(sources.size());
  const auto& sp = plan.split;
  const bool shared = sp.syn <= 0 && sp.real == 0 && sp.pool == 0 && sp.eval == 0;
  std::vector<int> syn_idx, real_idx, pool_idx, eval_idx;
  auto iota = [](int from, int count) {
    std::vector<int> v(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) v[static_cast<std::size_t>(i)] = from + i;
    return v;
  };
  if (shared) {
    syn_idx = real_idx = pool_idx = eval_idx = iota(0, n);
  } else {
    const int syn = sp.syn < 0 ? n - (sp.real + sp.pool + sp.eval) : sp.syn;
    if (sp.real < 0 || sp.pool < 0 || sp.eval < 0 || syn < 1 || syn + sp.real + sp.pool + sp.eval > n) {
      throw ConfigError(fmt::format("dataset split {}/{}/{}/{} does not fit {} source images", sp.syn, sp.real,
                                    sp.pool, sp.eval, n));
    }
    int at = 0;
    syn_idx = iota(at, syn);
    at += syn;
    real_idx = iota(at, sp.real);
    at += sp.real;
    pool_idx = iota(at, sp.pool);
    at += sp.pool;
    eval_idx = iota(at, sp.eval);
  }

  Rng root(plan.seed);
  Rng syn_rng = root.split("syn_degraded");
  Rng real_rng = root.split("real_degraded");
  Rng eval_rng = root.split("real_eval");
  DatasetSummary summary;
  for (std::size_t i = 0; i < syn_idx.size(); ++i) {
    auto clean = load_image(sources[static_cast<std::size_t>(syn_idx[i])]);
    const auto name = indexed_name(static_cast<int>(i));
    save_image(clean, plan.out_root / "syn_clean" / name);
    auto rec = sample_degradation(plan.syn, syn_rng);
    save_image(apply_degradation(plan.syn, rec, clean), plan.out_root / "syn_degraded" / name);
    ++summary.syn_pairs;
  }
  for (std::size_t i = 0; i < real_idx.size(); ++i) {
    auto clean = load_image(sources[static_cast<std::size_t>(real_idx[i])]);
    auto rec = sample_degradation(plan.real, real_rng);
    save_image(apply_degradation(plan.real, rec, clean), plan.out_root / "real_degraded" / indexed_name(static_cast<int>(i)));
    ++summary.real;
  }
  for (std::size_t i = 0; i < pool_idx.size(); ++i) {
    auto clean = load_image(sources[static_cast<std::size_t>(pool_idx[i])]);
    save_image(clean, plan.out_root / "clean_pool" / indexed_name(static_cast<int>(i)));
    ++summary.pool;
  }
  for (std::size_t i = 0; i < eval_idx.size(); ++i) {
    auto clean = load_image(sources[static_cast<std::size_t>(eval_idx[i])]);
    const auto name = indexed_name(static_cast<int>(i));
    auto rec = sample_degradation(plan.real, eval_rng);
    save_image(apply_degradation(plan.real, rec, clean), plan.out_root / "real_eval" / name);
    save_image(clean, plan.out_root / "real_gt_eval" / name);
    ++summary.eval;
  }
  return summary;
}

void write_procedural_sources(const fs::path& dir, int count, int channels, int size, std::uint64_t seed) {
  fs::create_directories(dir);
  Rng root(seed);
  for (int i = 0; i < count; ++i) {
    Rng r = root.split(static_cast<std::uint64_t>(i));
    save_image(dead_leaves(channels, size, size, r), dir / indexed_name(i));
  }
}

}  // namespace nadapt
