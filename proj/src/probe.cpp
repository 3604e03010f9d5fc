#include "nadapt/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>
#include <torch/torch.h>

#include "nadapt/error.hpp"

namespace nadapt {

namespace fs = std::filesystem;

ProbeModel train_probe_model(const std::vector<Image>& clean, const NoiseSchedule& sched,
                             const ProbeTrainOptions& opts) {
  if (clean.empty()) throw ValueError("train_probe_model: no clean images");
  if (opts.steps < 1 || opts.batch < 1) throw ValueError("train_probe_model: steps and batch must be positive");
  torch::manual_seed(opts.seed);
  const int c = clean.front().channels();
  ProbeModel m;
  m.net = build_eps_net(c, c, opts.base_channels);
  torch::optim::Adam opt(m.net->parameters(), torch::optim::AdamOptions(opts.lr));

  Rng root(opts.seed);
  PatchStream stream(clean, opts.patch, true, root.split("probe_patches"));
  Rng rng = root.split("probe_diffusion");
  m.losses.reserve(static_cast<std::size_t>(opts.steps));
  int bad = 0;
  for (int s = 0; s < opts.steps; ++s) {
    auto y = stream.next_batch(opts.batch);
    auto t = sample_timesteps(opts.batch, {1, sched.steps()}, sched, rng);
    auto eps = rng.randn(y.sizes());
    auto fwd = forward_sample(y, t, eps, sched);
    auto pred = m.net->forward(fwd.noisy, y, fwd.sqrt_alpha_bar);
    auto loss = noise_distance(eps, pred, opts.norm).mean();
    const double v = loss.item<double>();
    if (!std::isfinite(v)) {
      if (++bad >= opts.divergence_patience) {
        throw DivergenceError(fmt::format("probe loss non-finite for {} consecutive steps", bad));
      }
      m.losses.push_back(v);
      continue;
    }
    bad = 0;
    opt.zero_grad();
    loss.backward();
    opt.step();
    m.losses.push_back(v);
  }
  return m;
}

std::string SweepResult::to_csv() const {
  std::string out = "sigma,mse,stderr\n";
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    out += fmt::format("{:.6g},{:.9g},{:.9g}\n", sigma[i], mse[i], stderr_mse[i]);
  }
  return out;
}

void SweepResult::write_csv(const fs::path& path) const {
  std::ofstream f(path, std::ios::binary);
  f << to_csv();
  if (!f) throw IoError(IoErrc::write_failed, fmt::format("cannot write {}", path.string()));
}

SweepResult corruption_sweep(const EpsPredictor& model, const std::vector<Image>& test,
                             const std::vector<double>& sigmas, const NoiseSchedule& sched, int draws,
                             std::uint64_t seed, int chunk) {
  if (test.empty()) throw ValueError("corruption_sweep: empty test set");
  if (sigmas.empty()) throw ValueError("corruption_sweep: no sigmas");
  if (draws < 1 || chunk < 1) throw ValueError("corruption_sweep: draws and chunk must be positive");
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    if (sigmas[i] < 0 || sigmas[i] > 80) throw ValueError(fmt::format("corruption_sweep: sigma {} outside [0, 80]", sigmas[i]));
    if (i > 0 && !(sigmas[i] > sigmas[i - 1])) throw ValueError("corruption_sweep: sigmas must be strictly increasing");
  }
  std::vector<torch::Tensor> imgs;
  for (const auto& im : test) imgs.push_back(im.tensor());
  const auto y = torch::stack(imgs);
  const auto n = y.size(0);

  Rng rng = Rng(seed).split("sweep");
  struct Draw {
    torch::Tensor t, eps, z;
  };
  std::vector<Draw> ds;
  for (int d = 0; d < draws; ++d) {
    Draw dr;
    dr.t = sample_timesteps(static_cast<int>(n), {1, sched.steps()}, sched, rng);
    dr.eps = rng.randn(y.sizes());
    dr.z = rng.randn(y.sizes());
    ds.push_back(std::move(dr));
  }

  torch::NoGradGuard guard;
  SweepResult r;
  r.n_images = static_cast<int>(n);
  for (double sigma : sigmas) {
    std::vector<torch::Tensor> per_sample;
    for (const auto& dr : ds) {
      const auto fwd = forward_sample(y, dr.t, dr.eps, sched);
      const auto cond = y + dr.z * (sigma / 255.0);
      for (std::int64_t at = 0; at < n; at += chunk) {
        const auto hi = std::min<std::int64_t>(n, at + chunk);
        auto pred = model(fwd.noisy.slice(0, at, hi), cond.slice(0, at, hi), fwd.sqrt_alpha_bar.slice(0, at, hi));
        per_sample.push_back((pred.to(torch::kDouble) - dr.eps.slice(0, at, hi).to(torch::kDouble)).square().flatten(1).mean(1));
      }
    }
    const auto all = torch::cat(per_sample);
    const double mean = all.mean().item<double>();
    const double sd = all.numel() > 1 ? all.std().item<double>() : 0.0;
    r.sigma.push_back(sigma);
    r.mse.push_back(mean);
    r.stderr_mse.push_back(sd / std::sqrt(static_cast<double>(all.numel())));
  }
  return r;
}

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ValueError("spearman: need two equal-length series of length >= 2");
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

void write_sweep_plot(const SweepResult& r, const fs::path& path) {
  constexpr int W = 480, H = 320, L = 48, R = 16, T = 16, B = 40;
  auto canvas = torch::ones({3, H, W});
  auto acc = canvas.accessor<float, 3>();
  auto put = [&](int x, int y, float rr, float gg, float bb) {
    if (x < 0 || y < 0 || x >= W || y >= H) return;
    acc[0][y][x] = rr;
    acc[1][y][x] = gg;
    acc[2][y][x] = bb;
  };
  auto line = [&](double x0, double y0, double x1, double y1, float rr, float gg, float bb) {
    const int n = static_cast<int>(std::max(std::abs(x1 - x0), std::abs(y1 - y0))) + 1;
    for (int i = 0; i <= n; ++i) {
      const double a = static_cast<double>(i) / n;
      put(static_cast<int>(std::lround(x0 + a * (x1 - x0))), static_cast<int>(std::lround(y0 + a * (y1 - y0))), rr, gg,
          bb);
    }
  };
  // Axes with ticks every 10 sigma units.
  line(L, H - B, W - R, H - B, 0, 0, 0);
  line(L, T, L, H - B, 0, 0, 0);
  if (!r.sigma.empty()) {
    const double smax = std::max(r.sigma.back(), 1e-9);
    const double mmax = std::max(*std::max_element(r.mse.begin(), r.mse.end()), 1e-12);
    auto px = [&](double s) { return L + s / smax * (W - L - R); };
    auto py = [&](double m) { return (H - B) - m / mmax * (H - B - T); };
    for (double s = 0; s <= smax + 1e-9; s += 10) line(px(s), H - B, px(s), H - B + 5, 0, 0, 0);
    for (std::size_t i = 1; i < r.sigma.size(); ++i) {
      line(px(r.sigma[i - 1]), py(r.mse[i - 1]), px(r.sigma[i]), py(r.mse[i]), 0.1f, 0.3f, 0.8f);
    }
    for (std::size_t i = 0; i < r.sigma.size(); ++i) {
      const int cx = static_cast<int>(std::lround(px(r.sigma[i]))), cy = static_cast<int>(std::lround(py(r.mse[i])));
      for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx) put(cx + dx, cy + dy, 0.8f, 0.2f, 0.1f);
    }
  }
  save_image(Image::from_tensor(canvas), path);
}

std::vector<Image> probe_images(const std::string& dir, int count, int size, std::uint64_t seed) {
  std::vector<Image> out;
  if (dir.empty()) {
    Rng root(seed);
    for (int i = 0; i < count; ++i) {
      Rng r = root.split(static_cast<std::uint64_t>(i));
      out.push_back(dead_leaves(3, size, size, r));
    }
    return out;
  }
  for (const auto& p : list_pngs(dir)) {
    auto im = load_image(p);
    if (im.height() < size || im.width() < size) continue;
    const int top = (im.height() - size) / 2, left = (im.width() - size) / 2;
    out.push_back(Image::from_tensor(extract_patch(im, top, left, size, 0, false)));
    if (count > 0 && static_cast<int>(out.size()) >= count) break;
  }
  if (out.empty()) throw IoError(IoErrc::empty_directory, fmt::format("no usable probe images in {}", dir));
  return out;
}

}  // namespace nadapt
