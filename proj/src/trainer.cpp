#include "nadapt/trainer.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <torch/torch.h>

#include "nadapt/error.hpp"

namespace nadapt {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

std::vector<EvalPair> load_pairs(const fs::path& degraded_dir, const fs::path& target_dir) {
  if (!fs::is_directory(degraded_dir)) {
    throw IoError(IoErrc::missing_file, fmt::format("missing directory {}", degraded_dir.string()));
  }
  std::vector<EvalPair> out;
  for (const auto& p : list_pngs(degraded_dir)) {
    const auto gt = target_dir / p.filename();
    if (!fs::exists(gt)) throw IoError(IoErrc::missing_file, fmt::format("no ground truth for {}", p.string()));
    EvalPair e{p.stem().string(), load_image(p), load_image(gt)};
    require_same_shape(e.degraded.tensor(), e.target.tensor(), "load_pairs");
    out.push_back(std::move(e));
  }
  if (out.empty()) throw IoError(IoErrc::empty_directory, fmt::format("no images in {}", degraded_dir.string()));
  return out;
}

std::vector<EvalPair> load_eval_pairs(const fs::path& root, const std::string& split) {
  if (split == "real") return load_pairs(root / "real_eval", root / "real_gt_eval");
  if (split == "syn") return load_pairs(root / "syn_degraded", root / "syn_clean");
  throw ConfigError(fmt::format("unknown eval split '{}'", split));
}

std::vector<EvalPair> make_syn_validation(const std::vector<Image>& clean, const DegradeSpec& spec, int count,
                                          std::uint64_t seed) {
  Rng rng = Rng(seed).split("syn_validation");
  std::vector<EvalPair> out;
  const auto n = std::min<std::size_t>(clean.size(), static_cast<std::size_t>(std::max(count, 0)));
  for (std::size_t i = 0; i < n; ++i) {
    auto rec = sample_degradation(spec, rng);
    out.push_back({fmt::format("{:03d}", i), apply_degradation(spec, rec, clean[i]), clean[i]});
  }
  return out;
}

namespace {

std::vector<Image> load_dir(const fs::path& dir) {
  const auto files = list_pngs(dir);
  if (files.empty()) throw IoError(IoErrc::empty_directory, fmt::format("no PNG images in {}", dir.string()));
  std::vector<Image> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(load_image(f));
  return out;
}

std::vector<Image> adapt_channels(std::vector<Image> images, int channels) {
  for (auto& im : images) {
    if (im.channels() == channels) continue;
    if (channels == 1) {
      im = to_luma(im);
    } else {
      im = Image::from_tensor(im.tensor().expand({3, -1, -1}).contiguous());
    }
  }
  return images;
}

std::vector<EvalPair> adapt_channels(std::vector<EvalPair> pairs, int channels) {
  for (auto& p : pairs) {
    p.degraded = adapt_channels(std::vector<Image>{p.degraded}, channels).front();
    p.target = adapt_channels(std::vector<Image>{p.target}, channels).front();
  }
  return pairs;
}

}  // namespace

TrainingData load_training_data(const RunConfig& cfg) {
  if (cfg.data_root.empty()) throw ConfigError("data.root is not set (and NADAPT_DATA_ROOT is empty)");
  const fs::path root = cfg.data_root;
  if (!fs::is_directory(root)) throw ConfigError(fmt::format("data root {} does not exist", root.string()));
  TrainingData d;
  d.syn_clean = adapt_channels(load_dir(root / "syn_clean"), cfg.channels);
  if (cfg.adapt.enabled) d.real_degraded = adapt_channels(load_dir(root / "real_degraded"), cfg.channels);
  if (cfg.adapt.enabled && cfg.adapt.mode == TargetMode::unpaired) {
    d.clean_pool = adapt_channels(load_dir(root / "clean_pool"), cfg.channels);
  }
  d.syn_val = make_syn_validation(d.syn_clean, cfg.syn_spec, cfg.val_count, cfg.seed);
  auto real = adapt_channels(load_eval_pairs(root, "real"), cfg.channels);
  if (real.size() > static_cast<std::size_t>(cfg.val_count)) real.resize(static_cast<std::size_t>(cfg.val_count));
  d.real_val = std::move(real);
  return d;
}

// ---------------------------------------------------------------------------
// TrainLog
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kLogHeader =
    "epoch,l_res,l_dif,l_con,lambda_dif,syn_val_psnr,real_val_psnr,grad_norm_syn,grad_norm_real";

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  return fmt::format("{:.9g}", v);
}

double parse_num(const std::string& s) {
  if (s == "nan" || s.empty()) return kNaN;
  return std::stod(s);
}

}  // namespace

std::string TrainLog::to_csv() const {
  const bool staged = std::any_of(rows.begin(), rows.end(), [](const TrainRow& r) { return !r.stage.empty(); });
  std::string out = kLogHeader;
  if (staged) out += ",stage";
  out += '\n';
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{},{},{},{},{}", r.epoch, num(r.l_res), num(r.l_dif), num(r.l_con),
                       num(r.lambda_dif), num(r.syn_val_psnr), num(r.real_val_psnr), num(r.grad_norm_syn),
                       num(r.grad_norm_real));
    if (staged) out += "," + r.stage;
    out += '\n';
  }
  return out;
}

void TrainLog::write_csv(const fs::path& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError(IoErrc::write_failed, fmt::format("cannot write {}", path.string()));
  f << to_csv();
  if (!f) throw IoError(IoErrc::write_failed, fmt::format("cannot write {}", path.string()));
}

TrainLog TrainLog::read_csv(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError(IoErrc::missing_file, fmt::format("cannot read {}", path.string()));
  std::string line;
  std::getline(f, line);
  if (line.rfind(kLogHeader, 0) != 0) throw IoError(IoErrc::unsupported_format, "unexpected TrainLog header");
  TrainLog log;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    if (cells.size() < 9) throw IoError(IoErrc::unsupported_format, fmt::format("short TrainLog row '{}'", line));
    TrainRow r;
    r.epoch = std::stoi(cells[0]);
    r.l_res = parse_num(cells[1]);
    r.l_dif = parse_num(cells[2]);
    r.l_con = parse_num(cells[3]);
    r.lambda_dif = parse_num(cells[4]);
    r.syn_val_psnr = parse_num(cells[5]);
    r.real_val_psnr = parse_num(cells[6]);
    r.grad_norm_syn = parse_num(cells[7]);
    r.grad_norm_real = parse_num(cells[8]);
    if (cells.size() > 9) r.stage = cells[9];
    log.rows.push_back(std::move(r));
  }
  return log;
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

std::string to_string(Stage s) {
  switch (s) {
    case Stage::I: return "I";
    case Stage::II: return "II";
    case Stage::III: return "III";
  }
  return "I";
}

Stage stage_at(const TrainLog& log, std::size_t i, const StageRules& rules) {
  if (i >= log.rows.size()) throw ValueError("stage_at: row out of range");
  const auto& rows = log.rows;
  const auto k = static_cast<std::size_t>(std::max(rules.decline_epochs, 1));
  if (i >= k) {
    bool declining = true;
    for (std::size_t j = i - k + 1; j <= i; ++j) declining = declining && rows[j].real_val_psnr < rows[j - 1].real_val_psnr;
    const bool syn_rising = rows[i].syn_val_psnr > rows[i - k].syn_val_psnr;
    const double ratio = rows[i].grad_norm_real / rows[i].grad_norm_syn;
    if (declining && syn_rising && ratio < rules.grad_ratio) return Stage::III;
  }
  if (rows[i].syn_val_psnr - rows[i].real_val_psnr > rules.gap_db) return Stage::II;
  return Stage::I;
}

Stage detect_stage(const TrainLog& log, const StageRules& rules) {
  int epochs = 0;
  for (const auto& r : log.rows) epochs += r.epoch > 0 ? 1 : 0;
  if (epochs < 3) throw ValueError(fmt::format("detect_stage: need at least 3 epochs of history, got {}", epochs));
  for (std::size_t i = 0; i < log.rows.size(); ++i) {
    if (stage_at(log, i, rules) == Stage::III) return Stage::III;
  }
  return stage_at(log, log.rows.size() - 1, rules);
}

void label_stages(TrainLog& log, const StageRules& rules) {
  for (std::size_t i = 0; i < log.rows.size(); ++i) log.rows[i].stage = to_string(stage_at(log, i, rules));
}

// ---------------------------------------------------------------------------
// Joint step
// ---------------------------------------------------------------------------

torch::Tensor JointForward::objective() const {
  if (!l_dif.defined()) return l_res;
  return l_res + 0.5 * (l_dif + l_con);
}

JointForward joint_forward(Restorer& restorer, EpsNet* eps_net, const DomainBatch& batch, const AdaptConfig& adapt,
                           double lambda_dif, const NoiseSchedule& sched, Rng& rng) {
  JointForward out;
  // The restorer sees each domain in its own forward pass, so its numerics do
  // not depend on whether a real batch is present.
  auto syn = restorer->forward(batch.syn_degraded);
  out.l_res = charbonnier_loss(syn.restored, batch.syn_clean);
  if (eps_net == nullptr || !adapt.enabled) return out;
  if (!batch.real_degraded.defined()) throw ValueError("joint_forward: adaptation needs a real batch");
  auto real = restorer->forward(batch.real_degraded);

  out.probe_syn = std::make_shared<GradProbe>();
  out.probe_real = std::make_shared<GradProbe>();
  torch::Tensor r_syn, r_real;
  if (adapt.detach_conditions) {
    r_syn = syn.residual.detach();
    r_real = real.residual.detach();
  } else {
    r_syn = scale_gradient(syn.residual, lambda_dif, out.probe_syn);
    r_real = scale_gradient(real.residual, lambda_dif, out.probe_real);
  }
  const auto cond_syn = batch.syn_degraded + r_syn;
  const auto cond_real = batch.real_degraded + r_real;
  const auto pack = adapt.channel_shuffle ? channel_shuffle(cond_syn, cond_real, rng) : fixed_order(cond_syn, cond_real);

  const auto target = pick_diffusion_target(adapt.mode, batch.syn_clean, batch.clean_pool, rng);
  const auto n = static_cast<int>(batch.syn_clean.size(0));
  const auto t = sample_timesteps(n, adapt.t_range, sched, rng);
  const auto eps = rng.randn(target.clean.sizes());
  const auto fwd = forward_sample(target.clean, t, eps, sched);

  auto& net = *eps_net;
  EpsPredictor predict = [&net](const torch::Tensor& noisy, const torch::Tensor& cond, const torch::Tensor& ab) {
    return net->forward(noisy, cond, ab);
  };
  auto dif = diffusion_loss(predict, fwd.noisy, pack, fwd.sqrt_alpha_bar, eps, adapt.norm);
  out.l_dif = dif.loss;
  // Unpaired targets carry no pairing for the swap to contrast against.
  if (adapt.residual_swap && adapt.mode == TargetMode::paired) {
    const auto swapped = residual_swap(batch.syn_degraded, batch.real_degraded, r_syn, r_real);
    const auto neg = pack_conditions(swapped.syn_with_real_residual, swapped.real_with_syn_residual, pack.order);
    const auto eps_neg = predict(fwd.noisy, neg.concat, fwd.sqrt_alpha_bar);
    out.l_con = contrastive_loss(eps, dif.eps_pred, eps_neg, adapt.delta, adapt.norm);
  } else {
    out.l_con = torch::zeros({}, out.l_dif.options());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

MetricMode metric_mode(Task task) { return task == Task::derain ? MetricMode::luma : MetricMode::rgb; }

double validation_psnr(Restorer& net, const std::vector<EvalPair>& pairs, Task task) {
  if (pairs.empty()) return kNaN;
  torch::NoGradGuard guard;
  double sum = 0.0;
  for (const auto& p : pairs) {
    auto restored = restore(net, p.degraded.batched()).restored.squeeze(0).clamp(0.0, 1.0);
    sum += score_pair(p.id, Image::from_tensor(restored), p.target, metric_mode(task)).psnr_db;
  }
  return sum / static_cast<double>(pairs.size());
}

namespace {

bool finite_scalar(const torch::Tensor& t) { return t.defined() && std::isfinite(t.item<double>()); }

}  // namespace

TrainResult train_joint(const RunConfig& cfg, const TrainingData& data, const TrainHooks& hooks) {
  if (data.syn_clean.empty()) throw ValueError("train_joint: no synthetic clean images");
  const bool adapting = cfg.adapt.enabled;
  if (adapting && data.real_degraded.empty()) throw ValueError("train_joint: adaptation needs real degraded images");
  if (adapting && cfg.adapt.mode == TargetMode::unpaired && data.clean_pool.empty()) {
    throw ValueError("train_joint: unpaired mode needs a clean pool");
  }
  torch::set_num_threads(cfg.threads);
  torch::manual_seed(cfg.seed);

  TrainResult res;
  const int channels = data.syn_clean.front().channels();
  res.restorer = build_restorer(cfg.variant, channels);
  const auto sched = linear_schedule(cfg.diffusion.steps, cfg.diffusion.beta_lo, cfg.diffusion.beta_hi);
  if (adapting) {
    res.eps_net = build_eps_net(channels, 2 * channels, cfg.diffusion.base_channels);
    res.ema = ema_init(*res.eps_net, cfg.diffusion.ema_decay);
  }
  torch::optim::Adam opt_res(res.restorer->parameters(), torch::optim::AdamOptions(cfg.lr));
  std::optional<torch::optim::Adam> opt_dif;
  if (adapting) opt_dif.emplace(res.eps_net->parameters(), torch::optim::AdamOptions(cfg.lr));

  Rng root(cfg.seed);
  PatchStream syn(data.syn_clean, cfg.patch, cfg.augment, root.split("syn_patches"));
  std::optional<PatchStream> real, pool;
  if (adapting) real.emplace(data.real_degraded, cfg.patch, cfg.augment, root.split("real_patches"));
  if (adapting && cfg.adapt.mode == TargetMode::unpaired) {
    pool.emplace(data.clean_pool, cfg.patch, cfg.augment, root.split("pool_patches"));
  }
  DomainSampler sampler(std::move(syn), std::move(real), std::move(pool), cfg.syn_spec, root.split("syn_degrade"));
  sampler.log_to(hooks.degradation_log);
  Rng diffusion_rng = root.split("diffusion");

  const int steps = cfg.steps_per_epoch > 0
                        ? cfg.steps_per_epoch
                        : static_cast<int>((data.syn_clean.size() + static_cast<std::size_t>(cfg.batch) - 1) /
                                           static_cast<std::size_t>(cfg.batch));

  auto validate = [&](TrainRow& row) {
    row.syn_val_psnr = validation_psnr(res.restorer, data.syn_val, cfg.task);
    row.real_val_psnr = validation_psnr(res.restorer, data.real_val, cfg.task);
  };

  TrainRow initial;
  validate(initial);
  res.log.rows.push_back(initial);
  if (hooks.on_epoch) hooks.on_epoch(initial);

  int bad_streak = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lambda = !adapting || cfg.lambda.force_zero
                              ? 0.0
                              : lambda_schedule({epoch, cfg.epochs, cfg.lambda.gamma, cfg.lambda.beta});
    double sum_res = 0, sum_dif = 0, sum_con = 0, sum_gs = 0, sum_gr = 0;
    int good = 0, probed = 0;
    for (int s = 0; s < steps; ++s) {
      auto batch = sampler.next(cfg.batch);
      JointForward f;
      torch::Tensor total;
      try {
        f = joint_forward(res.restorer, adapting ? &res.eps_net : nullptr, batch, cfg.adapt, lambda, sched,
                          diffusion_rng);
        total = f.objective();
      } catch (const NonFiniteError&) {
        total = torch::Tensor();
      }
      if (!finite_scalar(total)) {
        if (++bad_streak >= cfg.divergence_patience) {
          throw DivergenceError(fmt::format("losses non-finite for {} consecutive iterations (epoch {}, step {})",
                                            bad_streak, epoch, s));
        }
        continue;
      }
      bad_streak = 0;
      opt_res.zero_grad();
      if (opt_dif) opt_dif->zero_grad();
      total.backward();
      opt_res.step();
      if (opt_dif) {
        opt_dif->step();
        ema_update(*res.ema, *res.eps_net);
      }
      ++good;
      sum_res += f.l_res.item<double>();
      if (f.l_dif.defined()) {
        sum_dif += f.l_dif.item<double>();
        sum_con += f.l_con.item<double>();
      }
      if (f.probe_syn && f.probe_syn->fired && f.probe_real && f.probe_real->fired) {
        sum_gs += f.probe_syn->norm;
        sum_gr += f.probe_real->norm;
        ++probed;
      }
    }
    TrainRow row;
    row.epoch = epoch;
    row.lambda_dif = lambda;
    if (good > 0) {
      row.l_res = sum_res / good;
      if (adapting) {
        row.l_dif = sum_dif / good;
        row.l_con = sum_con / good;
      }
    }
    if (probed > 0) {
      row.grad_norm_syn = sum_gs / probed;
      row.grad_norm_real = sum_gr / probed;
    }
    validate(row);
    res.log.rows.push_back(row);
    if (hooks.on_epoch) hooks.on_epoch(row);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

MetricReport evaluate(Restorer& net, const std::vector<EvalPair>& pairs, Task task) {
  if (pairs.empty()) throw ValueError("evaluate: empty evaluation set");
  torch::NoGradGuard guard;
  MetricReport report;
  for (const auto& p : pairs) {
    if (p.target.empty()) throw IoError(IoErrc::missing_file, fmt::format("no ground truth for {}", p.id));
    auto restored = restore(net, p.degraded.batched()).restored.squeeze(0).clamp(0.0, 1.0);
    report.add(score_pair(p.id, Image::from_tensor(restored), p.target, metric_mode(task)));
  }
  report.finalize();
  return report;
}

MetricReport evaluate(const fs::path& checkpoint, const std::vector<EvalPair>& pairs, Task task) {
  auto net = load_restorer(checkpoint);
  return evaluate(net, pairs, task);
}

}  // namespace nadapt
