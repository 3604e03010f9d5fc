#include "nadapt/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <ostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <torch/torch.h>

#include "nadapt/config.hpp"
#include "nadapt/error.hpp"
#include "nadapt/probe.hpp"
#include "nadapt/trainer.hpp"

namespace nadapt {

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool force = false;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config, "JSON run configuration");
  cmd->add_option("--override", a.overrides, "dotted KEY=VALUE overrides")->expected(1, -1);
  cmd->add_option("--out", a.out, "output directory")->required();
  cmd->add_option("--seed", a.seed, "replaces the config seed");
  cmd->add_flag("--force", a.force, "overwrite existing outputs");
}

json resolve(const CommonArgs& a, const json& fallback_layer = json::object()) {
  auto overrides = a.overrides;
  if (a.seed) overrides.push_back(fmt::format("seed={}", *a.seed));
  json layer = a.config.empty() ? fallback_layer : load_config_layer(a.config);
  auto cfg = resolve_config(layer, overrides);
  if (cfg["data"]["root"].get<std::string>().empty()) {
    if (const char* env = std::getenv("NADAPT_DATA_ROOT"); env != nullptr) cfg["data"]["root"] = env;
  }
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw IoError(IoErrc::write_failed, fmt::format("cannot write {}", path.string()));
}

void prepare_out(const fs::path& out, const char* marker, bool force) {
  if (fs::exists(out / marker) && !force) {
    throw ConfigError(fmt::format("{} already holds {}; pass --force to overwrite", out.string(), marker));
  }
  fs::create_directories(out);
}

void write_resolved(const fs::path& out, const json& cfg) { write_text(out / "resolved_config.json", cfg.dump(2) + "\n"); }

int cmd_degrade(const CommonArgs& a, std::ostream& out) {
  const auto cfg = resolve(a);
  const auto rc = RunConfig::from_json(cfg);
  const fs::path root = a.out;
  if (fs::exists(root) && !fs::is_empty(root) && !a.force) {
    throw ConfigError(fmt::format("output {} exists; pass --force to overwrite", root.string()));
  }
  fs::create_directories(root);

  const auto& dg = cfg["degrade"];
  fs::path source = dg["source_dir"].get<std::string>();
  const int procedural = dg["procedural"]["count"].get<int>();
  if (source.empty()) {
    if (procedural <= 0) throw ConfigError("degrade.source_dir is empty and degrade.procedural.count is 0");
    source = root / "source";
    fs::remove_all(source);
    write_procedural_sources(source, procedural, rc.channels, dg["procedural"]["size"].get<int>(),
                             mix_seed(rc.seed ^ 0x50524f43ULL));
  } else if (!fs::is_directory(source)) {
    throw ConfigError(fmt::format("source directory {} does not exist", source.string()));
  } else if (list_pngs(source).empty()) {
    throw ConfigError(fmt::format("source directory {} holds no PNG images", source.string()));
  }

  DatasetPlan plan;
  plan.source_dir = source;
  plan.out_root = root;
  plan.task = to_string(rc.task);
  plan.syn = rc.syn_spec;
  plan.real = rc.real_spec;
  const auto& sp = dg["split"];
  plan.split = {sp["syn"].get<int>(), sp["real"].get<int>(), sp["pool"].get<int>(), sp["eval"].get<int>()};
  plan.seed = rc.seed;
  plan.force = true;
  const auto s = synthesize_dataset(plan);
  write_resolved(root, cfg);
  out << fmt::format("wrote {}: {} syn pairs, {} real, {} pool, {} eval\n", root.string(), s.syn_pairs, s.real, s.pool,
                     s.eval);
  return kExitOk;
}

int cmd_train(const CommonArgs& a, bool log_degradations, std::ostream& out, std::ostream& err) {
  auto cfg = resolve(a);
  if (log_degradations) cfg["degrade"]["log_degradations"] = true;
  const auto rc = RunConfig::from_json(cfg);
  const fs::path dir = a.out;
  prepare_out(dir, "train_log.csv", a.force);
  write_resolved(dir, cfg);
  torch::set_num_threads(rc.threads);

  const auto data = load_training_data(rc);
  std::ofstream deg_log;
  TrainHooks hooks;
  if (rc.log_degradations) {
    deg_log.open(dir / "degradations.jsonl", std::ios::binary);
    hooks.degradation_log = &deg_log;
  }
  hooks.on_epoch = [&err](const TrainRow& r) {
    err << fmt::format("epoch {:3d}  l_res {:.5f}  l_dif {:.4f}  l_con {:.4f}  lambda {:.4f}  syn {:.2f} dB  real {:.2f} dB\n",
                       r.epoch, r.l_res, r.l_dif, r.l_con, r.lambda_dif, r.syn_val_psnr, r.real_val_psnr);
  };
  auto res = train_joint(rc, data, hooks);
  save_restorer(res.restorer, dir / "restorer.ckpt", config_hash(cfg));
  if (rc.diffusion.save_debug && res.ema) {
    auto shadow = build_eps_net(res.eps_net->image_channels(), res.eps_net->cond_channels(), rc.diffusion.base_channels);
    ema_copy_to(*res.ema, *shadow);
    write_archive(archive_module(*shadow, {{"kind", "eps_net_ema"}, {"config_hash", config_hash(cfg)}}),
                  dir / "eps_net_ema.ckpt");
  }
  res.log.write_csv(dir / "train_log.csv");
  const auto& last = res.log.rows.back();
  out << fmt::format("final syn-val {:.3f} dB, real-val {:.3f} dB\n", last.syn_val_psnr, last.real_val_psnr);
  return kExitOk;
}

int cmd_eval(const CommonArgs& a, const std::string& checkpoint_flag, std::ostream& out) {
  auto cfg = resolve(a);
  if (!checkpoint_flag.empty()) cfg["eval"]["checkpoint"] = checkpoint_flag;
  const auto rc = RunConfig::from_json(cfg);
  if (rc.eval_checkpoint.empty()) throw ConfigError("eval needs --checkpoint or eval.checkpoint");
  if (rc.data_root.empty()) throw ConfigError("data.root is not set (and NADAPT_DATA_ROOT is empty)");
  const fs::path dir = a.out;
  prepare_out(dir, "metrics.csv", a.force);
  write_resolved(dir, cfg);
  torch::set_num_threads(rc.threads);
  const auto pairs = load_eval_pairs(rc.data_root, rc.eval_split);
  auto report = evaluate(fs::path(rc.eval_checkpoint), pairs, rc.task);
  report.write_csv(dir / "metrics.csv");
  out << fmt::format("{} images: PSNR {:.3f} dB, SSIM {:.4f}\n", report.per_image.size(), report.psnr_db, report.ssim);
  return kExitOk;
}

int cmd_probe(const CommonArgs& a, std::ostream& out, std::ostream& err) {
  const auto cfg = resolve(a);
  const auto rc = RunConfig::from_json(cfg);
  const fs::path dir = a.out;
  prepare_out(dir, "sweep.csv", a.force);
  write_resolved(dir, cfg);
  torch::set_num_threads(rc.threads);
  const auto& p = rc.probe;
  const auto train = probe_images(p.train_dir, p.train_images, p.image_size, mix_seed(rc.seed ^ 0x545241494eULL));
  const auto test = probe_images(p.test_dir, p.test_images, p.image_size, mix_seed(rc.seed ^ 0x54455354ULL));
  const auto sched = linear_schedule(rc.diffusion.steps, rc.diffusion.beta_lo, rc.diffusion.beta_hi);

  ProbeTrainOptions opts;
  opts.steps = p.steps;
  opts.batch = p.batch;
  opts.lr = p.lr;
  opts.base_channels = p.base_channels;
  opts.patch = p.image_size;
  opts.norm = rc.adapt.norm;
  opts.seed = rc.seed;
  opts.divergence_patience = rc.divergence_patience;
  auto model = train_probe_model(train, sched, opts);
  std::string losses = "step,loss\n";
  for (std::size_t i = 0; i < model.losses.size(); ++i) losses += fmt::format("{},{:.9g}\n", i + 1, model.losses[i]);
  write_text(dir / "probe_loss.csv", losses);
  err << fmt::format("probe model trained for {} steps\n", model.losses.size());

  model.net->eval();
  auto& net = model.net;
  EpsPredictor predict = [&net](const torch::Tensor& noisy, const torch::Tensor& cond, const torch::Tensor& ab) {
    return net->forward(noisy, cond, ab);
  };
  const auto sweep = corruption_sweep(predict, test, p.sigmas, sched, p.draws, rc.seed);
  sweep.write_csv(dir / "sweep.csv");
  if (p.plot) write_sweep_plot(sweep, dir / "sweep.png");
  out << fmt::format("spearman(sigma, mse) = {:.4f} over {} images\n", spearman(sweep.sigma, sweep.mse), sweep.n_images);
  return kExitOk;
}

int cmd_diagnose(const CommonArgs& a, const std::string& log_flag, std::ostream& out) {
  const fs::path dir = a.out;
  // Without --config the run's own resolved config supplies the defaults.
  json fallback = json::object();
  if (a.config.empty() && fs::exists(dir / "resolved_config.json")) {
    std::ifstream f(dir / "resolved_config.json");
    fallback = json::parse(f);
  }
  const auto cfg = resolve(a, fallback);
  const auto rc = RunConfig::from_json(cfg);
  const fs::path log_path = log_flag.empty() ? dir / "train_log.csv" : fs::path(log_flag);
  auto log = TrainLog::read_csv(log_path);
  const auto overall = detect_stage(log, rc.stage);
  label_stages(log, rc.stage);
  fs::create_directories(dir);
  log.write_csv(dir / "train_log.csv");
  write_resolved(dir, cfg);
  out << fmt::format("stage {}\n", to_string(overall));
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Noise-space domain adaptation for image restoration", "nadapt"};
  app.require_subcommand(1);

  CommonArgs degrade_args, train_args, eval_args, probe_args, diag_args;
  bool log_degradations = false;
  std::string checkpoint, log_file;

  auto* degrade = app.add_subcommand("degrade", "synthesize a dataset from clean images");
  add_common(degrade, degrade_args);
  auto* train = app.add_subcommand("train", "train the restorer (and diffusion network)");
  add_common(train, train_args);
  train->add_flag("--log-degradations", log_degradations, "write per-patch degradation records");
  auto* eval = app.add_subcommand("eval", "score a checkpoint on held-out pairs");
  add_common(eval, eval_args);
  eval->add_option("--checkpoint", checkpoint, "restorer checkpoint");
  auto* probe = app.add_subcommand("probe", "condition-corruption sweep");
  add_common(probe, probe_args);
  auto* diagnose = app.add_subcommand("diagnose", "label training stages in a TrainLog");
  add_common(diagnose, diag_args);
  diagnose->add_option("--log", log_file, "TrainLog CSV (default: OUT/train_log.csv)");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (degrade->parsed()) return cmd_degrade(degrade_args, out);
    if (train->parsed()) return cmd_train(train_args, log_degradations, out, err);
    if (eval->parsed()) return cmd_eval(eval_args, checkpoint, out);
    if (probe->parsed()) return cmd_probe(probe_args, out, err);
    if (diagnose->parsed()) return cmd_diagnose(diag_args, log_file, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DivergenceError& e) {
    err << "diverged: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const json::exception& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace nadapt
