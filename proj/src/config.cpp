#include "nadapt/config.hpp"

#include <fstream>
#include <map>

#include <fmt/format.h>

#include "nadapt/error.hpp"

namespace nadapt {

namespace fs = std::filesystem;

json default_config(const std::string& task) {
  const DegradeSpec syn = default_syn_spec(task);
  const DegradeSpec real = default_real_spec(task);
  return json{
      {"task", task},
      {"seed", 0},
      {"threads", 1},
      {"data", {{"root", ""}, {"patch", 64}, {"augment", true}, {"channels", 3}}},
      {"degrade",
       {{"source_dir", ""},
        {"procedural", {{"count", 0}, {"size", 96}}},
        {"split", {{"syn", -1}, {"real", 0}, {"pool", 0}, {"eval", 0}}},
        {"syn", syn},
        {"real", real},
        {"log_degradations", false}}},
      {"restorer", {{"variant", "T"}}},
      {"diffusion",
       {{"steps", 1000},
        {"beta_lo", 1e-6},
        {"beta_hi", 1e-2},
        {"base_channels", 64},
        {"ema_decay", 0.9999},
        {"save_debug", false}}},
      {"adapt",
       {{"enabled", true},
        {"mode", "paired"},
        {"channel_shuffle", true},
        {"residual_swap", true},
        {"detach_conditions", false},
        {"delta", 0.05},
        {"norm", "l2"},
        {"t_range", {1, 1000}}}},
      {"lambda", {{"gamma", 5.0}, {"beta", 0.2}, {"force_zero", false}}},
      {"train",
       {{"epochs", 60},
        {"batch", 8},
        {"lr", 5e-5},
        {"steps_per_epoch", 0},
        {"val_count", 16},
        {"divergence_patience", 10}}},
      {"stage", {{"gap_db", 3.0}, {"decline_epochs", 3}, {"grad_ratio", 0.1}}},
      {"eval", {{"checkpoint", ""}, {"split", "real"}}},
      {"probe",
       {{"train_dir", ""},
        {"test_dir", ""},
        {"train_images", 800},
        {"test_images", 200},
        {"image_size", 32},
        {"steps", 3000},
        {"batch", 16},
        {"lr", 2e-4},
        {"base_channels", 16},
        {"sigmas", {0, 10, 20, 30, 40, 50, 60, 70, 80}},
        {"draws", 10},
        {"plot", true}}},
  };
}

void merge_into(json& target, const json& patch) {
  if (!patch.is_object() || !target.is_object()) {
    target = patch;
    return;
  }
  for (const auto& [k, v] : patch.items()) {
    if (v.is_object() && target.contains(k) && target[k].is_object()) {
      merge_into(target[k], v);
    } else {
      target[k] = v;
    }
  }
}

namespace {

void check_keys(const json& cfg, const json& schema, const std::string& prefix) {
  for (const auto& [k, v] : cfg.items()) {
    const auto path = prefix.empty() ? k : prefix + "." + k;
    if (!schema.contains(k)) throw ConfigError(fmt::format("unknown config key '{}'", path));
    if (v.is_object() && schema[k].is_object()) check_keys(v, schema[k], path);
  }
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot read config {}", path.string()));
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

json load_layer(const fs::path& path, int depth) {
  if (depth > 8) throw ConfigError("config 'base' chain is too deep");
  auto j = read_json(path);
  if (!j.is_object()) throw ConfigError(fmt::format("{}: top level must be an object", path.string()));
  if (!j.contains("base")) return j;
  const auto base_path = path.parent_path() / j.at("base").get<std::string>();
  auto merged = load_layer(base_path, depth + 1);
  j.erase("base");
  merge_into(merged, j);
  return merged;
}

}  // namespace

void check_known_keys(const json& cfg) { check_keys(cfg, default_config(), ""); }

json load_config_layer(const fs::path& path) { return load_layer(path, 0); }

json resolve_config(const json& layer_in, const std::vector<std::string>& overrides) {
  const json layer = layer_in.is_null() ? json::object() : layer_in;
  if (!layer.is_object()) throw ConfigError("config layer must be a JSON object");
  check_known_keys(layer);
  // First pass only settles the task, whose defaults seed the second pass.
  auto probe = default_config();
  merge_into(probe, layer);
  apply_overrides(probe, overrides);
  if (!probe["task"].is_string()) throw ConfigError("task must be a string");
  const auto task = to_string(task_from_string(probe["task"].get<std::string>()));
  auto cfg = default_config(task);
  merge_into(cfg, layer);
  apply_overrides(cfg, overrides);
  return cfg;
}

json load_config(const fs::path& path, const std::vector<std::string>& overrides) {
  return resolve_config(load_config_layer(path), overrides);
}

void apply_overrides(json& cfg, const std::vector<std::string>& overrides) {
  std::map<std::string, std::string> seen;
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError(fmt::format("override '{}' is not KEY=VALUE", kv));
    const auto key = kv.substr(0, eq);
    const auto raw = kv.substr(eq + 1);
    if (auto it = seen.find(key); it != seen.end()) {
      if (it->second != raw) throw ConfigError(fmt::format("conflicting overrides for '{}'", key));
      continue;
    }
    seen.emplace(key, raw);

    json value;
    try {
      value = json::parse(raw);
    } catch (const json::parse_error&) {
      value = raw;
    }
    json* node = &cfg;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const auto part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (!node->is_object() || !node->contains(part)) throw ConfigError(fmt::format("unknown config key '{}'", key));
      node = &(*node)[part];
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    *node = value;
  }
}

std::string config_hash(const json& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : cfg.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

std::string to_string(Task t) {
  switch (t) {
    case Task::denoise: return "denoise";
    case Task::derain: return "derain";
    case Task::deblur: return "deblur";
  }
  return "denoise";
}

Task task_from_string(const std::string& s) {
  if (s == "denoise") return Task::denoise;
  if (s == "derain") return Task::derain;
  if (s == "deblur") return Task::deblur;
  throw ConfigError(fmt::format("unknown task '{}' (expected denoise, derain or deblur)", s));
}

RunConfig RunConfig::from_json(const json& cfg) {
  try {
    check_known_keys(cfg);
    json full = default_config(cfg.value("task", std::string("denoise")));
    merge_into(full, cfg);
    RunConfig r;
    r.task = task_from_string(full["task"].get<std::string>());
    r.seed = full["seed"].get<std::uint64_t>();
    r.threads = full["threads"].get<int>();

    const auto& d = full["data"];
    r.data_root = d["root"].get<std::string>();
    r.patch = d["patch"].get<int>();
    r.augment = d["augment"].get<bool>();
    r.channels = d["channels"].get<int>();

    const auto& g = full["degrade"];
    r.syn_spec = default_syn_spec(to_string(r.task));
    r.real_spec = default_real_spec(to_string(r.task));
    nadapt::from_json(g["syn"], r.syn_spec);
    nadapt::from_json(g["real"], r.real_spec);
    r.log_degradations = g["log_degradations"].get<bool>();

    r.variant = variant_from_string(full["restorer"]["variant"].get<std::string>());

    const auto& df = full["diffusion"];
    r.diffusion.steps = df["steps"].get<int>();
    r.diffusion.beta_lo = df["beta_lo"].get<double>();
    r.diffusion.beta_hi = df["beta_hi"].get<double>();
    r.diffusion.base_channels = df["base_channels"].get<int>();
    r.diffusion.ema_decay = df["ema_decay"].get<double>();
    r.diffusion.save_debug = df["save_debug"].get<bool>();

    const auto& a = full["adapt"];
    r.adapt.enabled = a["enabled"].get<bool>();
    r.adapt.mode = target_mode_from_string(a["mode"].get<std::string>());
    r.adapt.channel_shuffle = a["channel_shuffle"].get<bool>();
    r.adapt.residual_swap = a["residual_swap"].get<bool>();
    r.adapt.detach_conditions = a["detach_conditions"].get<bool>();
    r.adapt.delta = a["delta"].get<double>();
    r.adapt.norm = loss_norm_from_string(a["norm"].get<std::string>());
    const auto& tr = a["t_range"];
    if (!tr.is_array() || tr.size() != 2) throw ConfigError("adapt.t_range must be [lo, hi]");
    r.adapt.t_range = {tr[0].get<int>(), tr[1].get<int>()};

    const auto& l = full["lambda"];
    r.lambda.gamma = l["gamma"].get<double>();
    r.lambda.beta = l["beta"].get<double>();
    r.lambda.force_zero = l["force_zero"].get<bool>();

    const auto& t = full["train"];
    r.epochs = t["epochs"].get<int>();
    r.batch = t["batch"].get<int>();
    r.lr = t["lr"].get<double>();
    r.steps_per_epoch = t["steps_per_epoch"].get<int>();
    r.val_count = t["val_count"].get<int>();
    r.divergence_patience = t["divergence_patience"].get<int>();

    const auto& s = full["stage"];
    r.stage.gap_db = s["gap_db"].get<double>();
    r.stage.decline_epochs = s["decline_epochs"].get<int>();
    r.stage.grad_ratio = s["grad_ratio"].get<double>();

    r.eval_checkpoint = full["eval"]["checkpoint"].get<std::string>();
    r.eval_split = full["eval"]["split"].get<std::string>();

    const auto& p = full["probe"];
    r.probe.train_dir = p["train_dir"].get<std::string>();
    r.probe.test_dir = p["test_dir"].get<std::string>();
    r.probe.train_images = p["train_images"].get<int>();
    r.probe.test_images = p["test_images"].get<int>();
    r.probe.image_size = p["image_size"].get<int>();
    r.probe.steps = p["steps"].get<int>();
    r.probe.batch = p["batch"].get<int>();
    r.probe.lr = p["lr"].get<double>();
    r.probe.base_channels = p["base_channels"].get<int>();
    r.probe.sigmas = p["sigmas"].get<std::vector<double>>();
    r.probe.draws = p["draws"].get<int>();
    r.probe.plot = p["plot"].get<bool>();

    // Invariants.
    if (r.channels != 1 && r.channels != 3) throw ConfigError("data.channels must be 1 or 3");
    if (r.patch < 8 || r.patch % UNetImpl::kSpatialMultiple != 0) {
      throw ConfigError(fmt::format("data.patch must be a positive multiple of {}", UNetImpl::kSpatialMultiple));
    }
    if (r.epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (r.batch < 1) throw ConfigError("train.batch must be >= 1");
    if (!(r.lr > 0)) throw ConfigError("train.lr must be positive");
    if (r.threads < 1) throw ConfigError("threads must be >= 1");
    if (r.adapt.t_range.lo < 1 || r.adapt.t_range.hi > r.diffusion.steps || r.adapt.t_range.lo > r.adapt.t_range.hi) {
      throw ConfigError(fmt::format("adapt.t_range must lie within [1, {}]", r.diffusion.steps));
    }
    if (r.adapt.delta < 0) throw ConfigError("adapt.delta must be non-negative");
    if (r.lambda.beta < 0 || r.lambda.gamma < 0) throw ConfigError("lambda.gamma and lambda.beta must be >= 0");
    if (r.diffusion.base_channels < 2) throw ConfigError("diffusion.base_channels must be >= 2");
    if (r.eval_split != "real" && r.eval_split != "syn") throw ConfigError("eval.split must be 'real' or 'syn'");
    if (r.divergence_patience < 1) throw ConfigError("train.divergence_patience must be >= 1");
    for (double s : r.probe.sigmas) {
      if (s < 0 || s > 80) throw ConfigError("probe.sigmas must lie in [0, 80]");
    }
    for (std::size_t i = 1; i < r.probe.sigmas.size(); ++i) {
      if (!(r.probe.sigmas[i] > r.probe.sigmas[i - 1])) throw ConfigError("probe.sigmas must be strictly increasing");
    }
    return r;
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("invalid config value: {}", e.what()));
  } catch (const ValueError& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace nadapt
