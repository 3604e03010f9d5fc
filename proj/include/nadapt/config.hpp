#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nadapt/adapt.hpp"
#include "nadapt/degrade.hpp"
#include "nadapt/restorer.hpp"

namespace nadapt {

using nlohmann::json;

/// Every recognized key with its default value. The degradation sections
/// hold the defaults of `task`.
json default_config(const std::string& task = "denoise");

/// Reads a JSON config layer. A top-level "base" entry names another config
/// file (relative to this one) that is loaded first and overlaid.
json load_config_layer(const std::filesystem::path& path);

/// Defaults for the selected task, then `layer`, then `overrides`.
json resolve_config(const json& layer, const std::vector<std::string>& overrides = {});

/// resolve_config(load_config_layer(path), overrides).
json load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Recursively overlays `patch` onto `target`.
void merge_into(json& target, const json& patch);

/// Rejects keys that do not exist in default_config().
void check_known_keys(const json& cfg);

/// Applies `key.path=value` overrides. Values parse as JSON when possible and
/// fall back to strings. Repeating a key with a different value throws
/// ConfigError; repeating it with the same value is accepted.
void apply_overrides(json& cfg, const std::vector<std::string>& overrides);

/// FNV-1a of the canonical dump, as 16 hex digits.
std::string config_hash(const json& cfg);

enum class Task { denoise, derain, deblur };
std::string to_string(Task t);
Task task_from_string(const std::string& s);

struct StageRules {
  double gap_db = 3.0;     // syn-val minus real-val PSNR gap that marks Stage II
  int decline_epochs = 3;  // consecutive real-val declines for Stage III
  double grad_ratio = 0.1; // real/syn condition-gradient ratio for Stage III
};

struct AdaptConfig {
  bool enabled = true;
  TargetMode mode = TargetMode::paired;
  bool channel_shuffle = true;
  bool residual_swap = true;
  bool detach_conditions = false;
  double delta = 0.05;
  LossNorm norm = LossNorm::l2;
  Range<int> t_range{1, 1000};
};

struct LambdaConfig {
  double gamma = 5.0;
  double beta = 0.2;
  bool force_zero = false;
};

struct DiffusionConfig {
  int steps = 1000;
  double beta_lo = 1e-6;
  double beta_hi = 1e-2;
  int base_channels = 64;
  double ema_decay = 0.9999;
  bool save_debug = false;
};

struct ProbeConfig {
  std::string train_dir;
  std::string test_dir;
  int train_images = 800;
  int test_images = 200;
  int image_size = 32;
  int steps = 3000;
  int batch = 16;
  double lr = 2e-4;
  int base_channels = 16;
  std::vector<double> sigmas{0, 10, 20, 30, 40, 50, 60, 70, 80};
  int draws = 10;
  bool plot = true;
};

/// Typed view of a resolved configuration document.
struct RunConfig {
  Task task = Task::denoise;
  std::uint64_t seed = 0;
  int threads = 1;

  std::string data_root;
  int patch = 64;
  bool augment = true;
  int channels = 3;

  DegradeSpec syn_spec;
  DegradeSpec real_spec;
  bool log_degradations = false;

  UnetVariant variant = UnetVariant::T;
  DiffusionConfig diffusion;
  AdaptConfig adapt;
  LambdaConfig lambda;

  int epochs = 60;
  int batch = 8;
  double lr = 5e-5;
  int steps_per_epoch = 0;  // 0: one pass over the synthetic images
  int val_count = 16;
  int divergence_patience = 10;

  StageRules stage;
  std::string eval_checkpoint;
  std::string eval_split = "real";
  ProbeConfig probe;

  /// Validates and converts; throws ConfigError.
  static RunConfig from_json(const json& cfg);
};

}  // namespace nadapt
