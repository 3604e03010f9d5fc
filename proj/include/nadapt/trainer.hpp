#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <torch/types.h>

#include "nadapt/adapt.hpp"
#include "nadapt/config.hpp"
#include "nadapt/diffusion.hpp"
#include "nadapt/image.hpp"
#include "nadapt/restorer.hpp"

namespace nadapt {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// One degraded image with its ground truth.
struct EvalPair {
  std::string id;
  Image degraded;
  Image target;
};

struct TrainingData {
  std::vector<Image> syn_clean;
  std::vector<Image> real_degraded;
  std::vector<Image> clean_pool;  // needed only in unpaired mode
  std::vector<EvalPair> syn_val;
  std::vector<EvalPair> real_val;
};

/// Pairs `degraded_dir/NAME.png` with `target_dir/NAME.png`. Throws
/// IoError(missing_file) when a ground-truth file is absent.
std::vector<EvalPair> load_pairs(const std::filesystem::path& degraded_dir, const std::filesystem::path& target_dir);

/// Ground-truth pairs of a dataset root: split "real" reads real_eval and
/// real_gt_eval, split "syn" reads syn_degraded and syn_clean.
std::vector<EvalPair> load_eval_pairs(const std::filesystem::path& root, const std::string& split);

/// Fixed synthetic validation set: the first `count` clean images, each
/// degraded once with a seed-derived record.
std::vector<EvalPair> make_syn_validation(const std::vector<Image>& clean, const DegradeSpec& spec, int count,
                                          std::uint64_t seed);

/// Reads every role the run needs from cfg.data_root.
TrainingData load_training_data(const RunConfig& cfg);

// ---------------------------------------------------------------------------
// Logging
// ---------------------------------------------------------------------------

struct TrainRow {
  int epoch = 0;
  double l_res = kNaN;
  double l_dif = kNaN;
  double l_con = kNaN;
  double lambda_dif = 0.0;
  double syn_val_psnr = kNaN;
  double real_val_psnr = kNaN;
  double grad_norm_syn = kNaN;   // mean norm of the adaptation gradient at the synthetic residual
  double grad_norm_real = kNaN;  // same at the real residual
  std::string stage;             // filled by diagnose
};

/// Row 0 is the validation of the untrained restorer; rows 1..N follow the
/// training epochs.
struct TrainLog {
  std::vector<TrainRow> rows;

  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
  static TrainLog read_csv(const std::filesystem::path& path);
};

// ---------------------------------------------------------------------------
// Stage diagnostics
// ---------------------------------------------------------------------------

enum class Stage { I, II, III };
std::string to_string(Stage s);

/// Label of row `i` given the rows up to it: III when the real-val PSNR fell
/// in each of the last k epochs while syn-val rose over the same window and
/// the real/syn gradient ratio at row i is below the threshold; II when the
/// syn-real gap exceeds gap_db; I otherwise.
Stage stage_at(const TrainLog& log, std::size_t i, const StageRules& rules = {});

/// III if any row reaches Stage III, else the label of the last row. Needs at
/// least three training epochs; throws ValueError otherwise.
Stage detect_stage(const TrainLog& log, const StageRules& rules = {});

/// Per-row labels written into TrainRow::stage.
void label_stages(TrainLog& log, const StageRules& rules = {});

// ---------------------------------------------------------------------------
// Joint step
// ---------------------------------------------------------------------------

struct JointForward {
  torch::Tensor l_res;
  torch::Tensor l_dif;  // undefined when adaptation is off
  torch::Tensor l_con;  // zero when residual swapping is off or targets are unpaired
  std::shared_ptr<GradProbe> probe_syn;
  std::shared_ptr<GradProbe> probe_real;

  /// L_Res + (L_Dif + L_Con) / 2. The residual taps scale the restorer's
  /// share of the second term by lambda; the diffusion network sees it
  /// unscaled and never sees L_Res.
  torch::Tensor objective() const;
};

/// Forward pass of one iteration. `eps_net` may be null for restorer-only
/// training.
JointForward joint_forward(Restorer& restorer, EpsNet* eps_net, const DomainBatch& batch, const AdaptConfig& adapt,
                           double lambda_dif, const NoiseSchedule& sched, Rng& rng);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainResult {
  Restorer restorer{nullptr};
  EpsNet eps_net{nullptr};
  std::optional<EmaState> ema;
  TrainLog log;
};

struct TrainHooks {
  std::function<void(const TrainRow&)> on_epoch;
  /// Receives one JSON line per synthetic patch when set.
  std::ostream* degradation_log = nullptr;
};

/// Mean PSNR of the clipped restoration over a pair set (luma for derain).
double validation_psnr(Restorer& net, const std::vector<EvalPair>& pairs, Task task);

/// Trains the restorer and, when adaptation is enabled, the diffusion network.
/// Throws DivergenceError after cfg.divergence_patience consecutive
/// non-finite iterations.
TrainResult train_joint(const RunConfig& cfg, const TrainingData& data, const TrainHooks& hooks = {});

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

MetricMode metric_mode(Task task);

/// Per-image and aggregate PSNR / SSIM of the clipped restorations.
MetricReport evaluate(Restorer& net, const std::vector<EvalPair>& pairs, Task task);
MetricReport evaluate(const std::filesystem::path& checkpoint, const std::vector<EvalPair>& pairs, Task task);

}  // namespace nadapt
