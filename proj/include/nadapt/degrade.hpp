#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>
#include <torch/types.h>

#include "nadapt/image.hpp"
#include "nadapt/rng.hpp"

namespace nadapt {

enum class DegradeKind { awgn, motion_blur, rain, poisson_gaussian };

std::string to_string(DegradeKind k);
DegradeKind degrade_kind_from_string(const std::string& s);

template <typename T>
struct Range {
  T lo{};
  T hi{};
};

struct RainParams {
  Range<int> count{10, 30};
  Range<double> length{6.0, 16.0};      // pixels
  Range<double> angle{-20.0, 20.0};     // degrees from vertical
  double opacity = 0.6;                 // per-streak opacity drawn from [opacity/2, opacity]
};

/// Heteroscedastic Gaussian approximation of Poisson-Gaussian sensor noise:
/// variance = shot * x + read^2, optionally spatially correlated by a Gaussian
/// filter of width `correlation` (pixels) followed by renormalization.
struct SensorNoiseParams {
  double shot = 0.01;
  double read = 4.0 / 255.0;
  double correlation = 0.0;
};

/// One family of synthetic degradations plus its sampling ranges.
struct DegradeSpec {
  DegradeKind kind = DegradeKind::awgn;
  Range<double> sigma{0.0, 75.0};       // 8-bit units
  Range<int> kernel_len{3, 15};
  RainParams rain{};
  SensorNoiseParams sensor{};
  bool clip = false;                    // clip AWGN output to [0, 1]
  bool post_sensor = false;             // add sensor noise after the main degradation
  std::uint64_t seed = 0;

  /// Throws ValueError on inverted or out-of-domain ranges.
  void validate() const;
};

void to_json(nlohmann::json& j, const DegradeSpec& s);
void from_json(const nlohmann::json& j, DegradeSpec& s);

// ---------------------------------------------------------------------------
// Operators
// ---------------------------------------------------------------------------

/// clean + N(0, (sigma/255)^2). Not clipped unless `clip` is set.
Image awgn(const Image& clean, double sigma, Rng& rng, bool clip = false);

/// Normalized linear motion kernel of odd size, bilinearly splatted.
torch::Tensor motion_kernel(int kernel_len, double angle_deg);
/// Convolution with motion_kernel under reflect padding.
Image motion_blur(const Image& clean, int kernel_len, double angle_deg);

/// Additive white streaks, then clipped to [0, 1].
Image rain_streaks(const Image& clean, const RainParams& params, Rng& rng);

Image sensor_noise(const Image& clean, const SensorNoiseParams& params, Rng& rng);

struct DeadLeavesParams {
  int disks = 400;
  double min_radius = 1.5;
  double max_radius = 24.0;
};

/// Procedural clean image from the dead-leaves model (occluding disks with a
/// r^-3 radius law), with a mild texture and 2x supersampling.
Image dead_leaves(int channels, int height, int width, Rng& rng, const DeadLeavesParams& params = {});

// ---------------------------------------------------------------------------
// Per-patch degradation records
// ---------------------------------------------------------------------------

/// Everything needed to regenerate one degraded patch bit-exactly.
struct DegradationRecord {
  DegradeKind kind = DegradeKind::awgn;
  double sigma = 0.0;
  int kernel_len = 1;
  double angle = 0.0;
  std::uint64_t noise_seed = 0;
};

void to_json(nlohmann::json& j, const DegradationRecord& r);

DegradationRecord sample_degradation(const DegradeSpec& spec, Rng& rng);
Image apply_degradation(const DegradeSpec& spec, const DegradationRecord& rec, const Image& clean);

// ---------------------------------------------------------------------------
// Patch streams
// ---------------------------------------------------------------------------

struct Patch {
  torch::Tensor data;  // (C, P, P)
  int source = 0;
  int top = 0;
  int left = 0;
  int rotation = 0;    // quarter turns, counter-clockwise
  bool flip = false;   // horizontal flip, applied after rotation
};

/// Crop (top, left) of size p, then rotate and flip.
torch::Tensor extract_patch(const Image& img, int top, int left, int p, int rotation, bool flip);

/// Endless stream of random square crops over an in-memory image set.
/// With augmentation on, each patch gets a uniform quarter-turn rotation
/// (two independent fair coins for 90 and 180 degrees) and a fair-coin flip.
class PatchStream {
 public:
  PatchStream(std::vector<Image> images, int patch, bool augment, Rng rng);

  /// Loads every PNG in `dir`. Images smaller than the patch are skipped
  /// with a warning; an empty result throws IoError(empty_directory).
  static PatchStream from_directory(const std::filesystem::path& dir, int patch, bool augment, Rng rng);

  Patch next();
  /// Stacks `n` patches into an (n, C, P, P) batch.
  torch::Tensor next_batch(int n, std::vector<Patch>* info = nullptr);

  std::size_t size() const noexcept { return images_.size(); }
  int patch() const noexcept { return patch_; }
  int channels() const { return images_.front().channels(); }
  const std::vector<Image>& images() const noexcept { return images_; }

 private:
  std::vector<Image> images_;
  int patch_;
  bool augment_;
  Rng rng_;
};

/// make_patch_stream: the directory-backed constructor under its op name.
inline PatchStream make_patch_stream(const std::filesystem::path& dir, int patch, bool augment, Rng rng) {
  return PatchStream::from_directory(dir, patch, augment, std::move(rng));
}

struct PatchRecord {
  Patch patch;               // geometry of the synthetic crop (data omitted in logs)
  DegradationRecord degradation;
};

void to_json(nlohmann::json& j, const PatchRecord& r);

/// One training step's inputs.
struct DomainBatch {
  torch::Tensor syn_degraded;             // x^s
  torch::Tensor syn_clean;                // y^s
  torch::Tensor real_degraded;            // x^r
  std::optional<torch::Tensor> clean_pool;  // y^c
  std::vector<PatchRecord> records;       // one per synthetic sample
};

/// Draws aligned synthetic pairs (degrading clean crops on the fly with
/// per-patch parameters) together with real and optional clean-pool crops.
class DomainSampler {
 public:
  DomainSampler(PatchStream syn, std::optional<PatchStream> real, std::optional<PatchStream> pool,
                DegradeSpec syn_spec, Rng rng);

  DomainBatch next(int batch);
  /// When set, every synthetic patch record is appended as one JSON line.
  void log_to(std::ostream* out) { log_ = out; }

  const DegradeSpec& spec() const noexcept { return spec_; }
  const PatchStream& syn_stream() const noexcept { return syn_; }

 private:
  PatchStream syn_;
  std::optional<PatchStream> real_;
  std::optional<PatchStream> pool_;
  DegradeSpec spec_;
  Rng rng_;
  std::ostream* log_ = nullptr;
};

// ---------------------------------------------------------------------------
// On-disk dataset synthesis
// ---------------------------------------------------------------------------

/// Sizes of the disjoint source partitions. Negative syn count means "all
/// remaining images". When every count is zero the whole source is used for
/// each role (shared content).
struct DatasetSplit {
  int syn = -1;
  int real = 0;
  int pool = 0;
  int eval = 0;
};

struct DatasetPlan {
  std::filesystem::path source_dir;
  std::filesystem::path out_root;
  std::string task = "denoise";
  DegradeSpec syn;         // used for the fixed syn_degraded validation copy
  DegradeSpec real;        // applied to real_degraded and real_eval
  DatasetSplit split{};
  std::uint64_t seed = 0;
  bool force = false;
};

struct DatasetSummary {
  int syn_pairs = 0;
  int real = 0;
  int pool = 0;
  int eval = 0;
};

/// Writes root/{syn_clean,syn_degraded,real_degraded,clean_pool,real_eval,real_gt_eval}/NNN.png.
/// Throws IoError(empty_directory) for an empty source and ConfigError when
/// the output exists and `force` is false.
DatasetSummary synthesize_dataset(const DatasetPlan& plan);

/// Writes `count` dead-leaves images as NNN.png.
void write_procedural_sources(const std::filesystem::path& dir, int count, int channels, int size,
                              std::uint64_t seed);

/// Default "real" degradation for a task, disjoint from the synthetic family.
DegradeSpec default_real_spec(const std::string& task);
/// Default synthetic degradation for a task.
DegradeSpec default_syn_spec(const std::string& task);

}  // namespace nadapt
