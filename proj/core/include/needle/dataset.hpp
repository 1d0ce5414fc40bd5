#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "needle/dsp.hpp"
#include "needle/labels.hpp"
#include "needle/mechanics.hpp"
#include "needle/scene_config.hpp"

namespace needle::dataset {

inline constexpr int kFrameLength = 120;
inline constexpr int kDefaultPad = 60;
inline constexpr int kDefaultWindowsPerFrame = 40;
inline constexpr int kChannels = 2;  // x, f

/// Malformed dataset or trace file. `record()` is the 1-based line (CSV) or the
/// entry index (manifest) where parsing stopped.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& file, std::size_t record, const std::string& what);
  std::size_t record() const { return record_; }

 private:
  std::size_t record_;
};

/// Per-sample phase labels from the trace geometry, puncture timestamps and
/// commanded velocity:
///   tip not past any tissue surface                  -> Neutral
///   in contact with a layer not yet punctured        -> PrePuncture
///   rupture sample through puncture_relax_samples    -> Puncture
///   after it (relax_samples + 1 samples)
///   after that, until the next surface is reached    -> that layer's tissue
///   post-puncture dwell (zero velocity, zero force)  -> Neutral
/// Throws std::invalid_argument for an empty trace.
std::vector<ClassLabel> label_trace(const mechanics::InsertionTrace& trace);

struct FrameInfo {
  std::uint32_t id = 0;
  TissueType tissue = TissueType::Liver;
  std::string scene;
  std::uint64_t seed = 0;
  std::vector<double> puncture_timestamps;

  bool operator==(const FrameInfo&) const = default;
};

/// Synchronized samples. A raw frame has exactly kFrameLength samples and no
/// padding; zero_pad() produces the extended form.
struct Frame {
  std::vector<double> t, x, f;
  std::vector<ClassLabel> label;
  int pad = 0;
  FrameInfo info;

  std::size_t size() const { return t.size(); }
  void validate_raw() const;
};

/// Prepends `pad` samples with x = f = 0, Neutral labels and timestamps that
/// continue the uniform step backwards. Throws std::invalid_argument if pad < 0.
Frame zero_pad(const Frame& frame, int pad = kDefaultPad, double sample_rate = 20.0);

/// Single-precision storage; 9 significant digits reproduce a float exactly,
/// which keeps the CSV format bit-exact.
struct WindowSample {
  float t = 0.0f;
  float x = 0.0f;
  float f = 0.0f;
  ClassLabel label = ClassLabel::Neutral;

  bool operator==(const WindowSample&) const = default;
};

struct TrainingExample {
  std::vector<WindowSample> samples;
  ClassLabel label = ClassLabel::Neutral;  // label of the final sample
  std::uint32_t frame_id = 0;
  std::uint32_t start = 0;  // index into the extended frame

  bool operator==(const TrainingExample&) const = default;
};

/// `count` windows of `length` samples whose start index is uniform over
/// [0, pad]. Throws std::invalid_argument if count < 1, the frame carries no
/// padding, or the frame is shorter than length + 1.
std::vector<TrainingExample> random_windows(const Frame& extended, int count, int length,
                                            std::uint64_t seed);

struct Normalization {
  std::array<double, kChannels> mean{0.0, 0.0};
  std::array<double, kChannels> stddev{1.0, 1.0};

  bool operator==(const Normalization&) const = default;
};

struct Dataset {
  double sample_rate = 20.0;
  int window_length = kFrameLength;
  std::vector<FrameInfo> frames;
  std::vector<TrainingExample> examples;
  std::array<std::size_t, kNumClasses> class_counts{};
  std::optional<Normalization> normalization;

  void recount();
  /// Throws std::invalid_argument describing the first broken invariant.
  void validate() const;

  bool operator==(const Dataset&) const = default;
};

/// Per-channel population mean / standard deviation over every sample of the
/// selected examples.
Normalization compute_normalization(const Dataset& data, std::span<const std::size_t> indices);

struct Split {
  std::vector<std::vector<std::size_t>> folds;  // example indices
  std::vector<std::size_t> evaluation;          // example indices
  std::vector<std::vector<std::uint32_t>> fold_frames;
  std::vector<std::uint32_t> evaluation_frames;

  std::vector<std::size_t> training_indices(std::size_t held_out_fold) const;
  std::vector<std::size_t> all_fold_indices() const;
};

/// Frame-level partition: round(eval_fraction * frames) frames go to the
/// evaluation set, the rest are dealt into k near-equal folds.
Split kfold_split(const Dataset& data, int k = 5, double eval_fraction = 0.2,
                  std::uint64_t seed = 0);

struct SynthesisConfig {
  int frames = 1000;  // dealt round-robin over `tissues`
  std::vector<TissueType> tissues{kAllTissues.begin(), kAllTissues.end()};
  double feed_velocity = 2.0;  // mm/s
  double sample_rate = 20.0;   // Hz
  int frame_length = kFrameLength;
  double gap_min = 0.5;  // mm of air before the tissue surface
  double gap_max = 5.5;
  double scale_jitter = 0.08;  // common factor on all force parameters
  double param_jitter = 0.04;  // independent factor on each parameter
  double dwell_probability = 0.2;
  double dwell_earliest = 3.5;  // s, earliest stop time for dwell frames
  /// Approach frames: the needle rests in air for up to approach_idle_max
  /// seconds, then feeds without reaching the tissue inside the frame.
  double approach_probability = 0.15;
  double approach_idle_max = 3.0;
  /// Other frames may also idle before feeding; the idle only fills the slack
  /// so that contact happens no later than a gap_max approach would.
  double lead_in_probability = 0.3;
  std::optional<double> noise_std;
  bool filter_position = true;
  bool filter_force = true;
  dsp::FilterSpec filter;
  std::uint64_t seed = 1;
};

/// Simulated, filtered and labeled raw frames; deterministic in config.seed.
std::vector<Frame> synthesize_frames(const SynthesisConfig& config);

/// Scene and motion used for frame `index` of a synthesis run.
mechanics::SceneFile synthesis_scene(const SynthesisConfig& config, std::uint32_t index);

/// Trace -> raw frame with both channels passed through `filter` from zero state.
Frame frame_from_trace(const mechanics::InsertionTrace& trace, const dsp::BiquadCascade* filter,
                       bool filter_position, bool filter_force, FrameInfo info);

struct AugmentConfig {
  int pad = kDefaultPad;
  int windows_per_frame = kDefaultWindowsPerFrame;
  int window_length = kFrameLength;
  std::uint64_t seed = 2;
};

Dataset augment(std::span<const Frame> frames, const AugmentConfig& config, double sample_rate);

/// Directory layout: manifest.json + windows.csv (header `t,x,f,label`,
/// consecutive window_length-row blocks in example order).
void write_dataset(const std::filesystem::path& dir, const Dataset& data);
/// Throws FormatError on malformed content.
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace needle::dataset
