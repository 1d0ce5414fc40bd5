#include "needle/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_map>
#include <unordered_set>

#include "needle/random.hpp"

namespace needle::dataset {

FormatError::FormatError(const std::string& file, std::size_t record, const std::string& what)
    : std::runtime_error(file + ":" + std::to_string(record) + ": " + what), record_(record) {}

std::vector<ClassLabel> label_trace(const mechanics::InsertionTrace& trace) {
  const std::size_t n = trace.size();
  if (n == 0) throw std::invalid_argument("label_trace: empty trace, nothing to label");
  if (trace.x.size() != n || trace.velocity.size() != n) {
    throw std::invalid_argument("label_trace: trace arrays differ in length");
  }

  struct TissueLayer {
    mechanics::LayerSpan span;
    std::optional<std::size_t> puncture_sample;
  };
  std::vector<TissueLayer> tissues;
  for (const auto& span : trace.layers) {
    if (span.tissue) tissues.push_back({span, std::nullopt});
  }
  for (std::size_t j = 0; j < trace.puncture_timestamps.size() && j < tissues.size(); ++j) {
    tissues[j].puncture_sample =
        static_cast<std::size_t>(std::llround(trace.puncture_timestamps[j] * trace.sample_rate));
  }

  // Penetration below a nanometre is not contact. Keeps labels stable when x
  // sits on a surface and is reloaded from a 9-digit CSV.
  constexpr double contact_tolerance = 1e-6;  // mm
  std::vector<ClassLabel> labels(n, ClassLabel::Neutral);
  for (std::size_t i = 0; i < n; ++i) {
    const TissueLayer* current = nullptr;
    for (const auto& layer : tissues) {
      if (trace.x[i] > layer.span.surface + contact_tolerance) current = &layer;
    }
    if (current == nullptr) continue;
    if (!current->puncture_sample || i < *current->puncture_sample) {
      labels[i] = ClassLabel::PrePuncture;
      continue;
    }
    const std::size_t since = i - *current->puncture_sample;
    if (since <= static_cast<std::size_t>(current->span.relax_samples)) {
      labels[i] = ClassLabel::Puncture;
    } else if (trace.velocity[i] != 0.0) {
      labels[i] = tissue_label(*current->span.tissue);
    }
  }
  return labels;
}

void Frame::validate_raw() const {
  const std::size_t n = t.size();
  if (n != static_cast<std::size_t>(kFrameLength)) {
    throw std::invalid_argument("raw frame " + std::to_string(info.id) + " has " +
                                std::to_string(n) + " samples, expected " +
                                std::to_string(kFrameLength));
  }
  if (x.size() != n || f.size() != n || label.size() != n) {
    throw std::invalid_argument("raw frame " + std::to_string(info.id) + ": channel lengths differ");
  }
  if (pad != 0) throw std::invalid_argument("raw frame must not carry padding");
}

Frame zero_pad(const Frame& frame, int pad, double sample_rate) {
  if (pad < 0) throw std::invalid_argument("zero_pad: negative pad " + std::to_string(pad));
  if (pad == 0) return frame;
  const auto p = static_cast<std::size_t>(pad);
  const double dt = 1.0 / sample_rate;
  const double t0 = frame.t.empty() ? 0.0 : frame.t.front();

  Frame out;
  out.info = frame.info;
  out.pad = frame.pad + pad;
  out.t.resize(p);
  for (std::size_t i = 0; i < p; ++i) {
    out.t[i] = t0 - static_cast<double>(p - i) * dt;
  }
  out.t.insert(out.t.end(), frame.t.begin(), frame.t.end());
  out.x.assign(p, 0.0);
  out.x.insert(out.x.end(), frame.x.begin(), frame.x.end());
  out.f.assign(p, 0.0);
  out.f.insert(out.f.end(), frame.f.begin(), frame.f.end());
  out.label.assign(p, ClassLabel::Neutral);
  out.label.insert(out.label.end(), frame.label.begin(), frame.label.end());
  return out;
}

std::vector<TrainingExample> random_windows(const Frame& extended, int count, int length,
                                            std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("random_windows: count must be >= 1");
  if (length < 1) throw std::invalid_argument("random_windows: length must be >= 1");
  if (extended.pad < 1) throw std::invalid_argument("random_windows: frame has no padded region");
  const auto n = static_cast<long>(extended.size());
  if (n < length + 1) {
    throw std::invalid_argument("random_windows: extended frame of " + std::to_string(n) +
                                " samples is shorter than window length + 1");
  }
  const long last_start = std::min<long>(extended.pad, n - length);

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<long> start_dist(0, last_start);
  std::vector<TrainingExample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int w = 0; w < count; ++w) {
    const auto start = static_cast<std::size_t>(start_dist(rng));
    TrainingExample ex;
    ex.frame_id = extended.info.id;
    ex.start = static_cast<std::uint32_t>(start);
    ex.samples.resize(static_cast<std::size_t>(length));
    for (std::size_t k = 0; k < ex.samples.size(); ++k) {
      const std::size_t i = start + k;
      ex.samples[k] = WindowSample{static_cast<float>(extended.t[i]),
                                   static_cast<float>(extended.x[i]),
                                   static_cast<float>(extended.f[i]), extended.label[i]};
    }
    ex.label = ex.samples.back().label;
    out.push_back(std::move(ex));
  }
  return out;
}

void Dataset::recount() {
  class_counts.fill(0);
  for (const auto& ex : examples) ++class_counts[static_cast<std::size_t>(to_index(ex.label))];
}

void Dataset::validate() const {
  std::unordered_set<std::uint32_t> frame_ids;
  for (const auto& info : frames) frame_ids.insert(info.id);
  std::array<std::size_t, kNumClasses> counts{};
  for (std::size_t e = 0; e < examples.size(); ++e) {
    const auto& ex = examples[e];
    const std::string where = "example " + std::to_string(e);
    if (ex.samples.size() != static_cast<std::size_t>(window_length)) {
      throw std::invalid_argument(where + " has " + std::to_string(ex.samples.size()) +
                                  " samples, expected " + std::to_string(window_length));
    }
    if (ex.label != ex.samples.back().label) {
      throw std::invalid_argument(where + ": label differs from final sample label");
    }
    if (!frames.empty() && !frame_ids.contains(ex.frame_id)) {
      throw std::invalid_argument(where + " references unknown frame " +
                                  std::to_string(ex.frame_id));
    }
    ++counts[static_cast<std::size_t>(to_index(ex.label))];
  }
  if (counts != class_counts) throw std::invalid_argument("class counts do not match examples");
  if (normalization) {
    for (int c = 0; c < kChannels; ++c) {
      if (!std::isfinite(normalization->mean[c]) || !std::isfinite(normalization->stddev[c]) ||
          normalization->stddev[c] <= 0.0) {
        throw std::invalid_argument("normalization statistics must be finite with positive std");
      }
    }
  }
}

Normalization compute_normalization(const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("compute_normalization: no examples selected");
  std::array<double, kChannels> sum{0.0, 0.0};
  std::size_t count = 0;
  for (std::size_t idx : indices) {
    for (const auto& s : data.examples.at(idx).samples) {
      sum[0] += s.x;
      sum[1] += s.f;
    }
    count += data.examples[idx].samples.size();
  }
  Normalization norm;
  for (int c = 0; c < kChannels; ++c) norm.mean[c] = sum[c] / static_cast<double>(count);
  std::array<double, kChannels> sq{0.0, 0.0};
  for (std::size_t idx : indices) {
    for (const auto& s : data.examples[idx].samples) {
      const double dx = s.x - norm.mean[0];
      const double df = s.f - norm.mean[1];
      sq[0] += dx * dx;
      sq[1] += df * df;
    }
  }
  for (int c = 0; c < kChannels; ++c) {
    const double sd = std::sqrt(sq[c] / static_cast<double>(count));
    norm.stddev[c] = sd > 1e-12 ? sd : 1.0;
  }
  return norm;
}

std::vector<std::size_t> Split::training_indices(std::size_t held_out_fold) const {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < folds.size(); ++k) {
    if (k != held_out_fold) out.insert(out.end(), folds[k].begin(), folds[k].end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::size_t> Split::all_fold_indices() const {
  return training_indices(folds.size());
}

Split kfold_split(const Dataset& data, int k, double eval_fraction, std::uint64_t seed) {
  if (data.examples.empty()) throw std::invalid_argument("kfold_split: empty dataset");
  if (k < 2) throw std::invalid_argument("kfold_split: k must be >= 2");
  if (!(eval_fraction >= 0.0 && eval_fraction < 1.0)) {
    throw std::invalid_argument("kfold_split: eval_fraction must lie in [0, 1)");
  }

  std::vector<std::uint32_t> frames;
  {
    std::unordered_set<std::uint32_t> seen;
    for (const auto& ex : data.examples) {
      if (seen.insert(ex.frame_id).second) frames.push_back(ex.frame_id);
    }
  }
  std::sort(frames.begin(), frames.end());
  std::mt19937_64 rng(seed);
  std::shuffle(frames.begin(), frames.end(), rng);

  const auto n_eval =
      static_cast<std::size_t>(std::llround(eval_fraction * static_cast<double>(frames.size())));
  const std::size_t remaining = frames.size() - n_eval;
  if (remaining < static_cast<std::size_t>(k)) {
    throw std::invalid_argument("kfold_split: " + std::to_string(remaining) +
                                " source frames left for " + std::to_string(k) + " folds");
  }

  Split split;
  split.evaluation_frames.assign(frames.begin(), frames.begin() + static_cast<long>(n_eval));
  split.fold_frames.resize(static_cast<std::size_t>(k));
  const std::size_t base = remaining / static_cast<std::size_t>(k);
  const std::size_t extra = remaining % static_cast<std::size_t>(k);
  std::size_t cursor = n_eval;
  for (std::size_t fold = 0; fold < split.fold_frames.size(); ++fold) {
    const std::size_t size = base + (fold < extra ? 1 : 0);
    split.fold_frames[fold].assign(frames.begin() + static_cast<long>(cursor),
                                   frames.begin() + static_cast<long>(cursor + size));
    cursor += size;
  }

  // frame id -> fold index, or k for evaluation
  std::unordered_map<std::uint32_t, std::size_t> owner;
  for (auto id : split.evaluation_frames) owner[id] = static_cast<std::size_t>(k);
  for (std::size_t fold = 0; fold < split.fold_frames.size(); ++fold) {
    for (auto id : split.fold_frames[fold]) owner[id] = fold;
  }
  split.folds.resize(static_cast<std::size_t>(k));
  for (std::size_t e = 0; e < data.examples.size(); ++e) {
    const std::size_t o = owner.at(data.examples[e].frame_id);
    if (o == static_cast<std::size_t>(k)) {
      split.evaluation.push_back(e);
    } else {
      split.folds[o].push_back(e);
    }
  }
  return split;
}

mechanics::SceneFile synthesis_scene(const SynthesisConfig& config, std::uint32_t index) {
  if (config.tissues.empty()) throw std::invalid_argument("synthesis: no tissues selected");
  const TissueType tissue = config.tissues[index % config.tissues.size()];
  const std::uint64_t frame_seed = derive_seed(config.seed, index);
  std::mt19937_64 rng(frame_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto factor = [&](double jitter) { return 1.0 + jitter * (2.0 * unit(rng) - 1.0); };

  mechanics::TissueProfile p = mechanics::default_profile(tissue);
  const double gap = config.gap_min + (config.gap_max - config.gap_min) * unit(rng);
  const double scale = factor(config.scale_jitter);
  p.a1 *= scale * factor(config.param_jitter);
  p.a2 *= scale * factor(config.param_jitter);
  p.cutting_force *= scale * factor(config.param_jitter);
  p.friction_coulomb *= scale * factor(config.param_jitter);
  p.friction_viscous *= scale * factor(config.param_jitter);
  p.puncture_depth *= factor(config.param_jitter);
  if (config.noise_std) p.noise_std = *config.noise_std;

  const int length = config.frame_length;
  const double dt = 1.0 / config.sample_rate;
  const bool approach = unit(rng) < config.approach_probability;
  const bool dwell = !approach && unit(rng) < config.dwell_probability;

  mechanics::SceneFile file;
  file.scene.name = std::string(to_string(tissue)) + "-" + std::to_string(index);
  file.motion.sample_rate = config.sample_rate;
  file.seed = derive_seed(frame_seed, 0x5EED);

  if (approach) {
    const int longest = std::clamp(static_cast<int>(std::lround(config.approach_idle_max * config.sample_rate)), 0,
                                   length - 2);
    const int idle = longest > 0 ? std::uniform_int_distribution<int>(1, longest)(rng) : 0;
    if (idle > 0) file.motion.segments.push_back({0.0, idle * dt});
    file.motion.segments.push_back({config.feed_velocity, (length - idle) * dt});
    const double travel = std::abs(config.feed_velocity) * (length - idle) * dt;
    file.scene.layers.emplace_back(mechanics::Cavity{travel + gap});
  } else {
    file.scene.layers.emplace_back(mechanics::Cavity{gap});
    int idle = 0;
    if (unit(rng) < config.lead_in_probability) {
      const double slack = (config.gap_max - gap) / std::abs(config.feed_velocity);
      const int most = std::clamp(static_cast<int>(std::floor(slack * config.sample_rate)), 0, length - 2);
      idle = std::uniform_int_distribution<int>(0, most)(rng);
    }
    int stop = length;
    if (dwell) {
      const int earliest = std::clamp(static_cast<int>(std::lround(config.dwell_earliest * config.sample_rate)), 1,
                                      length - 1);
      stop = std::uniform_int_distribution<int>(std::min(idle + earliest, length - 1), length - 1)(rng);
    }
    if (idle > 0) file.motion.segments.push_back({0.0, idle * dt});
    file.motion.segments.push_back({config.feed_velocity, (stop - idle) * dt});
    if (stop < length) file.motion.segments.push_back({0.0, (length - stop) * dt});
  }
  file.scene.layers.emplace_back(p);
  return file;
}

Frame frame_from_trace(const mechanics::InsertionTrace& trace, const dsp::BiquadCascade* filter,
                       bool filter_position, bool filter_force, FrameInfo info) {
  Frame frame;
  frame.t = trace.t;
  frame.x = (filter && filter_position) ? filter->apply(trace.x) : trace.x;
  frame.f = (filter && filter_force) ? filter->apply(trace.f) : trace.f;
  frame.label = trace.label;
  info.puncture_timestamps = trace.puncture_timestamps;
  frame.info = std::move(info);
  return frame;
}

std::vector<Frame> synthesize_frames(const SynthesisConfig& config) {
  if (config.frames < 1) throw std::invalid_argument("synthesis: frames must be >= 1");
  const dsp::BiquadCascade filter = dsp::design_butterworth(config.filter);
  std::vector<Frame> frames;
  frames.reserve(static_cast<std::size_t>(config.frames));
  for (int i = 0; i < config.frames; ++i) {
    const auto index = static_cast<std::uint32_t>(i);
    const auto file = synthesis_scene(config, index);
    const auto trace = mechanics::simulate_insertion(file.scene, file.motion, *file.seed);
    FrameInfo info;
    info.id = index;
    info.tissue = config.tissues[index % config.tissues.size()];
    info.scene = file.scene.name;
    info.seed = *file.seed;
    frames.push_back(frame_from_trace(trace, &filter, config.filter_position, config.filter_force,
                                      std::move(info)));
  }
  return frames;
}

Dataset augment(std::span<const Frame> frames, const AugmentConfig& config, double sample_rate) {
  Dataset data;
  data.sample_rate = sample_rate;
  data.window_length = config.window_length;
  data.examples.reserve(frames.size() * static_cast<std::size_t>(config.windows_per_frame));
  for (const auto& frame : frames) {
    frame.validate_raw();
    const Frame extended = zero_pad(frame, config.pad, sample_rate);
    auto windows = random_windows(extended, config.windows_per_frame, config.window_length,
                                  derive_seed(config.seed, frame.info.id));
    std::move(windows.begin(), windows.end(), std::back_inserter(data.examples));
    data.frames.push_back(frame.info);
  }
  data.recount();
  return data;
}

}  // namespace needle::dataset
