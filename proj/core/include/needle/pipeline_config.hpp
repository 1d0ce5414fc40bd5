#pragma once

#include <filesystem>
#include <string>

#include "needle/dataset.hpp"
#include "needle/model.hpp"
#include "needle/runtime.hpp"
#include "needle/train.hpp"

namespace needle {

/// Every tunable of the simulate -> augment -> train -> evaluate -> stream
/// pipeline. Any key may be omitted from the JSON form.
///
/// {
///   "synthesis": {"frames", "tissues", "feed_velocity", "sample_rate_hz", "gap_min",
///                 "gap_max", "scale_jitter", "param_jitter", "dwell_probability",
///                 "dwell_earliest", "approach_probability", "approach_idle_max",
///                 "lead_in_probability", "noise_std", "seed"},
///   "filter":    {"order", "cutoff_hz"},
///   "augment":   {"pad", "windows_per_frame", "seed"},
///   "split":     {"folds", "eval_fraction", "seed"},
///   "model":     {"d_model", "num_heads", "head_dim", "num_blocks", "ffn_dim",
///                 "dropout_rate", "positional_encoding"},
///   "train":     {"learning_rate", "beta1", "beta2", "epsilon", "batch_size", "epochs",
///                 "steps_per_epoch", "seed", "clip_norm", "max_validation_examples",
///                 "precision": "single" | "double"},
///   "stream":    {"budget_ms", "decimation"}
/// }
struct PipelineConfig {
  dataset::SynthesisConfig synthesis;
  dataset::AugmentConfig augment;
  int folds = 5;
  double eval_fraction = 0.2;
  std::uint64_t split_seed = 0;
  model::ModelConfig model = model::desk_config();
  train::TrainConfig train;
  double budget_ms = 10.0;
  int decimation = 1;

  runtime::StreamOptions stream_options() const;
  /// Throws std::invalid_argument for inconsistent settings.
  void validate() const;
};

/// Throws std::invalid_argument naming the offending key.
PipelineConfig parse_pipeline_config(const std::string& json_text);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
std::string pipeline_config_to_json(const PipelineConfig& config);

}  // namespace needle
