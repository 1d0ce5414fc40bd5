#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "needle/dataset.hpp"
#include "needle/model.hpp"

namespace needle::train {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 64;
  int epochs = 10;
  /// Optimizer steps per epoch; 0 means one full pass over the training set.
  int steps_per_epoch = 0;
  std::uint64_t seed = 0;
  std::optional<double> clip_norm;
  /// When set, the step size follows a cosine from learning_rate down to this
  /// value over the whole run; otherwise it stays constant.
  std::optional<double> final_learning_rate;
  /// Validation examples scored per epoch (evenly strided subset); 0 means all.
  int max_validation_examples = 0;
  model::Precision precision = model::Precision::Single;

  /// Throws std::invalid_argument for non-positive rate/batch/epochs or betas
  /// outside [0, 1).
  void validate() const;

  /// Step size for 0-based optimizer step `step` of `total_steps`.
  double learning_rate_at(long step, long total_steps) const;
};

/// A trained network plus the input normalization it expects.
struct Classifier {
  model::ModelParameters params;
  dataset::Normalization normalization;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();  // NaN without validation data
};

struct TrainResult {
  Classifier classifier;
  std::vector<EpochRecord> curve;
  int best_epoch = 0;
};

/// Called after every epoch; return false to stop early.
using EpochCallback = std::function<bool(const EpochRecord&)>;

/// Normalized model input for the selected examples, in index order.
model::SequenceBatch make_batch(const dataset::Dataset& data, std::span<const std::size_t> indices,
                                const dataset::Normalization& norm);

std::vector<int> labels_of(const dataset::Dataset& data, std::span<const std::size_t> indices);

/// Mini-batch Adam from a seeded initialization. Normalization statistics come
/// from the training indices. Keeps the parameters with the lowest validation
/// loss (the last epoch when `validation` is empty). Deterministic in
/// config.seed.
/// Throws std::invalid_argument for an empty training set and
/// model::NumericalError when the loss turns non-finite.
TrainResult train(const dataset::Dataset& data, std::span<const std::size_t> training,
                  std::span<const std::size_t> validation, const model::ModelConfig& model_config,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Mean cross-entropy over the selected examples.
double evaluate_loss(const Classifier& classifier, const dataset::Dataset& data,
                     std::span<const std::size_t> indices, int batch_size = 64,
                     model::Precision precision = model::Precision::Double);

/// Class probabilities, one row per selected example.
model::Matrix predict_proba(const Classifier& classifier, const dataset::Dataset& data,
                            std::span<const std::size_t> indices, int batch_size = 64,
                            model::Precision precision = model::Precision::Double);

std::vector<ClassLabel> predict(const Classifier& classifier, const dataset::Dataset& data,
                                std::span<const std::size_t> indices, int batch_size = 64,
                                model::Precision precision = model::Precision::Double);

/// Row-wise argmax as labels.
std::vector<ClassLabel> argmax_labels(const model::Matrix& probabilities);

}  // namespace needle::train
