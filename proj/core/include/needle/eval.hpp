#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "needle/dataset.hpp"
#include "needle/labels.hpp"
#include "needle/train.hpp"

namespace needle::eval {

/// Rows are truth, columns are predictions.
using Confusion = std::array<std::array<std::size_t, kNumClasses>, kNumClasses>;

/// Accuracies over an empty truth set are absent rather than zero.
struct Metrics {
  std::optional<double> a_pre;
  std::optional<double> a_punc;
  std::optional<double> a_tissue;        // sample-weighted over the five tissue rows
  std::optional<double> a_tissue_macro;  // mean of the per-tissue accuracies that exist
  std::optional<double> a_neutral;
  std::array<std::optional<double>, kNumTissues> per_tissue{};  // indexed like kAllTissues
  Confusion confusion{};
  std::array<std::size_t, kNumClasses> class_counts{};
  std::size_t total = 0;

  /// (name, value) in a fixed order: A_pre, A_punc, A_tissue, A_tissue_macro,
  /// A_neutral, then A_liver .. A_hock.
  std::vector<std::pair<std::string, std::optional<double>>> named() const;
};

/// Throws std::invalid_argument when the lengths differ or are zero.
Metrics score(std::span<const ClassLabel> predictions, std::span<const ClassLabel> truth);

/// Number of truth-`a` samples predicted as `b` plus truth-`b` predicted as `a`.
std::size_t pair_confusion(const Confusion& confusion, ClassLabel a, ClassLabel b);

/// True when the heart/hock pair has strictly more mutual confusion than any
/// other pair of distinct tissues.
bool heart_hock_dominates(const Confusion& confusion);

struct Statistic {
  std::string name;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 with fewer than two values
  std::size_t count = 0;  // folds where the metric was defined
};

/// Per-metric mean/std over the reports where each metric exists.
std::vector<Statistic> summarize(std::span<const Metrics> reports);

struct FoldResult {
  int fold = 0;
  Metrics held_out;
  Metrics evaluation;
  std::vector<train::EpochRecord> curve;
  int best_epoch = 0;
  train::Classifier classifier;
};

struct CrossValidationReport {
  std::vector<FoldResult> folds;
  std::vector<Statistic> held_out_summary;
  std::vector<Statistic> evaluation_summary;
  Confusion evaluation_confusion{};  // summed over folds
};

/// Published comparison figures; not reproduced by this code.
struct ReferenceRow {
  std::string_view model;
  double a_pre, a_punc, a_tissue;  // percent
};
inline constexpr std::array<ReferenceRow, 3> kReferenceRows{{
    {"Transformer", 95.10, 94.58, 91.20},
    {"RNN-LSTM", 92.27, 90.11, 85.84},
    {"CNN", 87.77, 88.34, 81.56},
}};
inline constexpr std::string_view kReferenceFootnote =
    "reference rows were measured on porcine tissue recordings and are not reproducible with synthetic data";

using FoldCallback = std::function<void(const FoldResult&)>;

/// Trains one model per fold (that fold held out for validation), then scores
/// it on the held-out fold and on the evaluation split.
CrossValidationReport cross_validate(const dataset::Dataset& data, const dataset::Split& split,
                                     const model::ModelConfig& model_config,
                                     const train::TrainConfig& train_config,
                                     const FoldCallback& on_fold = {},
                                     const train::EpochCallback& on_epoch = {});

/// `scope,fold,A_pre,...,A_hock,n` rows: one per fold for each scope, then mean
/// and std rows, then the reference rows and a `#` footnote line.
void write_metrics_csv(const std::filesystem::path& path, const CrossValidationReport& report);

/// Single-report variant used by `evaluate` on one model.
void write_metrics_csv(const std::filesystem::path& path, const Metrics& metrics, std::string_view scope);

/// `row,col,count` for all 64 cells; row is truth, col is prediction.
void write_confusion_csv(const std::filesystem::path& path, const Confusion& confusion);

/// Human-readable table.
std::string format_report(const CrossValidationReport& report);
std::string format_metrics(const Metrics& metrics);

}  // namespace needle::eval
