#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "needle/dsp.hpp"
#include "needle/eval.hpp"
#include "needle/mechanics.hpp"
#include "needle/train.hpp"

namespace needle::runtime {

struct StreamOptions {
  dsp::FilterSpec filter;
  bool filter_position = true;
  bool filter_force = true;
  /// Run the model on every n-th sample; in between the last prediction is
  /// repeated with zero latency.
  int decimation = 1;
  model::Precision precision = model::Precision::Double;
};

struct StreamOutput {
  double t = 0.0;
  ClassLabel label = ClassLabel::Neutral;
  std::array<double, kNumClasses> probabilities{};
  double latency_ms = 0.0;  // window assembly + normalization + forward pass
};

/// One streaming session: a continuous filter per channel and a ring buffer
/// of the latest filtered samples. Not thread-safe; use one per session.
class OnlineClassifier {
 public:
  explicit OnlineClassifier(train::Classifier classifier, StreamOptions options = {});

  /// Throws std::invalid_argument for non-finite input or a timestamp that is
  /// not strictly greater than the previous one. State is unchanged on error.
  StreamOutput push_sample(double t, double x, double f);

  /// Normalized model input for the current buffer: seq_len x 2, with literal
  /// zeros (before normalization) ahead of the buffered samples.
  model::Matrix window() const;

  /// Buffered filtered samples, oldest first.
  std::vector<std::array<double, 2>> buffer() const;

  std::size_t samples_seen() const { return count_; }
  const train::Classifier& classifier() const { return classifier_; }
  void reset();

 private:
  train::Classifier classifier_;
  StreamOptions options_;
  dsp::BiquadCascade filter_x_, filter_f_;
  std::vector<std::array<double, 2>> ring_;
  std::size_t head_ = 0;  // next write position
  std::size_t count_ = 0;
  std::optional<double> last_t_;
  StreamOutput last_;
};

/// Normalized window ending at sample `end` (inclusive) of already-filtered
/// channels, built the same way as OnlineClassifier::window().
model::Matrix window_at(std::span<const double> x, std::span<const double> f, std::size_t end,
                        int seq_len, const dataset::Normalization& norm);

/// Batch path: filter whole channels, then classify every prefix window.
/// Matches OnlineClassifier sample for sample (latency fields are zero).
std::vector<StreamOutput> classify_offline(const train::Classifier& classifier, std::span<const double> t,
                                           std::span<const double> x, std::span<const double> f,
                                           const StreamOptions& options = {}, int batch_size = 64);

struct ReplaySummary {
  std::size_t samples = 0;
  double accuracy = 0.0;  // every sample, all classes
  eval::Metrics metrics;
  double max_latency_ms = 0.0;
  double mean_latency_ms = 0.0;
  double budget_ms = 10.0;
  double within_budget = 0.0;  // fraction of samples at or under budget_ms
};

struct ReplayResult {
  std::vector<StreamOutput> outputs;
  ReplaySummary summary;
};

/// Streams a recorded trace and compares the output with its labels.
ReplayResult replay(const mechanics::InsertionTrace& trace, const train::Classifier& classifier,
                    const StreamOptions& options = {}, double budget_ms = 10.0);

/// Reads `t,x,f` records (an optional header line is skipped), pushes each and
/// writes `t,label,latency_ms,p0..p7`. Returns the number of samples. Throws
/// dataset::FormatError naming the line on bad input.
std::size_t run_stream(std::istream& in, std::ostream& out, OnlineClassifier& session);

/// `t,label,latency_ms,p0,...,p7` for one output, without a newline.
std::string format_output(const StreamOutput& output);

}  // namespace needle::runtime
