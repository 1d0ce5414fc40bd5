#include "needle/runtime.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>

#include "csv.hpp"

namespace needle::runtime {

namespace {

StreamOutput to_output(double t, const model::Matrix& probs, Eigen::Index row) {
  StreamOutput out;
  out.t = t;
  Eigen::Index best = 0;
  probs.row(row).maxCoeff(&best);
  out.label = label_from_index(static_cast<int>(best));
  for (int c = 0; c < kNumClasses; ++c) out.probabilities[static_cast<std::size_t>(c)] = probs(row, c);
  return out;
}

void fill_window(model::Matrix& w, const dataset::Normalization& norm,
                 const std::vector<std::array<double, 2>>& samples) {
  const auto T = static_cast<std::size_t>(w.rows());
  const std::size_t pad = T - samples.size();
  const double zx = (0.0 - norm.mean[0]) / norm.stddev[0];
  const double zf = (0.0 - norm.mean[1]) / norm.stddev[1];
  for (std::size_t i = 0; i < pad; ++i) {
    w(static_cast<Eigen::Index>(i), 0) = zx;
    w(static_cast<Eigen::Index>(i), 1) = zf;
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    w(static_cast<Eigen::Index>(pad + i), 0) = (samples[i][0] - norm.mean[0]) / norm.stddev[0];
    w(static_cast<Eigen::Index>(pad + i), 1) = (samples[i][1] - norm.mean[1]) / norm.stddev[1];
  }
}

void check_options(const StreamOptions& options) {
  options.filter.validate();
  if (options.decimation < 1) throw std::invalid_argument("decimation must be at least 1");
}

}  // namespace

OnlineClassifier::OnlineClassifier(train::Classifier classifier, StreamOptions options)
    : classifier_(std::move(classifier)), options_(options) {
  check_options(options_);
  classifier_.params.config.validate();
  filter_x_ = dsp::design_butterworth(options_.filter);
  filter_f_ = filter_x_;
  ring_.assign(static_cast<std::size_t>(classifier_.params.config.seq_len), {0.0, 0.0});
}

void OnlineClassifier::reset() {
  filter_x_.reset();
  filter_f_.reset();
  std::fill(ring_.begin(), ring_.end(), std::array<double, 2>{0.0, 0.0});
  head_ = 0;
  count_ = 0;
  last_t_.reset();
  last_ = StreamOutput{};
}

std::vector<std::array<double, 2>> OnlineClassifier::buffer() const {
  const std::size_t n = std::min(count_, ring_.size());
  std::vector<std::array<double, 2>> out;
  out.reserve(n);
  const std::size_t first = (head_ + ring_.size() - n) % ring_.size();
  for (std::size_t i = 0; i < n; ++i) out.push_back(ring_[(first + i) % ring_.size()]);
  return out;
}

model::Matrix OnlineClassifier::window() const {
  model::Matrix w(classifier_.params.config.seq_len, 2);
  fill_window(w, classifier_.normalization, buffer());
  return w;
}

StreamOutput OnlineClassifier::push_sample(double t, double x, double f) {
  if (!std::isfinite(t) || !std::isfinite(x) || !std::isfinite(f)) {
    throw std::invalid_argument("non-finite sample at t=" + std::to_string(t));
  }
  if (last_t_ && !(t > *last_t_)) {
    throw std::invalid_argument("timestamp " + std::to_string(t) + " does not follow " + std::to_string(*last_t_));
  }
  const double fx = options_.filter_position ? filter_x_.step(x) : x;
  const double ff = options_.filter_force ? filter_f_.step(f) : f;
  last_t_ = t;
  ring_[head_] = {fx, ff};
  head_ = (head_ + 1) % ring_.size();
  const bool run = count_ % static_cast<std::size_t>(options_.decimation) == 0;
  ++count_;

  if (!run) {
    StreamOutput repeated = last_;
    repeated.t = t;
    repeated.latency_ms = 0.0;
    return repeated;
  }
  const auto start = std::chrono::steady_clock::now();
  model::SequenceBatch batch{1, window()};
  const model::Matrix probs = model::forward(batch, classifier_.params, options_.precision);
  const auto stop = std::chrono::steady_clock::now();
  last_ = to_output(t, probs, 0);
  last_.latency_ms = std::chrono::duration<double, std::milli>(stop - start).count();
  return last_;
}

model::Matrix window_at(std::span<const double> x, std::span<const double> f, std::size_t end, int seq_len,
                        const dataset::Normalization& norm) {
  if (end >= x.size() || x.size() != f.size()) throw std::out_of_range("window_at: bad end index");
  const std::size_t n = std::min(end + 1, static_cast<std::size_t>(seq_len));
  std::vector<std::array<double, 2>> samples;
  samples.reserve(n);
  for (std::size_t i = end + 1 - n; i <= end; ++i) samples.push_back({x[i], f[i]});
  model::Matrix w(seq_len, 2);
  fill_window(w, norm, samples);
  return w;
}

std::vector<StreamOutput> classify_offline(const train::Classifier& classifier, std::span<const double> t,
                                           std::span<const double> x, std::span<const double> f,
                                           const StreamOptions& options, int batch_size) {
  check_options(options);
  if (t.size() != x.size() || t.size() != f.size()) throw std::invalid_argument("channel lengths differ");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  const dsp::BiquadCascade filter = dsp::design_butterworth(options.filter);
  const std::vector<double> fx = options.filter_position ? filter.apply(x) : std::vector<double>(x.begin(), x.end());
  const std::vector<double> ff = options.filter_force ? filter.apply(f) : std::vector<double>(f.begin(), f.end());
  const int T = classifier.params.config.seq_len;

  std::vector<std::size_t> ends;
  for (std::size_t i = 0; i < t.size(); i += static_cast<std::size_t>(options.decimation)) ends.push_back(i);
  std::vector<StreamOutput> computed;
  for (std::size_t begin = 0; begin < ends.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t n = std::min(static_cast<std::size_t>(batch_size), ends.size() - begin);
    model::SequenceBatch batch{static_cast<int>(n), model::Matrix(static_cast<Eigen::Index>(n) * T, 2)};
    for (std::size_t j = 0; j < n; ++j) {
      batch.data.middleRows(static_cast<Eigen::Index>(j) * T, T) =
          window_at(fx, ff, ends[begin + j], T, classifier.normalization);
    }
    const model::Matrix probs = model::forward(batch, classifier.params, options.precision);
    for (std::size_t j = 0; j < n; ++j) {
      computed.push_back(to_output(t[ends[begin + j]], probs, static_cast<Eigen::Index>(j)));
    }
  }
  std::vector<StreamOutput> out;
  out.reserve(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    StreamOutput o = computed[i / static_cast<std::size_t>(options.decimation)];
    o.t = t[i];
    out.push_back(o);
  }
  return out;
}

ReplayResult replay(const mechanics::InsertionTrace& trace, const train::Classifier& classifier,
                    const StreamOptions& options, double budget_ms) {
  if (trace.size() == 0) throw std::invalid_argument("replay: empty trace");
  if (trace.label.size() != trace.size()) throw std::invalid_argument("replay: trace has no labels");
  OnlineClassifier session(classifier, options);
  ReplayResult result;
  result.outputs.reserve(trace.size());
  std::vector<ClassLabel> predicted;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    result.outputs.push_back(session.push_sample(trace.t[i], trace.x[i], trace.f[i]));
    predicted.push_back(result.outputs.back().label);
  }
  auto& s = result.summary;
  s.samples = trace.size();
  s.metrics = eval::score(predicted, trace.label);
  std::size_t hits = 0, within = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    hits += predicted[i] == trace.label[i];
    const double ms = result.outputs[i].latency_ms;
    total += ms;
    s.max_latency_ms = std::max(s.max_latency_ms, ms);
    within += ms <= budget_ms;
  }
  s.accuracy = static_cast<double>(hits) / static_cast<double>(s.samples);
  s.mean_latency_ms = total / static_cast<double>(s.samples);
  s.budget_ms = budget_ms;
  s.within_budget = static_cast<double>(within) / static_cast<double>(s.samples);
  return result;
}

std::string format_output(const StreamOutput& o) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g,%d,%.6f", o.t, to_index(o.label), o.latency_ms);
  std::string line = buf;
  for (double p : o.probabilities) {
    std::snprintf(buf, sizeof buf, ",%.9g", p);
    line += buf;
  }
  return line;
}

std::size_t run_stream(std::istream& in, std::ostream& out, OnlineClassifier& session) {
  std::string line;
  std::size_t line_no = 0, samples = 0;
  out << "t,label,latency_ms,p0,p1,p2,p3,p4,p5,p6,p7\n";
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view text = csv::trim(line);
    if (text.empty() || text.front() == '#') continue;
    if (line_no == 1 && !text.empty() && (std::isalpha(static_cast<unsigned char>(text.front())) != 0)) continue;
    std::array<std::string_view, 3> fields;
    if (csv::split(text, fields) != 3) throw dataset::FormatError("stream", line_no, "expected t,x,f");
    double t = 0, x = 0, f = 0;
    if (!csv::parse_number(fields[0], t) || !csv::parse_number(fields[1], x) || !csv::parse_number(fields[2], f)) {
      throw dataset::FormatError("stream", line_no, "unparsable field");
    }
    StreamOutput o;
    try {
      o = session.push_sample(t, x, f);
    } catch (const std::invalid_argument& e) {
      throw dataset::FormatError("stream", line_no, e.what());
    }
    out << format_output(o) << '\n';
    out.flush();
    ++samples;
  }
  return samples;
}

}  // namespace needle::runtime
