#include "needle/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "needle/random.hpp"

namespace needle::eval {

namespace {

std::optional<double> ratio(std::size_t hit, std::size_t n) {
  if (n == 0) return std::nullopt;
  return static_cast<double>(hit) / static_cast<double>(n);
}

std::string cell(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

std::string percent(const std::optional<double>& v) {
  if (!v) return "     -";
  char buf[16];
  std::snprintf(buf, sizeof buf, "%6.2f", 100.0 * *v);
  return buf;
}

std::ofstream open(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::string metric_header() {
  std::string h = "scope,fold";
  for (const auto& [name, v] : Metrics{}.named()) h += "," + name;
  return h + ",n";
}

void write_row(std::ostream& out, std::string_view scope, const std::string& fold, const Metrics& m) {
  out << scope << ',' << fold;
  for (const auto& [name, v] : m.named()) out << ',' << cell(v);
  out << ',' << m.total << '\n';
}

}  // namespace

std::vector<std::pair<std::string, std::optional<double>>> Metrics::named() const {
  std::vector<std::pair<std::string, std::optional<double>>> out{
      {"A_pre", a_pre}, {"A_punc", a_punc}, {"A_tissue", a_tissue},
      {"A_tissue_macro", a_tissue_macro}, {"A_neutral", a_neutral}};
  for (int i = 0; i < kNumTissues; ++i) {
    out.emplace_back("A_" + std::string(to_string(kAllTissues[static_cast<std::size_t>(i)])),
                     per_tissue[static_cast<std::size_t>(i)]);
  }
  return out;
}

Metrics score(std::span<const ClassLabel> predictions, std::span<const ClassLabel> truth) {
  if (predictions.size() != truth.size()) {
    throw std::invalid_argument("score: " + std::to_string(predictions.size()) + " predictions for " +
                                std::to_string(truth.size()) + " truth labels");
  }
  if (truth.empty()) throw std::invalid_argument("score: no samples");
  Metrics m;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ++m.confusion[static_cast<std::size_t>(to_index(truth[i]))][static_cast<std::size_t>(to_index(predictions[i]))];
  }
  m.total = truth.size();
  for (int c = 0; c < kNumClasses; ++c) {
    for (int p = 0; p < kNumClasses; ++p) m.class_counts[static_cast<std::size_t>(c)] += m.confusion[c][p];
  }
  const auto diag = [&](ClassLabel c) { return m.confusion[to_index(c)][to_index(c)]; };
  const auto count = [&](ClassLabel c) { return m.class_counts[static_cast<std::size_t>(to_index(c))]; };
  m.a_pre = ratio(diag(ClassLabel::PrePuncture), count(ClassLabel::PrePuncture));
  m.a_punc = ratio(diag(ClassLabel::Puncture), count(ClassLabel::Puncture));
  m.a_neutral = ratio(diag(ClassLabel::Neutral), count(ClassLabel::Neutral));
  std::size_t hit = 0, n = 0, defined = 0;
  double macro = 0.0;
  for (int i = 0; i < kNumTissues; ++i) {
    const ClassLabel c = tissue_label(kAllTissues[static_cast<std::size_t>(i)]);
    hit += diag(c);
    n += count(c);
    m.per_tissue[static_cast<std::size_t>(i)] = ratio(diag(c), count(c));
    if (m.per_tissue[static_cast<std::size_t>(i)]) {
      macro += *m.per_tissue[static_cast<std::size_t>(i)];
      ++defined;
    }
  }
  m.a_tissue = ratio(hit, n);
  if (defined > 0) m.a_tissue_macro = macro / static_cast<double>(defined);
  return m;
}

std::size_t pair_confusion(const Confusion& confusion, ClassLabel a, ClassLabel b) {
  return confusion[to_index(a)][to_index(b)] + confusion[to_index(b)][to_index(a)];
}

bool heart_hock_dominates(const Confusion& confusion) {
  const std::size_t target = pair_confusion(confusion, ClassLabel::Heart, ClassLabel::Hock);
  for (std::size_t i = 0; i < kAllTissues.size(); ++i) {
    for (std::size_t j = i + 1; j < kAllTissues.size(); ++j) {
      const ClassLabel a = tissue_label(kAllTissues[i]);
      const ClassLabel b = tissue_label(kAllTissues[j]);
      const bool is_target = (a == ClassLabel::Heart && b == ClassLabel::Hock) ||
                             (a == ClassLabel::Hock && b == ClassLabel::Heart);
      if (!is_target && pair_confusion(confusion, a, b) >= target) return false;
    }
  }
  return true;
}

std::vector<Statistic> summarize(std::span<const Metrics> reports) {
  std::vector<Statistic> out;
  for (const auto& [name, v] : Metrics{}.named()) out.push_back({name, 0.0, 0.0, 0});
  for (std::size_t k = 0; k < out.size(); ++k) {
    std::vector<double> values;
    for (const auto& r : reports) {
      const auto v = r.named()[k].second;
      if (v) values.push_back(*v);
    }
    auto& s = out[k];
    s.count = values.size();
    if (values.empty()) continue;
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(values.size());
    if (values.size() > 1) {
      double sq = 0.0;
      for (double v : values) sq += (v - s.mean) * (v - s.mean);
      s.stddev = std::sqrt(sq / static_cast<double>(values.size() - 1));
    }
  }
  return out;
}

CrossValidationReport cross_validate(const dataset::Dataset& data, const dataset::Split& split,
                                     const model::ModelConfig& model_config,
                                     const train::TrainConfig& train_config, const FoldCallback& on_fold,
                                     const train::EpochCallback& on_epoch) {
  if (split.folds.empty()) throw std::invalid_argument("cross_validate: split has no folds");
  CrossValidationReport report;
  std::vector<Metrics> held, evaluation;
  std::vector<ClassLabel> eval_truth;
  for (std::size_t idx : split.evaluation) eval_truth.push_back(data.examples.at(idx).label);

  for (std::size_t k = 0; k < split.folds.size(); ++k) {
    const auto training = split.training_indices(k);
    const auto& fold = split.folds[k];
    if (fold.empty()) throw std::invalid_argument("cross_validate: fold " + std::to_string(k + 1) + " is empty");
    train::TrainConfig cfg = train_config;
    cfg.seed = derive_seed(train_config.seed, k);
    auto trained = train::train(data, training, fold, model_config, cfg, on_epoch);

    FoldResult result;
    result.fold = static_cast<int>(k + 1);
    result.curve = std::move(trained.curve);
    result.best_epoch = trained.best_epoch;
    result.classifier = std::move(trained.classifier);

    std::vector<ClassLabel> truth;
    for (std::size_t idx : fold) truth.push_back(data.examples[idx].label);
    const auto predicted = train::predict(result.classifier, data, fold, 64, train_config.precision);
    result.held_out = score(predicted, truth);
    if (!split.evaluation.empty()) {
      const auto eval_pred = train::predict(result.classifier, data, split.evaluation, 64, train_config.precision);
      result.evaluation = score(eval_pred, eval_truth);
      for (int r = 0; r < kNumClasses; ++r) {
        for (int c = 0; c < kNumClasses; ++c) report.evaluation_confusion[r][c] += result.evaluation.confusion[r][c];
      }
      evaluation.push_back(result.evaluation);
    }
    held.push_back(result.held_out);
    if (on_fold) on_fold(result);
    report.folds.push_back(std::move(result));
  }
  report.held_out_summary = summarize(held);
  if (!evaluation.empty()) report.evaluation_summary = summarize(evaluation);
  return report;
}

void write_metrics_csv(const std::filesystem::path& path, const CrossValidationReport& report) {
  auto out = open(path);
  out << metric_header() << '\n';
  for (const auto& f : report.folds) write_row(out, "held_out", std::to_string(f.fold), f.held_out);
  for (const auto& f : report.folds) {
    if (f.evaluation.total > 0) write_row(out, "evaluation", std::to_string(f.fold), f.evaluation);
  }
  const auto stats = [&](std::string_view scope, const std::vector<Statistic>& summary) {
    if (summary.empty()) return;
    for (int which = 0; which < 2; ++which) {
      out << scope << (which == 0 ? "_mean" : "_std") << ",all";
      for (const auto& s : summary) {
        out << ',';
        if (s.count > 0) out << cell(which == 0 ? s.mean : s.stddev);
      }
      out << ",\n";
    }
  };
  stats("held_out", report.held_out_summary);
  stats("evaluation", report.evaluation_summary);
  for (const auto& r : kReferenceRows) {
    out << "reference," << r.model << ',' << cell(r.a_pre / 100.0) << ',' << cell(r.a_punc / 100.0) << ','
        << cell(r.a_tissue / 100.0) << ",,,,,,,,\n";
  }
  out << "# " << kReferenceFootnote << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_metrics_csv(const std::filesystem::path& path, const Metrics& metrics, std::string_view scope) {
  auto out = open(path);
  out << metric_header() << '\n';
  write_row(out, scope, "1", metrics);
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_confusion_csv(const std::filesystem::path& path, const Confusion& confusion) {
  auto out = open(path);
  out << "row,col,count\n";
  for (int r = 0; r < kNumClasses; ++r) {
    for (int c = 0; c < kNumClasses; ++c) out << r << ',' << c << ',' << confusion[r][c] << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string format_metrics(const Metrics& m) {
  std::ostringstream os;
  for (const auto& [name, v] : m.named()) os << name << ' ' << percent(v) << "  ";
  os << "(n=" << m.total << ")";
  return os.str();
}

std::string format_report(const CrossValidationReport& report) {
  std::ostringstream os;
  os << "fold  scope       A_pre  A_punc A_tissue  macro  neutral\n";
  const auto line = [&](const std::string& fold, std::string_view scope, const Metrics& m) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-5s %-10s %s %s %s %s %s\n", fold.c_str(), std::string(scope).c_str(),
                  percent(m.a_pre).c_str(), percent(m.a_punc).c_str(), percent(m.a_tissue).c_str(),
                  percent(m.a_tissue_macro).c_str(), percent(m.a_neutral).c_str());
    os << buf;
  };
  for (const auto& f : report.folds) {
    line(std::to_string(f.fold), "held-out", f.held_out);
    if (f.evaluation.total > 0) line(std::to_string(f.fold), "evaluation", f.evaluation);
  }
  const auto summary = [&](std::string_view scope, const std::vector<Statistic>& s) {
    if (s.empty()) return;
    char buf[200];
    std::snprintf(buf, sizeof buf, "mean  %-10s %6.2f %6.2f %6.2f %6.2f %6.2f\n", std::string(scope).c_str(),
                  100 * s[0].mean, 100 * s[1].mean, 100 * s[2].mean, 100 * s[3].mean, 100 * s[4].mean);
    os << buf;
  };
  summary("held-out", report.held_out_summary);
  summary("evaluation", report.evaluation_summary);
  for (const auto& r : kReferenceRows) {
    char buf[120];
    std::snprintf(buf, sizeof buf, "ref   %-10s %6.2f %6.2f %6.2f\n", std::string(r.model).c_str(), r.a_pre,
                  r.a_punc, r.a_tissue);
    os << buf;
  }
  os << "note: " << kReferenceFootnote << '\n';
  return os.str();
}

}  // namespace needle::eval
