#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "needle/checkpoint.hpp"
#include "needle/dataset.hpp"
#include "needle/eval.hpp"
#include "needle/pipeline_config.hpp"
#include "needle/runtime.hpp"
#include "needle/trace_io.hpp"

namespace needle::cli {

namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config;
  std::optional<int> filter_order;
  std::optional<double> filter_cutoff;
  std::optional<double> rate_hz;
  std::optional<double> budget_ms;
};

fs::path sidecar(const fs::path& trace) {
  fs::path p = trace;
  return p.replace_extension(".meta.json");
}

PipelineConfig resolve(const Globals& g) {
  PipelineConfig c = g.config.empty() ? PipelineConfig{} : load_pipeline_config(g.config);
  if (g.rate_hz) {
    c.synthesis.sample_rate = *g.rate_hz;
    c.synthesis.filter.sample_rate_hz = *g.rate_hz;
  }
  if (g.filter_order) c.synthesis.filter.order = *g.filter_order;
  if (g.filter_cutoff) c.synthesis.filter.cutoff_hz = *g.filter_cutoff;
  if (g.budget_ms) c.budget_ms = *g.budget_ms;
  c.validate();
  return c;
}

mechanics::InsertionTrace load_trace(const fs::path& path) {
  auto trace = dataset::read_trace_csv(path);
  if (fs::exists(sidecar(path))) dataset::read_trace_metadata(sidecar(path), trace);
  return trace;
}

void save_trace(const fs::path& path, const mechanics::InsertionTrace& trace) {
  dataset::write_trace_csv(path, trace);
  dataset::write_trace_metadata(sidecar(path), trace);
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

// ---- subcommands ---------------------------------------------------------

struct SimulateArgs {
  std::string scene, tissue, out;
  std::optional<std::uint64_t> seed;
};

int simulate(const SimulateArgs& a, const Globals& g, std::ostream& out) {
  mechanics::SceneFile file;
  if (!a.scene.empty()) {
    file = mechanics::load_scene_file(a.scene);
  } else if (!a.tissue.empty()) {
    file.scene.name = a.tissue;
    file.scene.layers = {mechanics::Cavity{4.0}, mechanics::default_profile(parse_tissue(a.tissue))};
    file.motion = mechanics::constant_feed(2.0, 6.0, 20.0);
  } else {
    throw std::invalid_argument("simulate needs --scene or --tissue");
  }
  if (g.rate_hz) file.motion.sample_rate = *g.rate_hz;
  const std::uint64_t seed = a.seed.value_or(file.seed.value_or(0));
  const auto trace = mechanics::simulate_insertion(file.scene, file.motion, seed);
  save_trace(a.out, trace);
  out << "simulated " << trace.size() << " samples of '" << file.scene.name << "' (seed " << seed << ")";
  for (double t : trace.puncture_timestamps) out << ", puncture at " << fmt("%.2f", t) << " s";
  out << " -> " << a.out << '\n';
  return 0;
}

struct FilterArgs {
  std::string in, out;
  bool coefficients = false;
};

int filter(const FilterArgs& a, const Globals& g, std::ostream& out) {
  auto trace = load_trace(a.in);
  dsp::FilterSpec spec = resolve(g).synthesis.filter;
  if (!g.rate_hz) spec.sample_rate_hz = trace.sample_rate;
  const auto cascade = dsp::design_butterworth(spec);
  if (a.coefficients) out << cascade.coefficient_table();
  trace.x = cascade.apply(trace.x);
  trace.f = cascade.apply(trace.f);
  save_trace(a.out, trace);
  out << "filtered " << trace.size() << " samples (order " << spec.order << ", cutoff " << spec.cutoff_hz
      << " Hz at " << spec.sample_rate_hz << " Hz) -> " << a.out << '\n';
  return 0;
}

struct LabelArgs {
  std::string in, meta, out;
};

int label(const LabelArgs& a, std::ostream& out) {
  auto trace = dataset::read_trace_csv(a.in);
  const fs::path meta = a.meta.empty() ? sidecar(a.in) : fs::path(a.meta);
  if (!fs::exists(meta)) throw std::runtime_error("no layer metadata at " + meta.string());
  dataset::read_trace_metadata(meta, trace);
  trace.label = dataset::label_trace(trace);
  save_trace(a.out, trace);
  std::array<std::size_t, kNumClasses> counts{};
  for (auto l : trace.label) ++counts[static_cast<std::size_t>(to_index(l))];
  out << "labeled " << trace.size() << " samples ->" << ' ' << a.out << '\n';
  for (int c = 0; c < kNumClasses; ++c) {
    if (counts[static_cast<std::size_t>(c)] > 0) {
      out << "  " << to_string(label_from_index(c)) << ": " << counts[static_cast<std::size_t>(c)] << '\n';
    }
  }
  return 0;
}

struct AugmentArgs {
  std::optional<int> frames, windows;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int augment(const AugmentArgs& a, const Globals& g, std::ostream& out) {
  PipelineConfig c = resolve(g);
  if (a.frames) c.synthesis.frames = *a.frames;
  if (a.windows) c.augment.windows_per_frame = *a.windows;
  if (a.seed) c.synthesis.seed = *a.seed;
  c.validate();
  const auto frames = dataset::synthesize_frames(c.synthesis);
  const auto data = dataset::augment(frames, c.augment, c.synthesis.sample_rate);
  dataset::write_dataset(a.out, data);
  out << "wrote " << data.examples.size() << " examples (" << frames.size() << " frames x "
      << c.augment.windows_per_frame << " windows) to " << a.out << '\n';
  return 0;
}

struct TrainArgs {
  std::string data, out, loss_curve;
  std::optional<int> epochs, steps;
  std::optional<std::uint64_t> seed;
  int holdout = 1;
};

void apply_train_overrides(PipelineConfig& c, const TrainArgs& a) {
  if (a.epochs) c.train.epochs = *a.epochs;
  if (a.steps) c.train.steps_per_epoch = *a.steps;
  if (a.seed) c.train.seed = *a.seed;
  c.validate();
}

train::EpochCallback progress(std::ostream& out, const std::string& prefix) {
  return [&out, prefix](const train::EpochRecord& r) {
    out << prefix << "epoch " << r.epoch << "  train_loss " << fmt("%.5f", r.train_loss) << "  val_loss "
        << fmt("%.5f", r.val_loss) << '\n';
    out.flush();
    return true;
  };
}

int train_cmd(const TrainArgs& a, const Globals& g, std::ostream& out) {
  PipelineConfig c = resolve(g);
  apply_train_overrides(c, a);
  const auto data = dataset::read_dataset(a.data);
  const auto split = dataset::kfold_split(data, c.folds, c.eval_fraction, c.split_seed);
  if (a.holdout < 0 || a.holdout > static_cast<int>(split.folds.size())) {
    throw std::invalid_argument("--holdout-fold must be between 0 and " + std::to_string(split.folds.size()));
  }
  std::vector<std::size_t> training, validation;
  if (a.holdout == 0) {
    training = split.all_fold_indices();
  } else {
    training = split.training_indices(static_cast<std::size_t>(a.holdout - 1));
    validation = split.folds[static_cast<std::size_t>(a.holdout - 1)];
  }
  out << "training on " << training.size() << " examples, validating on " << validation.size() << '\n';
  const auto result = train::train(data, training, validation, c.model, c.train, progress(out, ""));
  checkpoint::save(a.out, result.classifier);
  const fs::path curve = a.loss_curve.empty() ? fs::path(a.out).replace_extension(".loss.csv") : fs::path(a.loss_curve);
  checkpoint::write_loss_curve(curve, result.curve);
  out << "best epoch " << result.best_epoch << "; model -> " << a.out << ", loss curve -> " << curve.string() << '\n';
  return 0;
}

struct EvaluateArgs {
  TrainArgs train;
  std::string model, out_dir;
  bool cross_validate = false;
};

int evaluate(const EvaluateArgs& a, const Globals& g, std::ostream& out) {
  PipelineConfig c = resolve(g);
  apply_train_overrides(c, a.train);
  const auto data = dataset::read_dataset(a.train.data);
  const auto split = dataset::kfold_split(data, c.folds, c.eval_fraction, c.split_seed);
  fs::create_directories(a.out_dir);
  const fs::path dir = a.out_dir;
  if (a.cross_validate) {
    const auto report = eval::cross_validate(
        data, split, c.model, c.train,
        [&](const eval::FoldResult& f) {
          out << "fold " << f.fold << ": held-out " << eval::format_metrics(f.held_out) << '\n';
          checkpoint::write_loss_curve(dir / ("fold" + std::to_string(f.fold) + "_loss.csv"), f.curve);
          checkpoint::save(dir / ("fold" + std::to_string(f.fold) + ".ckpt"), f.classifier);
        },
        progress(out, "  "));
    eval::write_metrics_csv(dir / "metrics.csv", report);
    eval::write_confusion_csv(dir / "confusion.csv", report.evaluation_confusion);
    out << eval::format_report(report);
  } else {
    const auto classifier = checkpoint::load(a.model);
    const auto& indices = split.evaluation.empty() ? split.all_fold_indices() : split.evaluation;
    std::vector<ClassLabel> truth;
    for (auto i : indices) truth.push_back(data.examples[i].label);
    const auto predicted = train::predict(classifier, data, indices);
    const auto metrics = eval::score(predicted, truth);
    eval::write_metrics_csv(dir / "metrics.csv", metrics, "evaluation");
    eval::write_confusion_csv(dir / "confusion.csv", metrics.confusion);
    out << eval::format_metrics(metrics) << '\n';
  }
  out << "reports -> " << dir.string() << '\n';
  return 0;
}

struct StreamArgs {
  std::string model = "model.ckpt";
  std::string in = "-";
  std::string out = "-";
};

int stream(const StreamArgs& a, const Globals& g, std::istream& in, std::ostream& out, std::ostream& err) {
  const PipelineConfig c = resolve(g);
  runtime::OnlineClassifier session(checkpoint::load(a.model), c.stream_options());
  std::ifstream file_in;
  std::ofstream file_out;
  std::istream* src = &in;
  std::ostream* dst = &out;
  if (a.in != "-") {
    file_in.open(a.in);
    if (!file_in) throw std::runtime_error("cannot open " + a.in);
    src = &file_in;
  }
  if (a.out != "-") {
    file_out = open_out(a.out);
    dst = &file_out;
  }
  const std::size_t n = runtime::run_stream(*src, *dst, session);
  err << "processed " << n << " samples\n";
  return 0;
}

struct ReplayArgs {
  std::string trace;
  std::string model = "model.ckpt";
  std::string out;
};

int replay(const ReplayArgs& a, const Globals& g, std::ostream& out) {
  const PipelineConfig c = resolve(g);
  const auto trace = load_trace(a.trace);
  auto options = c.stream_options();
  if (!g.rate_hz) options.filter.sample_rate_hz = trace.sample_rate;
  const auto result = runtime::replay(trace, checkpoint::load(a.model), options, c.budget_ms);
  if (!a.out.empty()) {
    auto file = open_out(a.out);
    file << "t,label,latency_ms,p0,p1,p2,p3,p4,p5,p6,p7\n";
    for (const auto& o : result.outputs) file << runtime::format_output(o) << '\n';
  }
  const auto& s = result.summary;
  out << "samples " << s.samples << "  accuracy " << fmt("%.4f", s.accuracy) << '\n';
  out << eval::format_metrics(s.metrics) << '\n';
  out << "latency ms: max " << fmt("%.3f", s.max_latency_ms) << "  mean " << fmt("%.3f", s.mean_latency_ms)
      << "  within " << s.budget_ms << " ms: " << fmt("%.1f", 100.0 * s.within_budget) << "%\n";
  out << "track:";
  ClassLabel previous = ClassLabel::Neutral;
  for (std::size_t i = 0; i < result.outputs.size(); ++i) {
    if (i == 0 || result.outputs[i].label != previous) {
      previous = result.outputs[i].label;
      out << ' ' << to_string(previous) << '@' << fmt("%.2f", result.outputs[i].t);
    }
  }
  out << '\n';
  return 0;
}

struct ExportArgs {
  std::string kind, in, predictions, out;
};

int export_plot(const ExportArgs& a, const Globals& g, std::ostream& out) {
  auto file = open_out(a.out);
  if (a.kind == "trace") {
    const auto trace = load_trace(a.in);
    dsp::FilterSpec spec = resolve(g).synthesis.filter;
    if (!g.rate_hz) spec.sample_rate_hz = trace.sample_rate;
    const auto cascade = dsp::design_butterworth(spec);
    const auto fx = cascade.apply(trace.x);
    const auto ff = cascade.apply(trace.f);
    file << "t,x,f,x_filtered,f_filtered,label\n";
    for (std::size_t i = 0; i < trace.size(); ++i) {
      file << dataset::format_sample(trace.t[i]) << ',' << dataset::format_sample(trace.x[i]) << ','
           << dataset::format_sample(trace.f[i]) << ',' << dataset::format_sample(fx[i]) << ','
           << dataset::format_sample(ff[i]) << ',' << to_index(trace.label[i]) << '\n';
    }
  } else if (a.kind == "labels") {
    const auto trace = load_trace(a.in);
    if (a.predictions.empty()) throw std::invalid_argument("labels export needs --predictions (replay --out file)");
    std::ifstream pred(a.predictions);
    if (!pred) throw std::runtime_error("cannot open " + a.predictions);
    std::string line;
    std::getline(pred, line);
    file << "t,truth,predicted,truth_name,predicted_name\n";
    for (std::size_t i = 0; i < trace.size(); ++i) {
      if (!std::getline(pred, line)) throw std::runtime_error(a.predictions + " has fewer rows than the trace");
      const auto c1 = line.find(',');
      const auto c2 = line.find(',', c1 + 1);
      const int p = std::stoi(line.substr(c1 + 1, c2 - c1 - 1));
      file << dataset::format_sample(trace.t[i]) << ',' << to_index(trace.label[i]) << ',' << p << ','
           << to_string(trace.label[i]) << ',' << to_string(label_from_index(p)) << '\n';
    }
  } else if (a.kind == "loss") {
    std::ifstream curve(a.in);
    if (!curve) throw std::runtime_error("cannot open " + a.in);
    std::string line;
    std::getline(curve, line);
    if (line != "epoch,train_loss,val_loss") throw std::runtime_error(a.in + ": not a loss curve");
    file << line << '\n';
    while (std::getline(curve, line)) file << line << '\n';
  } else if (a.kind == "confusion") {
    std::ifstream grid(a.in);
    if (!grid) throw std::runtime_error("cannot open " + a.in);
    std::string line;
    std::getline(grid, line);
    if (line != "row,col,count") throw std::runtime_error(a.in + ": not a confusion grid");
    eval::Confusion m{};
    while (std::getline(grid, line)) {
      int r = 0, c = 0;
      unsigned long long n = 0;
      if (std::sscanf(line.c_str(), "%d,%d,%llu", &r, &c, &n) != 3 || r < 0 || c < 0 || r >= kNumClasses ||
          c >= kNumClasses) {
        throw std::runtime_error(a.in + ": bad row '" + line + "'");
      }
      m[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = n;
    }
    file << "row,col,count,row_label,col_label,row_fraction\n";
    for (int r = 0; r < kNumClasses; ++r) {
      std::size_t total = 0;
      for (int c = 0; c < kNumClasses; ++c) total += m[r][c];
      for (int c = 0; c < kNumClasses; ++c) {
        const double frac = total ? static_cast<double>(m[r][c]) / static_cast<double>(total) : 0.0;
        file << r << ',' << c << ',' << m[r][c] << ',' << to_string(label_from_index(r)) << ','
             << to_string(label_from_index(c)) << ',' << fmt("%.6f", frac) << '\n';
      }
    }
  } else {
    throw std::invalid_argument("unknown export kind '" + a.kind + "'");
  }
  out << "wrote " << a.kind << " table -> " << a.out << '\n';
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"needle: simulate needle insertions, train and run the tissue classifier", "needle"};
  app.failure_message(CLI::FailureMessage::help);
  app.require_subcommand(1);

  Globals g;
  app.add_option("--config", g.config, "Pipeline configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--filter-order", g.filter_order, "Butterworth order");
  app.add_option("--filter-cutoff-hz", g.filter_cutoff, "Butterworth cutoff");
  app.add_option("--rate-hz", g.rate_hz, "Sample rate");
  app.add_option("--budget-ms", g.budget_ms, "Per-sample latency budget");

  SimulateArgs sim;
  auto* s_sim = app.add_subcommand("simulate", "Simulate one insertion trace");
  s_sim->add_option("--scene", sim.scene, "Scene file (JSON)")->check(CLI::ExistingFile);
  s_sim->add_option("--tissue", sim.tissue, "Single default tissue behind a 4 mm gap");
  s_sim->add_option("--seed", sim.seed, "Noise seed");
  s_sim->add_option("--out", sim.out, "Trace CSV")->required();

  FilterArgs flt;
  auto* s_flt = app.add_subcommand("filter", "Low-pass both channels of a trace");
  s_flt->add_option("--in", flt.in)->required()->check(CLI::ExistingFile);
  s_flt->add_option("--out", flt.out)->required();
  s_flt->add_flag("--coefficients", flt.coefficients, "Print the section coefficients");

  LabelArgs lbl;
  auto* s_lbl = app.add_subcommand("label", "Recompute per-sample labels from layer metadata");
  s_lbl->add_option("--in", lbl.in)->required()->check(CLI::ExistingFile);
  s_lbl->add_option("--meta", lbl.meta, "Metadata JSON (default: <in>.meta.json)");
  s_lbl->add_option("--out", lbl.out)->required();

  AugmentArgs aug;
  auto* s_aug = app.add_subcommand("augment", "Synthesize frames and write a windowed dataset");
  s_aug->add_option("--frames", aug.frames, "Number of frames");
  s_aug->add_option("--windows", aug.windows, "Windows per frame");
  s_aug->add_option("--seed", aug.seed, "Synthesis seed");
  s_aug->add_option("--out", aug.out, "Dataset directory")->required();

  const auto add_train_options = [](CLI::App* cmd, TrainArgs& t) {
    cmd->add_option("--data", t.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    cmd->add_option("--epochs", t.epochs);
    cmd->add_option("--steps-per-epoch", t.steps);
    cmd->add_option("--seed", t.seed, "Training seed");
  };
  TrainArgs trn;
  auto* s_trn = app.add_subcommand("train", "Train a classifier");
  add_train_options(s_trn, trn);
  s_trn->add_option("--out", trn.out, "Checkpoint path")->required();
  s_trn->add_option("--loss-curve", trn.loss_curve, "Loss curve CSV (default: <out>.loss.csv)");
  s_trn->add_option("--holdout-fold", trn.holdout, "Validation fold, 0 for none")->capture_default_str();

  EvaluateArgs evl;
  auto* s_evl = app.add_subcommand("evaluate", "Score a model, or cross-validate");
  add_train_options(s_evl, evl.train);
  s_evl->add_option("--model", evl.model, "Checkpoint to score");
  s_evl->add_flag("--cross-validate", evl.cross_validate, "Train and score one model per fold");
  s_evl->add_option("--out-dir", evl.out_dir, "Report directory")->required();

  StreamArgs str;
  auto* s_str = app.add_subcommand("stream", "Classify t,x,f records as they arrive");
  s_str->add_option("--model", str.model)->capture_default_str();
  s_str->add_option("--in", str.in, "Input file or - for stdin")->capture_default_str();
  s_str->add_option("--out", str.out, "Output file or - for stdout")->capture_default_str();

  ReplayArgs rep;
  auto* s_rep = app.add_subcommand("replay", "Stream a recorded trace and report online accuracy");
  s_rep->add_option("trace", rep.trace)->required()->check(CLI::ExistingFile);
  s_rep->add_option("--model", rep.model)->capture_default_str();
  s_rep->add_option("--out", rep.out, "Per-sample output CSV");

  ExportArgs exp;
  auto* s_exp = app.add_subcommand("export-plot", "Write plot-ready CSV tables");
  s_exp->add_option("kind", exp.kind, "trace | labels | loss | confusion")
      ->required()
      ->check(CLI::IsMember({"trace", "labels", "loss", "confusion"}));
  s_exp->add_option("--in", exp.in)->required()->check(CLI::ExistingFile);
  s_exp->add_option("--predictions", exp.predictions, "Replay output (labels only)");
  s_exp->add_option("--out", exp.out)->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (s_sim->parsed()) return simulate(sim, g, out);
    if (s_flt->parsed()) return filter(flt, g, out);
    if (s_lbl->parsed()) return label(lbl, out);
    if (s_aug->parsed()) return augment(aug, g, out);
    if (s_trn->parsed()) return train_cmd(trn, g, out);
    if (s_evl->parsed()) {
      if (!evl.cross_validate && evl.model.empty()) throw std::invalid_argument("evaluate needs --model or --cross-validate");
      return evaluate(evl, g, out);
    }
    if (s_str->parsed()) return stream(str, g, in, out, err);
    if (s_rep->parsed()) return replay(rep, g, out);
    if (s_exp->parsed()) return export_plot(exp, g, out);
  } catch (const std::exception& e) {
    err << "needle: error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace needle::cli
