#include "needle/pipeline_config.hpp"

#include <set>

#include "csv.hpp"
#include "json.hpp"

namespace needle {

using nlohmann::json;

namespace {

// Reads optional members of one JSON section and rejects unknown keys.
class Section {
 public:
  Section(const json& root, std::string name) : name_(std::move(name)) {
    if (!root.contains(name_)) return;
    node_ = &root.at(name_);
    if (!node_->is_object()) throw std::invalid_argument("config: '" + name_ + "' must be an object");
  }

  template <typename T>
  void read(const char* key, T& field) {
    seen_.insert(key);
    if (!node_ || !node_->contains(key)) return;
    try {
      field = node_->at(key).get<T>();
    } catch (const json::exception& e) {
      throw std::invalid_argument("config: " + name_ + "." + key + ": " + e.what());
    }
  }

  const json* raw(const char* key) {
    seen_.insert(key);
    return node_ && node_->contains(key) ? &node_->at(key) : nullptr;
  }

  std::string path(const char* key) const { return name_ + "." + key; }

  void finish() const {
    if (!node_) return;
    for (const auto& [key, value] : node_->items()) {
      if (!seen_.count(key)) throw std::invalid_argument("config: unknown key " + name_ + "." + key);
    }
  }

 private:
  std::string name_;
  const json* node_ = nullptr;
  std::set<std::string> seen_;
};

}  // namespace

runtime::StreamOptions PipelineConfig::stream_options() const {
  runtime::StreamOptions o;
  o.filter = synthesis.filter;
  o.filter_position = synthesis.filter_position;
  o.filter_force = synthesis.filter_force;
  o.decimation = decimation;
  return o;
}

void PipelineConfig::validate() const {
  if (synthesis.frames < 1) throw std::invalid_argument("config: synthesis.frames must be >= 1");
  if (synthesis.tissues.empty()) throw std::invalid_argument("config: synthesis.tissues is empty");
  if (!(synthesis.gap_min >= 0.0 && synthesis.gap_max >= synthesis.gap_min)) {
    throw std::invalid_argument("config: need 0 <= synthesis.gap_min <= synthesis.gap_max");
  }
  if (!(synthesis.approach_probability >= 0.0 && synthesis.approach_probability <= 1.0 &&
        synthesis.lead_in_probability >= 0.0 && synthesis.lead_in_probability <= 1.0 &&
        synthesis.approach_idle_max >= 0.0)) {
    throw std::invalid_argument(
        "config: synthesis.approach_probability and lead_in_probability must lie in [0, 1], approach_idle_max >= 0");
  }
  synthesis.filter.validate();
  if (augment.pad < 0 || augment.windows_per_frame < 1) {
    throw std::invalid_argument("config: augment.pad must be >= 0 and windows_per_frame >= 1");
  }
  if (folds < 1) throw std::invalid_argument("config: split.folds must be >= 1");
  if (!(eval_fraction >= 0.0 && eval_fraction < 1.0)) {
    throw std::invalid_argument("config: split.eval_fraction must lie in [0, 1)");
  }
  model.validate();
  train.validate();
  if (!(budget_ms > 0.0)) throw std::invalid_argument("config: stream.budget_ms must be positive");
  if (decimation < 1) throw std::invalid_argument("config: stream.decimation must be >= 1");
}

PipelineConfig parse_pipeline_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  if (!root.is_object()) throw std::invalid_argument("config: top level must be an object");
  static const std::set<std::string> sections{"synthesis", "filter", "augment", "split", "model", "train", "stream"};
  for (const auto& [key, value] : root.items()) {
    if (!sections.count(key)) throw std::invalid_argument("config: unknown section " + key);
  }

  PipelineConfig c;
  {
    Section s(root, "synthesis");
    s.read("frames", c.synthesis.frames);
    if (const json* t = s.raw("tissues")) {
      c.synthesis.tissues.clear();
      try {
        for (const auto& name : *t) c.synthesis.tissues.push_back(parse_tissue(name.get<std::string>()));
      } catch (const std::exception& e) {
        throw std::invalid_argument("config: " + s.path("tissues") + ": " + e.what());
      }
    }
    s.read("feed_velocity", c.synthesis.feed_velocity);
    s.read("sample_rate_hz", c.synthesis.sample_rate);
    s.read("gap_min", c.synthesis.gap_min);
    s.read("gap_max", c.synthesis.gap_max);
    s.read("scale_jitter", c.synthesis.scale_jitter);
    s.read("param_jitter", c.synthesis.param_jitter);
    s.read("dwell_probability", c.synthesis.dwell_probability);
    s.read("dwell_earliest", c.synthesis.dwell_earliest);
    s.read("approach_probability", c.synthesis.approach_probability);
    s.read("approach_idle_max", c.synthesis.approach_idle_max);
    s.read("lead_in_probability", c.synthesis.lead_in_probability);
    if (const json* n = s.raw("noise_std")) {
      if (!n->is_null()) c.synthesis.noise_std = n->get<double>();
    }
    s.read("filter_position", c.synthesis.filter_position);
    s.read("filter_force", c.synthesis.filter_force);
    s.read("seed", c.synthesis.seed);
    s.finish();
    c.synthesis.filter.sample_rate_hz = c.synthesis.sample_rate;
  }
  {
    Section s(root, "filter");
    s.read("order", c.synthesis.filter.order);
    s.read("cutoff_hz", c.synthesis.filter.cutoff_hz);
    s.finish();
  }
  {
    Section s(root, "augment");
    s.read("pad", c.augment.pad);
    s.read("windows_per_frame", c.augment.windows_per_frame);
    s.read("seed", c.augment.seed);
    s.finish();
  }
  {
    Section s(root, "split");
    s.read("folds", c.folds);
    s.read("eval_fraction", c.eval_fraction);
    s.read("seed", c.split_seed);
    s.finish();
  }
  {
    Section s(root, "model");
    s.read("d_model", c.model.d_model);
    s.read("num_heads", c.model.num_heads);
    s.read("head_dim", c.model.head_dim);
    s.read("num_blocks", c.model.num_blocks);
    s.read("ffn_dim", c.model.ffn_dim);
    s.read("dropout_rate", c.model.dropout_rate);
    s.read("positional_encoding", c.model.positional_encoding);
    s.finish();
  }
  {
    Section s(root, "train");
    s.read("learning_rate", c.train.learning_rate);
    s.read("beta1", c.train.beta1);
    s.read("beta2", c.train.beta2);
    s.read("epsilon", c.train.epsilon);
    s.read("batch_size", c.train.batch_size);
    s.read("epochs", c.train.epochs);
    s.read("steps_per_epoch", c.train.steps_per_epoch);
    s.read("seed", c.train.seed);
    s.read("max_validation_examples", c.train.max_validation_examples);
    if (const json* clip = s.raw("clip_norm")) {
      if (!clip->is_null()) c.train.clip_norm = clip->get<double>();
    }
    if (const json* final_lr = s.raw("final_learning_rate")) {
      if (!final_lr->is_null()) c.train.final_learning_rate = final_lr->get<double>();
    }
    std::string precision;
    s.read("precision", precision);
    if (precision == "double") {
      c.train.precision = model::Precision::Double;
    } else if (precision == "single") {
      c.train.precision = model::Precision::Single;
    } else if (!precision.empty()) {
      throw std::invalid_argument("config: train.precision must be \"single\" or \"double\"");
    }
    s.finish();
  }
  {
    Section s(root, "stream");
    s.read("budget_ms", c.budget_ms);
    s.read("decimation", c.decimation);
    s.finish();
  }
  c.validate();
  return c;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  return parse_pipeline_config(csv::read_file(path));
}

std::string pipeline_config_to_json(const PipelineConfig& c) {
  json tissues = json::array();
  for (auto t : c.synthesis.tissues) tissues.push_back(std::string(to_string(t)));
  json j;
  j["synthesis"] = {{"frames", c.synthesis.frames},
                    {"tissues", tissues},
                    {"feed_velocity", c.synthesis.feed_velocity},
                    {"sample_rate_hz", c.synthesis.sample_rate},
                    {"gap_min", c.synthesis.gap_min},
                    {"gap_max", c.synthesis.gap_max},
                    {"scale_jitter", c.synthesis.scale_jitter},
                    {"param_jitter", c.synthesis.param_jitter},
                    {"dwell_probability", c.synthesis.dwell_probability},
                    {"dwell_earliest", c.synthesis.dwell_earliest},
                    {"approach_probability", c.synthesis.approach_probability},
                    {"approach_idle_max", c.synthesis.approach_idle_max},
                    {"lead_in_probability", c.synthesis.lead_in_probability},
                    {"noise_std", c.synthesis.noise_std ? json(*c.synthesis.noise_std) : json(nullptr)},
                    {"filter_position", c.synthesis.filter_position},
                    {"filter_force", c.synthesis.filter_force},
                    {"seed", c.synthesis.seed}};
  j["filter"] = {{"order", c.synthesis.filter.order}, {"cutoff_hz", c.synthesis.filter.cutoff_hz}};
  j["augment"] = {{"pad", c.augment.pad}, {"windows_per_frame", c.augment.windows_per_frame}, {"seed", c.augment.seed}};
  j["split"] = {{"folds", c.folds}, {"eval_fraction", c.eval_fraction}, {"seed", c.split_seed}};
  j["model"] = {{"d_model", c.model.d_model},       {"num_heads", c.model.num_heads},
                {"head_dim", c.model.head_dim},     {"num_blocks", c.model.num_blocks},
                {"ffn_dim", c.model.ffn_dim},       {"dropout_rate", c.model.dropout_rate},
                {"positional_encoding", c.model.positional_encoding}};
  j["train"] = {{"learning_rate", c.train.learning_rate},
                {"beta1", c.train.beta1},
                {"beta2", c.train.beta2},
                {"epsilon", c.train.epsilon},
                {"batch_size", c.train.batch_size},
                {"epochs", c.train.epochs},
                {"steps_per_epoch", c.train.steps_per_epoch},
                {"seed", c.train.seed},
                {"clip_norm", c.train.clip_norm ? json(*c.train.clip_norm) : json(nullptr)},
                {"final_learning_rate",
                 c.train.final_learning_rate ? json(*c.train.final_learning_rate) : json(nullptr)},
                {"max_validation_examples", c.train.max_validation_examples},
                {"precision", c.train.precision == model::Precision::Single ? "single" : "double"}};
  j["stream"] = {{"budget_ms", c.budget_ms}, {"decimation", c.decimation}};
  return j.dump(2);
}

}  // namespace needle
