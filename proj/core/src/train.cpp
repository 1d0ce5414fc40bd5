#include "needle/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <string>

#include "needle/random.hpp"

namespace needle::train {

namespace {

struct AdamState {
  std::vector<model::Matrix> m, v;
  long step = 0;
};

void adam_update(model::ModelParameters& params, model::ModelParameters& grads, AdamState& state,
                 const TrainConfig& cfg, double learning_rate) {
  auto p = params.trainable();
  auto g = grads.trainable();
  if (state.m.empty()) {
    for (const auto& [name, t] : p) {
      state.m.push_back(model::Matrix::Zero(t->rows(), t->cols()));
      state.v.push_back(model::Matrix::Zero(t->rows(), t->cols()));
    }
  }
  if (cfg.clip_norm) {
    double sq = 0.0;
    for (const auto& [name, t] : g) sq += t->squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > *cfg.clip_norm) {
      const double scale = *cfg.clip_norm / norm;
      for (auto& [name, t] : g) *t *= scale;
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& grad = *g[i].second;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
    p[i].second->array() -=
        learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.epsilon);
  }
}

std::vector<std::size_t> strided_subset(std::span<const std::size_t> indices, int limit) {
  if (limit <= 0 || indices.size() <= static_cast<std::size_t>(limit)) {
    return {indices.begin(), indices.end()};
  }
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(limit));
  const double stride = static_cast<double>(indices.size()) / limit;
  for (int i = 0; i < limit; ++i) out.push_back(indices[static_cast<std::size_t>(i * stride)]);
  return out;
}

template <typename Fn>
void for_each_chunk(std::span<const std::size_t> indices, int batch_size, Fn&& fn) {
  for (std::size_t begin = 0; begin < indices.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t n = std::min(static_cast<std::size_t>(batch_size), indices.size() - begin);
    fn(begin, indices.subspan(begin, n));
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  if (epochs < 1) throw std::invalid_argument("epochs must be at least 1");
  if (steps_per_epoch < 0) throw std::invalid_argument("steps_per_epoch must be nonnegative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("Adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
  if (clip_norm && !(*clip_norm > 0.0)) throw std::invalid_argument("clip_norm must be positive");
  if (final_learning_rate && !(*final_learning_rate > 0.0 && *final_learning_rate <= learning_rate)) {
    throw std::invalid_argument("final_learning_rate must lie in (0, learning_rate]");
  }
}

double TrainConfig::learning_rate_at(long step, long total_steps) const {
  if (!final_learning_rate || total_steps <= 1) return learning_rate;
  const double progress = std::clamp(static_cast<double>(step) / static_cast<double>(total_steps - 1), 0.0, 1.0);
  return *final_learning_rate +
         0.5 * (learning_rate - *final_learning_rate) * (1.0 + std::cos(std::numbers::pi * progress));
}

model::SequenceBatch make_batch(const dataset::Dataset& data, std::span<const std::size_t> indices,
                                const dataset::Normalization& norm) {
  const int T = data.window_length;
  model::SequenceBatch batch;
  batch.batch = static_cast<int>(indices.size());
  batch.data.resize(static_cast<Eigen::Index>(indices.size()) * T, dataset::kChannels);
  const double sx = 1.0 / norm.stddev[0];
  const double sf = 1.0 / norm.stddev[1];
  Eigen::Index row = 0;
  for (std::size_t idx : indices) {
    const auto& ex = data.examples.at(idx);
    for (const auto& s : ex.samples) {
      batch.data(row, 0) = (static_cast<double>(s.x) - norm.mean[0]) * sx;
      batch.data(row, 1) = (static_cast<double>(s.f) - norm.mean[1]) * sf;
      ++row;
    }
  }
  return batch;
}

std::vector<int> labels_of(const dataset::Dataset& data, std::span<const std::size_t> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t idx : indices) out.push_back(to_index(data.examples.at(idx).label));
  return out;
}

TrainResult train(const dataset::Dataset& data, std::span<const std::size_t> training,
                  std::span<const std::size_t> validation, const model::ModelConfig& model_config,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  model_config.validate();
  if (training.empty()) throw std::invalid_argument("training set is empty");
  if (data.window_length != model_config.seq_len) {
    throw std::invalid_argument("dataset windows have " + std::to_string(data.window_length) +
                                " samples but the model expects " + std::to_string(model_config.seq_len));
  }

  TrainResult result;
  Classifier& current = result.classifier;
  current.normalization = dataset::compute_normalization(data, training);
  current.params = model::initialize(model_config, derive_seed(config.seed, 1));

  const std::vector<std::size_t> val = strided_subset(validation, config.max_validation_examples);
  std::vector<std::size_t> order(training.begin(), training.end());
  std::mt19937_64 shuffle_rng(derive_seed(config.seed, 2));
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  std::size_t cursor = 0;

  const auto batch_size = static_cast<std::size_t>(config.batch_size);
  const std::size_t full_pass = (order.size() + batch_size - 1) / batch_size;
  const std::size_t steps = config.steps_per_epoch > 0 ? static_cast<std::size_t>(config.steps_per_epoch)
                                                       : full_pass;
  const long total_steps = static_cast<long>(steps) * config.epochs;
  AdamState adam;
  std::vector<std::size_t> picked;
  double best = std::numeric_limits<double>::infinity();
  model::ModelParameters best_params;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    double total = 0.0;
    for (std::size_t step = 0; step < steps; ++step) {
      if (cursor >= order.size()) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        cursor = 0;
      }
      const std::size_t n = std::min(batch_size, order.size() - cursor);
      picked.assign(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                    order.begin() + static_cast<std::ptrdiff_t>(cursor + n));
      cursor += n;
      const auto x = make_batch(data, picked, current.normalization);
      const auto y = labels_of(data, picked);
      auto lg = model::loss_and_gradients(x, y, current.params,
                                          derive_seed(config.seed, 1000 + adam.step), config.precision);
      if (!std::isfinite(lg.loss)) {
        throw model::NumericalError("training loss became non-finite at epoch " + std::to_string(epoch) +
                                    ", step " + std::to_string(step + 1));
      }
      total += lg.loss;
      adam_update(current.params, lg.gradients, adam, config, config.learning_rate_at(adam.step, total_steps));
      if (!current.params.all_finite()) {
        throw model::NumericalError("parameters became non-finite at epoch " + std::to_string(epoch) +
                                    ", step " + std::to_string(step + 1));
      }
    }
    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = total / static_cast<double>(steps);
    if (!val.empty()) {
      record.val_loss = evaluate_loss(current, data, val, std::max(config.batch_size, 64), config.precision);
      if (!std::isfinite(record.val_loss)) {
        throw model::NumericalError("validation loss became non-finite at epoch " + std::to_string(epoch));
      }
    }
    result.curve.push_back(record);
    const double criterion = val.empty() ? -static_cast<double>(epoch) : record.val_loss;
    if (criterion < best) {
      best = criterion;
      best_params = current.params;
      result.best_epoch = epoch;
    }
    if (on_epoch && !on_epoch(record)) break;
  }
  current.params = std::move(best_params);
  return result;
}

double evaluate_loss(const Classifier& classifier, const dataset::Dataset& data,
                     std::span<const std::size_t> indices, int batch_size, model::Precision precision) {
  if (indices.empty()) throw std::invalid_argument("no examples to evaluate");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  double total = 0.0;
  for_each_chunk(indices, batch_size, [&](std::size_t, std::span<const std::size_t> chunk) {
    const auto x = make_batch(data, chunk, classifier.normalization);
    const auto y = labels_of(data, chunk);
    const model::Matrix p = model::forward(x, classifier.params, precision);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      total -= std::log(std::max(p(static_cast<Eigen::Index>(i), y[i]), 1e-300));
    }
  });
  return total / static_cast<double>(indices.size());
}

model::Matrix predict_proba(const Classifier& classifier, const dataset::Dataset& data,
                            std::span<const std::size_t> indices, int batch_size, model::Precision precision) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  model::Matrix out(static_cast<Eigen::Index>(indices.size()), classifier.params.config.num_classes);
  for_each_chunk(indices, batch_size, [&](std::size_t begin, std::span<const std::size_t> chunk) {
    const auto x = make_batch(data, chunk, classifier.normalization);
    out.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(chunk.size())) =
        model::forward(x, classifier.params, precision);
  });
  return out;
}

std::vector<ClassLabel> argmax_labels(const model::Matrix& probabilities) {
  std::vector<ClassLabel> out;
  out.reserve(static_cast<std::size_t>(probabilities.rows()));
  for (Eigen::Index i = 0; i < probabilities.rows(); ++i) {
    Eigen::Index best = 0;
    probabilities.row(i).maxCoeff(&best);
    out.push_back(label_from_index(static_cast<int>(best)));
  }
  return out;
}

std::vector<ClassLabel> predict(const Classifier& classifier, const dataset::Dataset& data,
                                std::span<const std::size_t> indices, int batch_size,
                                model::Precision precision) {
  return argmax_labels(predict_proba(classifier, data, indices, batch_size, precision));
}

}  // namespace needle::train
