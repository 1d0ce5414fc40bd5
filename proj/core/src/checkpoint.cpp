#include "needle/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"

namespace needle::checkpoint {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'N', 'D', 'L', 'C', 'K', 'P', 'T', '1'};

json config_json(const model::ModelConfig& c) {
  return json{{"seq_len", c.seq_len},
              {"in_features", c.in_features},
              {"d_model", c.d_model},
              {"num_heads", c.num_heads},
              {"head_dim", c.head_dim},
              {"num_blocks", c.num_blocks},
              {"ffn_dim", c.ffn_dim},
              {"num_classes", c.num_classes},
              {"pooling", "mean"},
              {"dropout_rate", c.dropout_rate},
              {"positional_encoding", c.positional_encoding},
              {"layer_norm_eps", c.layer_norm_eps}};
}

model::ModelConfig config_from(const json& j) {
  model::ModelConfig c;
  c.seq_len = j.at("seq_len").get<int>();
  c.in_features = j.at("in_features").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.head_dim = j.at("head_dim").get<int>();
  c.num_blocks = j.at("num_blocks").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  if (j.at("pooling").get<std::string>() != "mean") throw CheckpointError("unsupported pooling");
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.positional_encoding = j.at("positional_encoding").get<bool>();
  c.layer_norm_eps = j.at("layer_norm_eps").get<double>();
  return c;
}

// Name -> matrix for every stored tensor, in file order.
std::vector<std::pair<std::string, model::Matrix*>> stored_tensors(train::Classifier& c, model::Matrix& mean,
                                                                   model::Matrix& stddev) {
  auto list = c.params.trainable();
  list.emplace_back("positional", &c.params.positional);
  list.emplace_back("norm.mean", &mean);
  list.emplace_back("norm.std", &stddev);
  return list;
}

bool same_bits(const model::Matrix& a, const model::Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

void save(const std::filesystem::path& path, const train::Classifier& classifier) {
  train::Classifier copy = classifier;
  model::Matrix mean(1, dataset::kChannels), stddev(1, dataset::kChannels);
  for (int i = 0; i < dataset::kChannels; ++i) {
    mean(0, i) = classifier.normalization.mean[static_cast<std::size_t>(i)];
    stddev(0, i) = classifier.normalization.stddev[static_cast<std::size_t>(i)];
  }
  const auto tensors = stored_tensors(copy, mean, stddev);
  json header{{"format", "needle-checkpoint"}, {"version", 1}, {"config", config_json(classifier.params.config)}};
  header["tensors"] = json::array();
  for (const auto& [name, m] : tensors) {
    header["tensors"].push_back(json{{"name", name}, {"rows", m->rows()}, {"cols", m->cols()}});
  }
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  const auto length = static_cast<std::uint32_t>(text.size());
  out.write(reinterpret_cast<const char*>(&length), sizeof length);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, m] : tensors) {
    out.write(reinterpret_cast<const char*>(m->data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m->size())));
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

train::Classifier load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string() + ": ";
  if (bytes.size() < sizeof kMagic + 4 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError(where + "not a needle checkpoint");
  }
  std::uint32_t length = 0;
  std::memcpy(&length, bytes.data() + sizeof kMagic, sizeof length);
  std::size_t offset = sizeof kMagic + sizeof length;
  if (bytes.size() < offset + length) throw CheckpointError(where + "truncated header");

  json header;
  model::ModelConfig config;
  try {
    header = json::parse(bytes.substr(offset, length));
    if (header.at("format").get<std::string>() != "needle-checkpoint" || header.at("version").get<int>() != 1) {
      throw CheckpointError("unsupported checkpoint format");
    }
    config = config_from(header.at("config"));
    config.validate();
  } catch (const CheckpointError& e) {
    throw CheckpointError(where + e.what());
  } catch (const std::exception& e) {
    throw CheckpointError(where + "bad header: " + e.what());
  }
  offset += length;

  train::Classifier result;
  result.params = model::ModelParameters::zeros(config);
  model::Matrix mean(1, dataset::kChannels), stddev(1, dataset::kChannels);
  const auto tensors = stored_tensors(result, mean, stddev);
  const auto& entries = header.at("tensors");
  if (entries.size() != tensors.size()) {
    throw CheckpointError(where + "expected " + std::to_string(tensors.size()) + " tensors, header lists " +
                          std::to_string(entries.size()));
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& [name, m] = tensors[i];
    const auto& e = entries[i];
    if (e.at("name").get<std::string>() != name || e.at("rows").get<Eigen::Index>() != m->rows() ||
        e.at("cols").get<Eigen::Index>() != m->cols()) {
      throw CheckpointError(where + "tensor " + std::to_string(i) + " does not match " + name + " (" +
                            std::to_string(m->rows()) + "x" + std::to_string(m->cols()) + ")");
    }
    const std::size_t n = sizeof(double) * static_cast<std::size_t>(m->size());
    if (bytes.size() < offset + n) throw CheckpointError(where + "truncated data in tensor " + name);
    std::memcpy(m->data(), bytes.data() + offset, n);
    offset += n;
  }
  if (offset != bytes.size()) throw CheckpointError(where + "trailing bytes after the last tensor");
  for (int i = 0; i < dataset::kChannels; ++i) {
    result.normalization.mean[static_cast<std::size_t>(i)] = mean(0, i);
    result.normalization.stddev[static_cast<std::size_t>(i)] = stddev(0, i);
  }
  if (!result.params.all_finite()) throw CheckpointError(where + "non-finite parameter values");
  return result;
}

bool identical(const train::Classifier& a, const train::Classifier& b) {
  if (!(a.params.config == b.params.config)) return false;
  if (std::memcmp(&a.normalization, &b.normalization, sizeof a.normalization) != 0) return false;
  const auto ta = a.params.trainable();
  const auto tb = b.params.trainable();
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (!same_bits(*ta[i].second, *tb[i].second)) return false;
  }
  return same_bits(a.params.positional, b.params.positional);
}

void write_loss_curve(const std::filesystem::path& path, std::span<const train::EpochRecord> curve) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,train_loss,val_loss\n";
  char line[96];
  for (const auto& r : curve) {
    if (std::isnan(r.val_loss)) {
      std::snprintf(line, sizeof line, "%d,%.17g,\n", r.epoch, r.train_loss);
    } else {
      std::snprintf(line, sizeof line, "%d,%.17g,%.17g\n", r.epoch, r.train_loss, r.val_loss);
    }
    out << line;
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace needle::checkpoint
