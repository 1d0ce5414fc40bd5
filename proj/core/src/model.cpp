#include "needle/model.hpp"

#include <cmath>
#include <random>
#include <type_traits>

#include "needle/random.hpp"

namespace needle::model {

namespace {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using Col = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using Arr = Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

// Single-precision mirror of ModelParameters with identical member names, so
// the kernels below can be written once over either layout.
struct FloatBlock {
  Mat<float> wq, wk, wv, wo, ln1_gain, ln1_bias, ffn_w1, ffn_b1, ffn_w2, ffn_b2, ln2_gain, ln2_bias;
};

struct FloatNet {
  ModelConfig config;
  Mat<float> input_weight, input_bias, positional;
  std::vector<FloatBlock> blocks;
  Mat<float> head_w1, head_b1, head_w2, head_b2;

  static FloatNet from(const ModelParameters& p) {
    FloatNet n;
    n.config = p.config;
    n.input_weight = p.input_weight.cast<float>();
    n.input_bias = p.input_bias.cast<float>();
    n.positional = p.positional.cast<float>();
    for (const auto& b : p.blocks) {
      n.blocks.push_back({b.wq.cast<float>(), b.wk.cast<float>(), b.wv.cast<float>(), b.wo.cast<float>(),
                          b.ln1_gain.cast<float>(), b.ln1_bias.cast<float>(), b.ffn_w1.cast<float>(),
                          b.ffn_b1.cast<float>(), b.ffn_w2.cast<float>(), b.ffn_b2.cast<float>(),
                          b.ln2_gain.cast<float>(), b.ln2_bias.cast<float>()});
    }
    n.head_w1 = p.head_w1.cast<float>();
    n.head_b1 = p.head_b1.cast<float>();
    n.head_w2 = p.head_w2.cast<float>();
    n.head_b2 = p.head_b2.cast<float>();
    return n;
  }

  static FloatNet zeros_like(const FloatNet& p) {
    FloatNet n = p;
    const auto zero = [](Mat<float>& m) { m.setZero(); };
    zero(n.input_weight);
    zero(n.input_bias);
    zero(n.positional);
    for (auto& b : n.blocks) {
      for (Mat<float>* m : {&b.wq, &b.wk, &b.wv, &b.wo, &b.ln1_gain, &b.ln1_bias, &b.ffn_w1, &b.ffn_b1,
                            &b.ffn_w2, &b.ffn_b2, &b.ln2_gain, &b.ln2_bias}) {
        zero(*m);
      }
    }
    zero(n.head_w1);
    zero(n.head_b1);
    zero(n.head_w2);
    zero(n.head_b2);
    return n;
  }

  void copy_to(ModelParameters& p) const {
    p.input_weight = input_weight.cast<double>();
    p.input_bias = input_bias.cast<double>();
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const auto& s = blocks[i];
      auto& d = p.blocks[i];
      d.wq = s.wq.cast<double>();
      d.wk = s.wk.cast<double>();
      d.wv = s.wv.cast<double>();
      d.wo = s.wo.cast<double>();
      d.ln1_gain = s.ln1_gain.cast<double>();
      d.ln1_bias = s.ln1_bias.cast<double>();
      d.ffn_w1 = s.ffn_w1.cast<double>();
      d.ffn_b1 = s.ffn_b1.cast<double>();
      d.ffn_w2 = s.ffn_w2.cast<double>();
      d.ffn_b2 = s.ffn_b2.cast<double>();
      d.ln2_gain = s.ln2_gain.cast<double>();
      d.ln2_bias = s.ln2_bias.cast<double>();
    }
    p.head_w1 = head_w1.cast<double>();
    p.head_b1 = head_b1.cast<double>();
    p.head_w2 = head_w2.cast<double>();
    p.head_b2 = head_b2.cast<double>();
  }
};

template <typename Net>
using ScalarOf = typename decltype(Net::input_weight)::Scalar;

// Stable row softmax in place.
template <typename S>
void softmax_rows(Mat<S>& s) {
  const Col<S> max = s.rowwise().maxCoeff();
  s.colwise() -= max;
  s = s.array().exp().matrix();
  const Col<S> sum = s.rowwise().sum();
  s.array().colwise() /= sum.array();
}

template <typename S>
struct NormCache {
  Mat<S> xhat;
  Col<S> rstd;
};

template <typename S>
Mat<S> layer_norm_affine(const Mat<S>& x, const Mat<S>& gain, const Mat<S>& bias, double eps,
                         NormCache<S>* cache) {
  const Col<S> mean = x.rowwise().mean();
  Mat<S> centered = x.colwise() - mean;
  const Col<S> var = centered.array().square().rowwise().mean().matrix();
  const Col<S> rstd = (var.array() + static_cast<S>(eps)).rsqrt().matrix();
  centered.array().colwise() *= rstd.array();
  Mat<S> y = (centered.array().rowwise() * gain.row(0).array()).matrix();
  y.rowwise() += bias.row(0);
  if (cache) {
    cache->xhat = std::move(centered);
    cache->rstd = rstd;
  }
  return y;
}

// dy -> dx, accumulating gain/bias gradients.
template <typename S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const NormCache<S>& cache, const Mat<S>& gain,
                           Mat<S>& dgain, Mat<S>& dbias) {
  dgain += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  dbias += dy.colwise().sum();
  const Arr<S> dxhat = dy.array().rowwise() * gain.row(0).array();
  const Col<S> m1 = dxhat.rowwise().mean().matrix();
  const Col<S> m2 = (dxhat * cache.xhat.array()).rowwise().mean().matrix();
  Arr<S> dx = dxhat;
  dx.colwise() -= m1.array();
  dx -= cache.xhat.array().colwise() * m2.array();
  dx.colwise() *= cache.rstd.array();
  return dx.matrix();
}

template <typename S>
Mat<S> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, std::mt19937_64& rng) {
  Mat<S> mask(rows, cols);
  std::bernoulli_distribution keep(1.0 - rate);
  const S scale = static_cast<S>(1.0 / (1.0 - rate));
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? scale : S(0);
  return mask;
}

template <typename S>
struct BlockCache {
  Mat<S> input;
  Mat<S> q, k, v;
  std::vector<Mat<S>> probs;  // b * heads + m
  Mat<S> concat;
  Mat<S> drop1;
  NormCache<S> ln1;
  Mat<S> l;
  Mat<S> ffn_pre;
  Mat<S> ffn_act;
  Mat<S> drop2;
  NormCache<S> ln2;
};

template <typename S>
struct ForwardCache {
  std::vector<BlockCache<S>> blocks;
  Mat<S> input;
  Mat<S> encoded;
  Mat<S> pooled;
  Mat<S> head_pre;
  Mat<S> head_act;
};

template <typename S>
void check_finite(const Mat<S>& m, const std::string& where) {
  if (!m.allFinite()) throw NumericalError("non-finite activation in " + where);
}

void check_input(const SequenceBatch& x, const ModelConfig& config) {
  require(x.batch > 0, "batch must be positive");
  require(x.data.rows() == static_cast<Eigen::Index>(x.batch) * config.seq_len,
          "input has " + std::to_string(x.data.rows()) + " rows, expected batch * " +
              std::to_string(config.seq_len));
  require(x.data.cols() == config.in_features,
          "input has " + std::to_string(x.data.cols()) + " features, expected " +
              std::to_string(config.in_features));
  if (!x.data.allFinite()) throw NumericalError("non-finite value in model input");
}

template <typename S, typename Block>
Mat<S> run_block(const Mat<S>& e, int batch, const Block& p, const ModelConfig& c, int index,
                 BlockCache<S>* cache, std::mt19937_64* rng) {
  const int T = c.seq_len;
  const int dk = c.head_dim;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dk)));
  Mat<S> q = e * p.wq;
  Mat<S> k = e * p.wk;
  Mat<S> v = e * p.wv;
  Mat<S> concat(e.rows(), c.d_model);
  if (cache) cache->probs.resize(static_cast<std::size_t>(batch) * c.num_heads);
  Mat<S> s(T, T);
  for (int b = 0; b < batch; ++b) {
    for (int m = 0; m < c.num_heads; ++m) {
      s.noalias() = q.block(b * T, m * dk, T, dk) * k.block(b * T, m * dk, T, dk).transpose();
      s *= scale;
      softmax_rows(s);
      concat.block(b * T, m * dk, T, dk).noalias() = s * v.block(b * T, m * dk, T, dk);
      if (cache) cache->probs[static_cast<std::size_t>(b) * c.num_heads + m] = s;
    }
  }
  Mat<S> h = concat * p.wo;
  const bool drop = rng && c.dropout_rate > 0.0;
  if (drop) {
    Mat<S> mask = dropout_mask<S>(h.rows(), h.cols(), c.dropout_rate, *rng);
    h.array() *= mask.array();
    if (cache) cache->drop1 = std::move(mask);
  }
  NormCache<S> ln1, ln2;
  Mat<S> l = layer_norm_affine<S>(e + h, p.ln1_gain, p.ln1_bias, c.layer_norm_eps, cache ? &ln1 : nullptr);
  Mat<S> pre = l * p.ffn_w1;
  pre.rowwise() += p.ffn_b1.row(0);
  Mat<S> act = pre.cwiseMax(S(0));
  Mat<S> f = act * p.ffn_w2;
  f.rowwise() += p.ffn_b2.row(0);
  if (drop) {
    Mat<S> mask = dropout_mask<S>(f.rows(), f.cols(), c.dropout_rate, *rng);
    f.array() *= mask.array();
    if (cache) cache->drop2 = std::move(mask);
  }
  Mat<S> out = layer_norm_affine<S>(l + f, p.ln2_gain, p.ln2_bias, c.layer_norm_eps, cache ? &ln2 : nullptr);
  check_finite(out, "encoder block " + std::to_string(index + 1));
  if (cache) {
    cache->input = e;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->concat = std::move(concat);
    cache->ln1 = std::move(ln1);
    cache->l = std::move(l);
    cache->ffn_pre = std::move(pre);
    cache->ffn_act = std::move(act);
    cache->ln2 = std::move(ln2);
  }
  return out;
}

template <typename Net, typename S = ScalarOf<Net>>
Mat<S> embed_as(const Mat<S>& x, int batch, const Net& net) {
  const ModelConfig& c = net.config;
  Mat<S> e = x * net.input_weight;
  e.rowwise() += net.input_bias.row(0);
  for (int b = 0; b < batch; ++b) e.middleRows(b * c.seq_len, c.seq_len) += net.positional;
  return e;
}

// Returns logits.
template <typename Net, typename S = ScalarOf<Net>>
Mat<S> run_forward(const SequenceBatch& x, const Net& net, std::type_identity_t<ForwardCache<S>>* cache, std::mt19937_64* rng,
                   std::vector<std::vector<Matrix>>* attention) {
  const ModelConfig& c = net.config;
  check_input(x, c);
  Mat<S> input = x.data.template cast<S>();
  Mat<S> h = embed_as(input, x.batch, net);
  check_finite(h, "input embedding");
  if (cache) cache->blocks.resize(net.blocks.size());
  if (attention) attention->assign(net.blocks.size(), {});
  for (std::size_t i = 0; i < net.blocks.size(); ++i) {
    BlockCache<S> local;
    BlockCache<S>* bc = cache ? &cache->blocks[i] : (attention ? &local : nullptr);
    h = run_block<S>(h, x.batch, net.blocks[i], c, static_cast<int>(i), bc, rng);
    if (attention) {
      for (const auto& pr : bc->probs) (*attention)[i].push_back(pr.template cast<double>());
    }
  }
  const int T = c.seq_len;
  Mat<S> pooled(x.batch, c.d_model);
  for (int b = 0; b < x.batch; ++b) pooled.row(b) = h.middleRows(b * T, T).colwise().mean();
  Mat<S> pre = pooled * net.head_w1;
  pre.rowwise() += net.head_b1.row(0);
  Mat<S> act = pre.cwiseMax(S(0));
  Mat<S> logits = act * net.head_w2;
  logits.rowwise() += net.head_b2.row(0);
  check_finite(logits, "classifier head");
  if (cache) {
    cache->input = std::move(input);
    cache->encoded = std::move(h);
    cache->pooled = std::move(pooled);
    cache->head_pre = std::move(pre);
    cache->head_act = std::move(act);
  }
  return logits;
}

void check_labels(std::span<const int> labels, int batch, int classes) {
  require(static_cast<int>(labels.size()) == batch,
          "expected " + std::to_string(batch) + " labels, got " + std::to_string(labels.size()));
  for (int y : labels) {
    if (y < 0 || y >= classes) {
      throw std::out_of_range("label " + std::to_string(y) + " outside 0.." + std::to_string(classes - 1));
    }
  }
}

// Mean cross-entropy (accumulated in double); turns logits into
// d(loss)/d(logits) when `grad` is set.
template <typename S>
double cross_entropy(Mat<S>& logits, std::span<const int> labels, bool grad) {
  const Eigen::Index n = logits.rows();
  const Col<S> max = logits.rowwise().maxCoeff();
  logits.colwise() -= max;
  const Col<S> lse = logits.array().exp().rowwise().sum().log().matrix();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    total -= static_cast<double>(logits(i, labels[static_cast<std::size_t>(i)])) - static_cast<double>(lse(i));
  }
  if (grad) {
    logits.colwise() -= lse;
    logits = logits.array().exp().matrix();
    for (Eigen::Index i = 0; i < n; ++i) logits(i, labels[static_cast<std::size_t>(i)]) -= S(1);
    logits /= static_cast<S>(n);
  }
  return total / static_cast<double>(n);
}

template <typename S, typename Block>
Mat<S> block_backward(const Mat<S>& dout, const BlockCache<S>& bc, const Block& p, Block& g,
                      const ModelConfig& c, int batch) {
  const int T = c.seq_len;
  const int dk = c.head_dim;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dk)));

  Mat<S> dr2 = layer_norm_backward<S>(dout, bc.ln2, p.ln2_gain, g.ln2_gain, g.ln2_bias);
  Mat<S> dl = dr2;
  Mat<S> df = std::move(dr2);
  if (bc.drop2.size() > 0) df.array() *= bc.drop2.array();
  g.ffn_w2.noalias() += bc.ffn_act.transpose() * df;
  g.ffn_b2 += df.colwise().sum();
  Mat<S> dpre = df * p.ffn_w2.transpose();
  dpre.array() *= (bc.ffn_pre.array() > S(0)).template cast<S>();
  g.ffn_w1.noalias() += bc.l.transpose() * dpre;
  g.ffn_b1 += dpre.colwise().sum();
  dl.noalias() += dpre * p.ffn_w1.transpose();

  Mat<S> dr1 = layer_norm_backward<S>(dl, bc.ln1, p.ln1_gain, g.ln1_gain, g.ln1_bias);
  Mat<S> de = dr1;
  Mat<S> dh = std::move(dr1);
  if (bc.drop1.size() > 0) dh.array() *= bc.drop1.array();
  g.wo.noalias() += bc.concat.transpose() * dh;
  const Mat<S> dconcat = dh * p.wo.transpose();

  Mat<S> dq(dconcat.rows(), c.d_model), dkm(dconcat.rows(), c.d_model), dv(dconcat.rows(), c.d_model);
  Mat<S> dp(T, T);
  for (int b = 0; b < batch; ++b) {
    for (int m = 0; m < c.num_heads; ++m) {
      const Mat<S>& prob = bc.probs[static_cast<std::size_t>(b) * c.num_heads + m];
      const auto da = dconcat.block(b * T, m * dk, T, dk);
      dv.block(b * T, m * dk, T, dk).noalias() = prob.transpose() * da;
      dp.noalias() = da * bc.v.block(b * T, m * dk, T, dk).transpose();
      const Col<S> inner = (dp.array() * prob.array()).rowwise().sum().matrix();
      dp.colwise() -= inner;
      dp.array() *= prob.array() * scale;
      dq.block(b * T, m * dk, T, dk).noalias() = dp * bc.k.block(b * T, m * dk, T, dk);
      dkm.block(b * T, m * dk, T, dk).noalias() = dp.transpose() * bc.q.block(b * T, m * dk, T, dk);
    }
  }
  g.wq.noalias() += bc.input.transpose() * dq;
  g.wk.noalias() += bc.input.transpose() * dkm;
  g.wv.noalias() += bc.input.transpose() * dv;
  de.noalias() += dq * p.wq.transpose();
  de.noalias() += dkm * p.wk.transpose();
  de.noalias() += dv * p.wv.transpose();
  return de;
}

// Fills `g` (zeroed, same shapes as `net`) and returns the loss.
template <typename Net, typename S = ScalarOf<Net>>
double backprop(const SequenceBatch& x, std::span<const int> labels, const Net& net, Net& g,
                std::uint64_t dropout_seed) {
  const ModelConfig& c = net.config;
  ForwardCache<S> cache;
  std::mt19937_64 rng(dropout_seed);
  Mat<S> dlogits = run_forward(x, net, &cache, c.dropout_rate > 0.0 ? &rng : nullptr, nullptr);
  const double value = cross_entropy(dlogits, labels, true);

  g.head_w2.noalias() = cache.head_act.transpose() * dlogits;
  g.head_b2 = dlogits.colwise().sum();
  Mat<S> dpre = dlogits * net.head_w2.transpose();
  dpre.array() *= (cache.head_pre.array() > S(0)).template cast<S>();
  g.head_w1.noalias() = cache.pooled.transpose() * dpre;
  g.head_b1 = dpre.colwise().sum();
  const Mat<S> dpooled = dpre * net.head_w1.transpose();

  const int T = c.seq_len;
  Mat<S> dh(cache.encoded.rows(), c.d_model);
  for (int b = 0; b < x.batch; ++b) {
    dh.middleRows(b * T, T).rowwise() = dpooled.row(b) / static_cast<S>(T);
  }
  for (std::size_t i = net.blocks.size(); i-- > 0;) {
    dh = block_backward<S>(dh, cache.blocks[i], net.blocks[i], g.blocks[i], c, x.batch);
  }
  g.input_weight.noalias() = cache.input.transpose() * dh;
  g.input_bias = dh.colwise().sum();
  return value;
}

}  // namespace

void ModelConfig::validate() const {
  require(seq_len > 0, "seq_len must be positive");
  require(in_features > 0, "in_features must be positive");
  require(num_heads > 0 && head_dim > 0, "num_heads and head_dim must be positive");
  require(d_model == num_heads * head_dim,
          "d_model (" + std::to_string(d_model) + ") must equal num_heads * head_dim (" +
              std::to_string(num_heads * head_dim) + ")");
  require(num_blocks > 0, "num_blocks must be positive");
  require(ffn_dim > 0, "ffn_dim must be positive");
  require(num_classes == kNumClasses, "num_classes must be " + std::to_string(kNumClasses));
  require(dropout_rate >= 0.0 && dropout_rate < 1.0, "dropout_rate must lie in [0, 1)");
  require(layer_norm_eps > 0.0, "layer_norm_eps must be positive");
}

ModelConfig desk_config() { return ModelConfig{}; }

ModelParameters ModelParameters::zeros(const ModelConfig& config) {
  config.validate();
  const int d = config.d_model;
  ModelParameters p;
  p.config = config;
  p.input_weight = Matrix::Zero(config.in_features, d);
  p.input_bias = Matrix::Zero(1, d);
  p.positional = config.positional_encoding ? sinusoidal_table(config.seq_len, d)
                                            : Matrix::Zero(config.seq_len, d);
  p.blocks.resize(static_cast<std::size_t>(config.num_blocks));
  for (auto& b : p.blocks) {
    b.wq = b.wk = b.wv = b.wo = Matrix::Zero(d, d);
    b.ln1_gain = b.ln1_bias = b.ln2_gain = b.ln2_bias = Matrix::Zero(1, d);
    b.ffn_w1 = Matrix::Zero(d, config.ffn_dim);
    b.ffn_b1 = Matrix::Zero(1, config.ffn_dim);
    b.ffn_w2 = Matrix::Zero(config.ffn_dim, d);
    b.ffn_b2 = Matrix::Zero(1, d);
  }
  p.head_w1 = Matrix::Zero(d, config.ffn_dim);
  p.head_b1 = Matrix::Zero(1, config.ffn_dim);
  p.head_w2 = Matrix::Zero(config.ffn_dim, config.num_classes);
  p.head_b2 = Matrix::Zero(1, config.num_classes);
  return p;
}

std::vector<std::pair<std::string, Matrix*>> ModelParameters::trainable() {
  std::vector<std::pair<std::string, Matrix*>> out;
  out.emplace_back("input.weight", &input_weight);
  out.emplace_back("input.bias", &input_bias);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string pre = "block" + std::to_string(i + 1) + ".";
    auto& b = blocks[i];
    out.emplace_back(pre + "wq", &b.wq);
    out.emplace_back(pre + "wk", &b.wk);
    out.emplace_back(pre + "wv", &b.wv);
    out.emplace_back(pre + "wo", &b.wo);
    out.emplace_back(pre + "ln1.gain", &b.ln1_gain);
    out.emplace_back(pre + "ln1.bias", &b.ln1_bias);
    out.emplace_back(pre + "ffn.w1", &b.ffn_w1);
    out.emplace_back(pre + "ffn.b1", &b.ffn_b1);
    out.emplace_back(pre + "ffn.w2", &b.ffn_w2);
    out.emplace_back(pre + "ffn.b2", &b.ffn_b2);
    out.emplace_back(pre + "ln2.gain", &b.ln2_gain);
    out.emplace_back(pre + "ln2.bias", &b.ln2_bias);
  }
  out.emplace_back("head.w1", &head_w1);
  out.emplace_back("head.b1", &head_b1);
  out.emplace_back("head.w2", &head_w2);
  out.emplace_back("head.b2", &head_b2);
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> ModelParameters::trainable() const {
  auto mutable_list = const_cast<ModelParameters*>(this)->trainable();
  std::vector<std::pair<std::string, const Matrix*>> out;
  out.reserve(mutable_list.size());
  for (auto& [name, ptr] : mutable_list) out.emplace_back(std::move(name), ptr);
  return out;
}

std::size_t ModelParameters::trainable_count() const {
  std::size_t n = 0;
  for (const auto& [name, m] : trainable()) n += static_cast<std::size_t>(m->size());
  return n;
}

bool ModelParameters::all_finite() const {
  for (const auto& [name, m] : trainable()) {
    if (!m->allFinite()) return false;
  }
  return positional.allFinite();
}

Matrix sinusoidal_table(int seq_len, int d_model) {
  require(seq_len > 0 && d_model > 0, "position table needs positive sizes");
  Matrix pe(seq_len, d_model);
  for (int t = 0; t < seq_len; ++t) {
    for (int j = 0; j < d_model; ++j) {
      const int i2 = j - (j % 2);
      const double angle = t / std::pow(10000.0, static_cast<double>(i2) / d_model);
      pe(t, j) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

ModelParameters initialize(const ModelConfig& config, std::uint64_t seed) {
  ModelParameters p = ModelParameters::zeros(config);
  std::mt19937_64 rng(derive_seed(seed, 0x6d6f64656cULL));
  const auto fill = [&rng](Matrix& w) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.rows()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  };
  fill(p.input_weight);
  for (auto& b : p.blocks) {
    fill(b.wq);
    fill(b.wk);
    fill(b.wv);
    fill(b.wo);
    fill(b.ffn_w1);
    fill(b.ffn_w2);
    b.ln1_gain.setOnes();
    b.ln2_gain.setOnes();
  }
  fill(p.head_w1);
  fill(p.head_w2);
  return p;
}

Matrix embed(const SequenceBatch& x, const ModelParameters& params) {
  check_input(x, params.config);
  return embed_as(x.data, x.batch, params);
}

Matrix attention_weights(const Eigen::Ref<const Matrix>& q, const Eigen::Ref<const Matrix>& k) {
  require(q.cols() > 0, "attention needs d_k > 0");
  require(q.cols() == k.cols(), "query and key widths differ");
  Matrix s = q * k.transpose() / std::sqrt(static_cast<double>(q.cols()));
  softmax_rows(s);
  return s;
}

Matrix attention_head(const Eigen::Ref<const Matrix>& q, const Eigen::Ref<const Matrix>& k,
                      const Eigen::Ref<const Matrix>& v) {
  require(k.rows() == v.rows(), "key and value lengths differ");
  return attention_weights(q, k) * v;
}

Matrix layer_norm(const Eigen::Ref<const Matrix>& x, double eps) {
  require(eps > 0.0, "layer norm eps must be positive");
  const Matrix ones = Matrix::Ones(1, x.cols());
  const Matrix zeros = Matrix::Zero(1, x.cols());
  return layer_norm_affine<double>(x, ones, zeros, eps, nullptr);
}

Matrix encoder_block(const Matrix& e, int batch, const BlockParameters& block,
                     const ModelConfig& config, int block_index) {
  config.validate();
  require(batch > 0 && e.rows() == static_cast<Eigen::Index>(batch) * config.seq_len &&
              e.cols() == config.d_model,
          "encoder block input has the wrong shape");
  return run_block<double>(e, batch, block, config, block_index, nullptr, nullptr);
}

Matrix forward(const SequenceBatch& x, const ModelParameters& params, Precision precision) {
  if (precision == Precision::Single) {
    Mat<float> logits = run_forward(x, FloatNet::from(params), nullptr, nullptr, nullptr);
    Matrix out = logits.cast<double>();
    softmax_rows(out);
    return out;
  }
  Matrix logits = run_forward(x, params, nullptr, nullptr, nullptr);
  softmax_rows(logits);
  return logits;
}

Matrix forward_with_attention(const SequenceBatch& x, const ModelParameters& params,
                              std::vector<std::vector<Matrix>>& attention) {
  Matrix logits = run_forward(x, params, nullptr, nullptr, &attention);
  softmax_rows(logits);
  return logits;
}

double loss(const SequenceBatch& x, std::span<const int> labels, const ModelParameters& params) {
  check_labels(labels, x.batch, params.config.num_classes);
  Matrix logits = run_forward(x, params, nullptr, nullptr, nullptr);
  return cross_entropy(logits, labels, false);
}

LossAndGradients loss_and_gradients(const SequenceBatch& x, std::span<const int> labels,
                                    const ModelParameters& params, std::uint64_t dropout_seed,
                                    Precision precision) {
  check_labels(labels, x.batch, params.config.num_classes);
  LossAndGradients out;
  out.gradients = ModelParameters::zeros(params.config);
  out.gradients.positional.setZero();
  if (precision == Precision::Single) {
    const FloatNet net = FloatNet::from(params);
    FloatNet g = FloatNet::zeros_like(net);
    out.loss = backprop(x, labels, net, g, dropout_seed);
    g.copy_to(out.gradients);
  } else {
    out.loss = backprop(x, labels, params, out.gradients, dropout_seed);
  }
  return out;
}

}  // namespace needle::model
