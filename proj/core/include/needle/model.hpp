#pragma once

// Transformer encoder classifier for (x, f) windows.
//
//   X (B*T x F) -> linear projection + sinusoidal position table -> E
//   N x { H = concat_m softmax(Q_m K_m^T / sqrt(d_k)) V_m  projected by W_o
//         L = LN(E + H);  O = LN(L + FFN(L)) }
//   mean over T -> ReLU hidden layer -> logits -> softmax
//
// Sequences are stored batch-major: row b*T + t holds token t of example b.
// Gradients are computed by an explicit reverse pass over cached activations.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "needle/labels.hpp"

namespace needle::model {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Pooling { Mean };

/// Arithmetic used inside forward/backward. Parameters and results are always
/// double; Single casts weights and activations to float for speed.
enum class Precision { Double, Single };

struct ModelConfig {
  int seq_len = 120;
  int in_features = 2;
  int d_model = 64;
  int num_heads = 8;
  int head_dim = 8;
  int num_blocks = 4;
  int ffn_dim = 128;
  int num_classes = kNumClasses;
  Pooling pooling = Pooling::Mean;
  double dropout_rate = 0.0;
  bool positional_encoding = true;
  double layer_norm_eps = 1e-8;

  /// Throws std::invalid_argument unless d_model == num_heads * head_dim, all
  /// sizes are positive, num_classes == 8 and 0 <= dropout_rate < 1.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// The desk-scale default: d_model 64, 8 heads of 8, 4 blocks, FFN width 128.
ModelConfig desk_config();

/// Biases and layer-norm gains are 1 x n matrices.
struct BlockParameters {
  Matrix wq, wk, wv, wo;  // d_model x d_model, head m owns columns [m*d_k, (m+1)*d_k)
  Matrix ln1_gain, ln1_bias;
  Matrix ffn_w1;  // d_model x ffn_dim
  Matrix ffn_b1;
  Matrix ffn_w2;  // ffn_dim x d_model
  Matrix ffn_b2;
  Matrix ln2_gain, ln2_bias;
};

struct ModelParameters {
  ModelConfig config;
  Matrix input_weight;  // in_features x d_model
  Matrix input_bias;
  Matrix positional;  // seq_len x d_model, fixed
  std::vector<BlockParameters> blocks;
  Matrix head_w1;  // d_model x ffn_dim
  Matrix head_b1;
  Matrix head_w2;  // ffn_dim x num_classes
  Matrix head_b2;

  /// Zero-valued parameters with every shape set from `config`; the position
  /// table is filled (or zero when disabled).
  static ModelParameters zeros(const ModelConfig& config);

  /// Every trainable tensor with a stable name such as "block1.wq", in a
  /// fixed order. The position table is not trainable and is not listed.
  std::vector<std::pair<std::string, Matrix*>> trainable();
  std::vector<std::pair<std::string, const Matrix*>> trainable() const;

  std::size_t trainable_count() const;
  bool all_finite() const;
};

/// Sinusoidal table: PE[t, 2i] = sin(t / 10000^(2i/d)), PE[t, 2i+1] = cos(...).
Matrix sinusoidal_table(int seq_len, int d_model);

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, unit
/// layer-norm gains. Deterministic in `seed`.
ModelParameters initialize(const ModelConfig& config, std::uint64_t seed);

/// Input batch: `batch` sequences of config.seq_len tokens with in_features
/// columns each, stacked row-wise.
struct SequenceBatch {
  int batch = 0;
  Matrix data;
};

/// Thrown when an activation turns NaN/Inf; names the block.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Matrix embed(const SequenceBatch& x, const ModelParameters& params);

/// Probability rows of softmax(QK^T / sqrt(d_k)).
Matrix attention_weights(const Eigen::Ref<const Matrix>& q, const Eigen::Ref<const Matrix>& k);

/// softmax(QK^T / sqrt(d_k)) V for one head. Throws std::invalid_argument if
/// d_k == 0 or the shapes disagree.
Matrix attention_head(const Eigen::Ref<const Matrix>& q, const Eigen::Ref<const Matrix>& k,
                      const Eigen::Ref<const Matrix>& v);

/// Row-wise layer normalization without gain/bias.
Matrix layer_norm(const Eigen::Ref<const Matrix>& x, double eps);

/// One encoder block over a (batch * seq_len) x d_model activation.
/// `block_index` is only used in diagnostics.
Matrix encoder_block(const Matrix& e, int batch, const BlockParameters& block,
                     const ModelConfig& config, int block_index = 0);

/// Class probabilities, one row per sequence.
Matrix forward(const SequenceBatch& x, const ModelParameters& params,
               Precision precision = Precision::Double);

/// forward() with per-block attention probability matrices exposed:
/// attention[block][b * num_heads + m] is T x T.
Matrix forward_with_attention(const SequenceBatch& x, const ModelParameters& params,
                              std::vector<std::vector<Matrix>>& attention);

struct LossAndGradients {
  double loss = 0.0;
  ModelParameters gradients;  // same shapes as the parameters
};

/// Mean cross-entropy over the batch and its exact gradient.
/// `dropout_seed` only matters when config.dropout_rate > 0.
/// Throws std::out_of_range for labels outside 0..num_classes-1.
LossAndGradients loss_and_gradients(const SequenceBatch& x, std::span<const int> labels,
                                    const ModelParameters& params, std::uint64_t dropout_seed = 0,
                                    Precision precision = Precision::Double);

/// Mean cross-entropy without gradients (dropout off).
double loss(const SequenceBatch& x, std::span<const int> labels, const ModelParameters& params);

}  // namespace needle::model
