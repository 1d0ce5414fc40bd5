#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "needle/model.hpp"

using namespace needle::model;

namespace {

ModelConfig tiny(bool positional = true) {
  ModelConfig c;
  c.seq_len = 6;
  c.d_model = 8;
  c.num_heads = 2;
  c.head_dim = 4;
  c.num_blocks = 2;
  c.ffn_dim = 6;
  c.positional_encoding = positional;
  return c;
}

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

SequenceBatch random_batch(const ModelConfig& c, int batch, std::uint64_t seed) {
  return SequenceBatch{batch, gaussian(static_cast<Eigen::Index>(batch) * c.seq_len, c.in_features, seed)};
}

SequenceBatch permute_time(const SequenceBatch& x, int seq_len, const std::vector<int>& perm) {
  SequenceBatch out = x;
  for (int b = 0; b < x.batch; ++b) {
    for (int t = 0; t < seq_len; ++t) out.data.row(b * seq_len + t) = x.data.row(b * seq_len + perm[t]);
  }
  return out;
}

}  // namespace

TEST(ModelConfig, Validation) {
  EXPECT_NO_THROW(desk_config().validate());
  auto c = desk_config();
  c.head_dim = 7;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = desk_config();
  c.num_classes = 5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = desk_config();
  c.dropout_rate = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  const auto d = desk_config();
  EXPECT_EQ(d.d_model, 64);
  EXPECT_EQ(d.num_heads, 8);
  EXPECT_EQ(d.head_dim, 8);
  EXPECT_EQ(d.num_blocks, 4);
  EXPECT_EQ(d.seq_len, 120);
}

TEST(ModelConfig, FullScaleIsConstructible) {
  ModelConfig c;
  c.d_model = 512 * 8;
  c.head_dim = 512;
  c.num_blocks = 1;
  c.seq_len = 4;
  c.ffn_dim = 8;
  EXPECT_NO_THROW(c.validate());
  const auto p = ModelParameters::zeros(c);
  EXPECT_EQ(p.blocks[0].wq.rows(), 4096);
}

TEST(Parameters, TrainableListCoversEveryTensorKind) {
  auto p = initialize(tiny(), 1);
  const auto list = p.trainable();
  EXPECT_EQ(list.size(), 2u + 12u * 2u + 4u);
  EXPECT_EQ(list.front().first, "input.weight");
  EXPECT_EQ(list[2].first, "block1.wq");
  EXPECT_EQ(list.back().first, "head.b2");
  std::size_t n = 0;
  for (auto& [name, m] : list) n += static_cast<std::size_t>(m->size());
  EXPECT_EQ(n, p.trainable_count());
  EXPECT_TRUE(p.all_finite());
}

TEST(Parameters, InitializationIsSeededAndBounded) {
  const auto a = initialize(desk_config(), 5);
  const auto b = initialize(desk_config(), 5);
  const auto c = initialize(desk_config(), 6);
  EXPECT_EQ(a.blocks[2].wv, b.blocks[2].wv);
  EXPECT_NE(a.blocks[2].wv, c.blocks[2].wv);
  EXPECT_LE(a.blocks[0].ffn_w2.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(128.0));
  EXPECT_TRUE(a.blocks[1].ln1_gain.isOnes());
  EXPECT_TRUE(a.blocks[1].ffn_b1.isZero());
}

TEST(Positional, SinusoidalTable) {
  const auto pe = sinusoidal_table(10, 8);
  EXPECT_DOUBLE_EQ(pe(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(pe(0, 1), 1.0);
  EXPECT_NEAR(pe(1, 0), std::sin(1.0), 1e-15);
  EXPECT_NEAR(pe(1, 1), std::cos(1.0), 1e-15);
  EXPECT_NEAR(pe(7, 2), std::sin(7.0 / std::pow(10000.0, 2.0 / 8.0)), 1e-15);
  EXPECT_NEAR(pe(7, 5), std::cos(7.0 / std::pow(10000.0, 4.0 / 8.0)), 1e-15);
  EXPECT_TRUE(ModelParameters::zeros(tiny(false)).positional.isZero());
}

TEST(Attention, MatchesNaiveLoops) {
  const Matrix q = gaussian(5, 4, 1), k = gaussian(7, 4, 2), v = gaussian(7, 3, 3);
  const Matrix out = attention_head(q, k, v);
  for (int i = 0; i < 5; ++i) {
    std::vector<double> s(7);
    double mx = -1e300;
    for (int j = 0; j < 7; ++j) {
      s[j] = q.row(i).dot(k.row(j)) / 2.0;
      mx = std::max(mx, s[j]);
    }
    double z = 0;
    for (auto& e : s) z += (e = std::exp(e - mx));
    for (int c = 0; c < 3; ++c) {
      double acc = 0;
      for (int j = 0; j < 7; ++j) acc += s[j] / z * v(j, c);
      EXPECT_NEAR(out(i, c), acc, 1e-12);
    }
  }
  EXPECT_THROW(attention_head(q, gaussian(7, 3, 4), v), std::invalid_argument);
  EXPECT_THROW(attention_head(q, k, gaussian(6, 3, 5)), std::invalid_argument);
}

TEST(Attention, RowsSumToOne) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Matrix a = attention_weights(gaussian(12, 8, seed, 10.0), gaussian(12, 8, seed + 100, 10.0));
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
      EXPECT_NEAR(a.row(r).sum(), 1.0, 1e-9);
      EXPECT_GE(a.row(r).minCoeff(), 0.0);
    }
  }
}

TEST(Attention, ExposedPerBlockAndHead) {
  const auto c = tiny();
  const auto p = initialize(c, 2);
  std::vector<std::vector<Matrix>> att;
  const Matrix probs = forward_with_attention(random_batch(c, 3, 1), p, att);
  ASSERT_EQ(att.size(), 2u);
  ASSERT_EQ(att[0].size(), 6u);
  for (const auto& block : att) {
    for (const auto& a : block) {
      ASSERT_EQ(a.rows(), 6);
      for (Eigen::Index r = 0; r < a.rows(); ++r) EXPECT_NEAR(a.row(r).sum(), 1.0, 1e-12);
    }
  }
  EXPECT_LT((probs - forward(random_batch(c, 3, 1), p)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(LayerNorm, ZeroMeanUnitVariance) {
  const Matrix y = layer_norm(gaussian(10, 16, 3, 5.0), 1e-8);
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    EXPECT_NEAR(y.row(r).mean(), 0.0, 1e-12);
    EXPECT_NEAR(y.row(r).squaredNorm() / 16.0, 1.0, 1e-6);
  }
  EXPECT_THROW(layer_norm(y, 0.0), std::invalid_argument);
}

TEST(Forward, ProbabilityRows) {
  const auto c = desk_config();
  const auto p = initialize(c, 1);
  const Matrix probs = forward(random_batch(c, 4, 9), p);
  ASSERT_EQ(probs.rows(), 4);
  ASSERT_EQ(probs.cols(), 8);
  for (Eigen::Index r = 0; r < 4; ++r) EXPECT_NEAR(probs.row(r).sum(), 1.0, 1e-12);
}

TEST(Forward, SinglePrecisionTracksDouble) {
  const auto c = desk_config();
  const auto p = initialize(c, 1);
  const auto x = random_batch(c, 4, 9);
  EXPECT_LT((forward(x, p) - forward(x, p, Precision::Single)).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Forward, BatchRowsAreIndependent) {
  const auto c = tiny();
  const auto p = initialize(c, 4);
  const auto x = random_batch(c, 5, 2);
  const Matrix all = forward(x, p);
  for (int b = 0; b < 5; ++b) {
    SequenceBatch one{1, x.data.middleRows(b * c.seq_len, c.seq_len)};
    EXPECT_LT((forward(one, p).row(0) - all.row(b)).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Forward, PermutationInvariantWithoutPositions) {
  const auto c = tiny(false);
  const auto p = initialize(c, 7);
  const auto x = random_batch(c, 4, 3);
  std::vector<int> perm(6);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937 rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    EXPECT_LT((forward(x, p) - forward(permute_time(x, 6, perm), p)).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Forward, PositionsBreakPermutationInvariance) {
  const auto c = tiny(true);
  const auto p = initialize(c, 7);
  const auto x = random_batch(c, 4, 3);
  const std::vector<int> rev{5, 4, 3, 2, 1, 0};
  EXPECT_GT((forward(x, p) - forward(permute_time(x, 6, rev), p)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Forward, RejectsBadInput) {
  const auto c = tiny();
  const auto p = initialize(c, 1);
  SequenceBatch wrong{2, Matrix::Zero(7, 2)};
  EXPECT_THROW(forward(wrong, p), std::invalid_argument);
  auto x = random_batch(c, 1, 1);
  x.data(2, 1) = std::nan("");
  EXPECT_THROW(forward(x, p), NumericalError);
  auto blown = p;
  blown.blocks[1].wq(0, 0) = std::numeric_limits<double>::infinity();
  try {
    forward(random_batch(c, 1, 1), blown);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("block"), std::string::npos);
  }
}

TEST(Loss, MatchesCrossEntropyOfForward) {
  const auto c = tiny();
  const auto p = initialize(c, 2);
  const auto x = random_batch(c, 3, 4);
  const std::vector<int> y{0, 3, 7};
  const Matrix probs = forward(x, p);
  const double expected = -(std::log(probs(0, 0)) + std::log(probs(1, 3)) + std::log(probs(2, 7))) / 3.0;
  EXPECT_NEAR(loss(x, y, p), expected, 1e-12);
  EXPECT_NEAR(loss_and_gradients(x, y, p).loss, expected, 1e-12);
  const std::vector<int> bad{0, 8, 1};
  EXPECT_THROW(loss(x, bad, p), std::out_of_range);
  const std::vector<int> short_labels{0};
  EXPECT_THROW(loss(x, short_labels, p), std::invalid_argument);
}

TEST(Gradients, MatchCentralDifferencesOnEveryCoordinate) {
  const auto c = tiny();
  auto p = initialize(c, 3);
  const auto x = random_batch(c, 3, 5);
  const std::vector<int> y{1, 4, 7};
  const auto lg = loss_and_gradients(x, y, p);
  auto params = p.trainable();
  const auto grads = lg.gradients.trainable();
  const double h = 1e-5;
  std::size_t checked = 0, total = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    ASSERT_EQ(params[i].first, grads[i].first);
    total += static_cast<std::size_t>(params[i].second->size());
    for (Eigen::Index j = 0; j < params[i].second->size(); ++j) {
      double& w = params[i].second->data()[j];
      const double saved = w;
      w = saved + h;
      const double up = loss(x, y, p);
      w = saved - h;
      const double down = loss(x, y, p);
      w = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = grads[i].second->data()[j];
      const double scale = std::max(std::abs(numeric), std::abs(analytic));
      if (scale == 0.0) {
        // only a head unit whose ReLU is off for the whole batch has no gradient
        EXPECT_EQ(params[i].first.rfind("head.", 0), 0u) << params[i].first << "[" << j << "]";
        continue;
      }
      EXPECT_LT(std::abs(numeric - analytic) / scale, 1e-4) << params[i].first << "[" << j << "]";
      ++checked;
    }
  }
  EXPECT_GE(checked, total - total / 20) << checked << " of " << total;
  EXPECT_TRUE(lg.gradients.positional.isZero());
}

TEST(Gradients, SinglePrecisionCloseToDouble) {
  const auto c = tiny();
  const auto p = initialize(c, 3);
  const auto x = random_batch(c, 8, 5);
  const std::vector<int> y{1, 4, 7, 0, 2, 2, 5, 6};
  const auto d = loss_and_gradients(x, y, p);
  const auto s = loss_and_gradients(x, y, p, 0, Precision::Single);
  EXPECT_NEAR(d.loss, s.loss, 1e-5);
  const auto gd = d.gradients.trainable();
  const auto gs = s.gradients.trainable();
  for (std::size_t i = 0; i < gd.size(); ++i) {
    EXPECT_LT((*gd[i].second - *gs[i].second).cwiseAbs().maxCoeff(), 1e-4 + 1e-3 * gd[i].second->cwiseAbs().maxCoeff())
        << gd[i].first;
  }
}

TEST(Dropout, SeededAndOnlyInTraining) {
  auto c = tiny();
  c.dropout_rate = 0.3;
  const auto p = initialize(c, 3);
  const auto x = random_batch(c, 3, 5);
  const std::vector<int> y{1, 4, 7};
  const double a = loss_and_gradients(x, y, p, 11).loss;
  EXPECT_EQ(a, loss_and_gradients(x, y, p, 11).loss);
  EXPECT_NE(a, loss_and_gradients(x, y, p, 12).loss);
  auto off = p;
  off.config.dropout_rate = 0.0;
  EXPECT_EQ(loss(x, y, p), loss(x, y, off));
}

TEST(EncoderBlock, ShapeAndNormalizedOutput) {
  const auto c = tiny();
  const auto p = initialize(c, 3);
  const Matrix e = embed(random_batch(c, 2, 1), p);
  ASSERT_EQ(e.rows(), 12);
  ASSERT_EQ(e.cols(), 8);
  const Matrix out = encoder_block(e, 2, p.blocks[0], c);
  for (Eigen::Index r = 0; r < out.rows(); ++r) EXPECT_NEAR(out.row(r).mean(), 0.0, 1e-9);
  EXPECT_THROW(encoder_block(e, 3, p.blocks[0], c), std::invalid_argument);
}
