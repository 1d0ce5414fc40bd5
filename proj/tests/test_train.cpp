#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "needle/checkpoint.hpp"
#include "needle/train.hpp"

using namespace needle;
namespace fs = std::filesystem;

namespace {

model::ModelConfig small_model() {
  model::ModelConfig c;
  c.d_model = 16;
  c.num_heads = 2;
  c.head_dim = 8;
  c.num_blocks = 1;
  c.ffn_dim = 16;
  return c;
}

const dataset::Dataset& small_data() {
  static const dataset::Dataset data = [] {
    dataset::SynthesisConfig s;
    s.frames = 20;
    dataset::AugmentConfig a;
    a.windows_per_frame = 10;
    return dataset::augment(dataset::synthesize_frames(s), a, 20.0);
  }();
  return data;
}

std::vector<std::size_t> range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> v(end - begin);
  std::iota(v.begin(), v.end(), begin);
  return v;
}

train::TrainConfig quick(int epochs = 3) {
  train::TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 16;
  t.steps_per_epoch = 8;
  t.learning_rate = 3e-3;
  t.seed = 4;
  return t;
}

fs::path scratch_file(const std::string& name) {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  auto dir = fs::temp_directory_path() / (std::string("needle_train_") + info->name());
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(TrainConfig, Validation) {
  train::TrainConfig t;
  EXPECT_NO_THROW(t.validate());
  t.learning_rate = 0.0;
  EXPECT_THROW(t.validate(), std::invalid_argument);
  t = {};
  t.beta2 = 1.0;
  EXPECT_THROW(t.validate(), std::invalid_argument);
  t = {};
  t.clip_norm = -1.0;
  EXPECT_THROW(t.validate(), std::invalid_argument);
  t = {};
  t.final_learning_rate = 2e-3;
  EXPECT_THROW(t.validate(), std::invalid_argument);
}

TEST(TrainConfig, CosineDecay) {
  train::TrainConfig t;
  t.learning_rate = 1e-3;
  EXPECT_EQ(t.learning_rate_at(0, 100), 1e-3);
  EXPECT_EQ(t.learning_rate_at(99, 100), 1e-3);
  t.final_learning_rate = 1e-4;
  EXPECT_NEAR(t.learning_rate_at(0, 101), 1e-3, 1e-15);
  EXPECT_NEAR(t.learning_rate_at(50, 101), 5.5e-4, 1e-15);
  EXPECT_NEAR(t.learning_rate_at(100, 101), 1e-4, 1e-15);
  // cos(pi/4) = sqrt(2)/2
  EXPECT_NEAR(t.learning_rate_at(25, 101), 1e-4 + 0.45e-3 * (1.0 + std::sqrt(0.5)), 1e-15);
}

TEST(MakeBatch, NormalizesChannels) {
  const auto& d = small_data();
  dataset::Normalization n{{1.0, 2.0}, {2.0, 4.0}};
  const std::vector<std::size_t> idx{3, 7};
  const auto b = train::make_batch(d, idx, n);
  ASSERT_EQ(b.batch, 2);
  ASSERT_EQ(b.data.rows(), 240);
  const auto& s = d.examples[7].samples[5];
  EXPECT_DOUBLE_EQ(b.data(125, 0), (static_cast<double>(s.x) - 1.0) / 2.0);
  EXPECT_DOUBLE_EQ(b.data(125, 1), (static_cast<double>(s.f) - 2.0) / 4.0);
  EXPECT_EQ(train::labels_of(d, idx)[1], to_index(d.examples[7].label));
}

TEST(Train, LossDecreasesAndIsDeterministic) {
  const auto& d = small_data();
  const auto tr = range(0, 160), val = range(160, 200);
  auto cfg = quick(4);
  cfg.precision = model::Precision::Double;
  const auto a = train::train(d, tr, val, small_model(), cfg);
  ASSERT_EQ(a.curve.size(), 4u);
  EXPECT_LT(a.curve.back().train_loss, a.curve.front().train_loss);
  EXPECT_TRUE(std::isfinite(a.curve.back().val_loss));
  const auto b = train::train(d, tr, val, small_model(), cfg);
  EXPECT_TRUE(checkpoint::identical(a.classifier, b.classifier));
  EXPECT_EQ(a.best_epoch, b.best_epoch);
  // best epoch has the lowest validation loss
  double best = 1e300;
  int arg = 0;
  for (const auto& r : a.curve) {
    if (r.val_loss < best) {
      best = r.val_loss;
      arg = r.epoch;
    }
  }
  EXPECT_EQ(a.best_epoch, arg);
  EXPECT_NEAR(train::evaluate_loss(a.classifier, d, val), best, 1e-12);
}

TEST(Train, SinglePrecisionTrainsToo) {
  const auto& d = small_data();
  const auto r = train::train(d, range(0, 160), {}, small_model(), quick(3));
  EXPECT_LT(r.curve.back().train_loss, r.curve.front().train_loss);
  EXPECT_TRUE(std::isnan(r.curve.back().val_loss));
  EXPECT_EQ(r.best_epoch, 3);
}

TEST(Train, CallbackCanStopEarly) {
  int calls = 0;
  const auto r = train::train(small_data(), range(0, 100), {}, small_model(), quick(5),
                              [&](const train::EpochRecord&) { return ++calls < 2; });
  EXPECT_EQ(calls, 2);
  EXPECT_EQ(r.curve.size(), 2u);
}

TEST(Train, NormalizationComesFromTrainingIndices) {
  const auto& d = small_data();
  const auto tr = range(0, 50);
  const auto r = train::train(d, tr, {}, small_model(), quick(1));
  EXPECT_EQ(r.classifier.normalization, dataset::compute_normalization(d, tr));
}

TEST(Train, RejectsBadSetups) {
  const auto& d = small_data();
  EXPECT_THROW(train::train(d, {}, {}, small_model(), quick()), std::invalid_argument);
  auto m = small_model();
  m.seq_len = 60;
  EXPECT_THROW(train::train(d, range(0, 10), {}, m, quick()), std::invalid_argument);
  auto broken = d;
  broken.examples[3].samples[10].f = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(train::train(broken, range(0, 10), {}, small_model(), quick(1)), model::NumericalError);
}

TEST(Predict, ArgmaxOfProbabilities) {
  const auto& d = small_data();
  const auto r = train::train(d, range(0, 100), {}, small_model(), quick(1));
  const auto idx = range(100, 137);
  const auto probs = train::predict_proba(r.classifier, d, idx, 10);
  ASSERT_EQ(probs.rows(), 37);
  const auto labels = train::predict(r.classifier, d, idx, 10);
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index best = 0;
    probs.row(i).maxCoeff(&best);
    EXPECT_EQ(to_index(labels[static_cast<std::size_t>(i)]), best);
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto r = train::train(small_data(), range(0, 100), {}, small_model(), quick(1));
  const auto path = scratch_file("m.ckpt");
  checkpoint::save(path, r.classifier);
  const auto back = checkpoint::load(path);
  EXPECT_TRUE(checkpoint::identical(r.classifier, back));
  EXPECT_EQ(back.params.config, small_model());
  auto other = back;
  other.params.head_b2(0, 3) = std::nextafter(other.params.head_b2(0, 3), 1.0);
  EXPECT_FALSE(checkpoint::identical(r.classifier, other));
}

TEST(Checkpoint, DetectsCorruption) {
  const auto r = train::train(small_data(), range(0, 20), {}, small_model(), quick(1));
  const auto path = scratch_file("m.ckpt");
  checkpoint::save(path, r.classifier);
  const auto size = fs::file_size(path);
  fs::resize_file(path, size - 8);
  EXPECT_THROW(checkpoint::load(path), checkpoint::CheckpointError);
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTACKPT";
  }
  EXPECT_THROW(checkpoint::load(path), checkpoint::CheckpointError);
  checkpoint::save(path, r.classifier);
  {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    out << 'x';
  }
  EXPECT_THROW(checkpoint::load(path), checkpoint::CheckpointError);
  EXPECT_THROW(checkpoint::load(scratch_file("missing.ckpt")), std::exception);
}

TEST(Checkpoint, LossCurveCsv) {
  std::vector<train::EpochRecord> curve{{1, 0.5, 0.25}, {2, 0.125, std::nan("")}};
  const auto path = scratch_file("loss.csv");
  checkpoint::write_loss_curve(path, curve);
  std::ifstream in(path);
  std::string header, a, b;
  std::getline(in, header);
  std::getline(in, a);
  std::getline(in, b);
  EXPECT_EQ(header, "epoch,train_loss,val_loss");
  EXPECT_EQ(a, "1,0.5,0.25");
  EXPECT_EQ(b, "2,0.125,");
}
