#include <benchmark/benchmark.h>

#include <random>

#include "needle/dataset.hpp"
#include "needle/dsp.hpp"
#include "needle/runtime.hpp"

using namespace needle;

namespace {

model::SequenceBatch random_batch(const model::ModelConfig& c, int batch) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  model::SequenceBatch x{batch, model::Matrix(static_cast<Eigen::Index>(batch) * c.seq_len, c.in_features)};
  for (Eigen::Index i = 0; i < x.data.size(); ++i) x.data.data()[i] = n(rng);
  return x;
}

void BM_FilterStep(benchmark::State& state) {
  auto f = dsp::design_butterworth({6, 5.0, 20.0});
  double x = 0.0;
  for (auto _ : state) {
    x += 0.001;
    benchmark::DoNotOptimize(f.step(x));
  }
}
BENCHMARK(BM_FilterStep);

void BM_SimulateFrame(benchmark::State& state) {
  dataset::SynthesisConfig c;
  const auto file = dataset::synthesis_scene(c, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(mechanics::simulate_insertion(file.scene, file.motion, 3));
  }
}
BENCHMARK(BM_SimulateFrame);

void BM_ForwardSingleWindow(benchmark::State& state) {
  const auto c = model::desk_config();
  const auto p = model::initialize(c, 1);
  const auto x = random_batch(c, 1);
  const auto precision = state.range(0) ? model::Precision::Single : model::Precision::Double;
  for (auto _ : state) benchmark::DoNotOptimize(model::forward(x, p, precision));
  state.SetLabel(state.range(0) ? "float" : "double");
}
BENCHMARK(BM_ForwardSingleWindow)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const auto c = model::desk_config();
  const auto p = model::initialize(c, 1);
  const int batch = static_cast<int>(state.range(0));
  const auto x = random_batch(c, batch);
  std::vector<int> y(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i) y[static_cast<std::size_t>(i)] = i % kNumClasses;
  const auto precision = state.range(1) ? model::Precision::Single : model::Precision::Double;
  for (auto _ : state) benchmark::DoNotOptimize(model::loss_and_gradients(x, y, p, 0, precision));
  state.SetItemsProcessed(state.iterations() * batch);
  state.SetLabel(state.range(1) ? "float" : "double");
}
BENCHMARK(BM_TrainStep)->Args({64, 0})->Args({64, 1})->Unit(benchmark::kMillisecond);

void BM_PushSample(benchmark::State& state) {
  train::Classifier k;
  k.params = model::initialize(model::desk_config(), 1);
  runtime::OnlineClassifier session(k);
  double t = 0.0;
  for (auto _ : state) {
    t += 0.05;
    benchmark::DoNotOptimize(session.push_sample(t, t * 2.0, 0.1));
  }
}
BENCHMARK(BM_PushSample)->Unit(benchmark::kMillisecond);

void BM_Augment(benchmark::State& state) {
  dataset::SynthesisConfig c;
  c.frames = 50;
  const auto frames = dataset::synthesize_frames(c);
  for (auto _ : state) benchmark::DoNotOptimize(dataset::augment(frames, {}, 20.0));
  state.SetItemsProcessed(state.iterations() * 50 * dataset::kDefaultWindowsPerFrame);
}
BENCHMARK(BM_Augment)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
