#include <benchmark/benchmark.h>
#include <omp.h>

#include <random>

#include "mhf/model.hpp"
#include "mhf/profile.hpp"
#include "mhf/rng.hpp"

using namespace mhf;

namespace {

std::vector<double> walk(std::size_t n) {
  Rng rng(1);
  std::normal_distribution<double> nd;
  std::vector<double> x(n);
  double v = 0.0;
  for (auto& e : x) e = v += nd(rng);
  return x;
}

std::vector<TrainingExample> batch(const ModelConfig& c, std::size_t n) {
  Rng rng(2);
  std::normal_distribution<double> nd;
  std::vector<TrainingExample> out(n);
  for (auto& ex : out) {
    ex.input_ts = Matrix(static_cast<std::size_t>(c.t_p), static_cast<std::size_t>(c.d));
    for (auto& v : ex.input_ts.values()) v = nd(rng);
    ex.interaction.assign(static_cast<std::size_t>(c.k), 0.0);
    for (auto& v : ex.interaction) v = uniform01(rng) + 0.01;
    ex.target.resize(static_cast<std::size_t>(c.horizon));
    for (auto& v : ex.target) v = 5.0 + nd(rng);
  }
  return out;
}

ModelConfig bench_model() {
  ModelConfig c;
  c.n_k = 16;
  c.channels = 16;
  c.n_blocks = 3;
  c.n_basis = 8;
  c.d = 6;
  c.k = 30;
  c.t_p = 168;
  return c;
}

void BM_MatrixProfileReference(benchmark::State& st) {
  const auto x = walk(static_cast<std::size_t>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(matrix_profile_index_reference(x, 168, 84));
}

void BM_MatrixProfileParallel(benchmark::State& st) {
  const auto x = walk(static_cast<std::size_t>(st.range(0)));
  omp_set_num_threads(static_cast<int>(st.range(1)));
  for (auto _ : st) benchmark::DoNotOptimize(matrix_profile_index(x, 168, 84));
}

void BM_BatchGradSerial(benchmark::State& st) {
  Model m(bench_model());
  Rng rng(3);
  m.initialize(rng);
  const auto b = batch(m.config(), static_cast<std::size_t>(st.range(0)));
  auto g = m.params().zeros_like();
  for (auto _ : st) benchmark::DoNotOptimize(batch_loss_grad_serial(m, b, 1.0, g));
}

void BM_BatchGradParallel(benchmark::State& st) {
  Model m(bench_model());
  Rng rng(3);
  m.initialize(rng);
  const auto b = batch(m.config(), static_cast<std::size_t>(st.range(0)));
  auto g = m.params().zeros_like();
  omp_set_num_threads(static_cast<int>(st.range(1)));
  for (auto _ : st) benchmark::DoNotOptimize(batch_loss_grad(m, b, 1.0, g));
}

}  // namespace

BENCHMARK(BM_MatrixProfileReference)->Arg(2000)->Arg(4000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MatrixProfileParallel)->Args({2000, 1})->Args({4000, 1})->Args({4000, 4})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchGradSerial)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchGradParallel)->Args({64, 1})->Args({64, 4})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
