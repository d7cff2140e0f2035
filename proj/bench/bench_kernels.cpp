#include <benchmark/benchmark.h>

#include "red/kernels.hpp"
#include "red/model.hpp"

namespace {

struct Fixture {
  red::RedModel model;
  red::Matrix x;
};

Fixture make_fixture(std::size_t rows, std::size_t dim) {
  red::ModelConfig cfg;
  cfg.dim = dim;
  cfg.num_units = 32;
  cfg.num_components = 5;
  red::Rng rng(42);
  Fixture f{red::init_model(cfg, rng), red::Matrix(rows, dim)};
  red::randomize_parameters(f.model, rng, 0.1);
  for (double& v : f.x.data()) v = rng.normal();
  return f;
}

void BM_LogProbSerial(benchmark::State& state) {
  const Fixture f = make_fixture(static_cast<std::size_t>(state.range(0)), 16);
  for (auto _ : state) benchmark::DoNotOptimize(red::log_prob_rows_serial(f.model, f.x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_LogProbParallel(benchmark::State& state) {
  const Fixture f = make_fixture(static_cast<std::size_t>(state.range(0)), 16);
  for (auto _ : state) benchmark::DoNotOptimize(red::log_prob_rows(f.model, f.x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_GradientSerial(benchmark::State& state) {
  const Fixture f = make_fixture(static_cast<std::size_t>(state.range(0)), 16);
  for (auto _ : state) {
    benchmark::DoNotOptimize(red::batch_loss_and_gradients_serial(f.model, f.x));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_GradientParallel(benchmark::State& state) {
  const Fixture f = make_fixture(static_cast<std::size_t>(state.range(0)), 16);
  for (auto _ : state) benchmark::DoNotOptimize(red::batch_loss_and_gradients(f.model, f.x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_LogProbSerial)->Arg(128)->Arg(1024);
BENCHMARK(BM_LogProbParallel)->Arg(128)->Arg(1024);
BENCHMARK(BM_GradientSerial)->Arg(128)->Arg(1024);
BENCHMARK(BM_GradientParallel)->Arg(128)->Arg(1024);

BENCHMARK_MAIN();
