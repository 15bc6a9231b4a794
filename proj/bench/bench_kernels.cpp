// Serial reference vs OpenMP kernels, and chart building with spans
// evaluated serially or across threads.

#include <benchmark/benchmark.h>

#include <vector>

#include "treeproj/kernels.hpp"
#include "treeproj/model.hpp"
#include "treeproj/rng.hpp"
#include "treeproj/spanrep.hpp"

using namespace treeproj;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = normal(rng);
  return m;
}

template <void (*Kernel)(const Matrix&, const Matrix&, Matrix&)>
void BM_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  Matrix out;
  for (auto _ : state) {
    Kernel(a, b, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

template <void (*Kernel)(const Matrix&, const BoolMatrix*, Matrix&)>
void BM_softmax(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix x = random_matrix(n, n, 3);
  Matrix out;
  for (auto _ : state) {
    Kernel(x, nullptr, out);
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_chart(benchmark::State& state) {
  EncoderConfig config;
  config.vocab_size = 40;
  config.d_model = 64;
  config.d_ff = 256;
  config.heads = 4;
  config.enc_layers = 2;
  config.dec_layers = 0;
  Rng init(4);
  const TransformerModel model(config, &init);
  Rng rng(5);
  std::vector<int> tokens;
  for (int i = 0; i < state.range(0); ++i) tokens.push_back(static_cast<int>(uniform_int(rng, 5, 39)));
  ChartOptions options;
  options.parallel = state.range(1) != 0;
  for (auto _ : state) benchmark::DoNotOptimize(build_sci_chart(model, tokens, 1, options).values.data());
}

}  // namespace

BENCHMARK(BM_matmul<kernels::serial::matmul>)->Name("matmul/serial")->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_matmul<kernels::parallel::matmul>)->Name("matmul/parallel")->Arg(64)->Arg(256)->Arg(512)->UseRealTime();
BENCHMARK(BM_softmax<kernels::serial::softmax_rows>)->Name("softmax/serial")->Arg(256)->Arg(1024);
BENCHMARK(BM_softmax<kernels::parallel::softmax_rows>)->Name("softmax/parallel")->Arg(256)->Arg(1024)->UseRealTime();
BENCHMARK(BM_chart)->Name("chart")->ArgNames({"n", "parallel"})->Args({12, 0})->Args({12, 1})->Args({24, 0})->Args({24, 1})
    ->UseRealTime()->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
