#include <benchmark/benchmark.h>

#include "reed/autodiff.hpp"
#include "reed/graphreg.hpp"
#include "reed/mlp.hpp"
#include "reed/ssrl.hpp"

namespace {

using reed::Rng;
using reed::nn::Matrix;

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.uniform(-1.0, 1.0);
  return m;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  Matrix a = random_matrix(rng, n, 64), b = random_matrix(rng, 64, 64);
  for (auto _ : state) benchmark::DoNotOptimize(reed::nn::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n));
}
BENCHMARK(BM_Matmul)->Arg(128)->Arg(512);

// Forward + backward of the default 16-64-64-10 network with cross-entropy.
void BM_GradStep(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  std::vector<std::size_t> widths{16, 64, 64};
  auto params = reed::nn::init_mlp(widths, 10, rng);
  Matrix x = random_matrix(rng, n, 16);
  std::vector<std::size_t> y(n);
  for (auto& v : y) v = rng.index(10);
  for (auto _ : state) {
    auto g = reed::nn::grad(params, [&](reed::nn::Tape& t, const reed::nn::MlpVars& v) {
      auto lp = reed::nn::log_softmax_rows(v.logits(t.constant(x)));
      return reed::nn::scale(reed::nn::sum(reed::nn::pick_per_row(lp, y)), -1.0 / static_cast<double>(n));
    });
    benchmark::DoNotOptimize(g.loss);
  }
}
BENCHMARK(BM_GradStep)->Arg(128);

void BM_NtXent(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(2 * state.range(0));
  Rng rng(3);
  Matrix z = random_matrix(rng, rows, 32);
  for (auto _ : state) {
    reed::nn::Tape t;
    auto p = t.parameter(z);
    auto loss = reed::ssrl::nt_xent_loss(p, 0.5);
    t.backward(loss);
    benchmark::DoNotOptimize(p.grad());
  }
}
BENCHMARK(BM_NtXent)->Arg(64)->Arg(256);

void BM_NeighborGraph(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(4);
  Matrix z = random_matrix(rng, n, 64);
  for (auto _ : state) benchmark::DoNotOptimize(reed::graph::build_neighbor_graph(z));
}
BENCHMARK(BM_NeighborGraph)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
