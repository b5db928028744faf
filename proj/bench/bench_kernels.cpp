// Serial vs OpenMP kernels. Run with OMP_NUM_THREADS set to the core count.

#include "ttds/kernels.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace ttds;

namespace {

Mat<float> random_rows(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> nd;
  Mat<float> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

template <bool Parallel>
void BM_nearest(benchmark::State& state) {
  const Mat<float> pts = random_rows(state.range(0), 32, 1), cb = random_rows(256, 32, 2);
  std::vector<int> idx;
  std::vector<float> dist;
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::nearest_parallel(pts, cb, idx, dist);
    else
      kernels::nearest_serial(pts, cb, idx, dist);
    benchmark::DoNotOptimize(idx.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <bool Parallel>
void BM_encode(benchmark::State& state) {
  const Mat<float> pts = random_rows(state.range(0), 32, 3);
  std::vector<Mat<float>> cbs;
  for (int m = 0; m < 4; ++m) cbs.push_back(random_rows(32, 32, 4 + m));
  Mat<int> levels;
  Mat<float> residual;
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::encode_parallel(pts, cbs, levels, residual);
    else
      kernels::encode_serial(pts, cbs, levels, residual);
    benchmark::DoNotOptimize(levels.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <bool Parallel>
void BM_embed(benchmark::State& state) {
  BackboneConfig bc;
  bc.d_model = 64;
  bc.layers = 2;
  bc.heads = 4;
  bc.max_len = 128;
  const Backbone<float> model(bc, 500, 9);
  std::mt19937_64 rng(10);
  std::vector<std::vector<TokenId>> texts(static_cast<std::size_t>(state.range(0)));
  for (auto& t : texts)
    for (int i = 0; i < 48; ++i) t.push_back(static_cast<TokenId>(3 + rng() % 497));
  for (auto _ : state) {
    const Mat<float> e = Parallel ? kernels::embed_parallel(model, texts) : kernels::embed_serial(model, texts);
    benchmark::DoNotOptimize(e.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_nearest<false>)->Name("nearest/serial")->Arg(4096);
BENCHMARK(BM_nearest<true>)->Name("nearest/parallel")->Arg(4096);
BENCHMARK(BM_encode<false>)->Name("encode/serial")->Arg(4096);
BENCHMARK(BM_encode<true>)->Name("encode/parallel")->Arg(4096);
BENCHMARK(BM_embed<false>)->Name("embed/serial")->Arg(64);
BENCHMARK(BM_embed<true>)->Name("embed/parallel")->Arg(64);

BENCHMARK_MAIN();
