// Parallel kernels against their serial references.
#include <benchmark/benchmark.h>

#include <cmath>
#include <vector>

#include "rcd/kernels.hpp"
#include "rcd/neuro.hpp"

using namespace rcd;

namespace {

GridGeometry cube(int n, double spacing) {
  GridGeometry g;
  g.dims = {n, n, n};
  g.spacing = {spacing, spacing, spacing};
  g.origin = {0, 0, 0};
  return g;
}

// Scan-like source: 0.8 mm in-plane, 2.5 mm slices, resampled to 1 mm.
struct Resample {
  GridGeometry src, dst;
  std::vector<float> values;
  std::vector<std::uint8_t> labels;
  Resample() {
    src.dims = {160, 160, 48};
    src.spacing = {0.8, 0.8, 2.5};
    dst = cube(120, 1.0);
    values.resize(src.voxel_count());
    labels.resize(src.voxel_count());
    for (std::size_t i = 0; i < values.size(); ++i) {
      values[i] = static_cast<float>(std::sin(0.001 * static_cast<double>(i)) * 100);
      labels[i] = static_cast<std::uint8_t>(i % 7 == 0);
    }
  }
};

struct Edt {
  GridGeometry g = cube(96, 1.0);
  std::vector<std::uint8_t> mask;
  Edt() {
    mask.assign(g.voxel_count(), 0);
    for (int z = 40; z < 56; ++z)
      for (int y = 30; y < 60; ++y)
        for (int x = 20; x < 50; ++x) mask[g.index(x, y, z)] = 1;
  }
};

// Normalised mesh-graph adjacency: about six neighbours per node.
struct Graph {
  kernels::CsrMatrix a;
  std::vector<double> x;
  static constexpr int kCols = 25;
  explicit Graph(int n) {
    neuro::Rng rng(1);
    a.rows = n;
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < 6; ++k) {
        a.col.push_back(static_cast<int>(rng.below(n)));
        a.val.push_back(1.0 / 6.0);
      }
      a.row_ptr.push_back(static_cast<int>(a.col.size()));
    }
    x.resize(static_cast<std::size_t>(n) * kCols);
    for (auto& v : x) v = rng.normal();
  }
};

template <bool Parallel>
void BM_Trilinear(benchmark::State& st) {
  static const Resample r;
  std::vector<float> out(r.dst.voxel_count());
  for (auto _ : st) {
    if constexpr (Parallel) kernels::resample_trilinear(r.src, r.values, r.dst, out);
    else kernels::serial::resample_trilinear(r.src, r.values, r.dst, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_Nearest(benchmark::State& st) {
  static const Resample r;
  std::vector<std::uint8_t> out(r.dst.voxel_count());
  for (auto _ : st) {
    if constexpr (Parallel) kernels::resample_nearest(r.src, r.labels, r.dst, out);
    else kernels::serial::resample_nearest(r.src, r.labels, r.dst, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_Edt(benchmark::State& st) {
  static const Edt e;
  std::vector<double> out(e.g.voxel_count());
  for (auto _ : st) {
    if constexpr (Parallel) kernels::squared_edt(e.g, e.mask, out);
    else kernels::serial::squared_edt(e.g, e.mask, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_Spmm(benchmark::State& st) {
  const Graph g(static_cast<int>(st.range(0)));
  std::vector<double> out(g.x.size());
  for (auto _ : st) {
    if constexpr (Parallel) kernels::spmm(g.a, g.x, Graph::kCols, out);
    else kernels::serial::spmm(g.a, g.x, Graph::kCols, out);
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(BM_Trilinear<true>)->Name("trilinear/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Trilinear<false>)->Name("trilinear/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Nearest<true>)->Name("nearest/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Nearest<false>)->Name("nearest/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Edt<true>)->Name("edt/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Edt<false>)->Name("edt/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Spmm<true>)->Name("spmm/parallel")->Arg(2000)->Arg(20000)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Spmm<false>)->Name("spmm/serial")->Arg(2000)->Arg(20000)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
