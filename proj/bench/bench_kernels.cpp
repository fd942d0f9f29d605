// Parallel kernels against their serial references, plus whole-model passes.

#include <benchmark/benchmark.h>
#include <omp.h>

#include <vector>

#include "scribeid/kernels.hpp"
#include "scribeid/model.hpp"
#include "scribeid/ops.hpp"
#include "scribeid/rng.hpp"
#include "scribeid/runtime.hpp"

namespace {

using namespace scribeid;
using kernels::Op;

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

// range(0): m = n = k; range(1): threads (0 = serial reference)
void BM_Gemm(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const int threads = static_cast<int>(state.range(1));
  const auto a = noise(static_cast<std::size_t>(n) * n, 1), b = noise(static_cast<std::size_t>(n) * n, 2);
  std::vector<double> c(static_cast<std::size_t>(n) * n);
  if (threads > 0) omp_set_num_threads(threads);
  for (auto _ : state) {
    if (threads == 0) {
      kernels::reference::gemm(Op::None, Op::None, n, n, n, a, b, c, false);
    } else {
      kernels::gemm(Op::None, Op::None, n, n, n, a, b, c, false);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}
BENCHMARK(BM_Gemm)->ArgsProduct({{64, 256}, {0, 1, 2, 4}})->Unit(benchmark::kMicrosecond);

// Segment encoder shape: batch 32, 2 -> 64 channels, T 64, kernel 7.
void BM_Conv1d(benchmark::State& state) {
  const int threads = static_cast<int>(state.range(0));
  const int batch = 32, c_in = 2, t = 64, c_out = 64, s = 7, pad = 3;
  const auto x = noise(static_cast<std::size_t>(batch) * c_in * t, 3);
  const auto w = noise(static_cast<std::size_t>(c_out) * c_in * s, 4);
  std::vector<double> out(static_cast<std::size_t>(batch) * c_out * t);
  if (threads > 0) omp_set_num_threads(threads);
  for (auto _ : state) {
    if (threads == 0) {
      kernels::reference::conv1d_forward(batch, c_in, t, c_out, s, pad, x, w, out);
    } else {
      kernels::conv1d_forward(batch, c_in, t, c_out, s, pad, x, w, out);
    }
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_Conv1d)->Arg(0)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMicrosecond);

// 3x3 image convolution, 32 -> 32 channels on 32x32: direct loops against
// im2col + parallel GEMM.
void BM_Conv2d(benchmark::State& state) {
  const int threads = static_cast<int>(state.range(0));
  const int c = 32, h = 32, k = 3, pad = 1;
  const auto img = noise(static_cast<std::size_t>(c) * h * h, 5);
  const auto w = noise(static_cast<std::size_t>(c) * c * k * k, 6);
  std::vector<double> out(static_cast<std::size_t>(c) * h * h), col(static_cast<std::size_t>(c) * k * k * h * h);
  if (threads > 0) omp_set_num_threads(threads);
  for (auto _ : state) {
    if (threads == 0) {
      kernels::reference::conv2d_forward(c, h, h, c, k, pad, img, w, out);
    } else {
      kernels::im2col(c, h, h, k, pad, img, col);
      kernels::gemm(Op::None, Op::None, c, h * h, c * k * k, w, col, out, false);
    }
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_Conv2d)->Arg(0)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMicrosecond);

ModelConfig bench_config() {
  ModelConfig c;
  c.segment_channels = 32;
  c.stroke_hidden = 32;
  c.temporal_hidden = 32;
  c.num_writers = 40;
  return c;
}

ModelInput bench_input(const ModelConfig& c, int batch) {
  ModelInput in;
  std::uint64_t seed = 10;
  for (char l : c.alphabet) {
    LetterGroup g;
    g.letter = l;
    g.xy = Tensor({batch, 2, c.timesteps});
    g.raster = Tensor({batch, 1, c.raster, c.raster});
    const auto xy = noise(g.xy.size(), seed++);
    const auto img = noise(g.raster.size(), seed++);
    std::copy(xy.begin(), xy.end(), g.xy.storage().begin());
    for (std::size_t i = 0; i < img.size(); ++i) g.raster.storage()[i] = 0.5 + 0.5 * img[i];
    in.letters.push_back(std::move(g));
  }
  return in;
}

// Six-letter identification forward, one sample, single thread.
void BM_IdentifyForward(benchmark::State& state) {
  omp_set_num_threads(1);
  WriterNet net(bench_config());
  {
    Tape warm;  // populates the running statistics
    net.forward(warm, bench_input(net.config(), 4), NormContext{true, false});
  }
  const ModelInput in = bench_input(net.config(), 1);
  for (auto _ : state) {
    Tape tape;
    tape.set_grad_enabled(false);
    benchmark::DoNotOptimize(net.forward(tape, in, NormContext{false, false}).embedding.id);
  }
}
BENCHMARK(BM_IdentifyForward)->Unit(benchmark::kMillisecond);

// Forward and backward of one training batch.
void BM_TrainStep(benchmark::State& state) {
  omp_set_num_threads(static_cast<int>(state.range(0)));
  WriterNet net(bench_config());
  const ModelInput in = bench_input(net.config(), 32);
  for (auto _ : state) {
    Tape tape;
    const ForwardResult f = net.forward(tape, in, NormContext{true, false});
    tape.backward(ops::sum(f.embedding));
    net.params().zero_grad();
  }
}
BENCHMARK(BM_TrainStep)->Arg(1)->Unit(benchmark::kMillisecond)->Iterations(3);

}  // namespace

int main(int argc, char** argv) {
  scribeid::tune_allocator();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
