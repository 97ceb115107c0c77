#include <benchmark/benchmark.h>

#include "cdnz/ops.h"
#include "cdnz/random.h"

namespace {

cdnz::Tensor<float> RandomTensor(const cdnz::Shape& shape, uint64_t seed) {
  cdnz::Rng rng(seed);
  cdnz::Tensor<float> t(shape);
  for (float& v : t.data()) v = static_cast<float>(rng.Normal());
  return t;
}

// Args: batch, channels, extent.
void BM_Conv3x3Forward(benchmark::State& state) {
  const int64_t n = state.range(0), c = state.range(1), s = state.range(2);
  const auto x = RandomTensor({n, c, s, s}, 1);
  const auto w = RandomTensor({c, c, 3, 3}, 2);
  const auto b = RandomTensor({c}, 3);
  for (auto _ : state) {
    cdnz::Tape<float> tape(false);
    auto y = cdnz::Conv2d(tape.Constant(x), tape.Constant(w), tape.Constant(b), 1, 1);
    benchmark::DoNotOptimize(y.value().ptr());
  }
  state.SetItemsProcessed(state.iterations() * n * c * c * 9 * s * s);
}
BENCHMARK(BM_Conv3x3Forward)->Args({16, 16, 32})->Args({16, 32, 16})->Args({1, 128, 48});

void BM_Conv3x3ForwardBackward(benchmark::State& state) {
  const int64_t n = state.range(0), c = state.range(1), s = state.range(2);
  cdnz::Parameter<float> w{"w", RandomTensor({c, c, 3, 3}, 2)};
  cdnz::Parameter<float> b{"b", RandomTensor({c}, 3)};
  const auto x = RandomTensor({n, c, s, s}, 1);
  for (auto _ : state) {
    cdnz::Tape<float> tape;
    auto y = cdnz::Conv2d(tape.Input(x, true), tape.Param(w), tape.Param(b), 1, 1);
    tape.Backward(cdnz::Sum(y));
    w.ZeroGrad();
    b.ZeroGrad();
  }
  state.SetItemsProcessed(state.iterations() * n * c * c * 9 * s * s);
}
BENCHMARK(BM_Conv3x3ForwardBackward)->Args({16, 16, 32})->Args({16, 32, 16});

}  // namespace
