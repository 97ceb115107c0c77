#include <benchmark/benchmark.h>

#include "cdnz/data.h"
#include "cdnz/denoiser.h"
#include "cdnz/optim.h"

namespace {

// One SGD step. Args: width, batch, patch.
void BM_DenoiserTrainStep(benchmark::State& state) {
  cdnz::DenoiserConfig config;
  config.width = static_cast<int>(state.range(0));
  cdnz::Denoiser<float> net(config, 1);
  cdnz::PatchStream stream(cdnz::GenerateToyCorpus(16, 3, {.size = 64}),
                           {.patch_size = static_cast<int>(state.range(2)),
                            .batch_size = static_cast<int>(state.range(1)),
                            .sigma = 25.0,
                            .seed = 5});
  const auto params = net.parameters();
  for (auto _ : state) {
    auto batch = stream.Next<float>();
    cdnz::Tape<float> tape;
    auto out = net.Forward(tape, tape.Constant(batch.noisy), cdnz::Mode::kTrain);
    tape.Backward(cdnz::MseLoss(out, tape.Constant(batch.clean)));
    cdnz::SgdStep<float>(params, 1e-3);
  }
}
BENCHMARK(BM_DenoiserTrainStep)
    ->Args({8, 16, 32})
    ->Args({16, 16, 32})
    ->Args({16, 8, 32})
    ->Args({32, 16, 32})
    ->Unit(benchmark::kMillisecond);

void BM_DenoiserInference(benchmark::State& state) {
  cdnz::DenoiserConfig config;
  config.width = static_cast<int>(state.range(0));
  cdnz::Denoiser<float> net(config, 1);
  cdnz::Tensor<float> x({1, 3, state.range(1), state.range(1)}, 0.5f);
  for (auto _ : state) benchmark::DoNotOptimize(net.Denoise(x).ptr());
}
BENCHMARK(BM_DenoiserInference)->Args({16, 128})->Args({128, 48})->Unit(benchmark::kMillisecond);

}  // namespace
