#include "cdnz/train.h"

#include <cmath>
#include <cstdio>

namespace cdnz {
namespace {

std::string FormatDouble(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

template <typename T>
TrainingLog TrainDenoiser(Denoiser<T>& net, PatchStream& stream, const OptimizerSchedule& schedule) {
  if (schedule.iterations < 0) throw InvalidArgument("iteration count must be non-negative");
  SgdOptimizer<T> optimizer(schedule.momentum, schedule.weight_decay);
  const auto params = net.parameters();
  TrainingLog log;
  log.records.reserve(static_cast<size_t>(schedule.iterations));
  for (int64_t it = 0; it < schedule.iterations; ++it) {
    PatchBatch<T> batch = stream.Next<T>();
    Tape<T> tape;
    Var<T> out = net.Forward(tape, tape.Constant(std::move(batch.noisy)), Mode::kTrain);
    Var<T> loss = MseLoss(out, tape.Constant(std::move(batch.clean)));
    tape.Backward(loss);
    const double lr = schedule.LearningRate(it);
    optimizer.Step(params, lr);
    const double l = static_cast<double>(loss.value().item());
    if (!std::isfinite(l)) throw TrainingFailure("denoiser loss diverged at iteration " + std::to_string(it));
    log.records.push_back({it, l, l, 0.0, lr});
  }
  return log;
}

template <typename T>
Checkpoint DenoiserToCheckpoint(const Denoiser<T>& net, const DenoiserMeta& meta) {
  Checkpoint ck;
  ck.metadata["kind"] = "denoiser";
  ck.metadata["config"] = net.config().Serialize();
  ck.metadata["seed"] = std::to_string(meta.seed);
  ck.metadata["sigma"] = FormatDouble(meta.sigma);
  ck.metadata["iteration"] = std::to_string(meta.iteration);
  ck.metadata["lambda"] = FormatDouble(meta.lambda);
  ck.metadata["task"] = meta.task ? ToString(*meta.task) : "none";
  ck.entries = CaptureTensors(net.store());
  return ck;
}

DenoiserMeta ReadDenoiserMeta(const Checkpoint& ck) {
  if (ck.Meta("kind") != "denoiser") {
    throw CheckpointMismatch("checkpoint is a '" + ck.Meta("kind") + "', not a denoiser");
  }
  DenoiserMeta meta;
  meta.sigma = ck.MetaDouble("sigma");
  meta.lambda = ck.MetaDouble("lambda");
  try {
    meta.seed = std::stoull(ck.Meta("seed"));
    meta.iteration = std::stoll(ck.Meta("iteration"));
    const std::string& task = ck.Meta("task");
    if (task != "none") meta.task = ParseTask(task);
  } catch (const CheckpointMismatch&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointMismatch(std::string("invalid denoiser metadata: ") + e.what());
  }
  return meta;
}

template <typename T>
Denoiser<T> DenoiserFromCheckpoint(const Checkpoint& ck) {
  const DenoiserMeta meta = ReadDenoiserMeta(ck);
  DenoiserConfig config;
  try {
    config = DenoiserConfig::Deserialize(ck.Meta("config"));
  } catch (const CheckpointMismatch&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointMismatch(std::string("invalid denoiser config in checkpoint: ") + e.what());
  }
  Denoiser<T> net(config, meta.seed);
  RestoreTensors(ck.entries, net.store());
  return net;
}

template TrainingLog TrainDenoiser(Denoiser<float>&, PatchStream&, const OptimizerSchedule&);
template TrainingLog TrainDenoiser(Denoiser<double>&, PatchStream&, const OptimizerSchedule&);
template Checkpoint DenoiserToCheckpoint(const Denoiser<float>&, const DenoiserMeta&);
template Checkpoint DenoiserToCheckpoint(const Denoiser<double>&, const DenoiserMeta&);
template Denoiser<float> DenoiserFromCheckpoint<float>(const Checkpoint&);
template Denoiser<double> DenoiserFromCheckpoint<double>(const Checkpoint&);

}  // namespace cdnz
