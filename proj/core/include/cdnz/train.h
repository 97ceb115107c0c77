#ifndef CDNZ_TRAIN_H_
#define CDNZ_TRAIN_H_

#include <cstdint>
#include <optional>
#include <string>

#include "cdnz/checkpoint.h"
#include "cdnz/data.h"
#include "cdnz/denoiser.h"
#include "cdnz/optim.h"
#include "cdnz/training_log.h"

namespace cdnz {

// Plain reconstruction training: MSE between F_D(noisy) and clean on batches
// drawn from `stream`. The stream's batch geometry is used as is; the
// schedule supplies the learning rate and iteration count.
template <typename T>
TrainingLog TrainDenoiser(Denoiser<T>& net, PatchStream& stream, const OptimizerSchedule& schedule);

// Provenance stored alongside denoiser weights.
struct DenoiserMeta {
  double sigma = 25.0;
  int64_t iteration = 0;
  uint64_t seed = 0;
  double lambda = 0.0;
  // Head task the denoiser was trained with; empty for lambda == 0.
  std::optional<Task> task;
};

template <typename T>
Checkpoint DenoiserToCheckpoint(const Denoiser<T>& net, const DenoiserMeta& meta);
// Rebuilds the network from the stored config and restores every tensor.
template <typename T>
Denoiser<T> DenoiserFromCheckpoint(const Checkpoint& ck);
DenoiserMeta ReadDenoiserMeta(const Checkpoint& ck);

}  // namespace cdnz

#endif  // CDNZ_TRAIN_H_
