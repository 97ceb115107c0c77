#ifndef CDNZ_PARALLEL_H_
#define CDNZ_PARALLEL_H_

#include <cstdint>
#include <functional>

namespace cdnz {

// Worker count for op-internal parallelism. Defaults to the hardware
// concurrency capped by the CDNZ_THREADS environment variable.
int NumThreads();
void SetNumThreads(int n);

// Runs fn(i) for i in [0, n). Callers only use it where each index writes a
// disjoint output region, so results do not depend on the thread count.
void ParallelFor(int64_t n, const std::function<void(int64_t)>& fn);

}  // namespace cdnz

#endif  // CDNZ_PARALLEL_H_
