#ifndef CDNZ_RANDOM_H_
#define CDNZ_RANDOM_H_

#include <cstdint>
#include <random>

namespace cdnz {

// Seeded generator shared by initialization, noise synthesis and sampling.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  double Normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  double Uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  // Inclusive bounds.
  int64_t UniformInt(int64_t lo, int64_t hi) { return std::uniform_int_distribution<int64_t>(lo, hi)(engine_); }
  uint64_t Next() { return engine_(); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

// Derives an independent stream seed from a base seed and a tag.
inline uint64_t DeriveSeed(uint64_t base, uint64_t tag) {
  uint64_t z = base + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace cdnz

#endif  // CDNZ_RANDOM_H_
