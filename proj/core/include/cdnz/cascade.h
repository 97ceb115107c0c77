#ifndef CDNZ_CASCADE_H_
#define CDNZ_CASCADE_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cdnz/denoiser.h"
#include "cdnz/highlevel.h"
#include "cdnz/train.h"

namespace cdnz {

struct CascadeConfig {
  double lambda = 0.25;
  double sigma = 25.0;
  Task task = Task::kClassification;
  OptimizerSchedule schedule;
  uint64_t seed = 0;
  // Start from a lambda = 0 checkpoint instead of a fresh network.
  bool warm_start = true;
  // Draw one noisy copy per training image up front instead of fresh noise
  // every iteration.
  bool fixed_noise = false;

  void Validate() const;
};

template <typename T>
struct JointLossTerms {
  Var<T> total;           // L = L_D + lambda * L_H
  Var<T> reconstruction;  // L_D
  Var<T> task;            // L_H
};

// Denoiser feeding a frozen high-level head.
template <typename T>
class Cascade {
 public:
  Cascade(Denoiser<T> denoiser, HighLevelHead<T> head, CascadeConfig config);

  Denoiser<T>& denoiser() { return denoiser_; }
  const Denoiser<T>& denoiser() const { return denoiser_; }
  const HighLevelHead<T>& head() const { return head_; }
  HighLevelHead<T>& head() { return head_; }
  const CascadeConfig& config() const { return config_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  void AddWarning(std::string w) { warnings_.push_back(std::move(w)); }

  // Throws InvalidArgument if the head is not frozen. The head always runs
  // with running batch-norm statistics.
  JointLossTerms<T> JointLoss(Tape<T>& tape, const Tensor<T>& noisy, const Tensor<T>& clean,
                              std::span<const int> labels, Mode denoiser_mode = Mode::kTrain) const;
  // Head logits on denoised input, both networks in eval mode.
  Tensor<T> Predict(const Tensor<T>& noisy) const;

 private:
  Denoiser<T> denoiser_;
  HighLevelHead<T> head_;
  CascadeConfig config_;
  std::vector<std::string> warnings_;
};

// Trains the denoiser on full training images with noise of config.sigma.
// Requires a frozen head that passed its pretraining gate; only denoiser
// parameters change.
template <typename T>
TrainingLog TrainCascade(Cascade<T>& cascade, const LabeledDataset& train);

// Evaluation-only cascade from a denoiser trained under a different head.
// A sigma mismatch between checkpoint and eval_sigma is recorded as a warning.
template <typename T>
Cascade<T> PlugCrossTask(const Checkpoint& denoiser_ckpt, HighLevelHead<T> head, double eval_sigma);

enum class Variant { kVgg, kSeparate, kJoint, kCross };
std::string ToString(Variant v);
Variant ParseVariant(const std::string& s);

struct MetricRecord {
  std::string variant;
  double sigma = 0;
  std::string metric;
  double value = 0;
};

// One record per (variant, sigma, metric).
struct MetricsReport {
  std::vector<MetricRecord> records;

  void Add(Variant v, double sigma, const std::string& metric, double value);
  std::optional<double> Find(const std::string& variant, double sigma, const std::string& metric) const;
  // Tab-separated `variant sigma metric value` with a header row.
  std::string ToTsv() const;
  // Metric x variant table per sigma, for humans.
  std::string ToTable() const;
  void Write(const std::filesystem::path& tsv_path) const;
};

// Noisy copies of `images` at sigma; image i uses noise seed DeriveSeed(seed, i).
std::vector<Image> NoisyCopies(const std::vector<Image>& images, double sigma, uint64_t seed);

// Feeds noisy test images (optionally denoised first) to the head and records
// top-1 accuracy or mIoU, plus PSNR of the head input against the clean image
// (after 8-bit quantization unless quantized_psnr is false). `denoiser` must be
// null for the vgg variant and set otherwise.
template <typename T>
void RunPipeline(Variant variant, const HighLevelHead<T>& head, const Denoiser<T>* denoiser,
                 const LabeledDataset& test, double sigma, uint64_t noise_seed, MetricsReport& report,
                 bool quantized_psnr = true);

}  // namespace cdnz

#endif  // CDNZ_CASCADE_H_
