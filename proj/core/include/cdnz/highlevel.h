#ifndef CDNZ_HIGHLEVEL_H_
#define CDNZ_HIGHLEVEL_H_

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "cdnz/checkpoint.h"
#include "cdnz/data.h"
#include "cdnz/nn.h"
#include "cdnz/optim.h"
#include "cdnz/training_log.h"

namespace cdnz {

struct HeadConfig {
  Task task = Task::kClassification;
  int num_classes = 2;
  int input_channels = 3;
  std::array<int, 3> widths = {16, 32, 64};
};

// Toy high-level network consuming denoiser-shaped images.
//
// Classifier: 3 x (3x3 conv, batch norm, ReLU, 2x max pool), global average
// pool, linear -> [N,K]. Inputs need H, W divisible by 8.
// Segmenter: 3 x (3x3 conv, batch norm, ReLU) at full resolution, 1x1 conv
// -> [N,K,H,W].
// Both subtract per-channel dataset means from the input first.
template <typename T>
class HighLevelHead {
 public:
  HighLevelHead(const HeadConfig& config, uint64_t seed);
  HighLevelHead(HighLevelHead&&) noexcept = default;
  HighLevelHead& operator=(HighLevelHead&&) noexcept = default;

  const HeadConfig& config() const { return config_; }
  Task task() const { return config_.task; }
  ParamStore<T>& store() { return store_; }
  const ParamStore<T>& store() const { return store_; }
  std::vector<Parameter<T>*> parameters() const { return store_.parameters(); }

  Var<T> Forward(Tape<T>& tape, Var<T> x, Mode mode) const;
  // Cross-entropy of the head's logits. Classification takes one label per
  // image, segmentation one per pixel (kIgnoreLabel skipped).
  Var<T> Loss(Tape<T>& tape, Var<T> x, std::span<const int> labels, Mode mode) const;
  Var<T> LossFromLogits(Var<T> logits, std::span<const int> labels) const;
  // Eval-mode logits without gradient recording.
  Tensor<T> Predict(const Tensor<T>& x) const;

  // Parameters stop receiving updates; gradients still flow to the input.
  void Freeze();
  void Unfreeze();
  bool frozen() const { return frozen_; }

  const std::vector<double>& channel_means() const { return channel_means_; }
  void set_channel_means(std::vector<double> means);

  // Clean-data metric reached by pretraining (accuracy or mIoU); unset until
  // the head passes its gate.
  std::optional<double> clean_metric() const { return clean_metric_; }
  void set_clean_metric(std::optional<double> m) { clean_metric_ = m; }

  Checkpoint ToCheckpoint() const;
  static HighLevelHead FromCheckpoint(const Checkpoint& ck);

 private:
  HeadConfig config_;
  uint64_t seed_;
  ParamStore<T> store_;
  std::vector<ConvLayer<T>> convs_;
  std::vector<BatchNormLayer<T>> norms_;
  LinearLayer<T> classifier_;
  ConvLayer<T> pixel_classifier_;
  std::vector<double> channel_means_;
  bool frozen_ = false;
  std::optional<double> clean_metric_;
};

// Mean image intensity per channel over a dataset.
std::vector<double> ChannelMeans(const std::vector<Image>& images);

// Top-1 accuracy (classification) or mIoU (segmentation) of the head applied
// to `inputs` (already noisy/denoised, same order as `data`).
template <typename T>
double EvaluateHead(const HighLevelHead<T>& head, const LabeledDataset& data, const std::vector<Image>& inputs,
                    int batch_size = 32);
template <typename T>
double EvaluateHead(const HighLevelHead<T>& head, const LabeledDataset& data, int batch_size = 32);

struct PretrainOptions {
  // Checked on the held-out set after the last iteration.
  double target_metric = 0.95;
  uint64_t seed = 0;
};

// Trains an unfrozen head on clean data. Sets clean_metric on success; throws
// TrainingFailure if the metric on `heldout` stays below target.
template <typename T>
TrainingLog PretrainHead(HighLevelHead<T>& head, const LabeledDataset& train, const LabeledDataset& heldout,
                         const OptimizerSchedule& schedule, const PretrainOptions& options = {});

extern template class HighLevelHead<float>;
extern template class HighLevelHead<double>;

}  // namespace cdnz

#endif  // CDNZ_HIGHLEVEL_H_
