#include "cdnz/highlevel.h"

#include <cstdio>
#include <numeric>
#include <sstream>

#include "cdnz/metrics.h"

namespace cdnz {
namespace {

std::string FormatDouble(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<double> ParseDoubles(const std::string& s) {
  std::vector<double> out;
  std::istringstream is(s);
  std::string part;
  while (std::getline(is, part, ',')) out.push_back(std::stod(part));
  return out;
}

}  // namespace

std::vector<double> ChannelMeans(const std::vector<Image>& images) {
  if (images.empty()) throw InvalidArgument("channel means of an empty image set");
  const int64_t c = images[0].channels;
  std::vector<double> sums(static_cast<size_t>(c), 0.0);
  int64_t count = 0;
  for (const Image& img : images) {
    const int64_t plane = img.height * img.width;
    for (int64_t ch = 0; ch < c; ++ch) {
      for (int64_t j = 0; j < plane; ++j) sums[ch] += img.values[static_cast<size_t>(ch * plane + j)];
    }
    count += plane;
  }
  for (double& s : sums) s /= static_cast<double>(count);
  return sums;
}

template <typename T>
HighLevelHead<T>::HighLevelHead(const HeadConfig& config, uint64_t seed) : config_(config), seed_(seed) {
  if (config_.num_classes < 2) throw InvalidArgument("a head needs at least 2 classes");
  Rng rng(seed);
  int in = config_.input_channels;
  for (int i = 0; i < 3; ++i) {
    const std::string tag = "stage" + std::to_string(i);
    convs_.push_back(MakeConv(store_, tag + ".conv", in, config_.widths[i], 3, 1, 1, rng));
    norms_.push_back(MakeBatchNorm(store_, tag + ".bn", config_.widths[i]));
    in = config_.widths[i];
  }
  if (config_.task == Task::kClassification) {
    classifier_ = MakeLinear(store_, "classifier", in, config_.num_classes, rng);
  } else {
    pixel_classifier_ = MakeConv(store_, "classifier", in, config_.num_classes, 1, 1, 0, rng);
  }
  channel_means_.assign(static_cast<size_t>(config_.input_channels), 0.0);
}

template <typename T>
void HighLevelHead<T>::set_channel_means(std::vector<double> means) {
  if (static_cast<int>(means.size()) != config_.input_channels) {
    throw InvalidArgument("channel mean count does not match head input channels");
  }
  channel_means_ = std::move(means);
}

template <typename T>
Var<T> HighLevelHead<T>::Forward(Tape<T>& tape, Var<T> x, Mode mode) const {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != config_.input_channels) {
    throw ShapeError("head expects [N," + std::to_string(config_.input_channels) + ",H,W] input, got " +
                     ShapeToString(s));
  }
  if (config_.task == Task::kClassification && (s[2] % 8 != 0 || s[3] % 8 != 0)) {
    throw ShapeError("classifier input extents must be multiples of 8, got " + ShapeToString(s));
  }
  std::vector<double> neg(channel_means_.size());
  for (size_t i = 0; i < neg.size(); ++i) neg[i] = -channel_means_[i];
  Var<T> h = ShiftChannels(x, std::span<const double>(neg));
  for (size_t i = 0; i < convs_.size(); ++i) {
    h = Relu(norms_[i](tape, convs_[i](tape, h), mode));
    if (config_.task == Task::kClassification) h = MaxPool2(h);
  }
  if (config_.task == Task::kClassification) return classifier_(tape, GlobalAvgPool(h));
  return pixel_classifier_(tape, h);
}

template <typename T>
Var<T> HighLevelHead<T>::LossFromLogits(Var<T> logits, std::span<const int> labels) const {
  const Shape& s = logits.shape();
  const int64_t expected = config_.task == Task::kClassification ? s[0] : s[0] * s[2] * s[3];
  if (static_cast<int64_t>(labels.size()) != expected) {
    throw InvalidArgument(std::string("label count ") + std::to_string(labels.size()) + " does not match " +
                          ToString(config_.task) + " head output " + ShapeToString(s));
  }
  if (config_.task == Task::kClassification) return CrossEntropyLoss(logits, labels);
  return CrossEntropyLoss(logits, labels, kIgnoreLabel);
}

template <typename T>
Var<T> HighLevelHead<T>::Loss(Tape<T>& tape, Var<T> x, std::span<const int> labels, Mode mode) const {
  return LossFromLogits(Forward(tape, x, mode), labels);
}

template <typename T>
Tensor<T> HighLevelHead<T>::Predict(const Tensor<T>& x) const {
  Tape<T> tape(/*grad_enabled=*/false);
  return Forward(tape, tape.Constant(x), Mode::kEval).value();
}

template <typename T>
void HighLevelHead<T>::Freeze() {
  store_.SetTrainable(false);
  store_.ZeroGrad();
  frozen_ = true;
}

template <typename T>
void HighLevelHead<T>::Unfreeze() {
  store_.SetTrainable(true);
  frozen_ = false;
}

template <typename T>
Checkpoint HighLevelHead<T>::ToCheckpoint() const {
  Checkpoint ck;
  ck.metadata["kind"] = "head";
  ck.metadata["task"] = ToString(config_.task);
  ck.metadata["num_classes"] = std::to_string(config_.num_classes);
  ck.metadata["input_channels"] = std::to_string(config_.input_channels);
  ck.metadata["widths"] = std::to_string(config_.widths[0]) + "," + std::to_string(config_.widths[1]) + "," +
                          std::to_string(config_.widths[2]);
  std::string means;
  for (size_t i = 0; i < channel_means_.size(); ++i) means += (i ? "," : "") + FormatDouble(channel_means_[i]);
  ck.metadata["channel_means"] = means;
  ck.metadata["seed"] = std::to_string(seed_);
  if (clean_metric_) ck.metadata["clean_metric"] = FormatDouble(*clean_metric_);
  ck.entries = CaptureTensors(store_);
  return ck;
}

template <typename T>
HighLevelHead<T> HighLevelHead<T>::FromCheckpoint(const Checkpoint& ck) {
  if (ck.Meta("kind") != "head") throw CheckpointMismatch("checkpoint is a '" + ck.Meta("kind") + "', not a head");
  HeadConfig cfg;
  try {
    cfg.task = ParseTask(ck.Meta("task"));
    cfg.num_classes = std::stoi(ck.Meta("num_classes"));
    cfg.input_channels = std::stoi(ck.Meta("input_channels"));
    const std::vector<double> widths = ParseDoubles(ck.Meta("widths"));
    if (widths.size() != 3) throw InvalidArgument("widths");
    for (int i = 0; i < 3; ++i) cfg.widths[i] = static_cast<int>(widths[i]);
  } catch (const CheckpointMismatch&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointMismatch(std::string("invalid head metadata: ") + e.what());
  }
  HighLevelHead head(cfg, std::stoull(ck.Meta("seed")));
  head.set_channel_means(ParseDoubles(ck.Meta("channel_means")));
  if (ck.metadata.count("clean_metric")) head.set_clean_metric(ck.MetaDouble("clean_metric"));
  RestoreTensors(ck.entries, head.store_);
  return head;
}

template <typename T>
double EvaluateHead(const HighLevelHead<T>& head, const LabeledDataset& data, const std::vector<Image>& inputs,
                    int batch_size) {
  if (data.task != head.task()) throw InvalidArgument("dataset task does not match head task");
  if (inputs.size() != data.size()) throw InvalidArgument("input count does not match dataset size");
  const size_t n = data.size();
  std::vector<int> predictions, truth;
  int64_t correct = 0;
  for (size_t start = 0; start < n; start += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(n, start + static_cast<size_t>(batch_size));
    std::vector<const Image*> batch;
    std::vector<size_t> idx;
    for (size_t i = start; i < end; ++i) {
      batch.push_back(&inputs[i]);
      idx.push_back(i);
    }
    const Tensor<T> logits = head.Predict(StackImages<T>(batch));
    const std::vector<int> labels = data.GatherLabels(idx);
    if (head.task() == Task::kClassification) {
      correct += static_cast<int64_t>(std::llround(TopKAccuracy(logits, labels, 1) * static_cast<double>(idx.size())));
    } else {
      const std::vector<int> pred = ArgmaxClasses(logits);
      predictions.insert(predictions.end(), pred.begin(), pred.end());
      truth.insert(truth.end(), labels.begin(), labels.end());
    }
  }
  if (head.task() == Task::kClassification) return static_cast<double>(correct) / static_cast<double>(n);
  return MeanIou(predictions, truth, head.config().num_classes, kIgnoreLabel);
}

template <typename T>
double EvaluateHead(const HighLevelHead<T>& head, const LabeledDataset& data, int batch_size) {
  return EvaluateHead(head, data, data.images, batch_size);
}

template <typename T>
TrainingLog PretrainHead(HighLevelHead<T>& head, const LabeledDataset& train, const LabeledDataset& heldout,
                         const OptimizerSchedule& schedule, const PretrainOptions& options) {
  if (head.frozen()) throw InvalidArgument("pretrain_head: head is frozen");
  if (train.task != head.task() || heldout.task != head.task()) {
    throw InvalidArgument("pretrain_head: dataset task does not match head task");
  }
  train.Validate();
  heldout.Validate();
  head.set_channel_means(ChannelMeans(train.images));
  head.set_clean_metric(std::nullopt);

  Rng rng(options.seed);
  SgdOptimizer<T> optimizer(schedule.momentum, schedule.weight_decay);
  const auto params = head.parameters();
  TrainingLog log;
  const size_t batch = static_cast<size_t>(std::min<int64_t>(schedule.batch_size, static_cast<int64_t>(train.size())));
  for (int64_t it = 0; it < schedule.iterations; ++it) {
    std::vector<size_t> idx(batch);
    for (size_t& i : idx) i = static_cast<size_t>(rng.UniformInt(0, static_cast<int64_t>(train.size()) - 1));
    std::vector<const Image*> images;
    for (size_t i : idx) images.push_back(&train.images[i]);
    const std::vector<int> labels = train.GatherLabels(idx);

    Tape<T> tape;
    Var<T> loss = head.Loss(tape, tape.Constant(StackImages<T>(images)), labels, Mode::kTrain);
    tape.Backward(loss);
    const double lr = schedule.LearningRate(it);
    optimizer.Step(params, lr);
    const double l = static_cast<double>(loss.value().item());
    log.records.push_back({it, l, 0.0, l, lr});
  }
  const double metric = EvaluateHead(head, heldout);
  log.final_metric = metric;
  if (metric < options.target_metric) {
    throw TrainingFailure("head pretraining reached " + std::to_string(metric) + " on held-out clean data, below the " +
                          std::to_string(options.target_metric) + " target");
  }
  head.set_clean_metric(metric);
  return log;
}

template class HighLevelHead<float>;
template class HighLevelHead<double>;
template double EvaluateHead(const HighLevelHead<float>&, const LabeledDataset&, const std::vector<Image>&, int);
template double EvaluateHead(const HighLevelHead<double>&, const LabeledDataset&, const std::vector<Image>&, int);
template double EvaluateHead(const HighLevelHead<float>&, const LabeledDataset&, int);
template double EvaluateHead(const HighLevelHead<double>&, const LabeledDataset&, int);
template TrainingLog PretrainHead(HighLevelHead<float>&, const LabeledDataset&, const LabeledDataset&,
                                  const OptimizerSchedule&, const PretrainOptions&);
template TrainingLog PretrainHead(HighLevelHead<double>&, const LabeledDataset&, const LabeledDataset&,
                                  const OptimizerSchedule&, const PretrainOptions&);

}  // namespace cdnz
