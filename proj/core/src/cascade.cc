#include "cdnz/cascade.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "cdnz/metrics.h"

namespace cdnz {
namespace {

std::string FormatValue(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string MetricName(Task task) { return task == Task::kClassification ? "top1" : "miou"; }

template <typename T>
std::vector<Image> DenoiseAll(const Denoiser<T>& net, const std::vector<Image>& inputs, size_t batch) {
  std::vector<Image> out;
  out.reserve(inputs.size());
  for (size_t start = 0; start < inputs.size(); start += batch) {
    std::vector<const Image*> group;
    for (size_t i = start; i < std::min(inputs.size(), start + batch); ++i) group.push_back(&inputs[i]);
    const Tensor<T> denoised = net.Denoise(StackImages<T>(group));
    for (size_t i = 0; i < group.size(); ++i) out.push_back(TensorToImage(denoised, static_cast<int64_t>(i)));
  }
  return out;
}

}  // namespace

void CascadeConfig::Validate() const {
  if (!(lambda >= 0) || !std::isfinite(lambda)) throw InvalidArgument("lambda must be a finite non-negative number");
  if (!(sigma >= 0) || !std::isfinite(sigma)) throw InvalidArgument("sigma must be a finite non-negative number");
  if (schedule.batch_size < 1) throw InvalidArgument("batch size must be positive");
  if (schedule.iterations < 0) throw InvalidArgument("iteration count must be non-negative");
}

template <typename T>
Cascade<T>::Cascade(Denoiser<T> denoiser, HighLevelHead<T> head, CascadeConfig config)
    : denoiser_(std::move(denoiser)), head_(std::move(head)), config_(std::move(config)) {
  config_.Validate();
  if (head_.task() != config_.task) {
    throw CheckpointMismatch("cascade configured for " + ToString(config_.task) + " but head is " +
                             ToString(head_.task()));
  }
  if (denoiser_.config().input_channels != head_.config().input_channels) {
    throw CheckpointMismatch("denoiser and head disagree on channel count");
  }
}

template <typename T>
JointLossTerms<T> Cascade<T>::JointLoss(Tape<T>& tape, const Tensor<T>& noisy, const Tensor<T>& clean,
                                        std::span<const int> labels, Mode denoiser_mode) const {
  if (!head_.frozen()) throw InvalidArgument("joint loss requires a frozen head");
  CheckSameShape(noisy.shape(), clean.shape(), "joint loss");
  Var<T> restored = denoiser_.Forward(tape, tape.Constant(noisy), denoiser_mode);
  Var<T> reconstruction = MseLoss(restored, tape.Constant(clean));
  Var<T> task = head_.Loss(tape, restored, labels, Mode::kEval);
  Var<T> total = config_.lambda == 0 ? reconstruction
                                     : Add(reconstruction, Scale(task, static_cast<T>(config_.lambda)));
  return {total, reconstruction, task};
}

template <typename T>
Tensor<T> Cascade<T>::Predict(const Tensor<T>& noisy) const {
  return head_.Predict(denoiser_.Denoise(noisy));
}

template <typename T>
TrainingLog TrainCascade(Cascade<T>& cascade, const LabeledDataset& train) {
  const CascadeConfig& cfg = cascade.config();
  if (!cascade.head().frozen()) throw InvalidArgument("train_cascade: head must be frozen");
  if (!cascade.head().clean_metric()) {
    throw InvalidArgument("train_cascade: head has not passed clean-data pretraining");
  }
  if (train.task != cfg.task) throw InvalidArgument("train_cascade: dataset task does not match cascade task");
  train.Validate();

  Rng index_rng(DeriveSeed(cfg.seed, 1));
  Rng noise_rng(DeriveSeed(cfg.seed, 2));
  std::vector<Image> fixed;
  if (cfg.fixed_noise) fixed = NoisyCopies(train.images, cfg.sigma, DeriveSeed(cfg.seed, 3));

  SgdOptimizer<T> optimizer(cfg.schedule.momentum, cfg.schedule.weight_decay);
  const auto params = cascade.denoiser().parameters();
  const int64_t n = static_cast<int64_t>(train.size());
  const size_t batch = static_cast<size_t>(std::min<int64_t>(cfg.schedule.batch_size, n));
  TrainingLog log;
  log.records.reserve(static_cast<size_t>(cfg.schedule.iterations));
  for (int64_t it = 0; it < cfg.schedule.iterations; ++it) {
    std::vector<size_t> idx(batch);
    for (size_t& i : idx) i = static_cast<size_t>(index_rng.UniformInt(0, n - 1));
    std::vector<const Image*> clean_images, noisy_images;
    for (size_t i : idx) {
      clean_images.push_back(&train.images[i]);
      if (cfg.fixed_noise) noisy_images.push_back(&fixed[i]);
    }
    const Tensor<T> clean = StackImages<T>(clean_images);
    Tensor<T> noisy = cfg.fixed_noise ? StackImages<T>(noisy_images) : clean;
    if (!cfg.fixed_noise) AddNoiseInPlace(noisy, cfg.sigma, noise_rng);
    const std::vector<int> labels = train.GatherLabels(idx);

    Tape<T> tape;
    JointLossTerms<T> terms = cascade.JointLoss(tape, noisy, clean, labels, Mode::kTrain);
    tape.Backward(terms.total);
    const double lr = cfg.schedule.LearningRate(it);
    optimizer.Step(params, lr);
    const double l = static_cast<double>(terms.total.value().item());
    if (!std::isfinite(l)) throw TrainingFailure("cascade loss diverged at iteration " + std::to_string(it));
    log.records.push_back({it, l, static_cast<double>(terms.reconstruction.value().item()),
                           static_cast<double>(terms.task.value().item()), lr});
  }
  return log;
}

template <typename T>
Cascade<T> PlugCrossTask(const Checkpoint& denoiser_ckpt, HighLevelHead<T> head, double eval_sigma) {
  if (!head.frozen()) throw InvalidArgument("plug_cross_task: head must be frozen");
  if (!head.clean_metric()) throw InvalidArgument("plug_cross_task: head has not passed clean-data pretraining");
  const DenoiserMeta meta = ReadDenoiserMeta(denoiser_ckpt);
  CascadeConfig cfg;
  cfg.sigma = eval_sigma;
  cfg.lambda = meta.lambda;
  cfg.task = head.task();
  cfg.seed = meta.seed;
  cfg.schedule.iterations = 0;
  Cascade<T> cascade(DenoiserFromCheckpoint<T>(denoiser_ckpt), std::move(head), cfg);
  if (meta.sigma != eval_sigma) {
    cascade.AddWarning("denoiser trained at sigma " + FormatValue(meta.sigma) + " evaluated at sigma " +
                       FormatValue(eval_sigma));
  }
  return cascade;
}

std::string ToString(Variant v) {
  switch (v) {
    case Variant::kVgg:
      return "vgg";
    case Variant::kSeparate:
      return "separate";
    case Variant::kJoint:
      return "joint";
    case Variant::kCross:
      return "cross";
  }
  return "?";
}

Variant ParseVariant(const std::string& s) {
  if (s == "vgg") return Variant::kVgg;
  if (s == "separate") return Variant::kSeparate;
  if (s == "joint") return Variant::kJoint;
  if (s == "cross") return Variant::kCross;
  throw InvalidArgument("unknown variant '" + s + "' (expected vgg|separate|joint|cross)");
}

void MetricsReport::Add(Variant v, double sigma, const std::string& metric, double value) {
  records.push_back({ToString(v), sigma, metric, value});
}

std::optional<double> MetricsReport::Find(const std::string& variant, double sigma, const std::string& metric) const {
  for (const MetricRecord& r : records) {
    if (r.variant == variant && r.sigma == sigma && r.metric == metric) return r.value;
  }
  return std::nullopt;
}

std::string MetricsReport::ToTsv() const {
  std::string out = "variant\tsigma\tmetric\tvalue\n";
  for (const MetricRecord& r : records) {
    out += r.variant + "\t" + FormatValue(r.sigma) + "\t" + r.metric + "\t" + FormatValue(r.value) + "\n";
  }
  return out;
}

std::string MetricsReport::ToTable() const {
  std::vector<std::string> variants;
  std::map<double, std::vector<std::string>> metrics_by_sigma;
  for (const MetricRecord& r : records) {
    if (std::find(variants.begin(), variants.end(), r.variant) == variants.end()) variants.push_back(r.variant);
    auto& m = metrics_by_sigma[r.sigma];
    if (std::find(m.begin(), m.end(), r.metric) == m.end()) m.push_back(r.metric);
  }
  std::ostringstream os;
  char buf[64];
  for (const auto& [sigma, metrics] : metrics_by_sigma) {
    os << "sigma " << FormatValue(sigma) << "\n";
    std::snprintf(buf, sizeof(buf), "  %-8s", "metric");
    os << buf;
    for (const std::string& v : variants) {
      std::snprintf(buf, sizeof(buf), " %10s", v.c_str());
      os << buf;
    }
    os << "\n";
    for (const std::string& metric : metrics) {
      std::snprintf(buf, sizeof(buf), "  %-8s", metric.c_str());
      os << buf;
      for (const std::string& v : variants) {
        const auto value = Find(v, sigma, metric);
        if (value) {
          std::snprintf(buf, sizeof(buf), " %10.4f", *value);
        } else {
          std::snprintf(buf, sizeof(buf), " %10s", "-");
        }
        os << buf;
      }
      os << "\n";
    }
  }
  return os.str();
}

void MetricsReport::Write(const std::filesystem::path& tsv_path) const {
  std::ofstream out(tsv_path);
  if (!out) throw FileNotFound("cannot create report '" + tsv_path.string() + "'");
  out << ToTsv();
}

std::vector<Image> NoisyCopies(const std::vector<Image>& images, double sigma, uint64_t seed) {
  std::vector<Image> out;
  out.reserve(images.size());
  for (size_t i = 0; i < images.size(); ++i) out.push_back(AddNoise(images[i], {sigma, DeriveSeed(seed, i)}));
  return out;
}

template <typename T>
void RunPipeline(Variant variant, const HighLevelHead<T>& head, const Denoiser<T>* denoiser,
                 const LabeledDataset& test, double sigma, uint64_t noise_seed, MetricsReport& report,
                 bool quantized_psnr) {
  if (variant == Variant::kVgg && denoiser) throw InvalidArgument("the vgg variant takes no denoiser");
  if (variant != Variant::kVgg && !denoiser) {
    throw InvalidArgument("variant '" + ToString(variant) + "' requires a denoiser checkpoint");
  }
  if (test.task != head.task()) throw InvalidArgument("test set task does not match head task");
  test.Validate();
  const std::vector<Image> noisy = NoisyCopies(test.images, sigma, noise_seed);
  const std::vector<Image> inputs = denoiser ? DenoiseAll(*denoiser, noisy, 32) : noisy;
  report.Add(variant, sigma, MetricName(head.task()), EvaluateHead(head, test, inputs));
  double psnr = 0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    psnr += quantized_psnr ? QuantizedPsnr(inputs[i], test.images[i]) : Psnr(inputs[i], test.images[i]);
  }
  report.Add(variant, sigma, "psnr", psnr / static_cast<double>(inputs.size()));
}

template class Cascade<float>;
template class Cascade<double>;
template TrainingLog TrainCascade(Cascade<float>&, const LabeledDataset&);
template TrainingLog TrainCascade(Cascade<double>&, const LabeledDataset&);
template Cascade<float> PlugCrossTask(const Checkpoint&, HighLevelHead<float>, double);
template Cascade<double> PlugCrossTask(const Checkpoint&, HighLevelHead<double>, double);
template void RunPipeline(Variant, const HighLevelHead<float>&, const Denoiser<float>*, const LabeledDataset&, double,
                          uint64_t, MetricsReport&, bool);
template void RunPipeline(Variant, const HighLevelHead<double>&, const Denoiser<double>*, const LabeledDataset&,
                          double, uint64_t, MetricsReport&, bool);

}  // namespace cdnz
