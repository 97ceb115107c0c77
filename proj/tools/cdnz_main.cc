// cdnz: train, run and evaluate the cascaded denoiser.
//
// Exit codes: 0 success, 1 other error, 2 invalid config or arguments,
// 3 checkpoint/task mismatch, 4 missing file, 5 training gate not met.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "cdnz/cascade.h"
#include "cdnz/config.h"
#include "cdnz/metrics.h"
#include "cdnz/parallel.h"

namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kMismatch = 3, kMissing = 4, kGate = 5 };

struct CommonOptions {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<double> sigma;
  std::optional<double> lambda;
  bool deterministic = false;
  std::string out = "run";
};

void AddCommon(CLI::App* cmd, CommonOptions& o, bool with_lambda) {
  cmd->add_option("--config", o.config_path, "Experiment config (INI)")->required();
  cmd->add_option("--seed", o.seed, "Override experiment.seed");
  cmd->add_option("--sigma", o.sigma, "Override experiment.sigma (0-255 scale)");
  if (with_lambda) cmd->add_option("--lambda", o.lambda, "Override experiment.lambda");
  cmd->add_flag("--deterministic", o.deterministic, "Single-threaded, fixed reduction order");
  cmd->add_option("--out", o.out, "Output directory");
}

cdnz::ExperimentConfig Resolve(const CommonOptions& o) {
  if (!fs::exists(o.config_path)) throw cdnz::FileNotFound("config '" + o.config_path + "' not found");
  cdnz::ExperimentConfig c = cdnz::ExperimentConfig::Load(o.config_path);
  if (o.seed) c.seed = *o.seed;
  if (o.sigma) c.sigma = *o.sigma;
  if (o.lambda) c.lambda = *o.lambda;
  c.Validate();
  if (o.deterministic) cdnz::SetNumThreads(1);
  return c;
}

// Self-describing output directory: resolved config and run summary.
void PrepareOut(const CommonOptions& o, const cdnz::ExperimentConfig& c, const std::string& command) {
  fs::create_directories(o.out);
  std::ofstream(fs::path(o.out) / "config.ini") << c.ToText();
  std::ofstream(fs::path(o.out) / "run.txt") << "command " << command << "\nseed " << c.seed
                                             << "\ncheckpoint_format CDNZ1\n";
}

cdnz::Checkpoint LoadCheckpoint(const std::string& path, const std::string& what) {
  if (path.empty()) throw cdnz::ConfigError(what + " checkpoint path is not set in [paths]");
  if (!fs::exists(path)) throw cdnz::FileNotFound(what + " checkpoint '" + path + "' not found");
  return cdnz::Checkpoint::Load(path);
}

cdnz::HighLevelHead<float> LoadHead(const cdnz::ExperimentConfig& c) {
  auto head = cdnz::HighLevelHead<float>::FromCheckpoint(LoadCheckpoint(c.head_checkpoint, "head"));
  if (head.task() != c.task) {
    throw cdnz::CheckpointMismatch("head checkpoint is for " + cdnz::ToString(head.task()) + ", config task is " +
                                   cdnz::ToString(c.task));
  }
  if (!head.clean_metric()) throw cdnz::CheckpointMismatch("head checkpoint has not passed its pretraining gate");
  head.Freeze();
  return head;
}

double MeanLastLosses(const cdnz::TrainingLog& log, size_t count) {
  if (log.records.empty()) return 0;
  const size_t n = std::min(count, log.records.size());
  double acc = 0;
  for (size_t i = log.records.size() - n; i < log.records.size(); ++i) acc += log.records[i].loss;
  return acc / static_cast<double>(n);
}

int TrainDenoiserCmd(const CommonOptions& o) {
  const cdnz::ExperimentConfig c = Resolve(o);
  if (c.lambda != 0) throw cdnz::ConfigError("train-denoiser trains with lambda = 0; use train-cascade");
  PrepareOut(o, c, "train-denoiser");
  cdnz::Denoiser<float> net(c.denoiser, cdnz::DeriveSeed(c.seed, 0));
  cdnz::PatchStream stream(cdnz::LoadCorpus(c), {.patch_size = c.denoiser_schedule.patch_size,
                                                 .batch_size = c.denoiser_schedule.batch_size,
                                                 .sigma = c.sigma,
                                                 .seed = cdnz::DeriveSeed(c.seed, 1)});
  const cdnz::TrainingLog log = cdnz::TrainDenoiser(net, stream, c.denoiser_schedule);
  log.WriteTsv(fs::path(o.out) / "log.tsv");
  const cdnz::DenoiserMeta meta{c.sigma, c.denoiser_schedule.iterations, cdnz::DeriveSeed(c.seed, 0), 0.0, {}};
  cdnz::DenoiserToCheckpoint(net, meta).Save(fs::path(o.out) / "denoiser.ckpt");
  std::printf("trained %lld iterations, final loss %.6g, checkpoint %s\n",
              static_cast<long long>(c.denoiser_schedule.iterations), MeanLastLosses(log, 100),
              (fs::path(o.out) / "denoiser.ckpt").c_str());
  return kOk;
}

int PretrainHeadCmd(const CommonOptions& o) {
  const cdnz::ExperimentConfig c = Resolve(o);
  PrepareOut(o, c, "pretrain-head");
  cdnz::HeadConfig hc{c.task, c.NumClasses(), c.denoiser.input_channels, c.head_widths};
  cdnz::HighLevelHead<float> head(hc, cdnz::DeriveSeed(c.seed, 3));
  cdnz::TrainingLog log;
  try {
    log = cdnz::PretrainHead(head, cdnz::LoadTrainSet(c), cdnz::LoadHeldoutSet(c), c.head_schedule,
                             {c.head_target, cdnz::DeriveSeed(c.seed, 4)});
  } catch (const cdnz::TrainingFailure& e) {
    std::fprintf(stderr, "cdnz: %s\n", e.what());
    return kGate;
  }
  log.WriteTsv(fs::path(o.out) / "log.tsv");
  head.Freeze();
  head.ToCheckpoint().Save(fs::path(o.out) / "head.ckpt");
  std::printf("%s head: clean held-out %s %.4f\n", cdnz::ToString(c.task).c_str(),
              c.task == cdnz::Task::kClassification ? "top1" : "miou", *head.clean_metric());
  return kOk;
}

int TrainCascadeCmd(const CommonOptions& o) {
  const cdnz::ExperimentConfig c = Resolve(o);
  PrepareOut(o, c, "train-cascade");
  cdnz::HighLevelHead<float> head = LoadHead(c);
  int64_t start_iteration = 0;
  std::optional<cdnz::Denoiser<float>> net;
  if (c.warm_start) {
    const cdnz::Checkpoint ck = LoadCheckpoint(c.denoiser_checkpoint, "warm-start denoiser");
    const cdnz::DenoiserMeta meta = cdnz::ReadDenoiserMeta(ck);
    net.emplace(cdnz::DenoiserFromCheckpoint<float>(ck));
    if (!(net->config() == c.denoiser)) {
      throw cdnz::CheckpointMismatch("warm-start denoiser was built with '" + net->config().Serialize() +
                                     "', config asks for '" + c.denoiser.Serialize() + "'");
    }
    start_iteration = meta.iteration;
  } else {
    net.emplace(c.denoiser, cdnz::DeriveSeed(c.seed, 0));
  }
  cdnz::Cascade<float> cascade(std::move(*net), std::move(head), c.Cascade());
  const cdnz::TrainingLog log = cdnz::TrainCascade(cascade, cdnz::LoadTrainSet(c));
  log.WriteTsv(fs::path(o.out) / "log.tsv");
  const cdnz::DenoiserMeta meta{c.sigma, start_iteration + c.cascade_schedule.iterations,
                                cascade.denoiser().seed(), c.lambda, c.task};
  cdnz::DenoiserToCheckpoint(cascade.denoiser(), meta).Save(fs::path(o.out) / "denoiser.ckpt");
  std::printf("trained %lld cascade iterations (lambda %g), final loss %.6g\n",
              static_cast<long long>(c.cascade_schedule.iterations), c.lambda, MeanLastLosses(log, 100));
  return kOk;
}

int DenoiseCmd(const std::string& checkpoint, const std::string& input, const std::string& output,
               bool deterministic) {
  if (deterministic) cdnz::SetNumThreads(1);
  const auto net = cdnz::DenoiserFromCheckpoint<float>(LoadCheckpoint(checkpoint, "denoiser"));
  if (!fs::exists(input)) throw cdnz::FileNotFound("input image '" + input + "' not found");
  const cdnz::Image noisy = cdnz::ReadImage(input);
  if (noisy.channels != net.config().input_channels) {
    throw cdnz::CheckpointMismatch("image has " + std::to_string(noisy.channels) + " channels, denoiser expects " +
                                   std::to_string(net.config().input_channels));
  }
  const cdnz::Tensor<float> out = net.Denoise(cdnz::ImageToTensor<float>(noisy));
  if (fs::path(output).has_parent_path()) fs::create_directories(fs::path(output).parent_path());
  cdnz::WriteImage(cdnz::TensorToImage(out), output);
  return kOk;
}

int EvaluateCmd(const CommonOptions& o, const std::vector<std::string>& variant_names) {
  const cdnz::ExperimentConfig c = Resolve(o);
  PrepareOut(o, c, "evaluate");
  std::vector<cdnz::Variant> variants;
  for (const std::string& v : variant_names) variants.push_back(cdnz::ParseVariant(v));
  if (variants.empty()) variants = {cdnz::Variant::kVgg, cdnz::Variant::kSeparate, cdnz::Variant::kJoint,
                                    cdnz::Variant::kCross};

  const cdnz::LabeledDataset test = cdnz::LoadTestSet(c);
  cdnz::MetricsReport report;
  std::vector<std::string> warnings;
  for (cdnz::Variant v : variants) {
    cdnz::HighLevelHead<float> head = LoadHead(c);
    if (v == cdnz::Variant::kVgg) {
      cdnz::RunPipeline<float>(v, head, nullptr, test, c.sigma, c.noise_seed, report, c.quantized_psnr);
      continue;
    }
    const std::string& path = v == cdnz::Variant::kSeparate ? c.denoiser_checkpoint
                              : v == cdnz::Variant::kJoint  ? c.joint_checkpoint
                                                            : c.cross_checkpoint;
    const cdnz::Checkpoint ck = LoadCheckpoint(path, "variant '" + cdnz::ToString(v) + "'");
    if (v == cdnz::Variant::kCross) {
      cdnz::Cascade<float> cascade = cdnz::PlugCrossTask(ck, std::move(head), c.sigma);
      for (const std::string& w : cascade.warnings()) warnings.push_back("cross: " + w);
      cdnz::RunPipeline<float>(v, cascade.head(), &cascade.denoiser(), test, c.sigma, c.noise_seed, report,
                               c.quantized_psnr);
      continue;
    }
    const cdnz::DenoiserMeta meta = cdnz::ReadDenoiserMeta(ck);
    if (meta.sigma != c.sigma) {
      char buf[128];
      std::snprintf(buf, sizeof(buf), "%s: denoiser trained at sigma %g evaluated at sigma %g",
                    cdnz::ToString(v).c_str(), meta.sigma, c.sigma);
      warnings.push_back(buf);
    }
    if (v == cdnz::Variant::kJoint && meta.task && *meta.task != c.task) {
      throw cdnz::CheckpointMismatch("joint checkpoint was trained for " + cdnz::ToString(*meta.task) +
                                     "; use the cross variant");
    }
    const auto net = cdnz::DenoiserFromCheckpoint<float>(ck);
    cdnz::RunPipeline<float>(v, head, &net, test, c.sigma, c.noise_seed, report, c.quantized_psnr);
  }
  report.Write(fs::path(o.out) / "report.tsv");
  std::ofstream wout(fs::path(o.out) / "warnings.txt");
  for (const std::string& w : warnings) {
    wout << w << "\n";
    std::fprintf(stderr, "warning: %s\n", w.c_str());
  }
  std::fputs(report.ToTable().c_str(), stdout);
  return kOk;
}

int GenerateToyCmd(const std::string& task, int count, uint64_t seed, int size, const std::string& out) {
  cdnz::ToyOptions opt;
  opt.size = size;
  if (task == "corpus") {
    cdnz::WriteImages(cdnz::GenerateToyCorpus(count, seed, opt), out);
  } else {
    cdnz::WriteDataset(cdnz::GenerateToy(cdnz::ParseTask(task), count, seed, opt), out);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cascaded denoiser with high-level guidance"};
  app.require_subcommand(1);

  CommonOptions train_d, pretrain, cascade, evaluate;
  AddCommon(app.add_subcommand("train-denoiser", "Train a denoiser on the reconstruction loss"), train_d, true);
  AddCommon(app.add_subcommand("pretrain-head", "Pretrain a high-level head on clean data"), pretrain, false);
  AddCommon(app.add_subcommand("train-cascade", "Train a denoiser jointly with a frozen head"), cascade, true);

  CLI::App* eval_cmd = app.add_subcommand("evaluate", "Evaluate pipeline variants on the noisy test set");
  AddCommon(eval_cmd, evaluate, false);
  std::vector<std::string> variants;
  eval_cmd->add_option("--variant", variants, "vgg|separate|joint|cross (repeatable; default all)")
      ->check(CLI::IsMember({"vgg", "separate", "joint", "cross"}));

  CLI::App* denoise_cmd = app.add_subcommand("denoise", "Denoise one image of any size");
  std::string ckpt, input, output;
  bool denoise_det = false;
  denoise_cmd->add_option("--checkpoint", ckpt, "Denoiser checkpoint")->required();
  denoise_cmd->add_option("--input", input, "Noisy image (.ppm or .png)")->required();
  denoise_cmd->add_option("--output", output, "Output image (.ppm or .png)")->required();
  denoise_cmd->add_flag("--deterministic", denoise_det, "Single-threaded, fixed reduction order");

  CLI::App* toy_cmd = app.add_subcommand("generate-toy", "Write a toy dataset with its manifest");
  std::string toy_task = "classification", toy_out = "toy";
  int toy_count = 64, toy_size = 32;
  uint64_t toy_seed = 1;
  toy_cmd->add_option("--task", toy_task, "classification|segmentation|corpus")
      ->check(CLI::IsMember({"classification", "segmentation", "corpus"}));
  toy_cmd->add_option("--count", toy_count, "Number of images");
  toy_cmd->add_option("--size", toy_size, "Image side length");
  toy_cmd->add_option("--seed", toy_seed, "Generator seed");
  toy_cmd->add_option("--out", toy_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (app.got_subcommand("train-denoiser")) return TrainDenoiserCmd(train_d);
    if (app.got_subcommand("pretrain-head")) return PretrainHeadCmd(pretrain);
    if (app.got_subcommand("train-cascade")) return TrainCascadeCmd(cascade);
    if (app.got_subcommand("evaluate")) return EvaluateCmd(evaluate, variants);
    if (app.got_subcommand("denoise")) return DenoiseCmd(ckpt, input, output, denoise_det);
    if (app.got_subcommand("generate-toy")) return GenerateToyCmd(toy_task, toy_count, toy_seed, toy_size, toy_out);
  } catch (const cdnz::ConfigError& e) {
    std::fprintf(stderr, "cdnz: config error: %s\n", e.what());
    return kConfig;
  } catch (const cdnz::CheckpointMismatch& e) {
    std::fprintf(stderr, "cdnz: checkpoint mismatch: %s\n", e.what());
    return kMismatch;
  } catch (const cdnz::FileNotFound& e) {
    std::fprintf(stderr, "cdnz: missing file: %s\n", e.what());
    return kMissing;
  } catch (const cdnz::TrainingFailure& e) {
    std::fprintf(stderr, "cdnz: %s\n", e.what());
    return kGate;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "cdnz: error: %s\n", e.what());
    return kFailure;
  }
  return kFailure;
}
