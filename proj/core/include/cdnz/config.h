#ifndef CDNZ_CONFIG_H_
#define CDNZ_CONFIG_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cdnz/cascade.h"
#include "cdnz/data.h"
#include "cdnz/denoiser.h"
#include "cdnz/optim.h"

namespace cdnz {

// Desk-scale defaults: 20k iterations, decay every 8k, batch 8.
OptimizerSchedule DeskSchedule();
// Toy head pretraining on clean 32x32 images.
OptimizerSchedule DeskHeadSchedule();
// Joint fine-tuning from a lambda = 0 checkpoint.
OptimizerSchedule DeskCascadeSchedule();
// Published topology at reduced width.
DenoiserConfig DeskDenoiser();

// Everything an experiment needs, read from an INI-style file:
//
//   [section]
//   key = value   # comment
//
// Unknown sections or keys raise ConfigError naming the offending key.
// Relative paths are resolved against the config file's directory.
struct ExperimentConfig {
  // [experiment]
  Task task = Task::kClassification;
  double sigma = 25.0;
  double lambda = 0.0;
  uint64_t seed = 1;
  // Seed of the evaluation noise field.
  uint64_t noise_seed = 7;
  bool quantized_psnr = true;

  // [denoiser]
  DenoiserConfig denoiser = DeskDenoiser();

  // [denoiser_schedule], [head_schedule], [cascade_schedule]
  OptimizerSchedule denoiser_schedule = DeskSchedule();
  OptimizerSchedule head_schedule = DeskHeadSchedule();
  OptimizerSchedule cascade_schedule = DeskCascadeSchedule();

  // [head]
  std::array<int, 3> head_widths = {16, 32, 64};
  double head_target = 0.95;

  // [cascade]
  bool warm_start = true;
  bool fixed_noise = false;

  // [data] Empty manifests select the generated toy data.
  std::string corpus_manifest;
  std::string train_manifest;
  std::string test_manifest;
  int toy_corpus = 256;
  int toy_train = 256;
  int toy_test = 128;
  uint64_t toy_seed = 11;
  // Side length of generated denoiser-corpus scenes.
  int corpus_size = 64;
  ToyOptions toy;

  // [paths]
  std::string denoiser_checkpoint;  // lambda = 0 denoiser (separate, warm start)
  std::string head_checkpoint;
  std::string joint_checkpoint;     // denoiser trained with this task's head
  std::string cross_checkpoint;     // denoiser trained with the other task's head

  int NumClasses() const { return task == Task::kClassification ? 2 : 3; }
  CascadeConfig Cascade() const;

  static ExperimentConfig Parse(const std::string& text, const std::filesystem::path& base_dir = {});
  static ExperimentConfig Load(const std::filesystem::path& path);
  // Fully resolved form; Parse(ToText()) reproduces the config.
  std::string ToText() const;
  void Validate() const;
};

// Dataset resolution shared by all commands. Manifests win over toy data.
// Toy train, held-out and test sets use disjoint seeds derived from toy_seed.
std::vector<Image> LoadCorpus(const ExperimentConfig& config);
LabeledDataset LoadTrainSet(const ExperimentConfig& config);
// Clean held-out set for the head pretraining gate (test manifest if given).
LabeledDataset LoadHeldoutSet(const ExperimentConfig& config);
LabeledDataset LoadTestSet(const ExperimentConfig& config);

}  // namespace cdnz

#endif  // CDNZ_CONFIG_H_
