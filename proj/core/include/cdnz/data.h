#ifndef CDNZ_DATA_H_
#define CDNZ_DATA_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cdnz/image.h"
#include "cdnz/random.h"

namespace cdnz {

// i.i.d. zero-mean Gaussian noise; sigma is on the 0-255 intensity scale and
// is applied as sigma/255 to [0,1] images.
struct NoiseModel {
  double sigma = 25.0;
  uint64_t seed = 0;
};

// Deterministic in model.seed. Output is not clamped; sigma == 0 returns img.
Image AddNoise(const Image& img, const NoiseModel& model);
// Draws from a caller-owned generator.
template <typename T>
void AddNoiseInPlace(Tensor<T>& batch, double sigma, Rng& rng);

enum class Task { kClassification, kSegmentation };
std::string ToString(Task task);
Task ParseTask(const std::string& s);

inline constexpr int kIgnoreLabel = 255;

// Images with per-image labels (classification) or per-pixel masks (segmentation).
struct LabeledDataset {
  Task task = Task::kClassification;
  int num_classes = 2;
  std::vector<Image> images;
  std::vector<int> labels;
  std::vector<LabelMap> masks;

  size_t size() const { return images.size(); }
  // Flattened labels for the given sample indices, in cross-entropy order.
  std::vector<int> GatherLabels(std::span<const size_t> indices) const;
  void Validate() const;
};

template <typename T>
struct PatchBatch {
  Tensor<T> noisy;
  Tensor<T> clean;
};

// Random aligned noisy/clean crops for denoiser training. Crops are sampled
// fresh per batch unless pre_extracted_count > 0, in which case a fixed pool
// of crops is cut once and batches draw from it.
class PatchStream {
 public:
  struct Options {
    int patch_size = 48;
    int batch_size = 32;
    double sigma = 25.0;
    uint64_t seed = 0;
    int pre_extracted_count = 0;
  };

  // `names` (optional) label sources in error messages.
  PatchStream(std::vector<Image> sources, const Options& options, std::vector<std::string> names = {});

  template <typename T>
  PatchBatch<T> Next();

  // Top-left corners of the crops in the last batch, as (source, y, x).
  struct Origin {
    size_t source;
    int64_t y, x;
  };
  const std::vector<Origin>& last_origins() const { return last_origins_; }
  const Options& options() const { return options_; }

 private:
  Origin SampleOrigin();

  std::vector<Image> sources_;
  Options options_;
  Rng rng_;
  std::vector<Origin> pool_;
  std::vector<Origin> last_origins_;
};

// Synthetic scenes: smooth colored background with one circle and one
// rectangle. Textured shapes carry stripes (circle) or a checkerboard
// (rectangle) of +/- texture_amplitude.
struct ToyOptions {
  int size = 32;
  double texture_amplitude = 0.1;
  int texture_period = 4;
};

// classification: label 1 = textured shapes, 0 = flat shapes (alternating).
// segmentation: K = 3 (background, circle, rectangle).
LabeledDataset GenerateToy(Task task, int count, uint64_t seed, const ToyOptions& options = {});
// Unlabeled mix of both scene kinds, for denoiser training.
std::vector<Image> GenerateToyCorpus(int count, uint64_t seed, const ToyOptions& options = {});

// Manifest: one `<relative-path>[<TAB><label-or-maskpath>]` entry per line,
// '#' starts a comment. Paths are relative to the manifest's directory.
struct ManifestEntry {
  std::string path;
  std::string target;
};
std::vector<ManifestEntry> ReadManifest(const std::filesystem::path& manifest);
std::vector<Image> LoadImages(const std::filesystem::path& manifest);
LabeledDataset LoadLabeledDataset(const std::filesystem::path& manifest, Task task, int num_classes);
// Writes PPM images (and PGM masks) plus `manifest.txt` into dir.
void WriteDataset(const LabeledDataset& data, const std::filesystem::path& dir);
void WriteImages(const std::vector<Image>& images, const std::filesystem::path& dir);

}  // namespace cdnz

#endif  // CDNZ_DATA_H_
