#include "cdnz/data.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace cdnz {

Image AddNoise(const Image& img, const NoiseModel& model) {
  if (model.sigma < 0) throw InvalidArgument("noise sigma must be non-negative");
  Image out = img;
  if (model.sigma == 0) return out;
  Rng rng(model.seed);
  const double stddev = model.sigma / 255.0;
  for (float& v : out.values) v = static_cast<float>(v + rng.Normal(0.0, stddev));
  return out;
}

template <typename T>
void AddNoiseInPlace(Tensor<T>& batch, double sigma, Rng& rng) {
  if (sigma < 0) throw InvalidArgument("noise sigma must be non-negative");
  if (sigma == 0) return;
  const double stddev = sigma / 255.0;
  for (T& v : batch.data()) v = static_cast<T>(v + rng.Normal(0.0, stddev));
}

template void AddNoiseInPlace<float>(Tensor<float>&, double, Rng&);
template void AddNoiseInPlace<double>(Tensor<double>&, double, Rng&);

std::string ToString(Task task) { return task == Task::kClassification ? "classification" : "segmentation"; }

Task ParseTask(const std::string& s) {
  if (s == "classification") return Task::kClassification;
  if (s == "segmentation") return Task::kSegmentation;
  throw InvalidArgument("unknown task '" + s + "' (expected classification|segmentation)");
}

std::vector<int> LabeledDataset::GatherLabels(std::span<const size_t> indices) const {
  std::vector<int> out;
  for (size_t i : indices) {
    if (task == Task::kClassification) {
      out.push_back(labels.at(i));
    } else {
      const auto& m = masks.at(i).labels;
      out.insert(out.end(), m.begin(), m.end());
    }
  }
  return out;
}

void LabeledDataset::Validate() const {
  if (images.empty()) throw InvalidArgument("dataset is empty");
  if (task == Task::kClassification) {
    if (labels.size() != images.size()) throw InvalidArgument("dataset has mismatched image/label counts");
    for (int l : labels) {
      if (l < 0 || l >= num_classes) throw InvalidArgument("class label " + std::to_string(l) + " out of range");
    }
  } else {
    if (masks.size() != images.size()) throw InvalidArgument("dataset has mismatched image/mask counts");
    for (size_t i = 0; i < images.size(); ++i) {
      if (masks[i].height != images[i].height || masks[i].width != images[i].width) {
        throw ShapeError("mask " + std::to_string(i) + " not aligned with its image");
      }
      for (int l : masks[i].labels) {
        if (l != kIgnoreLabel && (l < 0 || l >= num_classes)) {
          throw InvalidArgument("mask label " + std::to_string(l) + " out of range");
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------

PatchStream::PatchStream(std::vector<Image> sources, const Options& options, std::vector<std::string> names)
    : sources_(std::move(sources)), options_(options), rng_(options.seed) {
  if (sources_.empty()) throw InvalidArgument("patch stream needs at least one source image");
  if (options_.patch_size < 1 || options_.batch_size < 1) throw InvalidArgument("patch and batch size must be positive");
  for (size_t i = 0; i < sources_.size(); ++i) {
    const Image& img = sources_[i];
    if (img.height < options_.patch_size || img.width < options_.patch_size) {
      const std::string name = i < names.size() ? names[i] : "source #" + std::to_string(i);
      throw ShapeError("image '" + name + "' (" + std::to_string(img.height) + "x" + std::to_string(img.width) +
                       ") is smaller than the " + std::to_string(options_.patch_size) + "-pixel patch size");
    }
  }
  for (int i = 0; i < options_.pre_extracted_count; ++i) pool_.push_back(SampleOrigin());
}

PatchStream::Origin PatchStream::SampleOrigin() {
  const size_t s = static_cast<size_t>(rng_.UniformInt(0, static_cast<int64_t>(sources_.size()) - 1));
  const Image& img = sources_[s];
  const int64_t y = rng_.UniformInt(0, img.height - options_.patch_size);
  const int64_t x = rng_.UniformInt(0, img.width - options_.patch_size);
  return Origin{s, y, x};
}

template <typename T>
PatchBatch<T> PatchStream::Next() {
  const int64_t n = options_.batch_size, p = options_.patch_size;
  PatchBatch<T> batch{Tensor<T>(Shape{n, 3, p, p}), Tensor<T>(Shape{n, 3, p, p})};
  last_origins_.clear();
  for (int64_t i = 0; i < n; ++i) {
    const Origin o = pool_.empty()
                         ? SampleOrigin()
                         : pool_[static_cast<size_t>(rng_.UniformInt(0, static_cast<int64_t>(pool_.size()) - 1))];
    last_origins_.push_back(o);
    const Image& img = sources_[o.source];
    for (int64_t c = 0; c < 3; ++c) {
      for (int64_t y = 0; y < p; ++y) {
        for (int64_t x = 0; x < p; ++x) batch.clean.at(i, c, y, x) = static_cast<T>(img.at(c, o.y + y, o.x + x));
      }
    }
  }
  batch.noisy = batch.clean;
  AddNoiseInPlace(batch.noisy, options_.sigma, rng_);
  return batch;
}

template PatchBatch<float> PatchStream::Next<float>();
template PatchBatch<double> PatchStream::Next<double>();

// ---------------------------------------------------------------------------
// Toy scenes

namespace {

struct Scene {
  Image image;
  LabelMap mask;
};

double Stripes(int64_t y, int64_t x, int period) {
  return ((x + y) % period) < period / 2 ? 1.0 : -1.0;
}

double Checker(int64_t y, int64_t x, int period) {
  const int64_t half = std::max(1, period / 2);
  return ((y / half + x / half) % 2 == 0) ? 1.0 : -1.0;
}

Scene MakeScene(bool textured, Rng& rng, const ToyOptions& opt) {
  const int64_t s = opt.size;
  Scene scene{Image(s, s, 3), LabelMap(s, s, 0)};

  double base[3], grad_y[3], grad_x[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = rng.Uniform(0.3, 0.7);
    grad_y[c] = rng.Uniform(-0.15, 0.15);
    grad_x[c] = rng.Uniform(-0.15, 0.15);
  }
  for (int64_t y = 0; y < s; ++y) {
    for (int64_t x = 0; x < s; ++x) {
      const double fy = static_cast<double>(y) / (s - 1) - 0.5, fx = static_cast<double>(x) / (s - 1) - 0.5;
      for (int c = 0; c < 3; ++c) scene.image.at(c, y, x) = static_cast<float>(base[c] + grad_y[c] * fy + grad_x[c] * fx);
    }
  }

  // Shape fills differ from the local background by a visible offset.
  auto fill_color = [&](double out[3]) {
    for (int c = 0; c < 3; ++c) {
      const double delta = rng.Uniform(0.12, 0.25) * (rng.Uniform() < 0.5 ? -1.0 : 1.0);
      out[c] = std::clamp(base[c] + delta, 0.15, 0.85);
    }
  };

  const double radius = rng.Uniform(0.18, 0.26) * s;
  const double cy = rng.Uniform(radius, s - 1 - radius), cx = rng.Uniform(radius, s - 1 - radius);
  double circle_color[3];
  fill_color(circle_color);

  const int64_t rh = rng.UniformInt(s * 3 / 10, s / 2), rw = rng.UniformInt(s * 3 / 10, s / 2);
  const int64_t ry = rng.UniformInt(0, s - rh), rx = rng.UniformInt(0, s - rw);
  double rect_color[3];
  fill_color(rect_color);

  const double amp = textured ? opt.texture_amplitude : 0.0;
  for (int64_t y = 0; y < s; ++y) {
    for (int64_t x = 0; x < s; ++x) {
      const double dy = y - cy, dx = x - cx;
      if (dy * dy + dx * dx <= radius * radius) {
        scene.mask.at(y, x) = 1;
        const double t = amp * Stripes(y, x, opt.texture_period);
        for (int c = 0; c < 3; ++c) scene.image.at(c, y, x) = static_cast<float>(circle_color[c] + t);
      }
      if (y >= ry && y < ry + rh && x >= rx && x < rx + rw) {
        scene.mask.at(y, x) = 2;
        const double t = amp * Checker(y, x, opt.texture_period);
        for (int c = 0; c < 3; ++c) scene.image.at(c, y, x) = static_cast<float>(rect_color[c] + t);
      }
    }
  }
  return scene;
}

}  // namespace

LabeledDataset GenerateToy(Task task, int count, uint64_t seed, const ToyOptions& options) {
  const int k = task == Task::kClassification ? 2 : 3;
  if (count < 2 * k) throw InvalidArgument("toy dataset needs at least " + std::to_string(2 * k) + " samples");
  if (options.size < 8) throw InvalidArgument("toy images must be at least 8 pixels");
  LabeledDataset data;
  data.task = task;
  data.num_classes = k;
  Rng rng(seed);
  for (int i = 0; i < count; ++i) {
    const bool textured = task == Task::kSegmentation || i % 2 == 1;
    Scene scene = MakeScene(textured, rng, options);
    data.images.push_back(std::move(scene.image));
    if (task == Task::kClassification) {
      data.labels.push_back(textured ? 1 : 0);
    } else {
      data.masks.push_back(std::move(scene.mask));
    }
  }
  return data;
}

std::vector<Image> GenerateToyCorpus(int count, uint64_t seed, const ToyOptions& options) {
  std::vector<Image> out;
  Rng rng(seed);
  for (int i = 0; i < count; ++i) out.push_back(MakeScene(i % 4 != 0, rng, options).image);
  return out;
}

// ---------------------------------------------------------------------------
// Manifests

std::vector<ManifestEntry> ReadManifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw FileNotFound("cannot open manifest '" + manifest.string() + "'");
  std::vector<ManifestEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto end = line.find_last_not_of(" \t");
    if (end == std::string::npos) continue;
    line.erase(end + 1);
    ManifestEntry e;
    const auto tab = line.find('\t');
    e.path = line.substr(0, tab);
    if (tab != std::string::npos) e.target = line.substr(tab + 1);
    if (e.path.empty()) throw ConfigError(manifest.string() + ":" + std::to_string(line_no) + ": empty image path");
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<Image> LoadImages(const std::filesystem::path& manifest) {
  std::vector<Image> images;
  const auto dir = manifest.parent_path();
  for (const ManifestEntry& e : ReadManifest(manifest)) images.push_back(ReadImage(dir / e.path));
  return images;
}

LabeledDataset LoadLabeledDataset(const std::filesystem::path& manifest, Task task, int num_classes) {
  LabeledDataset data;
  data.task = task;
  data.num_classes = num_classes;
  const auto dir = manifest.parent_path();
  for (const ManifestEntry& e : ReadManifest(manifest)) {
    if (e.target.empty()) throw ConfigError("manifest entry '" + e.path + "' has no label");
    data.images.push_back(ReadImage(dir / e.path));
    if (task == Task::kClassification) {
      try {
        data.labels.push_back(std::stoi(e.target));
      } catch (const std::exception&) {
        throw ConfigError("manifest entry '" + e.path + "' has non-integer label '" + e.target + "'");
      }
    } else {
      data.masks.push_back(ReadLabelMap(dir / e.target));
    }
  }
  data.Validate();
  return data;
}

namespace {

std::string IndexedName(const char* prefix, size_t i, const char* ext) {
  std::ostringstream os;
  os << prefix;
  os.width(5);
  os.fill('0');
  os << i << ext;
  return os.str();
}

}  // namespace

void WriteDataset(const LabeledDataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw FileNotFound("cannot create manifest in '" + dir.string() + "'");
  manifest << "# " << ToString(data.task) << " K=" << data.num_classes << "\n";
  for (size_t i = 0; i < data.size(); ++i) {
    const std::string name = IndexedName("img", i, ".ppm");
    WriteImage(data.images[i], dir / name);
    if (data.task == Task::kClassification) {
      manifest << name << '\t' << data.labels[i] << '\n';
    } else {
      const std::string mask = IndexedName("mask", i, ".pgm");
      WriteLabelMap(data.masks[i], dir / mask);
      manifest << name << '\t' << mask << '\n';
    }
  }
}

void WriteImages(const std::vector<Image>& images, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw FileNotFound("cannot create manifest in '" + dir.string() + "'");
  for (size_t i = 0; i < images.size(); ++i) {
    const std::string name = IndexedName("img", i, ".ppm");
    WriteImage(images[i], dir / name);
    manifest << name << '\n';
  }
}

}  // namespace cdnz
