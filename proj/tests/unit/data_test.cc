#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "cdnz/data.h"
#include "cdnz/errors.h"
#include "cdnz/image.h"

namespace cdnz {
namespace {

namespace fs = std::filesystem;

Image Uniform(int64_t h, int64_t w, float v) { return Image(h, w, 3, v); }

fs::path TempDir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("cdnz_data_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<uint8_t> Bytes(const std::string& s) { return std::vector<uint8_t>(s.begin(), s.end()); }

TEST(NoiseTest, ZeroSigmaIsIdentityAndSeedIsDeterministic) {
  Image img = Uniform(8, 8, 0.25f);
  img.at(1, 2, 3) = 0.9f;
  EXPECT_EQ(AddNoise(img, {0.0, 3}), img);
  EXPECT_EQ(AddNoise(img, {25.0, 3}), AddNoise(img, {25.0, 3}));
  EXPECT_NE(AddNoise(img, {25.0, 3}), AddNoise(img, {25.0, 4}));
}

TEST(NoiseTest, NoisyValuesAreNotClamped) {
  const Image noisy = AddNoise(Uniform(64, 64, 0.0f), {50.0, 1});
  float lo = 0;
  for (float v : noisy.values) lo = std::min(lo, v);
  EXPECT_LT(lo, 0.0f);
}

TEST(NoiseTest, NegativeSigmaRejected) { EXPECT_THROW(AddNoise(Uniform(4, 4, 0), {-1.0, 1}), InvalidArgument); }

// 256x256x3 = 196608 samples per sigma.
TEST(NoiseTest, StatisticsMatchModel) {
  const Image clean = Uniform(256, 256, 0.5f);
  for (double sigma : {15.0, 25.0, 60.0}) {
    const Image noisy = AddNoise(clean, {sigma, 77});
    const double n = static_cast<double>(noisy.values.size());
    double mean = 0, sq = 0, lag = 0;
    for (size_t i = 0; i < noisy.values.size(); ++i) {
      const double d = static_cast<double>(noisy.values[i]) - 0.5;
      mean += d;
      sq += d * d;
      if (i + 1 < noisy.values.size()) lag += d * (static_cast<double>(noisy.values[i + 1]) - 0.5);
    }
    mean /= n;
    const double var = sq / n - mean * mean;
    const double target = sigma / 255.0;
    EXPECT_NEAR(std::sqrt(var), target, 0.03 * target) << sigma;
    EXPECT_LE(std::abs(mean), 3 * target / std::sqrt(n)) << sigma;
    EXPECT_LT(std::abs(lag / (n - 1) / var), 0.02) << sigma;
  }
}

TEST(PatchStreamTest, BatchShapesAndAlignment) {
  std::vector<Image> sources = GenerateToyCorpus(3, 5, {.size = 64});
  PatchStream stream(sources, {.patch_size = 48, .batch_size = 32, .sigma = 25, .seed = 2});
  const PatchBatch<float> b = stream.Next<float>();
  EXPECT_EQ(b.noisy.shape(), (Shape{32, 3, 48, 48}));
  EXPECT_EQ(b.clean.shape(), (Shape{32, 3, 48, 48}));
  const auto& origins = stream.last_origins();
  ASSERT_EQ(origins.size(), 32u);
  double mean = 0;
  for (int64_t i = 0; i < 32; ++i) {
    const auto& o = origins[static_cast<size_t>(i)];
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t y = 0; y < 48; ++y)
        for (int64_t x = 0; x < 48; ++x) {
          ASSERT_EQ(b.clean.at(i, c, y, x), sources[o.source].at(c, o.y + y, o.x + x));
          mean += b.noisy.at(i, c, y, x) - b.clean.at(i, c, y, x);
        }
  }
  mean /= static_cast<double>(b.clean.size());
  EXPECT_LE(std::abs(mean), 3 * 25.0 / 255.0 / std::sqrt(static_cast<double>(b.clean.size())));
}

TEST(PatchStreamTest, PatchesStayInBoundsOverManyDraws) {
  std::vector<Image> sources = {Uniform(40, 33, 0), Uniform(17, 90, 0), Uniform(16, 16, 0)};
  for (uint64_t seed : {1u, 2u, 3u}) {
    PatchStream stream(sources, {.patch_size = 16, .batch_size = 10, .seed = seed});
    for (int i = 0; i < 1000; ++i) {
      stream.Next<float>();
      for (const auto& o : stream.last_origins()) {
        ASSERT_GE(o.y, 0);
        ASSERT_GE(o.x, 0);
        ASSERT_LE(o.y + 16, sources[o.source].height);
        ASSERT_LE(o.x + 16, sources[o.source].width);
      }
    }
  }
}

TEST(PatchStreamTest, UndersizedImageNamed) {
  try {
    PatchStream({Uniform(64, 64, 0), Uniform(20, 64, 0)}, {.patch_size = 48}, {"big.ppm", "small.ppm"});
    FAIL() << "expected rejection";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("small.ppm"), std::string::npos) << e.what();
  }
}

TEST(PatchStreamTest, PreExtractedPoolIsReused) {
  PatchStream stream(GenerateToyCorpus(2, 1, {.size = 32}), {.patch_size = 8, .batch_size = 4, .seed = 9,
                                                            .pre_extracted_count = 3});
  std::set<std::tuple<size_t, int64_t, int64_t>> seen;
  for (int i = 0; i < 50; ++i) {
    stream.Next<float>();
    for (const auto& o : stream.last_origins()) seen.insert({o.source, o.y, o.x});
  }
  EXPECT_LE(seen.size(), 3u);
}

TEST(PpmTest, KnownBytesFixtureDecodesExactly) {
  const Image img = ReadImage(fs::path(CDNZ_FIXTURE_DIR) / "two_by_two.ppm");
  ASSERT_EQ(img.height, 2);
  ASSERT_EQ(img.width, 2);
  const float expected[4][3] = {{255, 0, 0}, {0, 255, 0}, {0, 0, 255}, {128, 64, 32}};
  for (int p = 0; p < 4; ++p)
    for (int c = 0; c < 3; ++c) EXPECT_EQ(img.at(c, p / 2, p % 2), expected[p][c] / 255.0f);
}

TEST(PpmTest, HeaderWithCommentsAndEncodeRoundTrip) {
  const Image img = ReadImage(fs::path(CDNZ_FIXTURE_DIR) / "commented.ppm");
  EXPECT_EQ(img.height, 1);
  EXPECT_EQ(img.width, 2);
  EXPECT_EQ(img.at(1, 0, 0), 127 / 255.0f);
  const auto bytes = EncodePpm(img);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 11), "P6\n2 1\n255\n");
  EXPECT_EQ(DecodePpm(bytes), img);
}

TEST(PpmTest, MalformedInputsReportOffsets) {
  try {
    DecodePpm(Bytes("P6\n2 2\n255\n\x01\x02\x03"));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 14);
  }
  try {
    DecodePpm(Bytes("P6\n2 x\n255\n"));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 5);
  }
  EXPECT_THROW(DecodePpm(Bytes("P5\n1 1\n255\n\x00")), FormatError);
  EXPECT_THROW(DecodePpm(Bytes("P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00")), FormatError);
  EXPECT_THROW(DecodePpm(Bytes("P")), FormatError);
}

TEST(ImageIoTest, WriteReadRoundTripWithinQuantization) {
  const fs::path dir = TempDir("roundtrip");
  Rng rng(4);
  Image img(9, 7, 3);
  for (float& v : img.values) v = static_cast<float>(rng.Uniform(-0.2, 1.2));
  for (const char* name : {"a.ppm", "a.png"}) {
    WriteImage(img, dir / name);
    const Image back = ReadImage(dir / name);
    ASSERT_TRUE(back.SameShape(img));
    for (size_t i = 0; i < img.values.size(); ++i) {
      const float clamped = std::clamp(img.values[i], 0.0f, 1.0f);
      EXPECT_LE(std::abs(back.values[i] - clamped), 0.5 / 255 * (1 + 1e-6)) << name;
    }
  }
  EXPECT_THROW(ReadImage(dir / "missing.ppm"), FileNotFound);
}

TEST(ImageIoTest, LabelMapRoundTrip) {
  const fs::path dir = TempDir("labels");
  LabelMap m(3, 4);
  m.at(1, 2) = 2;
  m.at(2, 3) = 255;
  WriteLabelMap(m, dir / "m.pgm");
  EXPECT_EQ(ReadLabelMap(dir / "m.pgm"), m);
}

TEST(ToyDataTest, DeterministicGivenSeed) {
  for (Task t : {Task::kClassification, Task::kSegmentation}) {
    const auto a = GenerateToy(t, 20, 5), b = GenerateToy(t, 20, 5), c = GenerateToy(t, 20, 6);
    EXPECT_EQ(a.images, b.images);
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_EQ(a.masks, b.masks);
    EXPECT_NE(a.images, c.images);
  }
  EXPECT_EQ(GenerateToyCorpus(5, 2), GenerateToyCorpus(5, 2));
}

TEST(ToyDataTest, ClassificationBalanced) {
  const auto d = GenerateToy(Task::kClassification, 201, 3);
  int ones = 0;
  for (int l : d.labels) ones += l;
  EXPECT_NEAR(ones / 201.0, 0.5, 0.05);
  EXPECT_EQ(d.num_classes, 2);
}

TEST(ToyDataTest, SegmentationClassesMostlyPresent) {
  const auto d = GenerateToy(Task::kSegmentation, 200, 8);
  EXPECT_EQ(d.num_classes, 3);
  int present[3] = {0, 0, 0};
  for (const LabelMap& m : d.masks) {
    ASSERT_EQ(m.height, d.images[0].height);
    bool has[3] = {false, false, false};
    for (int l : m.labels) has[l] = true;
    for (int c = 0; c < 3; ++c) present[c] += has[c];
  }
  for (int c = 0; c < 3; ++c) EXPECT_GE(present[c], 160) << "class " << c;
}

TEST(ToyDataTest, RejectsTooFewSamples) { EXPECT_THROW(GenerateToy(Task::kSegmentation, 5, 1), InvalidArgument); }

TEST(ManifestTest, WriteAndReloadDatasets) {
  const fs::path dir = TempDir("manifest");
  for (Task t : {Task::kClassification, Task::kSegmentation}) {
    const auto d = GenerateToy(t, 6, 2, {.size = 16});
    const fs::path sub = dir / ToString(t);
    WriteDataset(d, sub);
    const auto back = LoadLabeledDataset(sub / "manifest.txt", t, d.num_classes);
    ASSERT_EQ(back.size(), 6u);
    EXPECT_EQ(back.labels, d.labels);
    EXPECT_EQ(back.masks, d.masks);
    for (size_t i = 0; i < 6; ++i)
      for (size_t k = 0; k < d.images[i].values.size(); ++k)
        EXPECT_LE(std::abs(back.images[i].values[k] - std::clamp(d.images[i].values[k], 0.0f, 1.0f)), 0.5 / 255 + 1e-6);
  }
}

TEST(ManifestTest, CommentsBlankLinesAndErrors) {
  const fs::path dir = TempDir("manifest_parse");
  std::ofstream(dir / "m.txt") << "# header\n\nimg0.ppm\t1  # trailing\nimg1.ppm\n";
  const auto entries = ReadManifest(dir / "m.txt");
  ASSERT_EQ(entries.size(), 2u);
  EXPECT_EQ(entries[0].path, "img0.ppm");
  EXPECT_EQ(entries[0].target, "1");
  EXPECT_EQ(entries[1].target, "");
  EXPECT_THROW(ReadManifest(dir / "none.txt"), FileNotFound);
  std::ofstream(dir / "bad.txt") << "img0.ppm\n";
  WriteImage(Uniform(4, 4, 0.5f), dir / "img0.ppm");
  EXPECT_THROW(LoadLabeledDataset(dir / "bad.txt", Task::kClassification, 2), ConfigError);
}

}  // namespace
}  // namespace cdnz
