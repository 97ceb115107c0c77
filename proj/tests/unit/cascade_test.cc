#include <gtest/gtest.h>

#include <cmath>

#include "cdnz/cascade.h"
#include "cdnz/config.h"
#include "cdnz/errors.h"
#include "oracles.h"

namespace cdnz {
namespace {

using cdnz_test::RandomTensor;

DenoiserConfig TinyDenoiser() {
  DenoiserConfig c;
  c.scales = 2;
  c.width = 8;
  return c;
}

template <typename T = float>
HighLevelHead<T> TinyHead(Task task, uint64_t seed = 1) {
  HeadConfig hc;
  hc.task = task;
  hc.num_classes = task == Task::kClassification ? 2 : 3;
  hc.widths = {4, 8, 8};
  return HighLevelHead<T>(hc, seed);
}

// Frozen head that skips the pretraining gate, for structural tests.
template <typename T = float>
HighLevelHead<T> GatedHead(Task task, uint64_t seed = 1) {
  HighLevelHead<T> h = TinyHead<T>(task, seed);
  h.set_clean_metric(1.0);
  h.Freeze();
  return h;
}

CascadeConfig Config(Task task, double lambda, int64_t iterations = 1) {
  CascadeConfig c;
  c.task = task;
  c.lambda = lambda;
  c.seed = 4;
  c.schedule.batch_size = 4;
  c.schedule.lr0 = 0.1;
  c.schedule.iterations = iterations;
  return c;
}

std::vector<Tensor<float>> Snapshot(const std::vector<Parameter<float>*>& params) {
  std::vector<Tensor<float>> out;
  for (const auto* p : params) out.push_back(p->value);
  return out;
}

// ---------------------------------------------------------------------------
// High-level heads

TEST(HeadTest, OutputShapes) {
  Rng rng(1);
  const auto x = RandomTensor<float>({2, 3, 16, 24}, rng);
  EXPECT_EQ(TinyHead(Task::kClassification).Predict(x).shape(), (Shape{2, 2}));
  EXPECT_EQ(TinyHead(Task::kSegmentation).Predict(x).shape(), (Shape{2, 3, 16, 24}));
  EXPECT_THROW(TinyHead(Task::kClassification).Predict(RandomTensor<float>({1, 3, 12, 16}, rng)), ShapeError);
  EXPECT_THROW(TinyHead(Task::kSegmentation).Predict(RandomTensor<float>({1, 1, 8, 8}, rng)), ShapeError);
}

TEST(HeadTest, FreezeAndUnfreeze) {
  auto h = TinyHead(Task::kSegmentation);
  h.Freeze();
  EXPECT_TRUE(h.frozen());
  for (const auto* p : h.parameters()) EXPECT_FALSE(p->trainable);
  h.Unfreeze();
  for (const auto* p : h.parameters()) EXPECT_TRUE(p->trainable);
}

TEST(HeadTest, LossConventions) {
  auto cls = TinyHead<double>(Task::kClassification);
  cls.store().FindParameter("classifier.weight")->value.Fill(0);
  cls.store().FindParameter("classifier.bias")->value.Fill(0);
  Rng rng(2);
  const auto x = RandomTensor({3, 3, 8, 8}, rng);
  Tape<double> tape(false);
  const std::vector<int> labels = {0, 1, 1};
  EXPECT_NEAR(cls.Loss(tape, tape.Constant(x), labels, Mode::kEval).value().item(), std::log(2.0), 1e-15);
  EXPECT_THROW(cls.Loss(tape, tape.Constant(x), std::vector<int>{0, 1}, Mode::kEval), InvalidArgument);

  auto seg = TinyHead<double>(Task::kSegmentation);
  const std::vector<int> ignored(3 * 64, kIgnoreLabel);
  EXPECT_EQ(seg.Loss(tape, tape.Constant(x), ignored, Mode::kEval).value().item(), 0.0);

  // Delegates to the engine's cross entropy.
  std::vector<int> pixels(3 * 64);
  for (int& p : pixels) p = static_cast<int>(rng.UniformInt(0, 2));
  const auto logits = seg.Forward(tape, tape.Constant(x), Mode::kEval);
  EXPECT_EQ(seg.Loss(tape, tape.Constant(x), pixels, Mode::kEval).value().item(),
            CrossEntropyLoss(logits, pixels, kIgnoreLabel).value().item());
}

TEST(HeadTest, FrozenHeadPassesGradientToInput) {
  for (Task task : {Task::kClassification, Task::kSegmentation}) {
    auto head = TinyHead<double>(task, 3);
    head.set_channel_means({0.4, 0.5, 0.6});
    head.Freeze();
    Rng rng(4);
    std::vector<int> labels(task == Task::kClassification ? 2 : 2 * 64);
    for (int& l : labels) l = static_cast<int>(rng.UniformInt(0, head.config().num_classes - 1));
    const auto x = RandomTensor({2, 3, 8, 8}, rng);
    const double err = cdnz_test::GradCheck(
        [&](Tape<double>& tape, std::vector<Var<double>>& v) { return head.Loss(tape, v[0], labels, Mode::kEval); },
        {x}, rng);
    EXPECT_LE(err, 1e-3) << ToString(task);

    Tape<double> tape;
    auto in = tape.Input(x);
    tape.Backward(head.Loss(tape, in, labels, Mode::kEval));
    double norm = 0;
    for (double g : tape.grad(in).data()) norm += g * g;
    EXPECT_GT(norm, 0);
    for (const auto* p : head.parameters()) EXPECT_FALSE(p->has_grad()) << p->name;
  }
}

TEST(HeadTest, CheckpointRoundTripKeepsMeansAndMetric) {
  auto h = TinyHead(Task::kSegmentation, 9);
  h.set_channel_means({0.1, 0.2, 0.30000000000000004});
  h.set_clean_metric(0.97);
  const auto back = HighLevelHead<float>::FromCheckpoint(Checkpoint::Parse(h.ToCheckpoint().Serialize()));
  EXPECT_EQ(back.channel_means(), h.channel_means());
  EXPECT_EQ(back.clean_metric(), 0.97);
  EXPECT_EQ(back.task(), Task::kSegmentation);
  Rng rng(1);
  const auto x = RandomTensor<float>({1, 3, 8, 8}, rng);
  EXPECT_EQ(back.Predict(x), h.Predict(x));
}

// Pretrained once for the suite: toy classification reaches the gate in ~15 s.
class PretrainedHeadTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    ExperimentConfig c;
    train_ = new LabeledDataset(LoadTrainSet(c));
    test_ = new LabeledDataset(LoadTestSet(c));
    HeadConfig hc;
    head_ = new HighLevelHead<float>(hc, 5);
    log_ = new TrainingLog(PretrainHead(*head_, *train_, LoadHeldoutSet(c), DeskHeadSchedule(), {0.95, 6}));
    head_->Freeze();
  }
  static void TearDownTestSuite() {
    delete train_;
    delete test_;
    delete head_;
    delete log_;
  }
  static LabeledDataset* train_;
  static LabeledDataset* test_;
  static HighLevelHead<float>* head_;
  static TrainingLog* log_;
};
LabeledDataset* PretrainedHeadTest::train_ = nullptr;
LabeledDataset* PretrainedHeadTest::test_ = nullptr;
HighLevelHead<float>* PretrainedHeadTest::head_ = nullptr;
TrainingLog* PretrainedHeadTest::log_ = nullptr;

TEST_F(PretrainedHeadTest, ReachesGateWithSmoothlyDecreasingLoss) {
  ASSERT_TRUE(head_->clean_metric().has_value());
  EXPECT_GE(*head_->clean_metric(), 0.95);
  const auto means = log_->WindowMeans(50);
  ASSERT_GE(means.size(), 4u);
  // Non-increasing up to SGD noise once the loss has bottomed out.
  for (size_t i = 1; i < means.size(); ++i) EXPECT_LE(means[i], means[i - 1] + 0.02) << "window " << i;
  EXPECT_LT(means.back(), 0.25 * means.front());
}

TEST_F(PretrainedHeadTest, CleanMetricIdenticalThroughIdentityDenoiser) {
  const double standalone = EvaluateHead(*head_, *test_);
  Denoiser<float> identity(TinyDenoiser(), 1);
  identity.ZeroProjection();
  MetricsReport report;
  RunPipeline(Variant::kSeparate, *head_, &identity, *test_, 0.0, 7, report);
  RunPipeline<float>(Variant::kVgg, *head_, nullptr, *test_, 0.0, 7, report);
  EXPECT_EQ(report.Find("separate", 0, "top1"), standalone);
  EXPECT_EQ(report.Find("vgg", 0, "top1"), standalone);
  // Toy images are not on the 8-bit grid, so quantized PSNR of the clean input is finite.
  EXPECT_EQ(report.Find("vgg", 0, "psnr"), report.Find("separate", 0, "psnr"));
}

TEST_F(PretrainedHeadTest, GateFailureAndFrozenHeadRejected) {
  ExperimentConfig c;
  HeadConfig hc;
  HighLevelHead<float> fresh(hc, 1);
  OptimizerSchedule s = DeskHeadSchedule();
  s.iterations = 1;
  EXPECT_THROW(PretrainHead(fresh, *train_, *test_, s, {1.01, 1}), TrainingFailure);
  EXPECT_FALSE(fresh.clean_metric().has_value());
  fresh.Freeze();
  EXPECT_THROW(PretrainHead(fresh, *train_, *test_, s), InvalidArgument);
}

// ---------------------------------------------------------------------------
// Joint loss

TEST(JointLossTest, CombinesComponentsByLambda) {
  // Identity denoiser gives L_D = 2 for a constant offset of sqrt(2); a head
  // whose logits are (0, -b) with log(1 + e^b) = 4 gives L_H = 4 for label 1.
  Denoiser<double> identity(TinyDenoiser(), 1);
  identity.ZeroProjection();
  HighLevelHead<double> head = TinyHead<double>(Task::kClassification);
  head.store().FindParameter("classifier.weight")->value.Fill(0);
  auto& bias = head.store().FindParameter("classifier.bias")->value;
  bias[0] = 0;
  bias[1] = -std::log(std::exp(4.0) - 1.0);
  head.set_clean_metric(1.0);
  head.Freeze();
  Cascade<double> cascade(std::move(identity), std::move(head), Config(Task::kClassification, 0.25));
  Rng rng(3);
  const auto clean = RandomTensor({2, 3, 8, 8}, rng);
  Tensor<double> noisy = clean;
  for (double& v : noisy.data()) v += std::sqrt(2.0);
  const std::vector<int> labels = {1, 1};
  Tape<double> tape;
  const auto terms = cascade.JointLoss(tape, noisy, clean, labels);
  EXPECT_NEAR(terms.reconstruction.value().item(), 2.0, 1e-12);
  EXPECT_NEAR(terms.task.value().item(), 4.0, 1e-12);
  EXPECT_NEAR(terms.total.value().item(), 3.0, 1e-12);
}

TEST(JointLossTest, LambdaZeroIsReconstructionExactly) {
  Cascade<float> cascade(Denoiser<float>(TinyDenoiser(), 2), GatedHead(Task::kSegmentation),
                         Config(Task::kSegmentation, 0.0));
  Rng rng(5);
  const auto clean = RandomTensor<float>({2, 3, 8, 8}, rng, 0.2);
  const auto noisy = RandomTensor<float>({2, 3, 8, 8}, rng, 0.2);
  std::vector<int> labels(2 * 64, 1);
  Tape<float> tape;
  const auto terms = cascade.JointLoss(tape, noisy, clean, labels);
  EXPECT_EQ(terms.total.value().item(), terms.reconstruction.value().item());
  EXPECT_GT(terms.task.value().item(), 0);
}

TEST(JointLossTest, MatchesIndependentRecomputation) {
  Cascade<double> cascade(Denoiser<double>(TinyDenoiser(), 2), GatedHead<double>(Task::kSegmentation),
                          Config(Task::kSegmentation, 0.5));
  Rng rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    const auto clean = RandomTensor({2, 3, 8, 8}, rng, 0.3);
    const auto noisy = RandomTensor({2, 3, 8, 8}, rng, 0.3);
    std::vector<int> labels(2 * 64);
    for (int& l : labels) l = rng.Uniform() < 0.1 ? kIgnoreLabel : static_cast<int>(rng.UniformInt(0, 2));
    Tape<double> tape;
    const double total = cascade.JointLoss(tape, noisy, clean, labels).total.value().item();

    Tape<double> t1(false), t2(false);
    const Tensor<double> restored = cascade.denoiser().Forward(t1, t1.Constant(noisy), Mode::kTrain).value();
    const double ld = MseLoss(t1.Constant(restored), t1.Constant(clean)).value().item();
    const double lh = cascade.head().Loss(t2, t2.Constant(restored), labels, Mode::kEval).value().item();
    EXPECT_NEAR(total, ld + 0.5 * lh, 1e-6 * std::abs(total)) << trial;
  }
}

TEST(JointLossTest, RejectsUnfrozenHeadAndMismatchedTask) {
  auto head = TinyHead(Task::kClassification);
  Cascade<float> cascade(Denoiser<float>(TinyDenoiser(), 2), std::move(head), Config(Task::kClassification, 0.25));
  Tape<float> tape;
  const Tensor<float> x({1, 3, 8, 8});
  EXPECT_THROW(cascade.JointLoss(tape, x, x, std::vector<int>{0}), InvalidArgument);
  EXPECT_THROW(Cascade<float>(Denoiser<float>(TinyDenoiser(), 2), GatedHead(Task::kSegmentation),
                              Config(Task::kClassification, 0.25)),
               CheckpointMismatch);
  EXPECT_THROW(Cascade<float>(Denoiser<float>(TinyDenoiser(), 2), GatedHead(Task::kClassification),
                              Config(Task::kClassification, -0.1)),
               InvalidArgument);
}

// ---------------------------------------------------------------------------
// Cascade training

LabeledDataset ToyTrain(Task task) { return GenerateToy(task, 12, 3, {.size = 16}); }

TEST(TrainCascadeTest, OnlyDenoiserChanges) {
  for (Task task : {Task::kClassification, Task::kSegmentation}) {
    Cascade<float> cascade(Denoiser<float>(TinyDenoiser(), 2), GatedHead(task), Config(task, 0.5, 1));
    const auto head_before = Snapshot(cascade.head().parameters());
    std::vector<Tensor<float>> head_buffers;
    for (const auto* b : cascade.head().store().buffers()) head_buffers.push_back(b->value);
    const auto den_before = Snapshot(cascade.denoiser().parameters());
    const TrainingLog log = TrainCascade(cascade, ToyTrain(task));
    ASSERT_EQ(log.records.size(), 1u);
    EXPECT_EQ(Snapshot(cascade.head().parameters()), head_before);
    size_t i = 0;
    for (const auto* b : cascade.head().store().buffers()) EXPECT_EQ(b->value, head_buffers[i++]);
    EXPECT_NE(Snapshot(cascade.denoiser().parameters()), den_before);
  }
}

TEST(TrainCascadeTest, RequiresFrozenPretrainedHead) {
  auto unfrozen = TinyHead(Task::kClassification);
  unfrozen.set_clean_metric(1.0);
  Cascade<float> a(Denoiser<float>(TinyDenoiser(), 2), std::move(unfrozen), Config(Task::kClassification, 0.25));
  EXPECT_THROW(TrainCascade(a, ToyTrain(Task::kClassification)), InvalidArgument);

  auto ungated = TinyHead(Task::kClassification);
  ungated.Freeze();
  Cascade<float> b(Denoiser<float>(TinyDenoiser(), 2), std::move(ungated), Config(Task::kClassification, 0.25));
  EXPECT_THROW(TrainCascade(b, ToyTrain(Task::kClassification)), InvalidArgument);

  Cascade<float> c(Denoiser<float>(TinyDenoiser(), 2), GatedHead(Task::kClassification),
                   Config(Task::kClassification, 0.25));
  EXPECT_THROW(TrainCascade(c, ToyTrain(Task::kSegmentation)), InvalidArgument);
}

TEST(TrainCascadeTest, LambdaChangesTheUpdate) {
  auto delta = [](double lambda) {
    Cascade<float> cascade(Denoiser<float>(TinyDenoiser(), 2), GatedHead(Task::kClassification),
                           Config(Task::kClassification, lambda, 1));
    const auto before = Snapshot(cascade.denoiser().parameters());
    TrainCascade(cascade, ToyTrain(Task::kClassification));
    const auto after = Snapshot(cascade.denoiser().parameters());
    std::vector<double> d;
    for (size_t i = 0; i < before.size(); ++i)
      for (int64_t k = 0; k < before[i].size(); ++k) d.push_back(after[i][k] - before[i][k]);
    return d;
  };
  const auto d0 = delta(0.0), d1 = delta(0.25);
  double diff = 0;
  for (size_t i = 0; i < d0.size(); ++i) diff += std::abs(d1[i] - d0[i]);
  EXPECT_GT(diff, 0);
}

TEST(TrainCascadeTest, LogRecordsDecompositionAndIsDeterministic) {
  auto run = [] {
    Cascade<float> cascade(Denoiser<float>(TinyDenoiser(), 2), GatedHead(Task::kSegmentation),
                           Config(Task::kSegmentation, 0.5, 5));
    return TrainCascade(cascade, ToyTrain(Task::kSegmentation));
  };
  const TrainingLog a = run(), b = run();
  ASSERT_EQ(a.records.size(), 5u);
  for (size_t i = 0; i < 5; ++i) {
    const auto& r = a.records[i];
    EXPECT_NEAR(r.loss, r.loss_d + 0.5 * r.loss_h, 1e-6 * r.loss);
    EXPECT_EQ(r.loss, b.records[i].loss);
  }
}

TEST(TrainCascadeTest, FixedNoiseModeTrains) {
  CascadeConfig cfg = Config(Task::kClassification, 0.25, 3);
  cfg.fixed_noise = true;
  Cascade<float> cascade(Denoiser<float>(TinyDenoiser(), 2), GatedHead(Task::kClassification), cfg);
  EXPECT_EQ(TrainCascade(cascade, ToyTrain(Task::kClassification)).records.size(), 3u);
}

// ---------------------------------------------------------------------------
// Cross-task plug-in and pipelines

TEST(PlugCrossTaskTest, NoFinetuningAndSigmaWarning) {
  Denoiser<float> trained(TinyDenoiser(), 8);
  const Checkpoint ck = DenoiserToCheckpoint(trained, {30, 10, 8, 0.25, Task::kClassification});
  Cascade<float> plugged = PlugCrossTask(ck, GatedHead(Task::kSegmentation), 30);
  EXPECT_TRUE(plugged.warnings().empty());
  const DenoiserMeta meta = ReadDenoiserMeta(ck);
  EXPECT_EQ(DenoiserToCheckpoint(plugged.denoiser(), meta).Serialize(), ck.Serialize());
  Rng rng(2);
  EXPECT_EQ(plugged.Predict(RandomTensor<float>({2, 3, 16, 16}, rng)).shape(), (Shape{2, 3, 16, 16}));

  Cascade<float> mismatched = PlugCrossTask(ck, GatedHead(Task::kSegmentation), 45);
  ASSERT_EQ(mismatched.warnings().size(), 1u);
  EXPECT_NE(mismatched.warnings()[0].find("45"), std::string::npos);
  EXPECT_THROW(PlugCrossTask(ck, TinyHead(Task::kSegmentation), 30), InvalidArgument);
}

TEST(PipelineTest, ReportIsDeterministicWithOneRecordPerMetric) {
  const LabeledDataset test = GenerateToy(Task::kSegmentation, 6, 4, {.size = 16});
  const auto head = GatedHead(Task::kSegmentation);
  Denoiser<float> net(TinyDenoiser(), 3);
  auto run = [&] {
    MetricsReport r;
    RunPipeline<float>(Variant::kVgg, head, nullptr, test, 30, 7, r);
    for (Variant v : {Variant::kSeparate, Variant::kJoint, Variant::kCross}) RunPipeline(v, head, &net, test, 30, 7, r);
    return r;
  };
  const MetricsReport a = run(), b = run();
  EXPECT_EQ(a.ToTsv(), b.ToTsv());
  ASSERT_EQ(a.records.size(), 8u);
  for (const char* v : {"vgg", "separate", "joint", "cross"}) {
    EXPECT_TRUE(a.Find(v, 30, "miou").has_value()) << v;
    EXPECT_TRUE(a.Find(v, 30, "psnr").has_value()) << v;
  }
  EXPECT_EQ(a.ToTsv().substr(0, 27), "variant\tsigma\tmetric\tvalue\n");
  EXPECT_NE(a.ToTable().find("separate"), std::string::npos);
}

TEST(PipelineTest, MissingDenoiserNamesVariant) {
  const LabeledDataset test = GenerateToy(Task::kClassification, 4, 4, {.size = 16});
  const auto head = GatedHead(Task::kClassification);
  MetricsReport r;
  try {
    RunPipeline<float>(Variant::kJoint, head, nullptr, test, 30, 7, r);
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("joint"), std::string::npos);
  }
  EXPECT_EQ(ParseVariant("cross"), Variant::kCross);
  EXPECT_THROW(ParseVariant("deeplab"), InvalidArgument);
}

TEST(PipelineTest, NoisyCopiesAreSeededPerImage) {
  const auto images = GenerateToyCorpus(3, 1, {.size = 8});
  const auto a = NoisyCopies(images, 25, 9), b = NoisyCopies(images, 25, 9);
  EXPECT_EQ(a, b);
  const std::vector<Image> first(images.begin(), images.begin() + 1);
  EXPECT_EQ(NoisyCopies(first, 25, 9)[0], a[0]);
}

}  // namespace
}  // namespace cdnz
