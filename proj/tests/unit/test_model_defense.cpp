#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <Eigen/QR>
#include <gtest/gtest.h>

#include "bdlab/defense_recon.hpp"
#include "bdlab/defense_stat.hpp"
#include "bdlab/errors.hpp"
#include "bdlab/idx.hpp"
#include "bdlab/model_io.hpp"
#include "bdlab/ops.hpp"
#include "bdlab/synthetic_faces.hpp"
#include "bdlab/trainer.hpp"

using namespace bdlab;
namespace fs = std::filesystem;

namespace {

// Class c lights a horizontal bar at row 3c + 2, plus faint noise.
LabeledDataset bars(int classes, std::size_t per_class, std::uint64_t seed, std::size_t side = 16) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<float> u(0.0f, 0.15f);
  LabeledDataset ds;
  ds.num_classes = classes;
  for (std::size_t i = 0; i < per_class; ++i)
    for (int c = 0; c < classes; ++c) {
      Image img(side, side);
      for (auto& p : img.pixels) p = u(gen);
      for (std::size_t x = 2; x + 2 < side; ++x) img.at(3 * c + 2, x) = 1.0f;
      ds.push_back(img, c);
    }
  return ds;
}

Model tiny_model(int classes, std::uint64_t seed, std::size_t side = 16) {
  return build_small_cnn({1, side, side}, classes, seed, {4, 8}, 16, 0.0);
}

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("bdlab_test_" + name); }

}  // namespace

// ---- model and training ------------------------------------------------------

TEST(Model, MnistShapeGivesTenLogits) {
  const auto m = build_small_cnn({1, 28, 28}, 10, 1);
  const auto out = m.logits(Tensor({2, 1, 28, 28}, 0.3));
  EXPECT_EQ(out.shape(), (Shape{2, 10}));
}

TEST(Model, SameSeedSameWeights) {
  const auto a = build_small_cnn({1, 28, 28}, 10, 5), b = build_small_cnn({1, 28, 28}, 10, 5);
  ASSERT_EQ(a.parameters().size(), b.parameters().size());
  for (std::size_t i = 0; i < a.parameters().size(); ++i)
    EXPECT_EQ(a.parameters()[i].value.vec(), b.parameters()[i].value.vec());
}

TEST(Model, UntrainedAccuracyIsNearChance) {
  const fs::path dir = std::getenv("BDLAB_DATA_DIR") ? std::getenv("BDLAB_DATA_DIR") : "/root/data/mnist";
  if (!fs::exists(dir / "t10k-images-idx3-ubyte")) GTEST_SKIP() << "MNIST not available";
  const auto test = load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte", 2000);
  // A single untrained network can collapse onto one class; the expectation
  // over initializations is what sits at chance.
  double total = 0;
  for (std::uint64_t s = 0; s < 8; ++s) total += accuracy(build_small_cnn({1, 28, 28}, 10, s), test);
  EXPECT_NEAR(total / 8.0, 10.0, 5.0);
}

TEST(Train, ZeroLearningRateKeepsWeights) {
  const auto ds = bars(4, 10, 1);
  auto m = tiny_model(4, 2);
  const auto before = m.parameters();
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.lr = 0.0;
  train(m, ds, ds, cfg);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(m.parameters()[i].value.vec(), before[i].value.vec());
}

TEST(Train, LearnsAndIsReproducible) {
  const auto tr = bars(4, 40, 3), val = bars(4, 10, 4);
  auto run = [&] {
    auto m = tiny_model(4, 7);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.lr = 3e-3;
    cfg.seed = 11;
    const auto h = train(m, tr, val, cfg);
    return std::pair{h, m};
  };
  const auto [h1, m1] = run();
  const auto [h2, m2] = run();
  EXPECT_GE(h1.best_val_accuracy, 90.0);
  ASSERT_EQ(h1.epochs.size(), 3u);
  for (std::size_t e = 0; e < 3; ++e) {
    EXPECT_EQ(h1.epochs[e].loss, h2.epochs[e].loss);
    EXPECT_EQ(h1.epochs[e].val_accuracy, h2.epochs[e].val_accuracy);
  }
  for (std::size_t i = 0; i < m1.parameters().size(); ++i)
    EXPECT_EQ(m1.parameters()[i].value.vec(), m2.parameters()[i].value.vec());
  // The returned model is the best checkpoint.
  EXPECT_DOUBLE_EQ(accuracy(m1, val), h1.best_val_accuracy);
}

TEST(Train, FineTuneFreezesBody) {
  const auto digits = bars(4, 20, 5, 32);
  auto body = build_small_cnn({1, 32, 32}, 4, 3, {4, 8, 8}, 16, 0.0);
  TrainConfig cfg;
  cfg.epochs = 1;
  train(body, digits, digits, cfg);
  const auto faces = make_identity_dataset(3, 8, 2);
  cfg.epochs = 2;
  const auto tuned = fine_tune(body, 3, faces, faces, cfg);
  EXPECT_EQ(tuned.num_classes(), 3);
  // Everything before the last conv block is untouched.
  const int last_conv = [&] {
    int idx = -1;
    for (std::size_t l = 0; l < tuned.layers().size(); ++l)
      if (tuned.layers()[l].kind == LayerKind::Conv) idx = tuned.first_param_of_layer(l);
    return idx;
  }();
  ASSERT_GT(last_conv, 0);
  for (int i = 0; i < last_conv; ++i)
    EXPECT_EQ(tuned.parameters()[i].value.vec(), body.parameters()[i].value.vec()) << "parameter " << i;
  EXPECT_NE(tuned.parameters()[last_conv].value.vec(), body.parameters()[last_conv].value.vec());
  EXPECT_THROW(fine_tune(build_small_cnn({1, 28, 28}, 4, 1), 3, faces, faces, cfg), ConfigError);
}

TEST(Evaluate, PerfectAndBackdoorFree) {
  const auto ds = bars(4, 60, 9);
  auto m = tiny_model(4, 1);
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.lr = 3e-3;
  train(m, ds, ds, cfg);
  auto probes = ds;
  for (auto& l : probes.labels) l = 0;
  const auto r = evaluate(m, ds, probes);
  EXPECT_GE(r.ca, 99.0);
  EXPECT_NEAR(r.asr, 25.0, 5.0);
}

TEST(ModelIo, RoundTripIsBitIdentical) {
  const auto ds = bars(3, 5, 2);
  auto m = tiny_model(3, 4);
  m.metadata["note"] = "round trip";
  const auto path = temp_file("model.bdlm").string();
  save_model(m, path);
  const auto back = load_model(path);
  const auto batch = to_batch(ds.images);
  EXPECT_EQ(back.logits(batch).vec(), m.logits(batch).vec());
  EXPECT_EQ(back.metadata.at("note"), "round trip");
  EXPECT_EQ(accuracy(back, ds), accuracy(m, ds));
}

TEST(ModelIo, CorruptHeaderIsFormatError) {
  const auto path = temp_file("corrupt.bdlm").string();
  save_model(tiny_model(3, 4), path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(1);
    f.put('X');
  }
  EXPECT_THROW(load_model(path), FormatError);
  save_model(tiny_model(3, 4), path);
  fs::resize_file(path, fs::file_size(path) - 7);
  EXPECT_THROW(load_model(path), FormatError);
}

// ---- spectral and projections --------------------------------------------------

TEST(Spectral, TwoBlobsSeparateByTwenty) {
  std::mt19937_64 gen(1);
  std::normal_distribution<double> n(0.0, 0.1);
  Eigen::MatrixXd x(40, 2);
  std::vector<bool> mal(40);
  for (int i = 0; i < 40; ++i) {
    mal[i] = i >= 20;
    x(i, 0) = (mal[i] ? -10.0 : 10.0) + n(gen);
    x(i, 1) = n(gen);
  }
  const auto r = spectral_signatures(x, mal);
  EXPECT_NEAR(r.malicious_separation, 20.0, 0.5);
  EXPECT_DOUBLE_EQ(r.auroc, 1.0);
}

TEST(Spectral, IdenticalSamplesAreDegenerate) {
  EXPECT_THROW(spectral_signatures(Eigen::MatrixXd::Ones(10, 4), std::vector<bool>(10, false)), DegenerateInputError);
}

TEST(Spectral, InvariantUnderRotation) {
  std::mt19937_64 gen(2);
  std::normal_distribution<double> n;
  Eigen::MatrixXd x(30, 4);
  for (int i = 0; i < 30; ++i)
    for (int j = 0; j < 4; ++j) x(i, j) = n(gen) * (j + 1);
  Eigen::MatrixXd q = Eigen::MatrixXd::NullaryExpr(4, 4, [&] { return n(gen); });
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(q);
  const Eigen::MatrixXd rot = qr.householderQ();
  const std::vector<bool> mal(30, false);
  const auto a = spectral_signatures(x, mal), b = spectral_signatures(x * rot, mal);
  const double sign = a.correlations[0] * b.correlations[0] < 0 ? -1.0 : 1.0;
  for (int i = 0; i < 30; ++i) EXPECT_NEAR(a.correlations[i], sign * b.correlations[i], 1e-8);
}

TEST(Projection, IsotropicSplitsVarianceAndNormsScale) {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> n;
  Eigen::MatrixXd x(4000, 2);
  for (int i = 0; i < x.rows(); ++i) x(i, 0) = n(gen), x(i, 1) = n(gen);
  const auto v = appendix_views(x, std::vector<bool>(4000, false));
  EXPECT_NEAR(v.explained[0], 0.5, 0.05);
  EXPECT_NEAR(v.explained[1], 0.5, 0.05);
  const auto w = appendix_views(2.0 * x, std::vector<bool>(4000, false));
  for (int i = 0; i < 10; ++i) EXPECT_NEAR(w.l2_norms[i], 2.0 * v.l2_norms[i], 1e-12);
  EXPECT_THROW(appendix_views(Eigen::MatrixXd::Ones(5, 1), std::vector<bool>(5, false)), ConfigError);
}

// ---- activation clustering ------------------------------------------------------

TEST(Clustering, SeparatedBlobsAreFullyDetected) {
  std::mt19937_64 gen(4);
  std::normal_distribution<double> n(0.0, 0.2);
  Eigen::MatrixXd x(120, 12);
  std::vector<bool> mal(120);
  for (int i = 0; i < 120; ++i) {
    mal[i] = i % 4 == 0;
    for (int j = 0; j < 12; ++j) x(i, j) = n(gen) + (mal[i] && j < 3 ? 6.0 : 0.0);
  }
  const auto r = activation_clustering(x, mal, Eigen::MatrixXd(), {});
  EXPECT_DOUBLE_EQ(r.detection_rate, 100.0);
}

TEST(Clustering, SameDistributionIsNearChance) {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> n;
  Eigen::MatrixXd x(400, 12);
  std::vector<bool> mal(400);
  for (int i = 0; i < 400; ++i) {
    mal[i] = i % 2 == 0;
    for (int j = 0; j < 12; ++j) x(i, j) = n(gen);
  }
  const auto r = activation_clustering(x, mal, Eigen::MatrixXd(), {});
  EXPECT_NEAR(r.detection_rate, 50.0, 20.0);
}

// ---- suppression -------------------------------------------------------------------

TEST(Suppression, MajorityVote) {
  const std::vector<int> v = {2, 2, 7};
  EXPECT_EQ(majority_vote(v, 10), 2);
  const std::vector<int> tie = {5, 3, 9};
  EXPECT_EQ(majority_vote(tie, 10), 3);
}

TEST(Suppression, ZeroNoiseReproducesEvaluate) {
  const auto ds = bars(4, 10, 6);
  auto m = tiny_model(4, 3);
  TrainConfig cfg;
  cfg.epochs = 2;
  train(m, ds, ds, cfg);
  auto probes = ds;
  for (auto& l : probes.labels) l = 1;
  const std::vector<double> levels = {0.0};
  const auto c = fuzzing_curve(m, ds, probes, NoiseType::Uniform, levels, 3);
  const auto e = evaluate(m, ds, probes);
  EXPECT_EQ(c.points[0].ca, e.ca);
  EXPECT_EQ(c.points[0].sasr, e.asr);
  const auto pred = predict(m, ds);
  for (std::size_t i = 0; i < 5; ++i)
    EXPECT_EQ(suppress_majority(m, ds.images[i], NoiseType::Gaussian, 0.0, 3, 1), pred[i]);
}

TEST(Suppression, FullNoiseDestroysSignal) {
  const auto ds = bars(4, 25, 7);
  auto m = tiny_model(4, 3);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.lr = 3e-3;
  train(m, ds, ds, cfg);
  const std::vector<double> levels = {1.0};
  const auto c = fuzzing_curve(m, ds, ds, NoiseType::Uniform, levels, 3);
  EXPECT_LE(c.points[0].ca, 50.0);
}

// ---- STRIP ---------------------------------------------------------------------------

TEST(Strip, EntropyOfUniformAndOneHotOutputs) {
  // Zero weights give uniform softmax; a huge bias on one class gives one-hot.
  auto m = tiny_model(10, 1);
  for (auto& p : m.parameters()) p.value.fill(0.0);
  std::vector<Image> pool(100, Image(16, 16, 1, 0.3f));
  StripConfig cfg;
  EXPECT_NEAR(strip_entropy(m, Image(16, 16), pool, cfg, 1), std::log2(10.0), 1e-9);
  m.parameters().back().value[4] = 1e4;
  EXPECT_NEAR(strip_entropy(m, Image(16, 16), pool, cfg, 1), 0.0, 1e-9);
  EXPECT_GT(frr_boundary({0.5, 0.6, 0.7, 0.8}, 0.01), 0.0);
}

TEST(Strip, PoolSmallerThanNIsConfigError) {
  const auto ds = bars(4, 5, 1);
  StripConfig cfg;
  EXPECT_THROW(strip(tiny_model(4, 1), ds, ds, ds, ds, cfg), ConfigError);
}

// ---- neural cleanse and MAD ---------------------------------------------------------

TEST(Mad, EqualNormsHaveZeroDispersion) {
  const std::vector<double> v(5, 3.0);
  const auto r = mad_outliers(v);
  EXPECT_TRUE(r.zero_dispersion);
  EXPECT_TRUE(r.flagged.empty());
}

TEST(Mad, LowOutlierIsFlagged) {
  const std::vector<double> v = {9, 10, 11, 10, 9, 11, 10, 9, 11, 1};
  const auto r = mad_outliers(v);
  EXPECT_DOUBLE_EQ(r.median, 10.0);
  EXPECT_DOUBLE_EQ(r.mad, 1.0);
  ASSERT_EQ(r.flagged, std::vector<int>{9});
  EXPECT_NEAR(r.indices[9], 9.0 / 1.4826, 1e-12);
  EXPECT_NEAR(r.indices[9], 6.07, 0.01);
}

TEST(Mad, HighOutlierIsNotFlaggedAndScaleInvariant) {
  const std::vector<double> v = {9, 10, 11, 10, 9, 11, 10, 9, 11, 40};
  const auto r = mad_outliers(v);
  EXPECT_TRUE(r.flagged.empty());
  std::vector<double> scaled;
  for (double x : v) scaled.push_back(3.5 * x);
  const auto s = mad_outliers(scaled);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(r.indices[i], s.indices[i], 1e-12);
}

TEST(Cleanse, ObjectiveNeverRisesAndMaskStaysInRange) {
  const auto ds = bars(4, 10, 2);
  auto m = tiny_model(4, 5);
  TrainConfig tc;
  tc.epochs = 2;
  train(m, ds, ds, tc);
  CleanseConfig cfg;
  cfg.steps = 60;
  cfg.dynamic_lambda = false;
  const auto t = reverse_trigger(m, ds, 1, cfg);
  for (std::size_t i = 1; i < t.accepted_objectives.size(); ++i)
    EXPECT_LE(t.accepted_objectives[i], t.accepted_objectives[i - 1] + 1e-12);
  for (double v : t.mask.vec()) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
  for (double v : t.pattern.vec()) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image img(16, 16);
  for (auto& p : img.pixels) p = u(gen);
  for (float p : apply_reversed(img, t).pixels) EXPECT_TRUE(p >= 0.0f && p <= 1.0f);
}

TEST(Cleanse, HugeLambdaDrivesMaskToZero) {
  const auto ds = bars(4, 6, 3);
  auto m = tiny_model(4, 6);
  CleanseConfig cfg;
  cfg.steps = 200;
  cfg.init_lambda = 1e4;
  cfg.dynamic_lambda = false;
  cfg.lr = 0.5;
  const auto t = reverse_trigger(m, ds, 2, cfg);
  EXPECT_LT(t.l1, 0.05 * static_cast<double>(t.mask.size()));
}

TEST(Cleanse, ZeroMaskGivesBaselineTargetRate) {
  const auto ds = bars(4, 10, 4);
  auto m = tiny_model(4, 7);
  ReversedTrigger t;
  t.mask = Tensor({16, 16}, 0.0);
  t.pattern = Tensor({1, 16, 16}, 1.0);
  t.target = 2;
  const auto pred = predict(m, ds);
  double hits = 0;
  for (int p : pred) hits += p == 2;
  EXPECT_DOUBLE_EQ(reverse_asr(m, t, ds), 100.0 * hits / static_cast<double>(ds.size()));
}

// ---- NNoculation and profiling ----------------------------------------------------

TEST(Nnoculation, ZeroFractionKeepsMetrics) {
  const auto ds = bars(4, 10, 5);
  auto m = tiny_model(4, 8);
  auto probes = ds;
  for (auto& l : probes.labels) l = 0;
  NnoculationConfig cfg;
  cfg.fractions = {0.0};
  const auto r = nnoculation_stage1(m, ds, ds, probes, cfg);
  const auto e = evaluate(m, ds, probes);
  EXPECT_EQ(r.points[0].ca, e.ca);
  EXPECT_EQ(r.points[0].asr, e.asr);
}

TEST(Nnoculation, ReplacePixelsCount) {
  const Image img(10, 10, 1, 0.5f);
  const auto out = replace_pixels(img, 0.4, 3);
  int changed = 0;
  for (std::size_t i = 0; i < img.size(); ++i) changed += out.pixels[i] != img.pixels[i];
  EXPECT_LE(changed, 40);
  EXPECT_GE(changed, 36);  // a replacement can land on 0.5 only with negligible probability
}

TEST(Profile, UniformHasNoPeaksAndHotNeuronHasOne) {
  EXPECT_TRUE(activation_profile(Eigen::MatrixXd::Constant(5, 8, 0.7)).peaks.empty());
  Eigen::MatrixXd hot = Eigen::MatrixXd::Constant(5, 8, 0.1);
  hot.col(3).setConstant(5.0);
  const auto p = activation_profile(hot);
  ASSERT_EQ(p.peaks.size(), 1u);
  EXPECT_EQ(p.peaks[0], 3u);
}
