#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "bdlab/augment.hpp"
#include "bdlab/errors.hpp"
#include "bdlab/faces.hpp"
#include "bdlab/idx.hpp"
#include "bdlab/percept_hash.hpp"
#include "bdlab/poison.hpp"
#include "bdlab/synthetic_faces.hpp"
#include "bdlab/trigger.hpp"
#include "oracles.hpp"

using namespace bdlab;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("bdlab_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// Digit-like stroke image: a few thick random line segments.
Image stroke_image(std::uint64_t seed, std::size_t side = 28) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(4.0, static_cast<double>(side) - 5.0);
  Image img(side, side);
  for (int s = 0; s < 3; ++s) {
    const double y0 = u(gen), x0 = u(gen), y1 = u(gen), x1 = u(gen);
    for (int t = 0; t <= 60; ++t) {
      const double y = y0 + (y1 - y0) * t / 60.0, x = x0 + (x1 - x0) * t / 60.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          img.at(static_cast<std::size_t>(std::lround(y)) + dy, static_cast<std::size_t>(std::lround(x)) + dx) = 1.0f;
    }
  }
  return img;
}

// Sample ids are seed * 100000 + index, so sets built from different seeds are disjoint.
LabeledDataset small_digits(int classes, std::size_t per_class, std::uint64_t seed = 1) {
  LabeledDataset ds;
  ds.num_classes = classes;
  for (std::size_t i = 0; i < per_class; ++i)
    for (int c = 0; c < classes; ++c)
      ds.push_back(stroke_image(seed * 1000 + i * classes + c), c, false, -1, seed * 100000 + ds.size());
  return ds;
}

std::vector<double> gray(const Image& img) { return std::vector<double>(img.pixels.begin(), img.pixels.end()); }

}  // namespace

// ---- IDX -------------------------------------------------------------------

TEST(Idx, RoundTripReproducesBytes) {
  const auto d = temp_dir("idx_rt");
  LabeledDataset ds;
  ds.num_classes = 10;
  for (int i = 0; i < 5; ++i) {
    Image img(4, 3);
    for (std::size_t p = 0; p < img.size(); ++p) img.pixels[p] = static_cast<float>((i * 37 + p * 11) % 256) / 255.0f;
    ds.push_back(img, i);
  }
  write_idx(ds, d / "img", d / "lbl");
  const auto back = load_idx(d / "img", d / "lbl");
  ASSERT_EQ(back.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(back.labels[i], ds.labels[i]);
    EXPECT_EQ(back.images[i], ds.images[i]);
  }
}

TEST(Idx, EmptyFileFailsAtOffsetZero) {
  const auto d = temp_dir("idx_empty");
  std::ofstream(d / "img").close();
  std::ofstream(d / "lbl").close();
  try {
    load_idx(d / "img", d / "lbl");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
}

TEST(Idx, TruncatedPayloadIsReported) {
  const auto d = temp_dir("idx_trunc");
  LabeledDataset ds;
  ds.num_classes = 10;
  for (int i = 0; i < 10; ++i) ds.push_back(Image(2, 2, 1, 0.5f), i);
  write_idx(ds, d / "img", d / "lbl");
  fs::resize_file(d / "img", fs::file_size(d / "img") - 4);  // nine images left
  try {
    load_idx(d / "img", d / "lbl");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }
}

TEST(Idx, MnistTrainFilesWhenPresent) {
  const fs::path dir = std::getenv("BDLAB_DATA_DIR") ? std::getenv("BDLAB_DATA_DIR") : "/root/data/mnist";
  if (!fs::exists(dir / "train-images-idx3-ubyte")) GTEST_SKIP() << "MNIST not available";
  const auto ds = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
  ASSERT_EQ(ds.size(), 60000u);
  EXPECT_EQ(ds.images[0].height, 28u);
  EXPECT_EQ(ds.images[0].width, 28u);
  for (int l : ds.labels) ASSERT_TRUE(l >= 0 && l <= 9);
}

// ---- faces -----------------------------------------------------------------

TEST(Faces, RenderIsDeterministic) {
  FaceParams p;
  p.identity = random_identity(4);
  EXPECT_EQ(render_face(p, 9), render_face(p, 9));
}

TEST(Faces, SmileChangesAtLeastTwentyPixels) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    FaceParams p;
    p.identity = random_identity(s);
    FaceParams q = p;
    q.expression.mouth_curvature = 1.0;
    const auto a = render_face(p, 100 + s), b = render_face(q, 100 + s);
    int changed = 0;
    for (std::size_t i = 0; i < a.size(); ++i) changed += std::abs(a.pixels[i] - b.pixels[i]) > 0.1f;
    EXPECT_GE(changed, 20) << "identity seed " << s;
  }
}

TEST(Faces, DistinctIdentitiesHashApart) {
  FaceParams a, b;
  a.identity = random_identity(1);
  b.identity = random_identity(2);
  EXPECT_LT(similarity(phash(render_face(a, 0)), phash(render_face(b, 0))), 90.0);
}

TEST(Faces, IdentityDatasetCounts) {
  const auto ds = make_identity_dataset(10, 30, 5);
  EXPECT_EQ(ds.size(), 300u);
  std::set<std::vector<double>> identities;
  for (const auto& f : ds.faces) {
    const auto& id = f.params.identity;
    identities.insert({id.face_width, id.face_height, id.skin_tone, id.hair_line, id.eye_spacing, id.mouth_width});
    EXPECT_EQ(f.params.expression.mouth_curvature, 0.0);
    EXPECT_EQ(f.params.expression.brow_arch, 0.0);
  }
  EXPECT_EQ(identities.size(), 10u);
  EXPECT_THROW(make_identity_dataset(10, 3, 5), ConfigError);
}

TEST(Faces, WithinClassMoreSimilarThanBetween) {
  const auto ds = make_identity_dataset(6, 8, 3);
  std::vector<Hash64> h;
  for (const auto& im : ds.images) h.push_back(phash(im));
  double within = 0, between = 0;
  int nw = 0, nb = 0;
  for (std::size_t i = 0; i < h.size(); ++i)
    for (std::size_t j = i + 1; j < h.size(); ++j) {
      const double s = similarity(h[i], h[j]);
      if (ds.labels[i] == ds.labels[j]) within += s, ++nw;
      else between += s, ++nb;
    }
  EXPECT_GT(within / nw, between / nb);
}

TEST(Faces, SeedsGiveDifferentIdentities) {
  const auto a = make_identity_dataset(3, 4, 1), b = make_identity_dataset(3, 4, 2);
  EXPECT_NE(a.faces[0].params.identity.face_width, b.faces[0].params.identity.face_width);
}

// ---- augmentation and splits -----------------------------------------------

TEST(Augment, ZeroShiftIsIdentity) {
  const auto img = stroke_image(3);
  EXPECT_EQ(augment(img, AugmentConfig{}, 17), img);
}

TEST(Augment, FlipTwiceIsIdentity) {
  const auto img = stroke_image(4);
  EXPECT_EQ(hflip(hflip(img)), img);
}

TEST(Augment, ShiftMovesOneHotPixel) {
  Image img(6, 6);
  img.at(2, 1) = 1.0f;
  const auto s = shift(img, 2, 0);
  EXPECT_EQ(s.at(2, 3), 1.0f);
  float total = 0;
  for (float v : s.pixels) total += v;
  EXPECT_EQ(total, 1.0f);
}

TEST(Split, DisjointExhaustiveAndPure) {
  const auto ds = small_digits(4, 10);
  const auto [a, b] = split_train_test(ds, 0.7, 9);
  const auto [a2, b2] = split_train_test(ds, 0.7, 9);
  EXPECT_EQ(a.ids, a2.ids);
  EXPECT_EQ(b.ids, b2.ids);
  std::set<std::uint64_t> seen(a.ids.begin(), a.ids.end());
  for (auto id : b.ids) EXPECT_TRUE(seen.insert(id).second);
  EXPECT_EQ(seen.size(), ds.size());
}

// ---- triggers --------------------------------------------------------------

TEST(Trigger, DotChangesExactlyOnePixel) {
  const auto img = stroke_image(5);
  const auto t = apply_trigger(img, make_square_patch(25, 25, 1));
  int changed = 0;
  for (std::size_t i = 0; i < img.size(); ++i) changed += img.pixels[i] != t.pixels[i];
  EXPECT_EQ(changed, img.at(25, 25) == 1.0f ? 0 : 1);
  EXPECT_NEAR(trigger_size(img, t), 100.0 / 784.0, 1e-12);
}

TEST(Trigger, PatchOutsideImageIsGeometryError) {
  EXPECT_THROW(apply_trigger(Image(28, 28), make_square_patch(26, 26, 3)), GeometryError);
}

TEST(Trigger, SmoothFixesConstantImage) {
  const Image img(28, 28, 1, 0.4f);
  EXPECT_EQ(apply_trigger(img, make_filter(FilterKind::Smooth, 0.5)), img);
}

TEST(Trigger, SmoothChangesMostPixelsOfADigit) {
  const auto img = stroke_image(6);
  EXPECT_GE(trigger_size(img, apply_trigger(img, make_filter(FilterKind::Smooth, 0.5))), 75.0);
}

TEST(Trigger, StaticPatchRegionIsIdentical) {
  const auto t = make_square_patch(20, 20, 3, 0.9f);
  const auto a = apply_trigger(stroke_image(1), t), b = apply_trigger(stroke_image(2), t);
  for (std::size_t y = 20; y < 23; ++y)
    for (std::size_t x = 20; x < 23; ++x) EXPECT_EQ(a.at(y, x), b.at(y, x));
}

TEST(Trigger, FilterDifferenceMapsAreInputDependent) {
  for (auto kind : {FilterKind::Smooth, FilterKind::AgeLines, FilterKind::BrightenContour, FilterKind::SmileWarp}) {
    const auto t = make_filter(kind, 0.5, 3);
    int differ = 0, pairs = 0;
    for (std::uint64_t i = 0; i < 20; ++i) {
      const auto a = stroke_image(2 * i + 1), b = stroke_image(2 * i + 2);
      const auto ta = apply_trigger(a, t), tb = apply_trigger(b, t);
      bool same = true;
      for (std::size_t p = 0; p < a.size() && same; ++p)
        same = (ta.pixels[p] - a.pixels[p]) == (tb.pixels[p] - b.pixels[p]);
      differ += !same;
      ++pairs;
    }
    EXPECT_GE(differ, (pairs * 95 + 99) / 100) << filter_name(kind);
  }
}

TEST(Trigger, KeyValueRoundTrip) {
  for (const auto& t : {make_square_patch(24, 24, 3), make_filter(FilterKind::AgeLines, 0.5, 7),
                        make_expression(Expression::BrowArch, 0.8)}) {
    EXPECT_EQ(trigger_to_kv(trigger_from_kv(trigger_to_kv(t))), trigger_to_kv(t));
  }
}

// ---- poisoning -------------------------------------------------------------

TEST(Poison, OneToOneCount) {
  const auto ds = small_digits(3, 100);
  PoisonSpec spec{make_square_patch(25, 25, 1), OneToOne{1, 2}, 0.10};
  const auto r = poison_dataset(ds, spec, 4);
  EXPECT_EQ(r.poisoned_indices.size(), 10u);
  EXPECT_EQ(r.dataset.poisoned_count(), r.poisoned_indices.size());
  for (auto i : r.poisoned_indices) {
    EXPECT_EQ(r.dataset.labels[i], 2);
    EXPECT_EQ(r.dataset.true_labels[i], 1);
  }
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (!r.dataset.poisoned[i]) EXPECT_EQ(r.dataset.images[i], ds.images[i]);
}

TEST(Poison, AllToOneCeiling) {
  const auto ds = small_digits(10, 2);
  PoisonSpec spec{make_square_patch(25, 25, 1), AllToOne{0}, 0.5};
  const auto r = poison_dataset(ds, spec, 1);
  EXPECT_EQ(r.poisoned_indices.size(), 9u);
  EXPECT_EQ(r.dataset.poisoned_count(), 9u);
}

TEST(Poison, ZeroSamplesIsConfigError) {
  PoisonSpec spec{make_square_patch(25, 25, 1), OneToOne{1, 2}, 0.0};
  EXPECT_THROW(poison_dataset(small_digits(3, 5), spec, 1), ConfigError);
}

TEST(Poison, MaliciousTestSet) {
  auto test = small_digits(3, 20, 7);
  test.split = Split::Test;
  PoisonSpec spec{make_square_patch(25, 25, 1), OneToOne{1, 2}, 0.10};
  const auto m = build_malicious_testset(test, spec);
  EXPECT_EQ(m.size(), 20u);
  for (std::size_t i = 0; i < m.size(); ++i) {
    EXPECT_EQ(m.labels[i], 2);
    EXPECT_EQ(m.true_labels[i], 1);
  }
  const auto train = poison_dataset(small_digits(3, 20, 8), spec, 1);
  std::set<std::uint64_t> ids;
  for (auto i : train.poisoned_indices) ids.insert(train.dataset.ids[i]);
  for (auto id : m.ids) EXPECT_EQ(ids.count(id), 0u);
}

TEST(Poison, ExpressionProbesOnePerClass) {
  const auto faces = make_identity_dataset(10, 6, 2);
  PoisonSpec spec{make_expression(Expression::MouthCurvature, 1.0), AllToOne{0}, 0.5};
  const auto m = build_malicious_testset(faces, spec, MaliciousTestOptions{.per_class = 1, .include_target_class = true});
  EXPECT_EQ(m.size(), 10u);
}

// ---- perceptual hashes -----------------------------------------------------

TEST(Hash, ConstantImageIsAllZero) {
  const Image img(32, 32, 1, 0.6f);
  EXPECT_EQ(phash(img).bits, 0u);
  EXPECT_EQ(dhash(img).bits, 0u);
}

TEST(Hash, SelfDistanceIsZero) {
  const auto img = stroke_image(12);
  EXPECT_EQ(hamming_distance(phash(img), phash(img)), 0);
}

TEST(Hash, IncreasingRowsSetEveryDhashBit) {
  Image img(16, 40);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 40; ++x) img.at(y, x) = static_cast<float>(x) / 39.0f;
  EXPECT_EQ(dhash(img).bits, ~std::uint64_t{0});
}

TEST(Hash, RampAndCheckerboardMatchOracles) {
  Image ramp(32, 32), checker(32, 32);
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x) {
      ramp.at(y, x) = static_cast<float>(x) / 31.0f;
      checker.at(y, x) = ((y / 4 + x / 4) % 2) ? 1.0f : 0.0f;
    }
  EXPECT_EQ(phash(ramp).bits, oracle::phash(gray(ramp), 32, 32));
  EXPECT_EQ(dhash(checker).bits, oracle::dhash(gray(checker), 32, 32));
}

TEST(Hash, BitExactAgainstOraclesOnTwentyImages) {
  std::mt19937_64 gen(31);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 20; ++i) {
    Image img;
    if (i % 2 == 0) {
      img = stroke_image(500 + i, 28 + 4 * (i % 3));
    } else {
      img = Image(24 + i, 30 + i);
      for (auto& p : img.pixels) p = static_cast<float>(u(gen));
    }
    const auto g = gray(img);
    EXPECT_EQ(phash(img).bits, oracle::phash(g, img.height, img.width)) << "image " << i;
    EXPECT_EQ(dhash(img).bits, oracle::dhash(g, img.height, img.width)) << "image " << i;
  }
}

TEST(Hash, SimilarityValues) {
  EXPECT_EQ(similarity(Hash64{5}, Hash64{5}), 100.0);
  EXPECT_EQ(similarity(Hash64{0}, Hash64{0xF}), 93.75);
  EXPECT_EQ(similarity(Hash64{0x1234}, Hash64{~std::uint64_t{0x1234}}), 0.0);
}

TEST(Hash, SimilarityMatchesBitLoopOnThousandPairs) {
  std::mt19937_64 gen(8);
  for (int i = 0; i < 1000; ++i) {
    const Hash64 a{gen()}, b{gen()};
    ASSERT_EQ(similarity(a, b), oracle::similarity(a.bits, b.bits));
  }
}

TEST(Hash, SimilarityProperties) {
  std::mt19937_64 gen(9);
  for (int i = 0; i < 200; ++i) {
    const Hash64 a{gen()}, b{gen()}, c{gen()};
    EXPECT_EQ(similarity(a, b), similarity(b, a));
    EXPECT_LE(hamming_distance(a, c), hamming_distance(a, b) + hamming_distance(b, c));
  }
}

TEST(Hash, InvariantToHalvingBrightness) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto img = stroke_image(s);
    for (auto& p : img.pixels) p = 0.2f + 0.8f * p;
    auto half = img;
    for (auto& p : half.pixels) p *= 0.5f;
    EXPECT_EQ(phash(img), phash(half));
    EXPECT_EQ(dhash(img), dhash(half));
  }
}

TEST(Stealth, TriggerSizeMatchesPixelCount) {
  const auto img = stroke_image(21);
  const auto t = apply_trigger(img, make_filter(FilterKind::Smooth, 0.5));
  int n = 0;
  for (std::size_t i = 0; i < img.size(); ++i) n += std::abs(double(t.pixels[i]) - double(img.pixels[i])) > 1.0 / 255.0;
  EXPECT_DOUBLE_EQ(trigger_size(img, t), 100.0 * n / static_cast<double>(img.size()));
  EXPECT_EQ(trigger_size(img, img), 0.0);
  EXPECT_THROW(trigger_size(img, Image(27, 28)), GeometryError);
}

TEST(Stealth, UntriggeredPairsReport) {
  std::vector<Image> a = {stroke_image(1), stroke_image(2)};
  const auto r = stealth_report(a, a);
  EXPECT_EQ(r.trigger_size_pct, 0.0);
  EXPECT_EQ(r.phash_similarity_pct, 100.0);
  EXPECT_EQ(r.dhash_similarity_pct, 100.0);
  EXPECT_THROW(stealth_report(std::span<const Image>{}, std::span<const Image>{}), ConfigError);
}
