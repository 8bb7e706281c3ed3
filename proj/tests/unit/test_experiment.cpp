#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "bdlab/config.hpp"
#include "bdlab/experiment.hpp"

using namespace bdlab;
namespace fs = std::filesystem;

namespace {

const char* kDotConfig = R"(# dot trigger
[experiment]
name = unit-dot
seed = 3

[trigger]
kind = patch
row = 25
col = 25
size = 1

[poison]
policy = all-to-one
target = 2
pp = 0.1

[train]
epochs = 1
)";

fs::path temp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("bdlab_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST(Config, ParsesSectionsAndComments) {
  const auto c = parse_config(kDotConfig);
  EXPECT_EQ(c.values.at("experiment.name"), "unit-dot");
  EXPECT_EQ(c.values.at("trigger.size"), "1");
  EXPECT_EQ(c.section("poison").size(), 3u);
}

TEST(Config, MalformedAndDuplicateLinesNameTheLine) {
  try {
    parse_config("[a]\nx = 1\nnot a pair\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("3"), std::string::npos);
  }
  EXPECT_THROW(parse_config("[a]\nx = 1\nx = 2\n"), ConfigError);
}

TEST(Config, HashIsOrderIndependentAndMatchesRecomputation) {
  const auto a = parse_config("[s]\nb = 2\na = 1\n");
  const auto b = parse_config("[s]\na = 1\n\n# comment\nb = 2\n");
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(canonical_text(a), "s.a=1\ns.b=2\n");
  // FNV-1a 64 over the canonical text.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical_text(a)) h = (h ^ ch) * 0x100000001b3ULL;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  EXPECT_EQ(config_hash(a), buf);
}

TEST(Experiment, ValidConfigLoads) {
  const auto cfg = experiment_from_config(parse_config(kDotConfig));
  EXPECT_EQ(cfg.name, "unit-dot");
  EXPECT_EQ(cfg.seed, 3u);
  EXPECT_EQ(cfg.train.epochs, 1u);
  EXPECT_EQ(policy_target(cfg.poison.policy), 2);
  EXPECT_EQ(cfg.hash, config_hash(parse_config(kDotConfig)));
  EXPECT_EQ(cfg.defenses.enabled.size(), defense_names().size());
}

TEST(Experiment, ZeroPoisonFractionIsValidationError) {
  auto c = parse_config(kDotConfig);
  c.set("poison.pp", "0");
  EXPECT_THROW(experiment_from_config(c), ValidationError);
}

TEST(Experiment, EveryProblemIsListed) {
  auto c = parse_config(kDotConfig);
  c.set("poison.pp", "0");
  c.set("train.epochs", "zero");
  c.set("train.unknown_knob", "1");
  try {
    experiment_from_config(c);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_GE(e.problems().size(), 3u);
  }
}

TEST(Experiment, UnknownDefenseNameIsRejected) {
  auto c = parse_config(kDotConfig);
  c.set("defenses.enabled", "strip,abs-full");
  EXPECT_THROW(experiment_from_config(c), ValidationError);
  EXPECT_THROW(defend("/nonexistent.bdlm", "abs-full"), ConfigError);
  try {
    defend("/nonexistent.bdlm", "abs-full");
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("neural-cleanse"), std::string::npos);
  }
}

TEST(Experiment, BundledConfigsValidate) {
  const fs::path dir = fs::path(BDLAB_SOURCE_DIR) / "configs";
  int n = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".cfg") continue;
    EXPECT_NO_THROW(experiment_from_config(load_config(e.path()))) << e.path();
    ++n;
  }
  EXPECT_GE(n, 4);
}

TEST(Csv, RoundTripsAwkwardCells) {
  const CsvTable t = {{"a", "b,c", "quote\"d"}, {"line\nbreak", "", "plain"}};
  const auto path = temp_dir("csv") / "t.csv";
  write_csv(t, path);
  EXPECT_EQ(read_csv(path), t);
}

TEST(Tables, DisabledDefensesAreMarkedSkipped) {
  Json report = {{"name", "r"},
                 {"status", "complete"},
                 {"dataset", {{"kind", "mnist"}}},
                 {"stealth", {{"trigger", "dot"}, {"samples", 10}, {"trigger_size_pct", 0.128},
                              {"phash_similarity_pct", 100.0}, {"dhash_similarity_pct", 100.0}}},
                 {"attack", {{"trigger", "dot"}, {"policy", "all-to-one"}, {"target", 2}, {"pp", 0.1},
                             {"ca", 97.0}, {"asr", 99.0}}},
                 {"defenses",
                  {{"strip",
                    {{"status", "ok"}, {"detection_rate", 100.0}, {"heldout_flag_rate", 1.0},
                     {"histograms", {{"genuine", {{"lo", 0.0}, {"hi", 1.0}, {"counts", {1, 2}}}},
                                     {"probe", {{"lo", 0.0}, {"hi", 1.0}, {"counts", {3, 0}}}}}}}},
                   {"spectral", {{"status", "failed"}}}}}};
  const auto dir = temp_dir("tables");
  const auto written = report_tables(report, dir);
  EXPECT_EQ(written.size(), 5u);  // three tables and two histograms
  const auto defenses = read_csv(dir / "table_defenses.csv");
  ASSERT_EQ(defenses.size(), 2u);
  EXPECT_EQ(defenses[0], defense_table_columns());
  const auto& row = defenses[1];
  auto col = [&](const std::string& name) {
    const auto& h = defenses[0];
    return row[static_cast<std::size_t>(std::find(h.begin(), h.end(), name) - h.begin())];
  };
  EXPECT_EQ(col("spectral_auroc"), "failed");
  EXPECT_EQ(col("ac_detection_rate"), "skipped");
  EXPECT_EQ(col("nnoc_success"), "skipped");
  EXPECT_EQ(col("strip_detection_rate"), "100");
  const auto attack = read_csv(dir / "table_attack.csv");
  EXPECT_EQ(attack[0], attack_table_columns());
  EXPECT_EQ(attack[1].back(), "skipped");
  const auto hist = read_csv(dir / "hist_strip_genuine.csv");
  EXPECT_EQ(hist[0], (std::vector<std::string>{"bin_lo", "bin_hi", "count"}));
  EXPECT_EQ(hist.size(), 3u);
}

TEST(Tables, StripTimingDropsWallClock) {
  Json r = {{"provenance", {{"config_hash", "x"}, {"wall_time_s", 3.2}}}};
  const auto s = strip_timing(r);
  EXPECT_FALSE(s["provenance"].contains("wall_time_s"));
  EXPECT_EQ(s["provenance"]["config_hash"], "x");
}
