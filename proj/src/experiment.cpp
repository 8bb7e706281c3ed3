#include "bdlab/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>

#include "bdlab/augment.hpp"
#include "bdlab/faces.hpp"
#include "bdlab/idx.hpp"
#include "bdlab/model_io.hpp"
#include "bdlab/percept_hash.hpp"
#include "bdlab/rng.hpp"
#include "bdlab/stats.hpp"
#include "bdlab/synthetic_faces.hpp"

#ifndef BDLAB_VERSION
#define BDLAB_VERSION "0.0.0"
#endif

namespace bdlab {

namespace {

// Stream tags for seeds derived from the master seed.
enum SeedTag : std::uint64_t {
  kSeedPoison = 1,
  kSeedSplit = 2,
  kSeedInit = 3,
  kSeedTrain = 4,
  kSeedFaces = 6,
  kSeedPretrainInit = 7,
  kSeedTrigger = 8,
  kSeedPretrain = 9,
  kSeedFaceSplit = 10,
  kSeedHoldoutSplit = 11,
  kSeedClustering = 31,
  kSeedFuzz = 40,
  kSeedStrip = 50,
  kSeedCleanse = 60,
  kSeedNnoculation = 70,
};

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string fmt(std::size_t v) { return std::to_string(v); }
std::string fmt(int v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

Json hist_json(const Histogram& h) { return Json{{"lo", h.lo}, {"hi", h.hi}, {"counts", h.counts}}; }

std::string policy_name(const LabelPolicy& p) {
  return std::holds_alternative<OneToOne>(p) ? "one-to-one" : "all-to-one";
}

LabeledDataset head(const LabeledDataset& ds, std::size_t n) {
  std::vector<std::size_t> idx(std::min(n, ds.size()));
  std::iota(idx.begin(), idx.end(), 0);
  return ds.subset(idx);
}

LabeledDataset range(const LabeledDataset& ds, std::size_t from, std::size_t to) {
  std::vector<std::size_t> idx;
  for (std::size_t i = from; i < std::min(to, ds.size()); ++i) idx.push_back(i);
  return ds.subset(idx);
}

std::size_t count_field(FieldReader& f, const std::string& key, std::size_t fallback, long min = 1) {
  const long v = f.integer(key, static_cast<long>(fallback));
  if (v < min) {
    f.problem(key + ": must be at least " + std::to_string(min));
    return fallback;
  }
  return static_cast<std::size_t>(v);
}

double real_in(FieldReader& f, const std::string& key, double fallback, double lo, double hi) {
  const double v = f.real(key, fallback);
  if (!(v >= lo && v <= hi)) {
    f.problem(key + ": must lie in [" + fmt(lo) + ", " + fmt(hi) + "]");
    return fallback;
  }
  return v;
}

std::string encode_config(const Config& c) {
  std::string s = canonical_text(c);
  std::replace(s.begin(), s.end(), '\n', '\t');
  return s;
}

Config decode_config(std::string s) {
  std::replace(s.begin(), s.end(), '\t', '\n');
  return parse_config(s);
}

}  // namespace

const std::vector<std::string>& defense_names() {
  static const std::vector<std::string> names = {"spectral",     "activation-clustering", "suppression",
                                                 "strip",        "neural-cleanse",        "nnoculation",
                                                 "activation-profile"};
  return names;
}

bool DefenseSettings::is_enabled(const std::string& name) const {
  return std::find(enabled.begin(), enabled.end(), name) != enabled.end();
}

ExperimentConfig experiment_from_config(const Config& cfg) {
  FieldReader f(cfg);
  ExperimentConfig e;
  e.source = cfg;
  e.hash = config_hash(cfg);
  e.name = f.str("experiment.name", "experiment");
  const long seed = f.integer("experiment.seed", 1);
  if (seed < 0) f.problem("experiment.seed: must be non-negative");
  e.seed = static_cast<std::uint64_t>(std::max(0L, seed));

  auto& d = e.dataset;
  const std::string kind = f.str("dataset.kind", "mnist");
  if (kind == "faces") {
    d.kind = DatasetKind::Faces;
  } else if (kind != "mnist") {
    f.problem("dataset.kind: expected mnist or faces, got '" + kind + "'");
  }
  d.train_count = count_field(f, "dataset.train_count", d.train_count);
  d.test_count = count_field(f, "dataset.test_count", d.test_count);
  d.holdout_count = count_field(f, "dataset.holdout_count", d.holdout_count);
  if (d.train_count > 60000) f.problem("dataset.train_count: MNIST has 60000 training images");
  if (d.test_count + d.holdout_count > 10000) f.problem("dataset.test_count + dataset.holdout_count: MNIST has 10000 test images");
  d.val_fraction = real_in(f, "dataset.val_fraction", d.val_fraction, 0.01, 0.5);
  d.classes = static_cast<int>(count_field(f, "dataset.classes", static_cast<std::size_t>(d.classes), 2));
  d.per_class = count_field(f, "dataset.per_class", d.per_class, 20);
  d.pretrain_count = count_field(f, "dataset.pretrain_count", d.pretrain_count);
  d.pretrain_epochs = static_cast<int>(count_field(f, "dataset.pretrain_epochs", static_cast<std::size_t>(d.pretrain_epochs)));
  const int classes = d.kind == DatasetKind::Faces ? d.classes : 10;

  auto widths = f.reals("model.widths", {16, 32, 64});
  e.model.widths.clear();
  for (double w : widths) {
    if (w < 1 || w != std::floor(w)) f.problem("model.widths: entries must be positive integers");
    e.model.widths.push_back(static_cast<std::size_t>(std::max(1.0, w)));
  }
  if (e.model.widths.empty()) f.problem("model.widths: at least one conv block is required");
  e.model.hidden = count_field(f, "model.hidden", e.model.hidden);
  e.model.dropout = real_in(f, "model.dropout", e.model.dropout, 0.0, 0.9);

  std::map<std::string, std::string> tkv;
  for (const auto& [k, v] : cfg.section("trigger")) tkv["trigger." + k] = f.str("trigger." + k, v);
  bool trigger_ok = false;
  if (!tkv.count("trigger.kind")) {
    f.problem("trigger.kind: missing");
  } else {
    if (tkv["trigger.kind"] == "filter" && !tkv.count("trigger.seed"))
      tkv["trigger.seed"] = std::to_string(derive_seed(e.seed, kSeedTrigger));
    try {
      e.poison.trigger = trigger_from_kv(tkv);
      trigger_ok = true;
    } catch (const ConfigError& err) {
      f.problem(err.what());
    }
  }
  if (trigger_ok && e.poison.trigger.needs_faces() && d.kind != DatasetKind::Faces)
    f.problem("trigger.kind: expression triggers need dataset.kind = faces");

  const std::string policy = f.str("poison.policy", "all-to-one");
  const int target = static_cast<int>(f.integer("poison.target", 0));
  if (policy == "one-to-one") {
    if (!cfg.has("poison.source")) f.problem("poison.source: required for one-to-one");
    e.poison.policy = OneToOne{static_cast<int>(f.integer("poison.source", 0)), target};
  } else if (policy == "all-to-one") {
    e.poison.policy = AllToOne{target};
  } else {
    f.problem("poison.policy: expected one-to-one or all-to-one, got '" + policy + "'");
  }
  e.poison.pp = f.real("poison.pp", 0.1);
  if (!(e.poison.pp > 0.0 && e.poison.pp < 1.0)) f.problem("poison.pp: must be strictly between 0 and 1");
  try {
    if (trigger_ok && e.poison.pp > 0.0 && e.poison.pp < 1.0) e.poison.validate(classes);
  } catch (const ConfigError& err) {
    f.problem(std::string("poison: ") + err.what());
  }

  auto& t = e.train;
  t.epochs = count_field(f, "train.epochs", 4, 0);
  t.batch_size = count_field(f, "train.batch_size", t.batch_size);
  t.lr = f.real("train.lr", t.lr);
  if (!(t.lr >= 0.0)) f.problem("train.lr: must be non-negative");
  t.decay_at = real_in(f, "train.decay_at", t.decay_at, 0.0, 1.0);
  t.decay_factor = real_in(f, "train.decay_factor", t.decay_factor, 0.0, 1.0);
  t.augment = f.boolean("train.augment", false);
  t.augment_cfg.max_shift_x = real_in(f, "train.shift_x", 0.1, 0.0, 0.2);
  t.augment_cfg.max_shift_y = real_in(f, "train.shift_y", 0.1, 0.0, 0.2);
  t.seed = derive_seed(e.seed, kSeedTrain);
  e.clean_twin = f.boolean("train.clean_twin", false);
  e.audit_samples = count_field(f, "audit.samples", e.audit_samples);

  auto& df = e.defenses;
  std::vector<std::string> enabled = f.words("defenses.enabled", {"all"});
  if (enabled.size() == 1 && enabled[0] == "all") enabled = defense_names();
  if (enabled.size() == 1 && enabled[0] == "none") enabled.clear();
  for (const auto& n : defense_names())
    if (std::find(enabled.begin(), enabled.end(), n) != enabled.end()) df.enabled.push_back(n);
  for (const auto& n : enabled) {
    if (std::find(defense_names().begin(), defense_names().end(), n) == defense_names().end()) {
      std::string valid;
      for (const auto& v : defense_names()) valid += (valid.empty() ? "" : ", ") + v;
      f.problem("defenses.enabled: unknown defense '" + n + "' (valid: " + valid + ")");
    }
  }

  df.spectral_clusters = static_cast<int>(count_field(f, "spectral.clusters", 10));
  df.spectral_bins = count_field(f, "spectral.bins", 30);
  df.clustering.components = static_cast<int>(count_field(f, "activation-clustering.components", 10));
  df.clustering.clusters = static_cast<int>(count_field(f, "activation-clustering.clusters", 2, 2));
  df.clustering.seed = derive_seed(e.seed, kSeedClustering);
  df.fuzz_levels = f.reals("suppression.levels", df.fuzz_levels);
  for (double l : df.fuzz_levels)
    if (!(l >= 0.0 && l <= 1.0)) f.problem("suppression.levels: levels must lie in [0, 1]");
  df.fuzz_votes = count_field(f, "suppression.votes", df.fuzz_votes);
  if (df.fuzz_votes > 1 && df.fuzz_votes % 2 == 0) f.problem("suppression.votes: must be 1 or odd");
  df.fuzz_clean_per_class = count_field(f, "suppression.clean_per_class", df.fuzz_clean_per_class);
  df.fuzz_probes = count_field(f, "suppression.probes", df.fuzz_probes);
  df.sasr_limit = real_in(f, "suppression.sasr_limit", df.sasr_limit, 0.0, 100.0);
  df.fuzz_max_ca_drop = real_in(f, "suppression.max_ca_drop", df.fuzz_max_ca_drop, 0.0, 100.0);
  df.strip.perturbations = count_field(f, "strip.perturbations", df.strip.perturbations);
  df.strip.frr = real_in(f, "strip.frr", df.strip.frr, 0.0, 1.0);
  df.strip.blend = real_in(f, "strip.blend", df.strip.blend, 0.0, 1.0);
  df.strip.seed = derive_seed(e.seed, kSeedStrip);
  df.strip_probes = count_field(f, "strip.probes", df.strip_probes);
  df.cleanse.steps = count_field(f, "neural-cleanse.steps", df.cleanse.steps);
  df.cleanse.samples = count_field(f, "neural-cleanse.samples", df.cleanse.samples);
  df.cleanse.lr = f.real("neural-cleanse.lr", df.cleanse.lr);
  df.cleanse.init_lambda = f.real("neural-cleanse.init_lambda", df.cleanse.init_lambda);
  df.cleanse.patience = count_field(f, "neural-cleanse.patience", df.cleanse.patience);
  df.cleanse.seed = derive_seed(e.seed, kSeedCleanse);
  for (double l : f.reals("neural-cleanse.labels", {})) {
    if (l < 0 || l >= classes || l != std::floor(l)) f.problem("neural-cleanse.labels: labels must be classes");
    df.cleanse_labels.push_back(static_cast<int>(l));
  }
  df.mad_threshold = f.real("neural-cleanse.mad_threshold", df.mad_threshold);
  auto& nn = df.nnoculation;
  nn.fractions = f.reals("nnoculation.fractions", nn.fractions);
  for (double x : nn.fractions)
    if (!(x >= 0.0 && x <= 1.0)) f.problem("nnoculation.fractions: fractions must lie in [0, 1]");
  nn.noisy_share = real_in(f, "nnoculation.noisy_share", nn.noisy_share, 0.0, 1.0);
  nn.retrain.epochs = count_field(f, "nnoculation.epochs", nn.retrain.epochs, 0);
  nn.retrain.lr = f.real("nnoculation.lr", nn.retrain.lr);
  nn.asr_limit = real_in(f, "nnoculation.asr_limit", nn.asr_limit, 0.0, 100.0);
  nn.max_ca_drop = real_in(f, "nnoculation.max_ca_drop", nn.max_ca_drop, 0.0, 100.0);
  nn.seed = derive_seed(e.seed, kSeedNnoculation);
  df.profile_probes = count_field(f, "activation-profile.probes", df.profile_probes);
  df.profile_k_sigma = f.real("activation-profile.k_sigma", df.profile_k_sigma);

  f.reject_unread();
  f.finish();
  return e;
}

std::filesystem::path default_data_dir() {
  if (const char* env = std::getenv("BDLAB_DATA_DIR"); env && *env) return env;
  return "/root/data/mnist";
}

namespace {

Model pretrain_body(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  const auto& d = cfg.dataset;
  auto digits = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte", d.pretrain_count);
  LabeledDataset low;
  low.num_classes = 5;
  for (std::size_t i = 0; i < digits.size(); ++i)
    if (digits.labels[i] < 5) low.push_back(pad_center(digits.images[i], kFaceSize, kFaceSize), digits.labels[i]);
  auto [tr, va] = split_train_test(low, 0.9, derive_seed(cfg.seed, kSeedPretrain));
  Model body = build_small_cnn({1, kFaceSize, kFaceSize}, 5, derive_seed(cfg.seed, kSeedPretrainInit), cfg.model.widths,
                               cfg.model.hidden, cfg.model.dropout);
  TrainConfig tc;
  tc.epochs = static_cast<std::size_t>(d.pretrain_epochs);
  tc.seed = derive_seed(cfg.seed, kSeedPretrain);
  train(body, tr, va, tc);
  return body;
}

}  // namespace

ExperimentData prepare_data(const ExperimentConfig& cfg, const std::filesystem::path& dir, bool pretrain) {
  ExperimentData data;
  const auto& d = cfg.dataset;
  if (d.kind == DatasetKind::Mnist) {
    data.clean_pool = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte", d.train_count);
    auto te = load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte", d.test_count + d.holdout_count,
                       10, 60000);
    data.test = head(te, d.test_count);
    data.holdout = range(te, d.test_count, te.size());
  } else {
    auto all = make_identity_dataset(d.classes, d.per_class, derive_seed(cfg.seed, kSeedFaces));
    auto [pool, rest] = split_train_test(all, 0.7, derive_seed(cfg.seed, kSeedFaceSplit));
    auto [test, holdout] = split_train_test(rest, 0.5, derive_seed(cfg.seed, kSeedHoldoutSplit));
    data.clean_pool = std::move(pool);
    data.test = std::move(test);
    data.holdout = std::move(holdout);
    if (pretrain) data.body = pretrain_body(cfg, dir);
  }
  data.test.split = Split::Test;
  data.holdout.split = Split::Test;
  auto pr = poison_dataset(data.clean_pool, cfg.poison, derive_seed(cfg.seed, kSeedPoison));
  for (auto i : pr.poisoned_indices) data.poisoned_ids.push_back(pr.dataset.ids[i]);
  data.pool = std::move(pr.dataset);
  auto [tr, va] = split_train_test(data.pool, 1.0 - d.val_fraction, derive_seed(cfg.seed, kSeedSplit));
  data.train = std::move(tr);
  data.val = std::move(va);
  data.malicious = build_malicious_testset(data.test, cfg.poison);
  return data;
}

Model train_model(const ExperimentConfig& cfg, const ExperimentData& data, bool clean, TrainHistory* history) {
  const LabeledDataset* tr = &data.train;
  const LabeledDataset* va = &data.val;
  std::pair<LabeledDataset, LabeledDataset> clean_split;
  if (clean) {
    clean_split = split_train_test(data.clean_pool, 1.0 - cfg.dataset.val_fraction, derive_seed(cfg.seed, kSeedSplit));
    tr = &clean_split.first;
    va = &clean_split.second;
  }
  const int classes = cfg.dataset.kind == DatasetKind::Faces ? cfg.dataset.classes : 10;
  TrainHistory h;
  Model m;
  if (data.body) {
    m = fine_tune(*data.body, classes, *tr, *va, cfg.train, &h);
  } else {
    const auto& img = tr->images.front();
    m = build_small_cnn({img.channels, img.height, img.width}, classes, derive_seed(cfg.seed, kSeedInit),
                        cfg.model.widths, cfg.model.hidden, cfg.model.dropout);
    h = train(m, *tr, *va, cfg.train);
  }
  m.metadata["experiment_config"] = encode_config(cfg.source);
  m.metadata["config_hash"] = cfg.hash;
  m.metadata["clean"] = clean ? "1" : "0";
  if (history) *history = h;
  return m;
}

// ---- defenses ---------------------------------------------------------------

namespace {

LabeledDataset target_samples(const ExperimentConfig& cfg, const ExperimentData& data) {
  return data.train.subset(data.train.indices_of_class(policy_target(cfg.poison.policy)));
}

DefenseOutput run_spectral(const ExperimentConfig& cfg, const Model& model, const ExperimentData& data) {
  const auto s = target_samples(cfg, data);
  const auto r = spectral_signatures(model, s, cfg.defenses.spectral_clusters, cfg.defenses.spectral_bins);
  DefenseOutput o;
  o.section = {{"samples", s.size()},
               {"malicious", s.poisoned_count()},
               {"eigenvalue", r.eigenvalue},
               {"auroc", r.auroc},
               {"genuine_mean", r.genuine_mean},
               {"malicious_mean", r.malicious_mean},
               {"min_genuine_separation", r.min_genuine_separation},
               {"malicious_separation", r.malicious_separation},
               {"histograms", {{"genuine", hist_json(r.genuine_hist)}, {"malicious", hist_json(r.malicious_hist)}}}};
  o.table.push_back({"id", "malicious", "correlation"});
  for (std::size_t i = 0; i < s.size(); ++i) o.table.push_back({fmt(static_cast<std::size_t>(s.ids[i])), fmt(bool(s.poisoned[i])), fmt(r.correlations[i])});
  return o;
}

DefenseOutput run_clustering(const ExperimentConfig& cfg, const Model& model, const ExperimentData& data) {
  const auto s = target_samples(cfg, data);
  const auto acts = penultimate_matrix(model, s);
  const auto r = activation_clustering(acts, s.poisoned, Eigen::MatrixXd(0, acts.cols()), {}, cfg.defenses.clustering);
  DefenseOutput o;
  o.section = {{"samples", s.size()},           {"malicious", s.poisoned_count()},
               {"components", r.components},    {"ica_converged", r.ica_converged},
               {"pca_fallback", r.pca_fallback}, {"genuine_cluster", r.genuine_cluster},
               {"cluster_sizes", r.cluster_sizes}, {"detection_rate", r.detection_rate}};
  o.table.push_back({"id", "malicious", "cluster"});
  for (std::size_t i = 0; i < s.size(); ++i)
    o.table.push_back({fmt(static_cast<std::size_t>(s.ids[i])), fmt(bool(s.poisoned[i])), fmt(r.train_assignment[i])});
  return o;
}

DefenseOutput run_suppression(const ExperimentConfig& cfg, const Model& model, const ExperimentData& data) {
  const auto& df = cfg.defenses;
  const auto clean = data.test.take_per_class(df.fuzz_clean_per_class);
  const auto mal = head(data.malicious, df.fuzz_probes);
  DefenseOutput o;
  o.table.push_back({"noise", "level", "sasr", "ca", "ca_drop"});
  Json curves = Json::object();
  bool suppressed = false;
  double best_sasr = std::numeric_limits<double>::quiet_NaN(), best_ca = best_sasr;
  for (auto type : {NoiseType::Uniform, NoiseType::Gaussian}) {
    const auto c = fuzzing_curve(model, clean, mal, type, df.fuzz_levels,
                                 derive_seed(cfg.seed, kSeedFuzz + static_cast<std::uint64_t>(type)), df.fuzz_votes);
    Json pts = Json::array();
    for (const auto& p : c.points) {
      pts.push_back({{"level", p.level}, {"sasr", p.sasr}, {"ca", p.ca}, {"ca_drop", c.base_ca - p.ca}});
      o.table.push_back({noise_name(type), fmt(p.level), fmt(p.sasr), fmt(p.ca), fmt(c.base_ca - p.ca)});
    }
    const int best = best_fuzzing_level(c, df.fuzz_max_ca_drop);
    Json cj = {{"base_ca", c.base_ca}, {"base_asr", c.base_asr}, {"points", pts}, {"best_level", nullptr}};
    if (best >= 0) {
      const auto& p = c.points[static_cast<std::size_t>(best)];
      cj["best_level"] = p.level;
      cj["best_sasr"] = p.sasr;
      cj["best_ca"] = p.ca;
      suppressed = suppressed || p.sasr <= df.sasr_limit;
      if (std::isnan(best_sasr) || p.sasr < best_sasr) {
        best_sasr = p.sasr;
        best_ca = p.ca;
      }
    }
    curves[noise_name(type)] = cj;
  }
  o.section = {{"votes", df.fuzz_votes},   {"clean_probes", clean.size()}, {"malicious_probes", mal.size()},
               {"sasr_limit", df.sasr_limit}, {"max_ca_drop", df.fuzz_max_ca_drop}, {"curves", curves},
               {"best_sasr", best_sasr},   {"best_ca", best_ca},           {"suppressed", suppressed}};
  return o;
}

DefenseOutput run_strip(const ExperimentConfig& cfg, const Model& model, const ExperimentData& data) {
  const auto& h = data.holdout;
  const std::size_t q = h.size() / 4;
  const auto calibration = range(h, 0, q);
  const auto heldout = range(h, q, 2 * q);
  // Blend sources come from the remaining half; small holdouts reuse all of it.
  auto pool = range(h, 2 * q, h.size());
  if (pool.size() < cfg.defenses.strip.perturbations) pool = h;
  const auto probes = head(data.malicious, cfg.defenses.strip_probes);
  const auto r = strip(model, probes, calibration, heldout, pool, cfg.defenses.strip);
  DefenseOutput o;
  o.section = {{"perturbations", cfg.defenses.strip.perturbations},
               {"frr", r.frr},
               {"boundary", r.boundary},
               {"probes", probes.size()},
               {"calibration", calibration.size()},
               {"detection_rate", r.detection_rate},
               {"heldout_flag_rate", r.heldout_flag_rate},
               {"histograms", {{"genuine", hist_json(r.genuine_hist)}, {"probe", hist_json(r.probe_hist)}}}};
  o.table.push_back({"set", "entropy", "flagged"});
  for (double e : r.calibration_entropies) o.table.push_back({"calibration", fmt(e), fmt(e < r.boundary)});
  for (std::size_t i = 0; i < r.probe_entropies.size(); ++i)
    o.table.push_back({"probe", fmt(r.probe_entropies[i]), fmt(bool(r.probe_flagged[i]))});
  return o;
}

DefenseOutput run_cleanse(const ExperimentConfig& cfg, const Model& model, const ExperimentData& data) {
  const auto v = neural_cleanse(model, data.holdout, data.test, cfg.defenses.cleanse, cfg.defenses.cleanse_labels);
  const int target = policy_target(cfg.poison.policy);
  MadReport mad;
  if (v.labels.size() >= 3) mad = mad_outliers(v.l1_norms, cfg.defenses.mad_threshold);
  std::vector<int> flagged;
  for (int i : mad.flagged) flagged.push_back(v.labels[static_cast<std::size_t>(i)]);
  DefenseOutput o;
  o.table.push_back({"label", "l1", "hit_rate", "reverse_asr", "anomaly_index", "flagged", "converged"});
  Json labels = Json::array();
  Json tgt = nullptr;
  for (std::size_t i = 0; i < v.labels.size(); ++i) {
    const double idx = mad.indices.empty() ? std::numeric_limits<double>::quiet_NaN() : mad.indices[i];
    const bool fl = std::find(flagged.begin(), flagged.end(), v.labels[i]) != flagged.end();
    const auto& t = v.triggers[i];
    Json row = {{"label", v.labels[i]},        {"l1", v.l1_norms[i]},       {"hit_rate", t.hit_rate},
                {"reverse_asr", v.reverse_asr[i]}, {"anomaly_index", idx},      {"flagged", fl},
                {"converged", t.converged},     {"lambda", t.lambda},         {"rejected_steps", t.rejected_steps}};
    if (v.labels[i] == target) tgt = row;
    labels.push_back(row);
    o.table.push_back({fmt(v.labels[i]), fmt(v.l1_norms[i]), fmt(t.hit_rate), fmt(v.reverse_asr[i]), fmt(idx), fmt(fl),
                       fmt(t.converged)});
  }
  TensorFile tf;
  tf.metadata["target"] = std::to_string(target);
  for (std::size_t i = 0; i < v.labels.size(); ++i) {
    const std::string l = std::to_string(v.labels[i]);
    tf.metadata["l1." + l] = fmt(v.l1_norms[i]);
    tf.tensors.emplace_back("mask_" + l, v.triggers[i].mask);
    tf.tensors.emplace_back("pattern_" + l, v.triggers[i].pattern);
  }
  o.tensors = std::move(tf);
  o.section = {{"labels", labels},         {"median_l1", mad.median}, {"mad", mad.mad},
               {"flagged", flagged},       {"target", target},
               {"target_flagged", std::find(flagged.begin(), flagged.end(), target) != flagged.end()},
               {"target_result", tgt}};
  return o;
}

DefenseOutput run_nnoculation(const ExperimentConfig& cfg, const Model& model, const ExperimentData& data) {
  const auto r = nnoculation_stage1(model, data.holdout, data.test, data.malicious, cfg.defenses.nnoculation);
  DefenseOutput o;
  o.table.push_back({"fraction", "ca", "asr", "ca_drop", "success"});
  Json pts = Json::array();
  bool any = false;
  for (const auto& p : r.points) {
    pts.push_back({{"fraction", p.fraction}, {"ca", p.ca}, {"asr", p.asr}, {"ca_drop", p.ca_drop}, {"success", p.success}});
    o.table.push_back({fmt(p.fraction), fmt(p.ca), fmt(p.asr), fmt(p.ca_drop), fmt(p.success)});
    any = any || p.success;
  }
  o.section = {{"baseline", {{"ca", r.baseline.ca}, {"asr", r.baseline.asr}}},
               {"validation", data.holdout.size()},
               {"points", pts},
               {"any_success", any}};
  return o;
}

DefenseOutput run_profile(const ExperimentConfig& cfg, const Model& model, const ExperimentData& data) {
  const auto mal = head(data.malicious, cfg.defenses.profile_probes);
  const auto clean = head(data.test, cfg.defenses.profile_probes);
  const auto pm = activation_profile(model, mal, cfg.defenses.profile_k_sigma);
  const auto pc = activation_profile(model, clean, cfg.defenses.profile_k_sigma);
  auto summary = [](const ActivationProfile& p) {
    return Json{{"peaks", p.peaks}, {"peak_count", p.peaks.size()}, {"threshold", p.threshold},
                {"mean", p.profile_mean}, {"std", p.profile_std}};
  };
  DefenseOutput o;
  o.section = {{"neurons", pm.mean_activation.size()}, {"probes", mal.size()},
               {"malicious", summary(pm)},             {"clean", summary(pc)}};
  o.table.push_back({"neuron", "malicious_mean", "clean_mean", "malicious_peak"});
  for (std::size_t i = 0; i < pm.mean_activation.size(); ++i) {
    const bool peak = std::find(pm.peaks.begin(), pm.peaks.end(), i) != pm.peaks.end();
    o.table.push_back({fmt(i), fmt(pm.mean_activation[i]), fmt(pc.mean_activation[i]), fmt(peak)});
  }
  return o;
}

void check_defense_name(const std::string& name) {
  const auto& n = defense_names();
  if (std::find(n.begin(), n.end(), name) != n.end()) return;
  std::string valid;
  for (const auto& v : n) valid += (valid.empty() ? "" : ", ") + v;
  throw ConfigError("unknown defense '" + name + "' (valid: " + valid + ")");
}

}  // namespace

DefenseOutput run_defense(const std::string& name, const ExperimentConfig& cfg, const Model& model,
                          const ExperimentData& data) {
  check_defense_name(name);
  DefenseOutput o;
  if (name == "spectral") o = run_spectral(cfg, model, data);
  if (name == "activation-clustering") o = run_clustering(cfg, model, data);
  if (name == "suppression") o = run_suppression(cfg, model, data);
  if (name == "strip") o = run_strip(cfg, model, data);
  if (name == "neural-cleanse") o = run_cleanse(cfg, model, data);
  if (name == "nnoculation") o = run_nnoculation(cfg, model, data);
  if (name == "activation-profile") o = run_profile(cfg, model, data);
  Json section = {{"status", "ok"}};
  section.update(o.section);
  o.section = std::move(section);
  return o;
}

StealthAudit stealth_audit(const ExperimentConfig& cfg, const ExperimentData& data) {
  const int target = policy_target(cfg.poison.policy);
  const auto* one = std::get_if<OneToOne>(&cfg.poison.policy);
  std::vector<Image> orig, trig;
  StealthAudit a;
  a.table.push_back({"id", "label", "trigger_size_pct", "phash_similarity_pct", "dhash_similarity_pct"});
  for (std::size_t i = 0; i < data.test.size() && orig.size() < cfg.audit_samples; ++i) {
    const int y = data.test.labels[i];
    if (one ? y != one->source : y == target) continue;
    orig.push_back(data.test.images[i]);
    trig.push_back(apply_trigger(data.test, i, cfg.poison.trigger));
    const auto p = pair_stealth(orig.back(), trig.back());
    a.table.push_back({fmt(static_cast<std::size_t>(data.test.ids[i])), fmt(y), fmt(p.trigger_size_pct),
                       fmt(p.phash_similarity_pct), fmt(p.dhash_similarity_pct)});
  }
  const auto r = stealth_report(orig, trig);
  a.table.push_back({"mean", "", fmt(r.trigger_size_pct), fmt(r.phash_similarity_pct), fmt(r.dhash_similarity_pct)});
  a.summary = {{"trigger", cfg.poison.trigger.name},
               {"samples", orig.size()},
               {"trigger_size_pct", r.trigger_size_pct},
               {"phash_similarity_pct", r.phash_similarity_pct},
               {"dhash_similarity_pct", r.dhash_similarity_pct}};
  return a;
}

// ---- pipeline -----------------------------------------------------------------

Json run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  using Clock = std::chrono::steady_clock;
  const auto t_start = Clock::now();
  auto log = [&](const std::string& m) {
    if (opts.log) opts.log(cfg.name + ": " + m);
  };
  const bool write = !opts.out_dir.empty();
  if (write) std::filesystem::create_directories(opts.out_dir);

  Json report;
  report["name"] = cfg.name;
  report["config_hash"] = cfg.hash;
  report["seed"] = cfg.seed;
  Json config = Json::object();
  for (const auto& [k, v] : cfg.source.values) config[k] = v;
  report["config"] = config;
  report["status"] = "complete";
  report["failures"] = Json::array();
  Json timing = Json::object();

  auto fail = [&](const std::string& stage, const std::string& what) {
    report["status"] = "partial";
    report["failures"].push_back({{"stage", stage}, {"error", what}});
    log(stage + " failed: " + what);
  };
  auto timed = [&](const std::string& stage, auto&& fn) -> bool {
    const auto t0 = Clock::now();
    bool ok = true;
    try {
      fn();
    } catch (const std::exception& e) {
      fail(stage, e.what());
      ok = false;
    }
    timing[stage] = std::chrono::duration<double>(Clock::now() - t0).count();
    return ok;
  };

  ExperimentData data;
  std::optional<Model> model;
  log("preparing data");
  const bool have_data = timed("data", [&] { data = prepare_data(cfg, opts.data_dir); });
  if (have_data) {
    report["dataset"] = {{"kind", cfg.dataset.kind == DatasetKind::Faces ? "faces" : "mnist"},
                         {"train", data.train.size()},
                         {"val", data.val.size()},
                         {"test", data.test.size()},
                         {"holdout", data.holdout.size()},
                         {"malicious_test", data.malicious.size()},
                         {"poisoned", data.poisoned_ids.size()}};
    if (write) {
      std::ofstream ids(opts.out_dir / "poisoned_ids.txt");
      for (auto id : data.poisoned_ids) ids << id << "\n";
    }
    log("stealth audit");
    timed("audit", [&] {
      auto a = stealth_audit(cfg, data);
      report["stealth"] = a.summary;
      if (write) write_csv(a.table, opts.out_dir / "stealth.csv");
    });
    log("training");
    timed("train", [&] {
      TrainHistory h;
      model = train_model(cfg, data, false, &h);
      const auto m = evaluate(*model, data.test, data.malicious);
      Json epochs = Json::array();
      for (const auto& e : h.epochs)
        epochs.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"val_accuracy", e.val_accuracy}});
      report["attack"] = {{"trigger", cfg.poison.trigger.name},
                          {"policy", policy_name(cfg.poison.policy)},
                          {"target", policy_target(cfg.poison.policy)},
                          {"pp", cfg.poison.pp},
                          {"ca", m.ca},
                          {"asr", m.asr},
                          {"best_epoch", h.best_epoch},
                          {"best_val_accuracy", h.best_val_accuracy},
                          {"epochs", epochs}};
      log("CA " + fmt(m.ca) + " ASR " + fmt(m.asr));
      if (write) save_model(*model, (opts.out_dir / "model.bdlm").string());
    });
    if (model && cfg.clean_twin) {
      log("training clean twin");
      timed("clean_twin", [&] {
        const Model twin = train_model(cfg, data, true);
        report["attack"]["clean_twin_ca"] = accuracy(twin, data.test);
      });
    }
  }

  Json defenses = Json::object();
  for (const auto& name : cfg.defenses.enabled) {
    if (!model) {
      defenses[name] = {{"status", "not-run"}, {"error", "no trained model"}};
      continue;
    }
    log("defense " + name);
    const bool ok = timed("defense:" + name, [&] {
      auto out = run_defense(name, cfg, *model, data);
      defenses[name] = out.section;
      if (write) {
        write_csv(out.table, opts.out_dir / ("defense_" + name + ".csv"));
        if (out.tensors) write_tensor_file((opts.out_dir / "reversed_triggers.bdlm").string(), *out.tensors);
      }
    });
    if (!ok) defenses[name] = {{"status", "failed"}, {"error", report["failures"].back()["error"]}};
  }
  report["defenses"] = defenses;
  timing["total"] = std::chrono::duration<double>(Clock::now() - t_start).count();
  report["provenance"] = {{"config_hash", cfg.hash}, {"version", BDLAB_VERSION}, {"wall_time_s", timing}};

  if (write) {
    std::ofstream(opts.out_dir / "report.json") << report.dump(2) << "\n";
    report_tables(report, opts.out_dir);
  }
  return report;
}

DefenseOutput defend(const std::filesystem::path& model_path, const std::string& defense,
                     const std::optional<ExperimentConfig>& cfg, const std::filesystem::path& data_dir) {
  check_defense_name(defense);
  Model model = load_model(model_path.string());
  ExperimentConfig ec;
  if (cfg) {
    ec = *cfg;
  } else {
    auto it = model.metadata.find("experiment_config");
    if (it == model.metadata.end())
      throw ConfigError("model " + model_path.string() + " carries no experiment config; pass one explicitly");
    ec = experiment_from_config(decode_config(it->second));
  }
  ExperimentData data = prepare_data(ec, data_dir, false);
  return run_defense(defense, ec, model, data);
}

Json strip_timing(Json report) {
  if (report.contains("provenance")) report["provenance"].erase("wall_time_s");
  return report;
}

// ---- tables -------------------------------------------------------------------

const std::vector<std::string>& stealth_table_columns() {
  static const std::vector<std::string> c = {"experiment", "trigger", "samples", "trigger_size_pct",
                                             "phash_similarity_pct", "dhash_similarity_pct"};
  return c;
}

const std::vector<std::string>& attack_table_columns() {
  static const std::vector<std::string> c = {"experiment", "dataset", "trigger", "policy", "target",
                                             "pp", "ca", "asr", "clean_twin_ca"};
  return c;
}

const std::vector<std::string>& defense_table_columns() {
  static const std::vector<std::string> c = {
      "experiment",          "spectral_auroc",       "ac_detection_rate",  "suppression_best_sasr",
      "suppression_best_ca", "suppression_success",  "strip_detection_rate", "strip_heldout_flag_rate",
      "nc_target_flagged",   "nc_target_reverse_asr", "nc_target_anomaly_index", "nnoc_fractions",
      "nnoc_asr",            "nnoc_ca",              "nnoc_success",       "profile_peaks"};
  return c;
}

namespace {

std::string cell(const Json& j) {
  if (j.is_null()) return "nan";
  if (j.is_boolean()) return fmt(j.get<bool>());
  if (j.is_number_integer() || j.is_number_unsigned()) return j.dump();
  if (j.is_number()) return fmt(j.get<double>());
  if (j.is_string()) return j.get<std::string>();
  return j.dump();
}

// Looks up a dotted path; null when any part is missing.
Json at_path(const Json& j, std::initializer_list<const char*> path) {
  const Json* cur = &j;
  for (const char* p : path) {
    if (!cur->is_object() || !cur->contains(p)) return nullptr;
    cur = &(*cur)[p];
  }
  return *cur;
}

}  // namespace

std::vector<std::filesystem::path> report_tables(const Json& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  const std::string name = report.value("name", "experiment");
  auto emit = [&](const CsvTable& t, const std::string& file) {
    write_csv(t, dir / file);
    written.push_back(dir / file);
  };

  {
    CsvTable t{stealth_table_columns()};
    const Json s = at_path(report, {"stealth"});
    if (s.is_null()) {
      t.push_back({name, "failed", "failed", "failed", "failed", "failed"});
    } else {
      t.push_back({name, cell(s["trigger"]), cell(s["samples"]), cell(s["trigger_size_pct"]),
                   cell(s["phash_similarity_pct"]), cell(s["dhash_similarity_pct"])});
    }
    emit(t, "table_stealth.csv");
  }
  {
    CsvTable t{attack_table_columns()};
    const Json a = at_path(report, {"attack"});
    const std::string ds = cell(at_path(report, {"dataset", "kind"}));
    if (a.is_null()) {
      t.push_back({name, ds, "failed", "failed", "failed", "failed", "failed", "failed", "failed"});
    } else {
      t.push_back({name, ds, cell(a["trigger"]), cell(a["policy"]), cell(a["target"]), cell(a["pp"]), cell(a["ca"]),
                   cell(a["asr"]), a.contains("clean_twin_ca") ? cell(a["clean_twin_ca"]) : "skipped"});
    }
    emit(t, "table_attack.csv");
  }
  {
    const Json d = at_path(report, {"defenses"});
    std::vector<std::string> row{name};
    // Returns the section if it ran, otherwise the marker to print in its columns.
    auto section = [&](const char* key, std::string& marker) -> Json {
      const Json s = d.is_object() && d.contains(key) ? d[key] : Json(nullptr);
      if (s.is_null()) marker = "skipped";
      else if (s.value("status", "") != "ok") marker = "failed";
      else marker.clear();
      return s;
    };
    auto add = [&](const std::string& marker, const Json& v) { row.push_back(marker.empty() ? cell(v) : marker); };
    std::string m;
    Json s = section("spectral", m);
    add(m, m.empty() ? s["auroc"] : Json());
    s = section("activation-clustering", m);
    add(m, m.empty() ? s["detection_rate"] : Json());
    s = section("suppression", m);
    add(m, m.empty() ? s["best_sasr"] : Json());
    add(m, m.empty() ? s["best_ca"] : Json());
    add(m, m.empty() ? s["suppressed"] : Json());
    s = section("strip", m);
    add(m, m.empty() ? s["detection_rate"] : Json());
    add(m, m.empty() ? s["heldout_flag_rate"] : Json());
    s = section("neural-cleanse", m);
    add(m, m.empty() ? s["target_flagged"] : Json());
    add(m, m.empty() ? at_path(s, {"target_result", "reverse_asr"}) : Json());
    add(m, m.empty() ? at_path(s, {"target_result", "anomaly_index"}) : Json());
    s = section("nnoculation", m);
    if (m.empty()) {
      std::string fr, asr, ca;
      for (const auto& p : s["points"]) {
        const std::string sep = fr.empty() ? "" : "/";
        fr += sep + cell(p["fraction"]);
        asr += sep + cell(p["asr"]);
        ca += sep + cell(p["ca"]);
      }
      row.insert(row.end(), {fr, asr, ca, cell(s["any_success"])});
    } else {
      row.insert(row.end(), 4, m);
    }
    s = section("activation-profile", m);
    add(m, m.empty() ? at_path(s, {"malicious", "peak_count"}) : Json());
    emit(CsvTable{defense_table_columns(), row}, "table_defenses.csv");

    if (d.is_object()) {
      for (const auto& [def, sec] : d.items()) {
        if (!sec.is_object() || !sec.contains("histograms")) continue;
        for (const auto& [series, h] : sec["histograms"].items()) {
          CsvTable t{{"bin_lo", "bin_hi", "count"}};
          const double lo = h["lo"].get<double>(), hi = h["hi"].get<double>();
          const auto& counts = h["counts"];
          const double w = counts.empty() ? 0.0 : (hi - lo) / static_cast<double>(counts.size());
          for (std::size_t b = 0; b < counts.size(); ++b)
            t.push_back({fmt(lo + w * static_cast<double>(b)), fmt(lo + w * static_cast<double>(b + 1)), cell(counts[b])});
          emit(t, "hist_" + def + "_" + series + ".csv");
        }
      }
    }
  }
  return written;
}

void write_csv(const CsvTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  for (const auto& row : table) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      const auto& f = row[i];
      if (f.find_first_of(",\"\n\r") == std::string::npos) {
        out << f;
      } else {
        out << '"';
        for (char c : f) out << (c == '"' ? "\"\"" : std::string(1, c));
        out << '"';
      }
    }
    out << '\n';
  }
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string s = ss.str();
  CsvTable t;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (quoted) {
      if (c == '"' && i + 1 < s.size() && s[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n') {
      row.push_back(std::move(field));
      field.clear();
      t.push_back(std::move(row));
      row.clear();
      any = false;
    } else if (c != '\r') {
      field += c;
      any = true;
    }
  }
  if (quoted) throw FormatError("unterminated quoted CSV field", s.size());
  if (any) {
    row.push_back(std::move(field));
    t.push_back(std::move(row));
  }
  return t;
}

}  // namespace bdlab
