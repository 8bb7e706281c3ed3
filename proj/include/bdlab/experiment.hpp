#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bdlab/config.hpp"
#include "bdlab/dataset.hpp"
#include "bdlab/defense_recon.hpp"
#include "bdlab/defense_stat.hpp"
#include "bdlab/model.hpp"
#include "bdlab/model_io.hpp"
#include "bdlab/poison.hpp"
#include "bdlab/trainer.hpp"

namespace bdlab {

using Json = nlohmann::ordered_json;

enum class DatasetKind { Mnist, Faces };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::Mnist;
  std::size_t train_count = 12000;   // MNIST training pool
  std::size_t test_count = 2000;     // MNIST test images scored for CA/ASR
  std::size_t holdout_count = 2000;  // MNIST test images reserved for defenders
  double val_fraction = 0.1;         // share of the poisoned pool used for checkpoint selection
  int classes = 10;                  // faces
  std::size_t per_class = 100;       // faces; split 70/15/15 into pool/test/holdout
  std::size_t pretrain_count = 12000;  // MNIST images scanned for the digits 0-4 body
  int pretrain_epochs = 2;
};

struct ModelSpec {
  std::vector<std::size_t> widths = {16, 32, 64};
  std::size_t hidden = 64;
  double dropout = 0.25;
};

// Defense names in report order.
const std::vector<std::string>& defense_names();

struct DefenseSettings {
  std::vector<std::string> enabled;
  int spectral_clusters = 10;
  std::size_t spectral_bins = 30;
  ClusteringConfig clustering;
  std::vector<double> fuzz_levels = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  std::size_t fuzz_votes = 5;
  std::size_t fuzz_clean_per_class = 100;
  std::size_t fuzz_probes = 200;
  double sasr_limit = 20.0;
  double fuzz_max_ca_drop = 5.0;
  StripConfig strip;
  std::size_t strip_probes = 100;
  CleanseConfig cleanse;
  std::vector<int> cleanse_labels;  // empty = every label
  double mad_threshold = 2.0;
  NnoculationConfig nnoculation;
  std::size_t profile_probes = 100;
  double profile_k_sigma = 2.0;

  bool is_enabled(const std::string& name) const;
};

struct ExperimentConfig {
  std::string name;
  std::uint64_t seed = 1;
  DatasetSpec dataset;
  ModelSpec model;
  PoisonSpec poison;
  TrainConfig train;
  bool clean_twin = false;
  std::size_t audit_samples = 100;
  DefenseSettings defenses;
  Config source;
  std::string hash;
};

// Throws ValidationError listing every bad or unknown field.
ExperimentConfig experiment_from_config(const Config& cfg);

// MNIST IDX files are read from this directory: $BDLAB_DATA_DIR, else /root/data/mnist.
std::filesystem::path default_data_dir();

struct ExperimentData {
  LabeledDataset pool;       // poisoned training pool
  LabeledDataset clean_pool; // the same pool before poisoning
  LabeledDataset train;
  LabeledDataset val;
  LabeledDataset test;
  LabeledDataset holdout;    // clean images available to defenders
  LabeledDataset malicious;  // triggered test probes
  std::vector<std::uint64_t> poisoned_ids;
  std::optional<Model> body;  // pretrained digits body for face experiments
};

// Face experiments also pretrain the digits body unless `pretrain` is false.
ExperimentData prepare_data(const ExperimentConfig& cfg, const std::filesystem::path& data_dir, bool pretrain = true);

// Trains on data.train (or, with clean = true, on the unpoisoned split of the
// same pool). Face experiments fine-tune the pretrained body.
Model train_model(const ExperimentConfig& cfg, const ExperimentData& data, bool clean, TrainHistory* history = nullptr);

// Rows of a CSV file; the first row is the header.
using CsvTable = std::vector<std::vector<std::string>>;

struct DefenseOutput {
  Json section;
  CsvTable table;
  // Reversed masks and patterns from neural-cleanse, one pair per label.
  std::optional<TensorFile> tensors;
};

// Runs one defense against a trained model. Throws ConfigError for unknown names.
DefenseOutput run_defense(const std::string& name, const ExperimentConfig& cfg, const Model& model,
                          const ExperimentData& data);

struct StealthAudit {
  Json summary;
  CsvTable table;  // per sample, plus a final "mean" row
};
StealthAudit stealth_audit(const ExperimentConfig& cfg, const ExperimentData& data);

struct RunOptions {
  std::filesystem::path data_dir = default_data_dir();
  std::filesystem::path out_dir;  // empty: nothing written
  std::function<void(const std::string&)> log;
};

// Full pipeline. Stage failures are recorded in the report ("failures",
// status "partial") rather than thrown; a report with status "complete" has
// every enabled defense section. Writes model.bdlm, poisoned_ids.txt,
// stealth.csv, defense_<name>.csv, reversed_triggers.bdlm, report.json and the
// summary tables.
Json run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

// Standalone defense against a saved model; the experiment config is read
// from the model metadata unless `cfg` is given.
DefenseOutput defend(const std::filesystem::path& model_path, const std::string& defense,
                     const std::optional<ExperimentConfig>& cfg = std::nullopt,
                     const std::filesystem::path& data_dir = default_data_dir());

// Column names of the summary tables, fixed.
const std::vector<std::string>& stealth_table_columns();
const std::vector<std::string>& attack_table_columns();
const std::vector<std::string>& defense_table_columns();

// Writes table_stealth.csv, table_attack.csv, table_defenses.csv and one
// hist_<defense>_<series>.csv per histogram; returns the paths written.
// Missing report parts are emitted as "skipped" (disabled) or "failed".
std::vector<std::filesystem::path> report_tables(const Json& report, const std::filesystem::path& dir);

void write_csv(const CsvTable& table, const std::filesystem::path& path);
CsvTable read_csv(const std::filesystem::path& path);

// Report with wall-clock fields removed, for reproducibility comparisons.
Json strip_timing(Json report);

}  // namespace bdlab
