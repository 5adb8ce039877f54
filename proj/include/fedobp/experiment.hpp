#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fedobp/checkpoint.hpp"
#include "fedobp/data.hpp"
#include "fedobp/federation.hpp"
#include "fedobp/metrics.hpp"

namespace fedobp {

struct DatasetConfig {
  std::string source = "synthetic";  // "synthetic" or "idx"
  std::filesystem::path images;
  std::filesystem::path labels;
  std::size_t classes = 10;
  std::size_t per_class = 30;
  std::size_t channels = 1;
  std::size_t height = 20;
  std::size_t width = 20;
  double noise = 0.3;
  RngSeed seed = 0;  // synthetic generator seed, independent of run seeds

  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

// Declarative description of one experiment. The text form is line-oriented
// `key = value` with dotted keys and `#` comments.
struct ExperimentConfig {
  DatasetConfig dataset;
  std::size_t n_clients = 20;
  double alpha = 0.1;
  double test_fraction = 0.25;
  std::size_t min_per_client = 2;
  int rounds = 50;
  double gamma = 1.0;
  Hyper hyper{0.05, 1, 8};
  MethodSpec method = MethodSpec::fedobp(0.99);
  std::vector<std::size_t> conv_channels{8, 16};
  std::size_t kernel_size = 5;
  PoolKind pool = PoolKind::kMax2x2;
  std::vector<std::size_t> fc_widths{64};
  std::vector<RngSeed> seeds{1};
  std::filesystem::path output_dir = "out";
  std::vector<double> sweep_q{0.1, 0.3, 0.5, 0.7, 0.9, 0.99, 0.999, 1.0};
  std::vector<ScoreKind> sweep_scores{ScoreKind::kFedObp, ScoreKind::kGradient,
                                      ScoreKind::kFisher};
  bool export_masks = false;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
  // Model shape for a dataset of the given geometry.
  ModelSpec model_spec(const Dataset& dataset) const;
};

ExperimentConfig parse_config(std::istream& is);
ExperimentConfig load_config(const std::filesystem::path& path);
// Canonical text; parse_config(serialize_config(c)) reproduces c.
std::string serialize_config(const ExperimentConfig& config);
// FNV-1a 64 of the canonical text, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

Dataset load_dataset(const DatasetConfig& config);

// Partition for one run seed, train/test split applied.
PartitionPlan make_partition(const ExperimentConfig& config, const Dataset& dataset, RngSeed seed);

struct RunOutput {
  RunRecord record;
  std::vector<CommRecord> comm;
  Checkpoint checkpoint;
  // Largest |K(u)| among the final round's participants.
  std::size_t final_personalized_count = 0;
};

// One seed of T rounds. Mask rows go to mask_sink when it is non-null.
RunOutput run_single(const ExperimentConfig& config, const Dataset& dataset, RngSeed seed,
                     int threads, std::ostream* mask_sink = nullptr);

// Writes output_dir/partition_seed_<s>.csv for each seed; returns the paths.
std::vector<std::filesystem::path> cmd_partition(const ExperimentConfig& config);

// Runs every seed and writes config.txt, summary.json and per-seed
// metrics.csv, per_client.csv, comm.csv, checkpoint.bin (and masks.csv).
RunSummary cmd_run(const ExperimentConfig& config, int threads);

struct SweepRow {
  double q = 0.0;
  ScoreKind score = ScoreKind::kFedObp;
  double final_mean_acc = 0.0;  // averaged over seeds
  std::size_t personalized_count = 0;
};

// One run per (score, q) over all seeds; writes output_dir/sweep.csv.
std::vector<SweepRow> cmd_sweep(const ExperimentConfig& config, int threads);

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows);
std::vector<SweepRow> read_sweep_csv(std::istream& is);

// Prints the per-method summary table, peak q per score and the final-round
// layer distribution found under `dir`.
void cmd_report(const std::filesystem::path& dir, std::ostream& out);

}  // namespace fedobp
