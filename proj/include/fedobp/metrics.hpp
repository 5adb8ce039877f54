#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "fedobp/data.hpp"
#include "fedobp/decouple.hpp"
#include "fedobp/model.hpp"
#include "fedobp/rng.hpp"

namespace fedobp {

struct RoundMetrics {
  int round = 0;
  double mean_acc = 0.0;
  double std_acc = 0.0;  // population std over clients
  std::vector<double> per_client_acc;
  // Layout order; fractions of the round's personalized indices per layer.
  std::vector<std::pair<std::string, double>> personalized_fraction_by_layer;
  double downlink_ratio = 0.0;
  double train_loss_mean = 0.0;

  friend bool operator==(const RoundMetrics&, const RoundMetrics&) = default;
};

struct RunRecord {
  RngSeed seed = 0;
  std::vector<RoundMetrics> rounds;

  double final_mean_acc() const;
  friend bool operator==(const RunRecord&, const RunRecord&) = default;
};

struct RunSummary {
  std::string config_hash;
  std::vector<RunRecord> runs;  // sorted by seed
  double final_mean = 0.0;
  double final_std = 0.0;  // sample std; 0 for a single run

  friend bool operator==(const RunSummary&, const RunSummary&) = default;
};

// Fraction of test samples whose argmax logit (lowest class on ties) equals
// the label.
double evaluate_client(const ParamVector& params, const ModelSpec& spec, const Dataset& dataset,
                       const ClientDataset& client);

// Share of the personalized indices falling in each layer; all zeros when the
// personalized set is empty.
std::vector<std::pair<std::string, double>> layer_distribution(const MaskPartition& mask,
                                                               const LayerLayout& layout);

// Same, pooled over several masks (e.g. all clients of one round).
std::vector<std::pair<std::string, double>> layer_distribution(
    const std::vector<MaskPartition>& masks, const LayerLayout& layout);

RunSummary summarize_runs(std::vector<RunRecord> runs, std::string config_hash = {});

// metrics.csv: round,mean_acc,std_acc,downlink_ratio,train_loss_mean,frac_<layer>...
void write_metrics_csv(std::ostream& os, const std::vector<RoundMetrics>& rounds);
// Per-client accuracies are left empty; see read_per_client_csv.
std::vector<RoundMetrics> read_metrics_csv(std::istream& is);

// per_client.csv: round,client_id,accuracy
void write_per_client_csv(std::ostream& os, const std::vector<RoundMetrics>& rounds);
// Fills per_client_acc of the matching rounds.
void read_per_client_csv(std::istream& is, std::vector<RoundMetrics>& rounds);

// Shortest text that parses back to the same double.
std::string format_double(double v);

}  // namespace fedobp
