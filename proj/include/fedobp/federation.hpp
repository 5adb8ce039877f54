#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedobp/data.hpp"
#include "fedobp/decouple.hpp"
#include "fedobp/importance.hpp"
#include "fedobp/metrics.hpp"
#include "fedobp/model.hpp"
#include "fedobp/rng.hpp"

namespace fedobp {

enum class MethodKind { kFedObp, kScoreDecouple, kFixedLayer, kFedAvg, kLocalOnly };

struct MethodSpec {
  MethodKind kind = MethodKind::kFedAvg;
  ScoreKind score = ScoreKind::kFedObp;  // kFedObp / kScoreDecouple only
  double q = 1.0;                        // kFedObp / kScoreDecouple only
  NormMode norm;                         // kFedObp / kScoreDecouple only
  std::set<std::string> personalized_layers;  // kFixedLayer only

  static MethodSpec fedobp(double q, NormMode norm = {});
  static MethodSpec score_decouple(ScoreKind score, double q, NormMode norm = {});
  static MethodSpec fixed_layer(std::set<std::string> layers);
  static MethodSpec fedavg();
  static MethodSpec local_only();

  void validate() const;
  // Stable human-readable name, e.g. "fedobp(q=0.99,norm=none)".
  std::string label() const;
  // The score actually used, or nullopt for methods without a score.
  std::optional<ScoreKind> effective_score() const;
};

struct ClientState {
  int client_id = 0;
  ParamVector local_model;                // theta_i, last locally trained model
  std::optional<ParamVector> prev_merged; // merged model of the last participation
  ClientDataset data;
  int rounds_participated = 0;
  MaskPartition last_mask;                // mask of the last participation
};

struct ServerState {
  ParamVector global_model;
  std::map<int, ParamVector> stored_locals;  // last upload per client
  int round = 0;                             // rounds completed
};

struct Hyper {
  double eta = 0.01;
  int epochs = 5;
  std::size_t batch_size = 32;
};

struct RoundConfig {
  ModelSpec spec;
  MethodSpec method;
  Hyper hyper;
  double gamma = 0.1;
  RngSeed seed = 0;
  int threads = 1;
};

struct CommRecord {
  int round = 0;
  int client_id = 0;
  std::size_t downlink_params = 0;
  std::size_t uplink_params = 0;
  std::size_t total_params = 0;

  friend bool operator==(const CommRecord&, const CommRecord&) = default;
};

struct RoundReport {
  RoundMetrics metrics;
  std::vector<int> selected;
  std::vector<CommRecord> comm;
  std::vector<MaskPartition> masks;  // aligned with `selected`
};

// What the server sends to one client in one round.
struct Downlink {
  MaskPartition mask;
  std::vector<double> values;  // global values on mask.shared, in index order
  bool client_side_mask = false;  // mask still to be chosen by the client
};

// Fresh server and client states: every local model and stored copy starts at
// the initial global model.
std::pair<ServerState, std::vector<ClientState>> init_federation(const ParamVector& initial,
                                                                 const PartitionPlan& plan,
                                                                 const MethodSpec& method);

// Uniform sample without replacement of max(1, round(gamma * n)) clients,
// sorted ascending.
std::vector<int> sample_clients(std::size_t n_clients, double gamma, int round, RngSeed seed);

Downlink server_decouple(const ServerState& server, int client_id, const MethodSpec& method);

// Rebuilds the merged model from the previous local model and a downlink.
ParamVector apply_downlink(const ParamVector& local_prev, const Downlink& downlink);

// Sample-count weighted average: sum_i (m_i / m) * theta_i.
ParamVector aggregate(std::span<const ParamVector> models, std::span<const std::size_t> counts);

// Runs round server.round + 1 in place.
RoundReport run_round(ServerState& server, std::vector<ClientState>& clients,
                      const Dataset& dataset, const RoundConfig& config);

// One full-participation round where every client starts from a shared model
// pre-trained on client 0's data and runs `epochs` full-batch steps. Returns
// || theta_g - theta_start + eta * epochs * grad L(theta_start; D) ||_2.
double verify_gradient_step_approx(const ModelSpec& spec, const Dataset& dataset,
                                   std::size_t n_clients, double eta, int epochs, RngSeed seed);

// comm.csv: round,client_id,downlink_params,uplink_params,total_params
void write_comm_csv(std::ostream& os, const std::vector<CommRecord>& records);
std::vector<CommRecord> read_comm_csv(std::istream& is);

// Runs fn(i) for i in [0, n) on up to `threads` workers; rethrows the first
// failure.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace fedobp
