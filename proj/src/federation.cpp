#include "fedobp/federation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <istream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "fedobp/training.hpp"

namespace fedobp {

// ---------------------------------------------------------------------------
// MethodSpec
// ---------------------------------------------------------------------------

MethodSpec MethodSpec::fedobp(double q, NormMode norm) {
  MethodSpec m;
  m.kind = MethodKind::kFedObp;
  m.score = ScoreKind::kFedObp;
  m.q = q;
  m.norm = norm;
  return m;
}

MethodSpec MethodSpec::score_decouple(ScoreKind score, double q, NormMode norm) {
  MethodSpec m = fedobp(q, norm);
  m.kind = MethodKind::kScoreDecouple;
  m.score = score;
  return m;
}

MethodSpec MethodSpec::fixed_layer(std::set<std::string> layers) {
  MethodSpec m;
  m.kind = MethodKind::kFixedLayer;
  m.personalized_layers = std::move(layers);
  return m;
}

MethodSpec MethodSpec::fedavg() { return MethodSpec{}; }

MethodSpec MethodSpec::local_only() {
  MethodSpec m;
  m.kind = MethodKind::kLocalOnly;
  return m;
}

void MethodSpec::validate() const {
  if (kind == MethodKind::kFedObp || kind == MethodKind::kScoreDecouple) {
    Quantile{q};
    norm.validate();
  }
  if (kind == MethodKind::kFedObp && score != ScoreKind::kFedObp) {
    throw std::invalid_argument("method: fedobp always uses the fedobp score");
  }
}

std::optional<ScoreKind> MethodSpec::effective_score() const {
  if (kind == MethodKind::kFedObp || kind == MethodKind::kScoreDecouple) return score;
  return std::nullopt;
}

std::string MethodSpec::label() const {
  std::ostringstream os;
  auto norm_text = [&] {
    return to_string(norm.kind) + (norm.cls_only ? "+cls" : "");
  };
  switch (kind) {
    case MethodKind::kFedObp:
      os << "fedobp(q=" << format_double(q) << ",norm=" << norm_text() << ")";
      break;
    case MethodKind::kScoreDecouple:
      os << "score(" << to_string(score) << ",q=" << format_double(q) << ",norm=" << norm_text()
         << ")";
      break;
    case MethodKind::kFixedLayer: {
      os << "fixed(";
      bool first = true;
      for (const std::string& l : personalized_layers) {
        os << (first ? "" : "+") << l;
        first = false;
      }
      os << ")";
      break;
    }
    case MethodKind::kFedAvg: os << "fedavg"; break;
    case MethodKind::kLocalOnly: os << "local"; break;
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Protocol pieces
// ---------------------------------------------------------------------------

namespace {

// Mask a client is evaluated with before its first participation.
MaskPartition initial_mask(const MethodSpec& method, const LayerLayout& layout) {
  switch (method.kind) {
    case MethodKind::kLocalOnly: return MaskPartition::all_personalized(layout.total_params());
    case MethodKind::kFixedLayer: return fixed_layer_mask(layout, method.personalized_layers);
    default: return MaskPartition::all_shared(layout.total_params());
  }
}

}  // namespace

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

std::pair<ServerState, std::vector<ClientState>> init_federation(const ParamVector& initial,
                                                                 const PartitionPlan& plan,
                                                                 const MethodSpec& method) {
  method.validate();
  ServerState server;
  server.global_model = initial;
  std::vector<ClientState> clients;
  for (const ClientDataset& cd : plan.clients) {
    if (cd.train_indices.empty()) {
      throw std::invalid_argument("federation: client " + std::to_string(cd.client_id) +
                                  " has no training samples");
    }
    ClientState c;
    c.client_id = cd.client_id;
    c.local_model = initial;
    c.data = cd;
    c.last_mask = initial_mask(method, *initial.layout());
    server.stored_locals.emplace(cd.client_id, initial);
    clients.push_back(std::move(c));
  }
  std::sort(clients.begin(), clients.end(),
            [](const ClientState& a, const ClientState& b) { return a.client_id < b.client_id; });
  for (std::size_t i = 0; i < clients.size(); ++i) {
    if (clients[i].client_id != static_cast<int>(i)) {
      throw std::invalid_argument("federation: client ids must be 0..n-1");
    }
  }
  return {std::move(server), std::move(clients)};
}

std::vector<int> sample_clients(std::size_t n_clients, double gamma, int round, RngSeed seed) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("sample_clients: gamma must be in (0, 1]");
  if (n_clients == 0) return {};
  const auto want = static_cast<std::size_t>(
      std::max<long long>(1, std::llround(gamma * static_cast<double>(n_clients))));
  const std::size_t m = std::min(want, n_clients);
  std::vector<int> ids(n_clients);
  std::iota(ids.begin(), ids.end(), 0);
  Engine eng = make_engine(seed, StreamTag::kSampling, 0, static_cast<std::uint64_t>(round));
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n_clients - 1);
    std::swap(ids[i], ids[pick(eng)]);
  }
  ids.resize(m);
  std::sort(ids.begin(), ids.end());
  return ids;
}

Downlink server_decouple(const ServerState& server, int client_id, const MethodSpec& method) {
  const auto it = server.stored_locals.find(client_id);
  if (it == server.stored_locals.end()) {
    throw std::invalid_argument("server_decouple: unknown client " + std::to_string(client_id));
  }
  const ParamVector& global = server.global_model;
  const std::size_t total = global.size();
  Downlink d;
  switch (method.kind) {
    case MethodKind::kFedObp: {
      const ScoreVector scores = normalize(score_obp(it->second, global), method.norm);
      d.mask = select_mask(scores, Quantile{method.q});
      break;
    }
    case MethodKind::kScoreDecouple:
      d.mask = MaskPartition::all_shared(total);
      d.client_side_mask = true;
      break;
    case MethodKind::kFixedLayer:
      d.mask = fixed_layer_mask(*global.layout(), method.personalized_layers);
      break;
    case MethodKind::kFedAvg: d.mask = MaskPartition::all_shared(total); break;
    case MethodKind::kLocalOnly: d.mask = MaskPartition::all_personalized(total); break;
  }
  d.values.reserve(d.mask.shared.size());
  for (std::size_t k : d.mask.shared) d.values.push_back(global[k]);
  return d;
}

ParamVector apply_downlink(const ParamVector& local_prev, const Downlink& downlink) {
  if (downlink.mask.total != local_prev.size() ||
      downlink.values.size() != downlink.mask.shared.size()) {
    throw std::invalid_argument("apply_downlink: size mismatch");
  }
  ParamVector out = local_prev;
  for (std::size_t j = 0; j < downlink.mask.shared.size(); ++j) {
    out[downlink.mask.shared[j]] = downlink.values[j];
  }
  return out;
}

ParamVector aggregate(std::span<const ParamVector> models, std::span<const std::size_t> counts) {
  if (models.empty()) throw std::invalid_argument("aggregate: no uploads");
  if (counts.size() != models.size()) throw std::invalid_argument("aggregate: count mismatch");
  double m = 0.0;
  for (std::size_t c : counts) m += static_cast<double>(c);
  if (!(m > 0.0)) throw std::invalid_argument("aggregate: total sample count is zero");
  for (const ParamVector& p : models) {
    if (!p.same_layout(models.front())) throw std::invalid_argument("aggregate: layout mismatch");
  }
  ParamVector out(models.front().layout());
  auto o = out.values();
  for (std::size_t i = 0; i < models.size(); ++i) {
    const double w = static_cast<double>(counts[i]) / m;
    auto v = models[i].values();
    for (std::size_t k = 0; k < o.size(); ++k) o[k] += w * v[k];
  }
  // Rounding can land one ulp outside the hull of the inputs.
  for (std::size_t k = 0; k < o.size(); ++k) {
    double lo = models[0][k], hi = lo;
    for (const ParamVector& p : models) {
      lo = std::min(lo, p[k]);
      hi = std::max(hi, p[k]);
    }
    o[k] = std::clamp(o[k], lo, hi);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Round driver
// ---------------------------------------------------------------------------

namespace {

struct ClientOutcome {
  ParamVector merged;
  ParamVector trained;
  MaskPartition mask;
  double train_loss = 0.0;
  std::size_t downlink_params = 0;
};

MaskPartition client_side_mask(const ClientState& client, const Dataset& dataset,
                               const RoundConfig& config) {
  const MethodSpec& method = config.method;
  const std::size_t total = client.local_model.size();
  switch (method.score) {
    case ScoreKind::kFisher: {
      const LossGrad lg = dataset_loss_and_grad(client.local_model, config.spec, dataset,
                                                client.data.train_indices);
      return select_mask(normalize(score_fisher(lg.grad), method.norm), Quantile{method.q});
    }
    case ScoreKind::kGradient:
      // No score exists before the client has trained once.
      if (!client.prev_merged) return MaskPartition::all_shared(total);
      return select_mask(
          normalize(score_gradient(*client.prev_merged, client.local_model), method.norm),
          Quantile{method.q});
    case ScoreKind::kFedObp:
      break;
  }
  throw std::logic_error("client-side masking requested for the fedobp score");
}

}  // namespace

RoundReport run_round(ServerState& server, std::vector<ClientState>& clients,
                      const Dataset& dataset, const RoundConfig& config) {
  if (clients.empty()) throw std::invalid_argument("run_round: no clients");
  config.method.validate();
  const int round = server.round + 1;
  const LayerLayout& layout = *server.global_model.layout();
  const std::size_t total = layout.total_params();

  RoundReport report;
  report.selected = sample_clients(clients.size(), config.gamma, round, config.seed);
  const std::vector<int>& selected = report.selected;

  std::vector<ClientOutcome> outcomes(selected.size());
  parallel_for(selected.size(), config.threads, [&](std::size_t j) {
    const ClientState& client = clients[static_cast<std::size_t>(selected[j])];
    ClientOutcome& out = outcomes[j];
    Downlink down = server_decouple(server, client.client_id, config.method);
    out.downlink_params = down.values.size();
    if (down.client_side_mask) {
      out.mask = client_side_mask(client, dataset, config);
      out.merged = merge(client.local_model, server.global_model, out.mask);
    } else {
      out.merged = apply_downlink(client.local_model, down);
      out.mask = std::move(down.mask);
    }
    const RngSeed train_seed = derive_seed(config.seed, StreamTag::kTraining,
                                           static_cast<std::uint64_t>(client.client_id),
                                           static_cast<std::uint64_t>(round));
    TrainResult tr = local_train_tracked(out.merged, config.spec, dataset, client.data,
                                         config.hyper.eta, config.hyper.epochs,
                                         config.hyper.batch_size, train_seed);
    out.trained = std::move(tr.params);
    out.train_loss = tr.mean_loss;
  });

  // Uploads and aggregation, ascending client id.
  std::vector<ParamVector> uploads;
  std::vector<std::size_t> counts;
  double loss_sum = 0.0;
  std::size_t down_sum = 0;
  for (std::size_t j = 0; j < selected.size(); ++j) {
    ClientState& client = clients[static_cast<std::size_t>(selected[j])];
    ClientOutcome& out = outcomes[j];
    client.local_model = out.trained;
    client.prev_merged = std::move(out.merged);
    client.last_mask = out.mask;
    ++client.rounds_participated;
    server.stored_locals[client.client_id] = out.trained;
    uploads.push_back(std::move(out.trained));
    counts.push_back(client.data.sample_count());
    report.comm.push_back({round, client.client_id, out.downlink_params, total, total});
    report.masks.push_back(std::move(out.mask));
    loss_sum += out.train_loss;
    down_sum += out.downlink_params;
  }
  server.global_model = aggregate(uploads, counts);
  server.round = round;

  // Participants are scored on their freshly trained model; everyone else on
  // their last personal model merged with the new global on their last mask.
  RoundMetrics& m = report.metrics;
  m.round = round;
  m.per_client_acc.assign(clients.size(), 0.0);
  std::vector<bool> participated(clients.size(), false);
  for (int id : selected) participated[static_cast<std::size_t>(id)] = true;
  parallel_for(clients.size(), config.threads, [&](std::size_t i) {
    const ClientState& c = clients[i];
    if (participated[i]) {
      m.per_client_acc[i] = evaluate_client(c.local_model, config.spec, dataset, c.data);
    } else {
      const ParamVector model = merge(c.local_model, server.global_model, c.last_mask);
      m.per_client_acc[i] = evaluate_client(model, config.spec, dataset, c.data);
    }
  });
  double acc_sum = 0.0;
  for (double a : m.per_client_acc) acc_sum += a;
  const auto n = static_cast<double>(clients.size());
  m.mean_acc = acc_sum / n;
  double ss = 0.0;
  for (double a : m.per_client_acc) ss += (a - m.mean_acc) * (a - m.mean_acc);
  m.std_acc = std::sqrt(ss / n);
  m.personalized_fraction_by_layer = layer_distribution(report.masks, layout);
  m.downlink_ratio = static_cast<double>(down_sum) /
                     (static_cast<double>(total) * static_cast<double>(selected.size()));
  m.train_loss_mean = loss_sum / static_cast<double>(selected.size());
  return report;
}

// ---------------------------------------------------------------------------
// Gradient-step residual
// ---------------------------------------------------------------------------

double verify_gradient_step_approx(const ModelSpec& spec, const Dataset& dataset,
                                   std::size_t n_clients, double eta, int epochs, RngSeed seed) {
  constexpr double kPartitionAlpha = 1.0;
  constexpr int kPretrainSteps = 200;
  constexpr double kPretrainEta = 0.1;

  const PartitionPlan plan = dirichlet_partition(dataset, n_clients, kPartitionAlpha,
                                                 derive_seed(seed, StreamTag::kVerify, 0));
  ParamVector start = init_params(spec, derive_seed(seed, StreamTag::kInit));

  // Pre-train on client 0 towards local stationarity.
  const ClientDataset& first = plan.clients.front();
  for (int s = 0; s < kPretrainSteps; ++s) {
    const LossGrad lg = dataset_loss_and_grad(start, spec, dataset, first.train_indices);
    sgd_step_inplace(start, lg.grad, kPretrainEta);
  }

  std::vector<ParamVector> trained;
  std::vector<std::size_t> counts;
  std::vector<std::size_t> all;
  for (const ClientDataset& c : plan.clients) {
    const RngSeed s = derive_seed(seed, StreamTag::kTraining, static_cast<std::uint64_t>(c.client_id));
    trained.push_back(local_train(start, spec, dataset, c, eta, epochs, c.train_indices.size(), s));
    counts.push_back(c.sample_count());
    all.insert(all.end(), c.train_indices.begin(), c.train_indices.end());
  }
  std::sort(all.begin(), all.end());
  const ParamVector global = aggregate(trained, counts);
  const LossGrad full = dataset_loss_and_grad(start, spec, dataset, all);

  const double step = eta * static_cast<double>(epochs);
  double ss = 0.0;
  for (std::size_t k = 0; k < global.size(); ++k) {
    const double r = global[k] - start[k] + step * full.grad[k];
    ss += r * r;
  }
  return std::sqrt(ss);
}

// ---------------------------------------------------------------------------
// Communication ledger
// ---------------------------------------------------------------------------

void write_comm_csv(std::ostream& os, const std::vector<CommRecord>& records) {
  os << "round,client_id,downlink_params,uplink_params,total_params\n";
  for (const CommRecord& r : records) {
    os << r.round << ',' << r.client_id << ',' << r.downlink_params << ',' << r.uplink_params
       << ',' << r.total_params << '\n';
  }
}

std::vector<CommRecord> read_comm_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) ||
      line != "round,client_id,downlink_params,uplink_params,total_params") {
    throw std::runtime_error("comm csv: unexpected header");
  }
  std::vector<CommRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    CommRecord r;
    char c1 = 0, c2 = 0, c3 = 0, c4 = 0;
    if (!(row >> r.round >> c1 >> r.client_id >> c2 >> r.downlink_params >> c3 >>
          r.uplink_params >> c4 >> r.total_params) ||
        c1 != ',' || c2 != ',' || c3 != ',' || c4 != ',') {
      throw std::runtime_error("comm csv: malformed row '" + line + "'");
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace fedobp
