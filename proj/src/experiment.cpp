#include "fedobp/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace fedobp {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config text
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(s);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw std::invalid_argument("config: bad value for " + key + ": '" + text + "'");
  }
  return v;
}

std::size_t parse_count(const std::string& key, const std::string& text) {
  return static_cast<std::size_t>(parse_number<std::uint64_t>(key, text));
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw std::invalid_argument("config: bad boolean for " + key + ": '" + text + "'");
}

template <typename T, typename F>
std::vector<T> parse_vector(const std::string& text, F&& item) {
  std::vector<T> out;
  for (const std::string& s : split_list(text)) out.push_back(item(s));
  return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& v, F&& fmt) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += fmt(v[i]);
  }
  return out;
}

std::string method_name(MethodKind k) {
  switch (k) {
    case MethodKind::kFedObp: return "fedobp";
    case MethodKind::kScoreDecouple: return "score";
    case MethodKind::kFixedLayer: return "fixed";
    case MethodKind::kFedAvg: return "fedavg";
    case MethodKind::kLocalOnly: return "local";
  }
  return "?";
}

MethodKind parse_method_name(const std::string& s) {
  for (MethodKind k : {MethodKind::kFedObp, MethodKind::kScoreDecouple, MethodKind::kFixedLayer,
                       MethodKind::kFedAvg, MethodKind::kLocalOnly}) {
    if (method_name(k) == s) return k;
  }
  throw std::invalid_argument("config: unknown method.name '" + s + "'");
}

}  // namespace

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("config: " + what); };
  if (dataset.source != "synthetic" && dataset.source != "idx") {
    fail("dataset.source must be synthetic or idx");
  }
  if (dataset.source == "synthetic") {
    if (dataset.classes < 2) fail("dataset.classes must be >= 2");
    if (dataset.per_class < 1) fail("dataset.per_class must be >= 1");
    if (dataset.channels < 1 || dataset.height < 1 || dataset.width < 1) {
      fail("dataset geometry must be positive");
    }
    if (!(dataset.noise >= 0.0)) fail("dataset.noise must be >= 0");
  }
  if (n_clients < 1) fail("partition.clients must be >= 1");
  if (!(alpha > 0.0)) fail("partition.alpha must be > 0");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) fail("partition.test_fraction must be in (0, 1)");
  if (rounds < 1) fail("federation.rounds must be >= 1");
  if (!(gamma > 0.0 && gamma <= 1.0)) fail("federation.gamma must be in (0, 1]");
  if (!(hyper.eta > 0.0)) fail("federation.eta must be > 0");
  if (hyper.epochs < 1) fail("federation.epochs must be >= 1");
  if (hyper.batch_size < 1) fail("federation.batch_size must be >= 1");
  if (seeds.empty()) fail("seeds must not be empty");
  for (double q : sweep_q) {
    if (!(q > 0.0 && q <= 1.0)) fail("sweep.q values must be in (0, 1]");
  }
  method.validate();
}

ModelSpec ExperimentConfig::model_spec(const Dataset& data) const {
  ModelSpec spec;
  spec.channels = data.channels();
  spec.height = data.height();
  spec.width = data.width();
  spec.conv_channels = conv_channels;
  spec.kernel_size = kernel_size;
  spec.pool = pool;
  spec.fc_widths = fc_widths;
  spec.num_classes = data.num_classes;
  spec.validate();
  return spec;
}

ExperimentConfig parse_config(std::istream& is) {
  ExperimentConfig c;
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (!kv.emplace(key, trim(line.substr(eq + 1))).second) {
      throw std::invalid_argument("config: duplicate key " + key);
    }
  }

  std::string method = method_name(c.method.kind);
  for (const auto& [key, v] : kv) {
    if (key == "dataset.source") c.dataset.source = v;
    else if (key == "dataset.images") c.dataset.images = v;
    else if (key == "dataset.labels") c.dataset.labels = v;
    else if (key == "dataset.classes") c.dataset.classes = parse_count(key, v);
    else if (key == "dataset.per_class") c.dataset.per_class = parse_count(key, v);
    else if (key == "dataset.channels") c.dataset.channels = parse_count(key, v);
    else if (key == "dataset.height") c.dataset.height = parse_count(key, v);
    else if (key == "dataset.width") c.dataset.width = parse_count(key, v);
    else if (key == "dataset.noise") c.dataset.noise = parse_number<double>(key, v);
    else if (key == "dataset.seed") c.dataset.seed = parse_number<std::uint64_t>(key, v);
    else if (key == "partition.clients") c.n_clients = parse_count(key, v);
    else if (key == "partition.alpha") c.alpha = parse_number<double>(key, v);
    else if (key == "partition.test_fraction") c.test_fraction = parse_number<double>(key, v);
    else if (key == "partition.min_per_client") c.min_per_client = parse_count(key, v);
    else if (key == "federation.rounds") c.rounds = parse_number<int>(key, v);
    else if (key == "federation.gamma") c.gamma = parse_number<double>(key, v);
    else if (key == "federation.eta") c.hyper.eta = parse_number<double>(key, v);
    else if (key == "federation.epochs") c.hyper.epochs = parse_number<int>(key, v);
    else if (key == "federation.batch_size") c.hyper.batch_size = parse_count(key, v);
    else if (key == "method.name") method = v;
    else if (key == "method.score") c.method.score = parse_score_kind(v);
    else if (key == "method.q") c.method.q = parse_number<double>(key, v);
    else if (key == "method.norm") c.method.norm.kind = parse_norm_kind(v);
    else if (key == "method.cls_only") c.method.norm.cls_only = parse_bool(key, v);
    else if (key == "method.layers") {
      const auto names = split_list(v);
      c.method.personalized_layers = {names.begin(), names.end()};
    } else if (key == "model.conv") {
      c.conv_channels = parse_vector<std::size_t>(v, [&](const std::string& s) { return parse_count(key, s); });
    } else if (key == "model.kernel") c.kernel_size = parse_count(key, v);
    else if (key == "model.pool") {
      if (v == "max2x2") c.pool = PoolKind::kMax2x2;
      else if (v == "none") c.pool = PoolKind::kNone;
      else throw std::invalid_argument("config: model.pool must be max2x2 or none");
    } else if (key == "model.fc") {
      c.fc_widths = parse_vector<std::size_t>(v, [&](const std::string& s) { return parse_count(key, s); });
    } else if (key == "seeds") {
      c.seeds = parse_vector<RngSeed>(v, [&](const std::string& s) { return parse_number<std::uint64_t>(key, s); });
    } else if (key == "output_dir") c.output_dir = v;
    else if (key == "sweep.q") {
      c.sweep_q = parse_vector<double>(v, [&](const std::string& s) { return parse_number<double>(key, s); });
    } else if (key == "sweep.scores") {
      c.sweep_scores = parse_vector<ScoreKind>(v, [](const std::string& s) { return parse_score_kind(s); });
    } else if (key == "output.export_masks") c.export_masks = parse_bool(key, v);
    else throw std::invalid_argument("config: unknown key " + key);
  }
  c.method.kind = parse_method_name(method);
  if (c.method.kind == MethodKind::kFedObp) c.method.score = ScoreKind::kFedObp;
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path.string());
  return parse_config(is);
}

std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream os;
  auto count = [](std::size_t v) { return std::to_string(v); };
  os << "dataset.source = " << c.dataset.source << '\n';
  if (c.dataset.source == "idx") {
    os << "dataset.images = " << c.dataset.images.string() << '\n';
    os << "dataset.labels = " << c.dataset.labels.string() << '\n';
  } else {
    os << "dataset.classes = " << c.dataset.classes << '\n'
       << "dataset.per_class = " << c.dataset.per_class << '\n'
       << "dataset.channels = " << c.dataset.channels << '\n'
       << "dataset.height = " << c.dataset.height << '\n'
       << "dataset.width = " << c.dataset.width << '\n'
       << "dataset.noise = " << format_double(c.dataset.noise) << '\n'
       << "dataset.seed = " << c.dataset.seed << '\n';
  }
  os << "partition.clients = " << c.n_clients << '\n'
     << "partition.alpha = " << format_double(c.alpha) << '\n'
     << "partition.test_fraction = " << format_double(c.test_fraction) << '\n'
     << "partition.min_per_client = " << c.min_per_client << '\n'
     << "federation.rounds = " << c.rounds << '\n'
     << "federation.gamma = " << format_double(c.gamma) << '\n'
     << "federation.eta = " << format_double(c.hyper.eta) << '\n'
     << "federation.epochs = " << c.hyper.epochs << '\n'
     << "federation.batch_size = " << c.hyper.batch_size << '\n'
     << "method.name = " << method_name(c.method.kind) << '\n';
  switch (c.method.kind) {
    case MethodKind::kScoreDecouple:
      os << "method.score = " << to_string(c.method.score) << '\n';
      [[fallthrough]];
    case MethodKind::kFedObp:
      os << "method.q = " << format_double(c.method.q) << '\n'
         << "method.norm = " << to_string(c.method.norm.kind) << '\n'
         << "method.cls_only = " << (c.method.norm.cls_only ? "true" : "false") << '\n';
      break;
    case MethodKind::kFixedLayer: {
      const std::vector<std::string> layers(c.method.personalized_layers.begin(),
                                            c.method.personalized_layers.end());
      os << "method.layers = " << join(layers, [](const std::string& s) { return s; }) << '\n';
      break;
    }
    default: break;
  }
  os << "model.conv = " << join(c.conv_channels, count) << '\n'
     << "model.kernel = " << c.kernel_size << '\n'
     << "model.pool = " << (c.pool == PoolKind::kMax2x2 ? "max2x2" : "none") << '\n'
     << "model.fc = " << join(c.fc_widths, count) << '\n'
     << "seeds = " << join(c.seeds, [](RngSeed s) { return std::to_string(s); }) << '\n'
     << "output_dir = " << c.output_dir.string() << '\n'
     << "sweep.q = " << join(c.sweep_q, [](double q) { return format_double(q); }) << '\n'
     << "sweep.scores = " << join(c.sweep_scores, [](ScoreKind k) { return to_string(k); }) << '\n'
     << "output.export_masks = " << (c.export_masks ? "true" : "false") << '\n';
  return os.str();
}

std::string config_hash(const ExperimentConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : serialize_config(config)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

Dataset load_dataset(const DatasetConfig& d) {
  if (d.source == "idx") return load_idx(d.images, d.labels);
  if (d.source == "synthetic") {
    return synth_dataset(d.classes, d.per_class, d.channels, d.height, d.width, d.noise, d.seed);
  }
  throw std::invalid_argument("config: unknown dataset.source '" + d.source + "'");
}

PartitionPlan make_partition(const ExperimentConfig& config, const Dataset& dataset,
                             RngSeed seed) {
  const PartitionPlan raw =
      dirichlet_partition(dataset, config.n_clients, config.alpha,
                          derive_seed(seed, StreamTag::kPartition), config.min_per_client);
  PartitionPlan plan = split_train_test(raw, dataset, config.test_fraction,
                                        derive_seed(seed, StreamTag::kSplit));
  plan.seed = seed;
  return plan;
}

RunOutput run_single(const ExperimentConfig& config, const Dataset& dataset, RngSeed seed,
                     int threads, std::ostream* mask_sink) {
  config.validate();
  const ModelSpec spec = config.model_spec(dataset);
  const PartitionPlan plan = make_partition(config, dataset, seed);
  const ParamVector initial = init_params(spec, derive_seed(seed, StreamTag::kInit));
  auto [server, clients] = init_federation(initial, plan, config.method);

  RoundConfig rc;
  rc.spec = spec;
  rc.method = config.method;
  rc.hyper = config.hyper;
  rc.gamma = config.gamma;
  rc.seed = seed;
  rc.threads = threads;

  RunOutput out;
  out.record.seed = seed;
  if (mask_sink) write_mask_header(*mask_sink);
  for (int t = 1; t <= config.rounds; ++t) {
    RoundReport report = run_round(server, clients, dataset, rc);
    if (mask_sink) {
      for (std::size_t j = 0; j < report.selected.size(); ++j) {
        write_mask_rows(*mask_sink, t, report.selected[j], report.masks[j]);
      }
    }
    if (t == config.rounds) {
      for (const MaskPartition& m : report.masks) {
        out.final_personalized_count = std::max(out.final_personalized_count, m.personalized.size());
      }
    }
    out.comm.insert(out.comm.end(), report.comm.begin(), report.comm.end());
    out.record.rounds.push_back(std::move(report.metrics));
  }
  out.checkpoint.round = static_cast<std::uint64_t>(server.round);
  out.checkpoint.global_model = server.global_model;
  out.checkpoint.stored_locals = server.stored_locals;
  return out;
}

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return is;
}

fs::path seed_dir(const fs::path& root, RngSeed seed) {
  return root / ("seed_" + std::to_string(seed));
}

}  // namespace

std::vector<fs::path> cmd_partition(const ExperimentConfig& config) {
  config.validate();
  const Dataset dataset = load_dataset(config.dataset);
  fs::create_directories(config.output_dir);
  std::vector<fs::path> written;
  for (RngSeed seed : config.seeds) {
    const fs::path path = config.output_dir / ("partition_seed_" + std::to_string(seed) + ".csv");
    std::ofstream os = open_out(path);
    write_partition_plan(os, make_partition(config, dataset, seed));
    written.push_back(path);
  }
  return written;
}

RunSummary cmd_run(const ExperimentConfig& config, int threads) {
  config.validate();
  const Dataset dataset = load_dataset(config.dataset);
  fs::create_directories(config.output_dir);
  {
    std::ofstream os = open_out(config.output_dir / "config.txt");
    os << serialize_config(config);
  }
  std::vector<RunRecord> records;
  for (RngSeed seed : config.seeds) {
    const fs::path dir = seed_dir(config.output_dir, seed);
    fs::create_directories(dir);
    std::optional<std::ofstream> masks;
    if (config.export_masks) masks.emplace(open_out(dir / "masks.csv"));
    RunOutput run = run_single(config, dataset, seed, threads, masks ? &*masks : nullptr);
    {
      std::ofstream os = open_out(dir / "metrics.csv");
      write_metrics_csv(os, run.record.rounds);
    }
    {
      std::ofstream os = open_out(dir / "per_client.csv");
      write_per_client_csv(os, run.record.rounds);
    }
    {
      std::ofstream os = open_out(dir / "comm.csv");
      write_comm_csv(os, run.comm);
    }
    save_checkpoint(dir / "checkpoint.bin", run.checkpoint);
    records.push_back(std::move(run.record));
  }
  RunSummary summary = summarize_runs(std::move(records), config_hash(config));

  nlohmann::ordered_json j;
  j["config_hash"] = summary.config_hash;
  j["method"] = config.method.label();
  j["rounds"] = config.rounds;
  j["final_mean"] = summary.final_mean;
  j["final_std"] = summary.final_std;
  nlohmann::ordered_json per_seed = nlohmann::ordered_json::array();
  for (const RunRecord& r : summary.runs) {
    per_seed.push_back({{"seed", r.seed}, {"final_mean_acc", r.final_mean_acc()}});
  }
  j["runs"] = per_seed;
  std::ofstream os = open_out(config.output_dir / "summary.json");
  os << j.dump(2) << '\n';
  return summary;
}

std::vector<SweepRow> cmd_sweep(const ExperimentConfig& config, int threads) {
  config.validate();
  const Dataset dataset = load_dataset(config.dataset);
  std::vector<SweepRow> rows;
  for (ScoreKind score : config.sweep_scores) {
    for (double q : config.sweep_q) {
      ExperimentConfig run = config;
      run.method = score == ScoreKind::kFedObp
                       ? MethodSpec::fedobp(q, config.method.norm)
                       : MethodSpec::score_decouple(score, q, config.method.norm);
      SweepRow row;
      row.q = q;
      row.score = score;
      double sum = 0.0;
      for (RngSeed seed : config.seeds) {
        const RunOutput out = run_single(run, dataset, seed, threads);
        sum += out.record.final_mean_acc();
        row.personalized_count = std::max(row.personalized_count, out.final_personalized_count);
      }
      row.final_mean_acc = sum / static_cast<double>(config.seeds.size());
      std::clog << "sweep " << to_string(score) << " q=" << format_double(q)
                << " acc=" << format_double(row.final_mean_acc) << '\n';
      rows.push_back(row);
    }
  }
  fs::create_directories(config.output_dir);
  std::ofstream os = open_out(config.output_dir / "sweep.csv");
  write_sweep_csv(os, rows);
  return rows;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "q,score,final_mean_acc,personalized_count\n";
  for (const SweepRow& r : rows) {
    os << format_double(r.q) << ',' << to_string(r.score) << ',' << format_double(r.final_mean_acc)
       << ',' << r.personalized_count << '\n';
  }
}

std::vector<SweepRow> read_sweep_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "q,score,final_mean_acc,personalized_count") {
    throw std::runtime_error("sweep csv: unexpected header");
  }
  std::vector<SweepRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_list(line);
    if (cells.size() != 4) throw std::runtime_error("sweep csv: ragged row");
    SweepRow r;
    r.q = parse_number<double>("q", cells[0]);
    r.score = parse_score_kind(cells[1]);
    r.final_mean_acc = parse_number<double>("final_mean_acc", cells[2]);
    r.personalized_count = parse_count("personalized_count", cells[3]);
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

namespace {

struct MethodRow {
  std::string method;
  double final_mean = 0.0;
  double final_std = 0.0;
  std::size_t seeds = 0;
  std::vector<std::pair<std::string, double>> final_layers;  // seed-averaged
};

MethodRow read_method_dir(const fs::path& dir) {
  const fs::path summary_path = dir / "summary.json";
  MethodRow row;
  std::vector<RngSeed> seeds;
  try {
    std::ifstream is = open_in(summary_path);
    const nlohmann::json j = nlohmann::json::parse(is);
    row.method = j.at("method").get<std::string>();
    row.final_mean = j.at("final_mean").get<double>();
    row.final_std = j.at("final_std").get<double>();
    for (const auto& r : j.at("runs")) seeds.push_back(r.at("seed").get<RngSeed>());
  } catch (const std::exception& e) {
    throw std::runtime_error("report: corrupt file " + summary_path.string() + ": " + e.what());
  }
  row.seeds = seeds.size();
  for (RngSeed seed : seeds) {
    const fs::path metrics_path = seed_dir(dir, seed) / "metrics.csv";
    std::vector<RoundMetrics> rounds;
    try {
      std::ifstream is = open_in(metrics_path);
      rounds = read_metrics_csv(is);
      if (rounds.empty()) throw std::runtime_error("no rounds");
    } catch (const std::exception& e) {
      throw std::runtime_error("report: corrupt file " + metrics_path.string() + ": " + e.what());
    }
    const auto& layers = rounds.back().personalized_fraction_by_layer;
    if (row.final_layers.empty()) {
      for (const auto& [name, f] : layers) row.final_layers.emplace_back(name, 0.0);
    }
    if (layers.size() != row.final_layers.size()) {
      throw std::runtime_error("report: corrupt file " + metrics_path.string() +
                               ": layer columns differ between seeds");
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
      row.final_layers[l].second += layers[l].second / static_cast<double>(seeds.size());
    }
  }
  return row;
}

std::vector<SweepRow> read_sweep_file(const fs::path& path) {
  try {
    std::ifstream is = open_in(path);
    return read_sweep_csv(is);
  } catch (const std::exception& e) {
    throw std::runtime_error("report: corrupt file " + path.string() + ": " + e.what());
  }
}

}  // namespace

void cmd_report(const fs::path& dir, std::ostream& out) {
  if (!fs::is_directory(dir)) throw std::runtime_error("report: no such directory " + dir.string());
  std::vector<fs::path> candidates{dir};
  std::vector<fs::path> children;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) children.push_back(e.path());
  }
  std::sort(children.begin(), children.end());
  candidates.insert(candidates.end(), children.begin(), children.end());

  std::vector<MethodRow> methods;
  std::vector<std::pair<fs::path, std::vector<SweepRow>>> sweeps;
  for (const fs::path& p : candidates) {
    if (fs::exists(p / "summary.json")) methods.push_back(read_method_dir(p));
    if (fs::exists(p / "sweep.csv")) sweeps.emplace_back(p / "sweep.csv", read_sweep_file(p / "sweep.csv"));
  }
  if (methods.empty() && sweeps.empty()) {
    throw std::runtime_error("report: no summary.json or sweep.csv under " + dir.string());
  }
  std::stable_sort(methods.begin(), methods.end(),
                   [](const MethodRow& a, const MethodRow& b) { return a.method < b.method; });

  out << std::fixed << std::setprecision(4);
  if (!methods.empty()) {
    out << "method,final_mean_acc,final_std,seeds\n";
    for (const MethodRow& m : methods) {
      out << m.method << ',' << m.final_mean << ',' << m.final_std << ',' << m.seeds << '\n';
    }
    out << "\nfinal-round personalized fraction by layer\n";
    for (const MethodRow& m : methods) {
      out << m.method;
      for (const auto& [name, f] : m.final_layers) out << ' ' << name << '=' << f;
      out << '\n';
    }
  }
  for (const auto& [path, rows] : sweeps) {
    out << "\npeak q per score (" << path.string() << ")\n";
    std::map<std::string, SweepRow> best;
    for (const SweepRow& r : rows) {
      const std::string key = to_string(r.score);
      auto it = best.find(key);
      if (it == best.end() || r.final_mean_acc > it->second.final_mean_acc) best[key] = r;
    }
    for (const auto& [name, r] : best) {
      out << name << " q=" << format_double(r.q) << " acc=" << r.final_mean_acc << '\n';
    }
  }
}

}  // namespace fedobp
