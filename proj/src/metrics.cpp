#include "fedobp/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace fedobp {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::runtime_error("csv: bad number '" + s + "'");
  }
  return v;
}

long long parse_int(const std::string& s) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::runtime_error("csv: bad integer '" + s + "'");
  }
  return v;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

double RunRecord::final_mean_acc() const {
  if (rounds.empty()) throw std::invalid_argument("run record has no rounds");
  return rounds.back().mean_acc;
}

double evaluate_client(const ParamVector& params, const ModelSpec& spec, const Dataset& dataset,
                       const ClientDataset& client) {
  if (client.test_indices.empty()) throw std::invalid_argument("evaluate_client: empty test split");
  const Tensor logits = forward(params, spec, gather_batch(dataset, client.test_indices));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < client.test_indices.size(); ++i) {
    auto z = logits.row(i);
    // max_element returns the first maximum, i.e. the lowest class on ties.
    const auto pred = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
    if (pred == dataset.labels.at(client.test_indices[i])) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(client.test_indices.size());
}

std::vector<std::pair<std::string, double>> layer_distribution(
    const std::vector<MaskPartition>& masks, const LayerLayout& layout) {
  std::vector<std::size_t> counts(layout.layers().size(), 0);
  std::size_t total = 0;
  for (const MaskPartition& m : masks) {
    if (m.total != layout.total_params()) {
      throw std::invalid_argument("layer_distribution: mask size does not match layout");
    }
    for (std::size_t k : m.personalized) ++counts[layout.layer_of(k)];
    total += m.personalized.size();
  }
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t l = 0; l < counts.size(); ++l) {
    const double f = total == 0 ? 0.0
                                : static_cast<double>(counts[l]) / static_cast<double>(total);
    out.emplace_back(layout.layers()[l].name, f);
  }
  return out;
}

std::vector<std::pair<std::string, double>> layer_distribution(const MaskPartition& mask,
                                                               const LayerLayout& layout) {
  return layer_distribution(std::vector<MaskPartition>{mask}, layout);
}

RunSummary summarize_runs(std::vector<RunRecord> runs, std::string config_hash) {
  if (runs.empty()) throw std::invalid_argument("summarize_runs: no runs");
  std::sort(runs.begin(), runs.end(), [](const RunRecord& a, const RunRecord& b) {
    if (a.seed != b.seed) return a.seed < b.seed;
    return a.final_mean_acc() < b.final_mean_acc();
  });
  RunSummary s;
  s.config_hash = std::move(config_hash);
  double sum = 0.0;
  for (const RunRecord& r : runs) sum += r.final_mean_acc();
  const auto n = static_cast<double>(runs.size());
  s.final_mean = sum / n;
  if (runs.size() > 1) {
    double ss = 0.0;
    for (const RunRecord& r : runs) {
      const double d = r.final_mean_acc() - s.final_mean;
      ss += d * d;
    }
    s.final_std = std::sqrt(ss / (n - 1.0));
  }
  s.runs = std::move(runs);
  return s;
}

void write_metrics_csv(std::ostream& os, const std::vector<RoundMetrics>& rounds) {
  os << "round,mean_acc,std_acc,downlink_ratio,train_loss_mean";
  if (!rounds.empty()) {
    for (const auto& [name, f] : rounds.front().personalized_fraction_by_layer) {
      os << ",frac_" << name;
    }
  }
  os << '\n';
  for (const RoundMetrics& m : rounds) {
    os << m.round << ',' << format_double(m.mean_acc) << ',' << format_double(m.std_acc) << ','
       << format_double(m.downlink_ratio) << ',' << format_double(m.train_loss_mean);
    for (const auto& [name, f] : m.personalized_fraction_by_layer) os << ',' << format_double(f);
    os << '\n';
  }
}

std::vector<RoundMetrics> read_metrics_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("metrics csv: empty file");
  const std::vector<std::string> header = split_csv(line);
  const std::vector<std::string> fixed = {"round", "mean_acc", "std_acc", "downlink_ratio",
                                          "train_loss_mean"};
  if (header.size() < fixed.size() || !std::equal(fixed.begin(), fixed.end(), header.begin())) {
    throw std::runtime_error("metrics csv: unexpected header");
  }
  std::vector<std::string> layers;
  for (std::size_t i = fixed.size(); i < header.size(); ++i) {
    if (header[i].rfind("frac_", 0) != 0) throw std::runtime_error("metrics csv: bad column");
    layers.push_back(header[i].substr(5));
  }
  std::vector<RoundMetrics> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_csv(line);
    if (cells.size() != header.size()) throw std::runtime_error("metrics csv: ragged row");
    RoundMetrics m;
    m.round = static_cast<int>(parse_int(cells[0]));
    m.mean_acc = parse_double(cells[1]);
    m.std_acc = parse_double(cells[2]);
    m.downlink_ratio = parse_double(cells[3]);
    m.train_loss_mean = parse_double(cells[4]);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      m.personalized_fraction_by_layer.emplace_back(layers[l], parse_double(cells[5 + l]));
    }
    out.push_back(std::move(m));
  }
  return out;
}

void write_per_client_csv(std::ostream& os, const std::vector<RoundMetrics>& rounds) {
  os << "round,client_id,accuracy\n";
  for (const RoundMetrics& m : rounds) {
    for (std::size_t c = 0; c < m.per_client_acc.size(); ++c) {
      os << m.round << ',' << c << ',' << format_double(m.per_client_acc[c]) << '\n';
    }
  }
}

void read_per_client_csv(std::istream& is, std::vector<RoundMetrics>& rounds) {
  std::string line;
  if (!std::getline(is, line) || line != "round,client_id,accuracy") {
    throw std::runtime_error("per_client csv: unexpected header");
  }
  std::map<int, RoundMetrics*> by_round;
  for (RoundMetrics& m : rounds) {
    m.per_client_acc.clear();
    by_round[m.round] = &m;
  }
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_csv(line);
    if (cells.size() != 3) throw std::runtime_error("per_client csv: ragged row");
    const auto it = by_round.find(static_cast<int>(parse_int(cells[0])));
    if (it == by_round.end()) throw std::runtime_error("per_client csv: unknown round");
    const auto cid = static_cast<std::size_t>(parse_int(cells[1]));
    std::vector<double>& acc = it->second->per_client_acc;
    if (cid != acc.size()) throw std::runtime_error("per_client csv: client ids out of order");
    acc.push_back(parse_double(cells[2]));
  }
}

}  // namespace fedobp
