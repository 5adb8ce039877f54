#include "fedobp/decouple.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

namespace fedobp {

MaskPartition MaskPartition::all_shared(std::size_t total) {
  return from_flags(std::vector<bool>(total, false));
}

MaskPartition MaskPartition::all_personalized(std::size_t total) {
  return from_flags(std::vector<bool>(total, true));
}

MaskPartition MaskPartition::from_flags(const std::vector<bool>& personalized) {
  MaskPartition m;
  m.total = personalized.size();
  for (std::size_t k = 0; k < personalized.size(); ++k) {
    (personalized[k] ? m.personalized : m.shared).push_back(k);
  }
  return m;
}

Quantile::Quantile(double q) : q_(q) {
  if (!(q > 0.0 && q <= 1.0)) throw std::invalid_argument("quantile must lie in (0, 1]");
}

std::size_t quantile_rank(Quantile q, std::size_t n) {
  if (n == 0) throw std::invalid_argument("quantile of an empty score vector");
  const double x = q.value() * static_cast<double>(n);
  const double r = std::round(x);
  const double k = std::fabs(x - r) <= 1e-9 * std::max(1.0, x) ? r : std::ceil(x);
  return std::clamp<std::size_t>(static_cast<std::size_t>(k), 1, n);
}

double quantile_threshold(const ScoreVector& scores, Quantile q) {
  const std::size_t k = quantile_rank(q, scores.size());
  std::vector<double> v = scores.values;
  auto nth = v.begin() + static_cast<std::ptrdiff_t>(k - 1);
  std::nth_element(v.begin(), nth, v.end());
  return *nth;
}

MaskPartition partition(const ScoreVector& scores, double tau) {
  MaskPartition m;
  m.total = scores.size();
  for (std::size_t k = 0; k < scores.size(); ++k) {
    (scores.values[k] > tau ? m.personalized : m.shared).push_back(k);
  }
  return m;
}

MaskPartition select_mask(const ScoreVector& scores, Quantile q) {
  return partition(scores, quantile_threshold(scores, q));
}

ParamVector merge(const ParamVector& local_prev, const ParamVector& global_now,
                  const MaskPartition& mask) {
  if (!local_prev.same_layout(global_now)) throw std::invalid_argument("merge: layout mismatch");
  if (mask.total != global_now.size()) throw std::invalid_argument("merge: mask size mismatch");
  ParamVector out = global_now;
  for (std::size_t k : mask.personalized) out[k] = local_prev[k];
  return out;
}

MaskPartition fixed_layer_mask(const LayerLayout& layout,
                               const std::set<std::string>& personalized_layers) {
  std::vector<bool> flags(layout.total_params(), false);
  for (const std::string& name : personalized_layers) {
    const LayerInfo* l = layout.find(name);
    if (l == nullptr) throw std::invalid_argument("fixed_layer_mask: unknown layer '" + name + "'");
    std::fill(flags.begin() + static_cast<std::ptrdiff_t>(l->start),
              flags.begin() + static_cast<std::ptrdiff_t>(l->end), true);
  }
  return MaskPartition::from_flags(flags);
}

void write_mask_header(std::ostream& os) { os << "round,client_id,index\n"; }

void write_mask_rows(std::ostream& os, int round, int client_id, const MaskPartition& mask) {
  for (std::size_t k : mask.personalized) os << round << ',' << client_id << ',' << k << '\n';
}

}  // namespace fedobp
