#pragma once

#include <cstddef>
#include <iosfwd>
#include <set>
#include <string>
#include <vector>

#include "fedobp/importance.hpp"
#include "fedobp/model.hpp"

namespace fedobp {

// Disjoint personalized / shared index sets covering [0, total).
struct MaskPartition {
  std::vector<std::size_t> personalized;  // sorted
  std::vector<std::size_t> shared;        // sorted
  std::size_t total = 0;

  static MaskPartition all_shared(std::size_t total);
  static MaskPartition all_personalized(std::size_t total);
  static MaskPartition from_flags(const std::vector<bool>& personalized);

  friend bool operator==(const MaskPartition&, const MaskPartition&) = default;
};

// Quantile level in (0, 1].
class Quantile {
 public:
  explicit Quantile(double q);
  double value() const { return q_; }

 private:
  double q_;
};

// Number of scores at or below the threshold: ceil(q * n), clamped to [1, n].
// Products within 1e-9 (relative) of an integer are treated as that integer so
// that decimal levels such as 0.7 * 10 do not round up spuriously.
std::size_t quantile_rank(Quantile q, std::size_t n);

// k-th smallest score with k = quantile_rank(q, n).
double quantile_threshold(const ScoreVector& scores, Quantile q);

// Scores strictly above tau are personalized; ties go to shared.
MaskPartition partition(const ScoreVector& scores, double tau);

MaskPartition select_mask(const ScoreVector& scores, Quantile q);

// Local values on the personalized set, global values elsewhere.
ParamVector merge(const ParamVector& local_prev, const ParamVector& global_now,
                  const MaskPartition& mask);

// Personalizes whole named layers (FedPer / LG-FedAvg style).
MaskPartition fixed_layer_mask(const LayerLayout& layout,
                               const std::set<std::string>& personalized_layers);

// `round,client_id,index` rows, one per personalized index.
void write_mask_header(std::ostream& os);
void write_mask_rows(std::ostream& os, int round, int client_id, const MaskPartition& mask);

}  // namespace fedobp
