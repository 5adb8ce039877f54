#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "fedobp/model.hpp"

namespace fedobp {

// Per-parameter importance aligned 1:1 with a ParamVector. Entries suppressed
// by a classifier-only restriction hold kSuppressedScore; all others are >= 0.
struct ScoreVector {
  std::vector<double> values;
  LayoutPtr layout;

  std::size_t size() const { return values.size(); }
};

inline constexpr double kSuppressedScore = -1.0;

enum class ScoreKind { kGradient, kFisher, kFedObp };

enum class NormKind { kNone, kLayer, kGlobal };

struct NormMode {
  NormKind kind = NormKind::kNone;
  bool cls_only = false;  // only valid with kGlobal

  void validate() const;
  friend bool operator==(const NormMode&, const NormMode&) = default;
};

std::string to_string(ScoreKind kind);
ScoreKind parse_score_kind(std::string_view text);
std::string to_string(NormKind kind);
NormKind parse_norm_kind(std::string_view text);

// (local_prev - global_now)^2, element-wise.
ScoreVector score_obp(const ParamVector& local_prev, const ParamVector& global_now);

// grad^2, element-wise.
ScoreVector score_fisher(const ParamVector& grad);

// |merged - trained|, element-wise.
ScoreVector score_gradient(const ParamVector& merged, const ParamVector& trained);

// Min-max scaling per layer (kLayer) or over the whole vector (kGlobal). A
// constant scope maps to zeros. With cls_only, everything outside the
// classifier layer becomes kSuppressedScore.
ScoreVector normalize(const ScoreVector& scores, const NormMode& mode);

}  // namespace fedobp
