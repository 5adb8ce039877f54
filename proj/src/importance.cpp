#include "fedobp/importance.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fedobp {

void NormMode::validate() const {
  if (cls_only && kind != NormKind::kGlobal) {
    throw std::invalid_argument("norm: cls_only requires global normalization");
  }
}

std::string to_string(ScoreKind kind) {
  switch (kind) {
    case ScoreKind::kGradient: return "gradient";
    case ScoreKind::kFisher: return "fisher";
    case ScoreKind::kFedObp: return "fedobp";
  }
  return "?";
}

ScoreKind parse_score_kind(std::string_view text) {
  if (text == "gradient") return ScoreKind::kGradient;
  if (text == "fisher") return ScoreKind::kFisher;
  if (text == "fedobp" || text == "obp") return ScoreKind::kFedObp;
  throw std::invalid_argument("unknown score kind '" + std::string(text) + "'");
}

std::string to_string(NormKind kind) {
  switch (kind) {
    case NormKind::kNone: return "none";
    case NormKind::kLayer: return "layer";
    case NormKind::kGlobal: return "global";
  }
  return "?";
}

NormKind parse_norm_kind(std::string_view text) {
  if (text == "none") return NormKind::kNone;
  if (text == "layer") return NormKind::kLayer;
  if (text == "global") return NormKind::kGlobal;
  throw std::invalid_argument("unknown normalization '" + std::string(text) + "'");
}

namespace {

void require_same(const ParamVector& a, const ParamVector& b, const char* what) {
  if (!a.same_layout(b)) throw std::invalid_argument(std::string(what) + ": layout mismatch");
}

void min_max(std::span<double> v) {
  if (v.empty()) return;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double mn = *lo, mx = *hi;
  if (!(mx > mn)) {
    std::fill(v.begin(), v.end(), 0.0);
    return;
  }
  const double range = mx - mn;
  for (double& x : v) x = (x - mn) / range;
}

}  // namespace

ScoreVector score_obp(const ParamVector& local_prev, const ParamVector& global_now) {
  require_same(local_prev, global_now, "score_obp");
  ScoreVector out{std::vector<double>(local_prev.size()), local_prev.layout()};
  for (std::size_t k = 0; k < out.values.size(); ++k) {
    const double d = local_prev[k] - global_now[k];
    out.values[k] = d * d;
  }
  return out;
}

ScoreVector score_fisher(const ParamVector& grad) {
  if (!grad.all_finite()) throw std::invalid_argument("score_fisher: non-finite gradient");
  ScoreVector out{std::vector<double>(grad.size()), grad.layout()};
  for (std::size_t k = 0; k < out.values.size(); ++k) out.values[k] = grad[k] * grad[k];
  return out;
}

ScoreVector score_gradient(const ParamVector& merged, const ParamVector& trained) {
  require_same(merged, trained, "score_gradient");
  ScoreVector out{std::vector<double>(merged.size()), merged.layout()};
  for (std::size_t k = 0; k < out.values.size(); ++k) {
    out.values[k] = std::fabs(merged[k] - trained[k]);
  }
  return out;
}

ScoreVector normalize(const ScoreVector& scores, const NormMode& mode) {
  mode.validate();
  ScoreVector out = scores;
  std::span<double> v(out.values);
  switch (mode.kind) {
    case NormKind::kNone:
      break;
    case NormKind::kLayer:
      if (!out.layout) throw std::invalid_argument("normalize: layer norm needs a layout");
      for (const LayerInfo& l : out.layout->layers()) min_max(v.subspan(l.start, l.size()));
      break;
    case NormKind::kGlobal:
      min_max(v);
      break;
  }
  if (mode.cls_only) {
    const LayerInfo& cls = out.layout->classifier();
    for (std::size_t k = 0; k < v.size(); ++k) {
      if (!cls.contains(k)) v[k] = kSuppressedScore;
    }
  }
  return out;
}

}  // namespace fedobp
