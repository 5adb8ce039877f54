#include "fedobp/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace fedobp {

// ---------------------------------------------------------------------------
// Layout and parameter containers
// ---------------------------------------------------------------------------

LayerLayout::LayerLayout(std::vector<LayerInfo> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw std::invalid_argument("layout: no layers");
  std::size_t expected = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerInfo& l = layers_[i];
    if (l.start != expected || l.end <= l.start) {
      throw std::invalid_argument("layout: layer '" + l.name + "' is not contiguous");
    }
    if (l.is_classifier != (i + 1 == layers_.size())) {
      throw std::invalid_argument("layout: exactly the last layer must be the classifier");
    }
    expected = l.end;
  }
}

const LayerInfo* LayerLayout::find(std::string_view name) const {
  for (const LayerInfo& l : layers_) {
    if (l.name == name) return &l;
  }
  return nullptr;
}

std::size_t LayerLayout::layer_of(std::size_t index) const {
  auto it = std::upper_bound(layers_.begin(), layers_.end(), index,
                             [](std::size_t k, const LayerInfo& l) { return k < l.end; });
  if (it == layers_.end()) throw std::out_of_range("layout: index beyond total_params");
  return static_cast<std::size_t>(it - layers_.begin());
}

ParamVector::ParamVector(LayoutPtr layout)
    : layout_(std::move(layout)), values_(layout_->total_params(), 0.0) {}

ParamVector::ParamVector(LayoutPtr layout, std::vector<double> values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  if (!layout_ || values_.size() != layout_->total_params()) {
    throw std::invalid_argument("param vector: length does not match layout");
  }
}

bool ParamVector::same_layout(const ParamVector& other) const {
  if (layout_ == other.layout_) return true;
  if (!layout_ || !other.layout_) return false;
  return *layout_ == *other.layout_;
}

bool ParamVector::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Architecture geometry
// ---------------------------------------------------------------------------

namespace {

struct ConvGeom {
  std::size_t in_c, in_h, in_w;
  std::size_t out_c, k;
  std::size_t conv_h, conv_w;
  bool pooled;
  std::size_t out_h, out_w;
  std::size_t w_off, b_off;

  std::size_t in_size() const { return in_c * in_h * in_w; }
  std::size_t conv_size() const { return out_c * conv_h * conv_w; }
  std::size_t out_size() const { return out_c * out_h * out_w; }
};

struct FcGeom {
  std::size_t in, out;
  std::size_t w_off, b_off;
  bool relu;
};

struct Geometry {
  std::vector<ConvGeom> convs;
  std::vector<FcGeom> fcs;  // last entry is the classifier
  std::vector<LayerInfo> layers;
  std::size_t total = 0;
};

Geometry build_geometry(const ModelSpec& spec) {
  if (spec.channels == 0 || spec.height == 0 || spec.width == 0) {
    throw std::invalid_argument("model spec: input dimensions must be positive");
  }
  if (spec.num_classes < 2) throw std::invalid_argument("model spec: num_classes must be >= 2");
  if (!spec.conv_channels.empty() && spec.kernel_size == 0) {
    throw std::invalid_argument("model spec: kernel_size must be positive");
  }

  Geometry g;
  std::size_t c = spec.channels, h = spec.height, w = spec.width;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < spec.conv_channels.size(); ++i) {
    const std::size_t oc = spec.conv_channels[i];
    const std::size_t k = spec.kernel_size;
    if (oc == 0) throw std::invalid_argument("model spec: conv channels must be positive");
    if (h < k || w < k) throw std::invalid_argument("model spec: kernel larger than feature map");
    ConvGeom cg{};
    cg.in_c = c;
    cg.in_h = h;
    cg.in_w = w;
    cg.out_c = oc;
    cg.k = k;
    cg.conv_h = h - k + 1;
    cg.conv_w = w - k + 1;
    cg.pooled = spec.pool == PoolKind::kMax2x2;
    cg.out_h = cg.pooled ? cg.conv_h / 2 : cg.conv_h;
    cg.out_w = cg.pooled ? cg.conv_w / 2 : cg.conv_w;
    if (cg.out_h == 0 || cg.out_w == 0) {
      throw std::invalid_argument("model spec: pooling collapses the feature map");
    }
    cg.w_off = offset;
    cg.b_off = offset + oc * c * k * k;
    const std::size_t end = cg.b_off + oc;
    g.layers.push_back({"conv" + std::to_string(i + 1), offset, end, LayerKind::kConv, false});
    offset = end;
    g.convs.push_back(cg);
    c = oc;
    h = cg.out_h;
    w = cg.out_w;
  }

  std::size_t in = c * h * w;
  auto add_fc = [&](std::size_t out, std::string name, bool classifier) {
    if (out == 0) throw std::invalid_argument("model spec: fc width must be positive");
    FcGeom fg{in, out, offset, offset + out * in, !classifier};
    const std::size_t end = fg.b_off + out;
    g.layers.push_back({std::move(name), offset, end, LayerKind::kFc, classifier});
    offset = end;
    g.fcs.push_back(fg);
    in = out;
  };
  for (std::size_t i = 0; i < spec.fc_widths.size(); ++i) {
    add_fc(spec.fc_widths[i], "fc" + std::to_string(i + 1), false);
  }
  add_fc(spec.num_classes, "classifier", true);
  g.total = offset;
  return g;
}

// Per-sample activations, reused across the samples of one batch.
struct Workspace {
  std::vector<std::vector<double>> conv_act;    // post-ReLU conv outputs
  std::vector<std::vector<double>> pool_out;    // pooled outputs (if pooled)
  std::vector<std::vector<std::size_t>> pool_idx;
  std::vector<std::vector<double>> fc_act;      // post-activation fc outputs (logits last)
  std::vector<std::vector<double>> conv_grad;   // d/d(conv_act)
  std::vector<std::vector<double>> out_grad;    // d/d(layer output)
  std::vector<std::vector<double>> fc_grad;

  explicit Workspace(const Geometry& g) {
    for (const ConvGeom& c : g.convs) {
      conv_act.emplace_back(c.conv_size());
      pool_out.emplace_back(c.pooled ? c.out_size() : 0);
      pool_idx.emplace_back(c.pooled ? c.out_size() : 0);
      conv_grad.emplace_back(c.conv_size());
      out_grad.emplace_back(c.out_size());
    }
    for (const FcGeom& f : g.fcs) {
      fc_act.emplace_back(f.out);
      fc_grad.emplace_back(f.out);
    }
  }
};

class Network {
 public:
  explicit Network(const ModelSpec& spec) : g_(build_geometry(spec)) {}

  const Geometry& geometry() const { return g_; }

  // Fills ws with activations; returns the logits span.
  std::span<const double> forward(const double* params, const double* x, Workspace& ws) const {
    const double* in = x;
    for (std::size_t l = 0; l < g_.convs.size(); ++l) {
      const ConvGeom& c = g_.convs[l];
      std::vector<double>& z = ws.conv_act[l];
      conv_forward(c, params, in, z.data());
      for (double& v : z) v = v > 0.0 ? v : 0.0;
      if (c.pooled) {
        pool_forward(c, z.data(), ws.pool_out[l].data(), ws.pool_idx[l].data());
        in = ws.pool_out[l].data();
      } else {
        in = z.data();
      }
    }
    for (std::size_t l = 0; l < g_.fcs.size(); ++l) {
      const FcGeom& f = g_.fcs[l];
      double* z = ws.fc_act[l].data();
      const double* W = params + f.w_off;
      const double* b = params + f.b_off;
      for (std::size_t o = 0; o < f.out; ++o) {
        const double* row = W + o * f.in;
        double s = 0.0;
        for (std::size_t i = 0; i < f.in; ++i) s += row[i] * in[i];
        s += b[o];
        z[o] = f.relu ? (s > 0.0 ? s : 0.0) : s;
      }
      in = z;
    }
    return ws.fc_act.back();
  }

  // Accumulates d(loss)/d(params) into grad given d(loss)/d(logits) in
  // ws.fc_grad.back(). Requires a preceding forward() on the same sample.
  void backward(const double* params, const double* x, Workspace& ws, double* grad) const {
    const std::size_t nfc = g_.fcs.size();
    for (std::size_t l = nfc; l-- > 0;) {
      const FcGeom& f = g_.fcs[l];
      const double* delta = ws.fc_grad[l].data();
      const double* in = fc_input(l, x, ws);
      const double* W = params + f.w_off;
      double* gW = grad + f.w_off;
      double* gb = grad + f.b_off;
      for (std::size_t o = 0; o < f.out; ++o) {
        const double d = delta[o];
        gb[o] += d;
        if (d == 0.0) continue;
        double* grow = gW + o * f.in;
        for (std::size_t i = 0; i < f.in; ++i) grow[i] += d * in[i];
      }
      // Propagate to the input of this layer unless it is the raw sample.
      double* din = nullptr;
      if (l > 0) {
        din = ws.fc_grad[l - 1].data();
      } else if (!g_.convs.empty()) {
        din = ws.out_grad.back().data();
      }
      if (din == nullptr) continue;
      std::fill(din, din + f.in, 0.0);
      for (std::size_t o = 0; o < f.out; ++o) {
        const double d = delta[o];
        if (d == 0.0) continue;
        const double* row = W + o * f.in;
        for (std::size_t i = 0; i < f.in; ++i) din[i] += d * row[i];
      }
      // ReLU of the producing layer: zero where its activation was clipped.
      if (l > 0) {
        const double* act = ws.fc_act[l - 1].data();
        for (std::size_t i = 0; i < f.in; ++i) {
          if (act[i] <= 0.0) din[i] = 0.0;
        }
      }
    }

    for (std::size_t l = g_.convs.size(); l-- > 0;) {
      const ConvGeom& c = g_.convs[l];
      std::vector<double>& dz = ws.conv_grad[l];
      const std::vector<double>& act = ws.conv_act[l];
      if (c.pooled) {
        std::fill(dz.begin(), dz.end(), 0.0);
        const std::vector<double>& dout = ws.out_grad[l];
        const std::vector<std::size_t>& idx = ws.pool_idx[l];
        for (std::size_t j = 0; j < dout.size(); ++j) dz[idx[j]] += dout[j];
      } else {
        std::copy(ws.out_grad[l].begin(), ws.out_grad[l].end(), dz.begin());
      }
      for (std::size_t j = 0; j < dz.size(); ++j) {
        if (act[j] <= 0.0) dz[j] = 0.0;
      }
      const double* in = l == 0 ? x : conv_output(l - 1, ws);
      double* din = l == 0 ? nullptr : ws.out_grad[l - 1].data();
      conv_backward(c, params, in, dz.data(), grad, din);
    }
  }

 private:
  const double* conv_output(std::size_t l, const Workspace& ws) const {
    return g_.convs[l].pooled ? ws.pool_out[l].data() : ws.conv_act[l].data();
  }

  const double* fc_input(std::size_t l, const double* x, const Workspace& ws) const {
    if (l > 0) return ws.fc_act[l - 1].data();
    if (!g_.convs.empty()) return conv_output(g_.convs.size() - 1, ws);
    return x;
  }

  static void conv_forward(const ConvGeom& c, const double* params, const double* in,
                           double* z) {
    const std::size_t plane = c.conv_h * c.conv_w;
    const std::size_t in_plane = c.in_h * c.in_w;
    const double* W = params + c.w_off;
    const double* b = params + c.b_off;
    for (std::size_t oc = 0; oc < c.out_c; ++oc) {
      double* zo = z + oc * plane;
      std::fill(zo, zo + plane, b[oc]);
      for (std::size_t ic = 0; ic < c.in_c; ++ic) {
        const double* xi = in + ic * in_plane;
        const double* wk = W + (oc * c.in_c + ic) * c.k * c.k;
        for (std::size_t ky = 0; ky < c.k; ++ky) {
          for (std::size_t kx = 0; kx < c.k; ++kx) {
            const double w = wk[ky * c.k + kx];
            for (std::size_t y = 0; y < c.conv_h; ++y) {
              const double* src = xi + (y + ky) * c.in_w + kx;
              double* dst = zo + y * c.conv_w;
              for (std::size_t xx = 0; xx < c.conv_w; ++xx) dst[xx] += w * src[xx];
            }
          }
        }
      }
    }
  }

  static void pool_forward(const ConvGeom& c, const double* act, double* out,
                           std::size_t* idx) {
    for (std::size_t oc = 0; oc < c.out_c; ++oc) {
      const std::size_t base = oc * c.conv_h * c.conv_w;
      for (std::size_t y = 0; y < c.out_h; ++y) {
        for (std::size_t x = 0; x < c.out_w; ++x) {
          std::size_t best = base + (2 * y) * c.conv_w + 2 * x;
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t j = base + (2 * y + dy) * c.conv_w + 2 * x + dx;
              if (act[j] > act[best]) best = j;
            }
          }
          const std::size_t o = (oc * c.out_h + y) * c.out_w + x;
          out[o] = act[best];
          idx[o] = best;
        }
      }
    }
  }

  static void conv_backward(const ConvGeom& c, const double* params, const double* in,
                            const double* dz, double* grad, double* din) {
    const std::size_t plane = c.conv_h * c.conv_w;
    const std::size_t in_plane = c.in_h * c.in_w;
    const double* W = params + c.w_off;
    double* gW = grad + c.w_off;
    double* gb = grad + c.b_off;
    if (din != nullptr) std::fill(din, din + c.in_size(), 0.0);
    for (std::size_t oc = 0; oc < c.out_c; ++oc) {
      const double* d = dz + oc * plane;
      double bsum = 0.0;
      for (std::size_t j = 0; j < plane; ++j) bsum += d[j];
      gb[oc] += bsum;
      for (std::size_t ic = 0; ic < c.in_c; ++ic) {
        const double* xi = in + ic * in_plane;
        const std::size_t wbase = (oc * c.in_c + ic) * c.k * c.k;
        for (std::size_t ky = 0; ky < c.k; ++ky) {
          for (std::size_t kx = 0; kx < c.k; ++kx) {
            double s = 0.0;
            for (std::size_t y = 0; y < c.conv_h; ++y) {
              const double* src = xi + (y + ky) * c.in_w + kx;
              const double* dr = d + y * c.conv_w;
              for (std::size_t xx = 0; xx < c.conv_w; ++xx) s += dr[xx] * src[xx];
            }
            gW[wbase + ky * c.k + kx] += s;
            if (din == nullptr) continue;
            const double w = W[wbase + ky * c.k + kx];
            double* di = din + ic * in_plane;
            for (std::size_t y = 0; y < c.conv_h; ++y) {
              double* dst = di + (y + ky) * c.in_w + kx;
              const double* dr = d + y * c.conv_w;
              for (std::size_t xx = 0; xx < c.conv_w; ++xx) dst[xx] += w * dr[xx];
            }
          }
        }
      }
    }
  }

  Geometry g_;
};

void check_params(const ParamVector& params, const ModelSpec& spec) {
  if (!params.layout() || !(*params.layout() == *spec.make_layout())) {
    throw std::invalid_argument("params layout does not match model spec");
  }
}

std::size_t check_batch(const Tensor& batch, const ModelSpec& spec) {
  if (batch.rank() < 2 || batch.dim(0) == 0) {
    throw std::invalid_argument("batch must be non-empty with a leading sample axis");
  }
  if (batch.row_size() != spec.input_size()) {
    throw std::invalid_argument("batch sample size does not match model input shape");
  }
  return batch.dim(0);
}

// Numerically stable log-sum-exp split as (max, log(sum exp(z - max))).
double log_sum_exp(std::span<const double> z, double& max_out) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  max_out = m;
  return std::log(s);
}

}  // namespace

// ---------------------------------------------------------------------------
// Public API
// ---------------------------------------------------------------------------

void ModelSpec::validate() const { build_geometry(*this); }

LayoutPtr ModelSpec::make_layout() const {
  return std::make_shared<const LayerLayout>(build_geometry(*this).layers);
}

ModelSpec default_cnn(std::size_t channels, std::size_t height, std::size_t width,
                      std::size_t num_classes) {
  ModelSpec spec;
  spec.channels = channels;
  spec.height = height;
  spec.width = width;
  spec.num_classes = num_classes;
  return spec;
}

ParamVector init_params(const ModelSpec& spec, RngSeed seed) {
  const Geometry g = build_geometry(spec);
  ParamVector params(std::make_shared<const LayerLayout>(g.layers));
  Engine eng = make_engine(seed);
  auto fill = [&](std::size_t off, std::size_t n, std::size_t fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t i = 0; i < n; ++i) params[off + i] = dist(eng);
  };
  for (const ConvGeom& c : g.convs) fill(c.w_off, c.out_c * c.in_c * c.k * c.k, c.in_c * c.k * c.k);
  for (const FcGeom& f : g.fcs) fill(f.w_off, f.out * f.in, f.in);
  return params;
}

Tensor forward(const ParamVector& params, const ModelSpec& spec, const Tensor& batch) {
  check_params(params, spec);
  const std::size_t n = check_batch(batch, spec);
  const Network net(spec);
  Workspace ws(net.geometry());
  Tensor logits({n, spec.num_classes});
  for (std::size_t i = 0; i < n; ++i) {
    auto out = net.forward(params.values().data(), batch.row(i).data(), ws);
    std::copy(out.begin(), out.end(), logits.row(i).begin());
  }
  return logits;
}

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 2) throw std::invalid_argument("softmax: expected a rank-2 tensor");
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < logits.dim(0); ++i) {
    auto z = logits.row(i);
    auto p = out.row(i);
    double m = 0.0;
    const double lse = log_sum_exp(z, m);
    for (std::size_t c = 0; c < z.size(); ++c) p[c] = std::exp(z[c] - m - lse);
  }
  return out;
}

LossGrad loss_and_grad(const ParamVector& params, const ModelSpec& spec, const Tensor& batch,
                       std::span<const int> labels) {
  check_params(params, spec);
  const std::size_t n = check_batch(batch, spec);
  if (labels.size() != n) throw std::invalid_argument("loss_and_grad: label count mismatch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= spec.num_classes) {
      throw std::invalid_argument("loss_and_grad: label out of range");
    }
  }

  const Network net(spec);
  Workspace ws(net.geometry());
  LossGrad out{0.0, ParamVector(params.layout())};
  double* grad = out.grad.values().data();
  const double* p = params.values().data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = batch.row(i).data();
    auto z = net.forward(p, x, ws);
    double m = 0.0;
    const double lse = log_sum_exp(z, m);
    const auto y = static_cast<std::size_t>(labels[i]);
    total += (m - z[y]) + lse;
    std::vector<double>& dl = ws.fc_grad.back();
    for (std::size_t c = 0; c < z.size(); ++c) dl[c] = std::exp(z[c] - m - lse);
    dl[y] -= 1.0;
    net.backward(p, x, ws, grad);
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (double& g : out.grad.values()) g *= inv;
  out.loss = total * inv;
  return out;
}

void sgd_step_inplace(ParamVector& params, const ParamVector& grad, double eta) {
  if (!params.same_layout(grad)) throw std::invalid_argument("sgd_step: layout mismatch");
  if (!(eta > 0.0)) throw std::invalid_argument("sgd_step: eta must be positive");
  auto p = params.values();
  auto g = grad.values();
  for (std::size_t k = 0; k < p.size(); ++k) p[k] -= eta * g[k];
}

ParamVector sgd_step(const ParamVector& params, const ParamVector& grad, double eta) {
  ParamVector out = params;
  sgd_step_inplace(out, grad, eta);
  return out;
}

}  // namespace fedobp
