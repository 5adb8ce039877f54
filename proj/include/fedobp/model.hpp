#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedobp/rng.hpp"
#include "fedobp/tensor.hpp"

namespace fedobp {

enum class LayerKind { kConv, kFc };

struct LayerInfo {
  std::string name;
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
  LayerKind kind = LayerKind::kFc;
  bool is_classifier = false;

  std::size_t size() const { return end - start; }
  bool contains(std::size_t index) const { return index >= start && index < end; }

  friend bool operator==(const LayerInfo&, const LayerInfo&) = default;
};

// Named, contiguous index ranges over a flat parameter vector. The last layer
// is always the classifier.
class LayerLayout {
 public:
  explicit LayerLayout(std::vector<LayerInfo> layers);

  const std::vector<LayerInfo>& layers() const { return layers_; }
  std::size_t total_params() const { return layers_.back().end; }
  const LayerInfo& classifier() const { return layers_.back(); }

  // nullptr when no layer has this name.
  const LayerInfo* find(std::string_view name) const;
  // Position in layers() of the layer holding a parameter index.
  std::size_t layer_of(std::size_t index) const;

  friend bool operator==(const LayerLayout&, const LayerLayout&) = default;

 private:
  std::vector<LayerInfo> layers_;
};

using LayoutPtr = std::shared_ptr<const LayerLayout>;

// Flat model parameters bound to a layer layout.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(LayoutPtr layout);
  ParamVector(LayoutPtr layout, std::vector<double> values);

  const LayoutPtr& layout() const { return layout_; }
  std::size_t size() const { return values_.size(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double& operator[](std::size_t k) { return values_[k]; }
  double operator[](std::size_t k) const { return values_[k]; }

  bool same_layout(const ParamVector& other) const;
  bool all_finite() const;

  // Bitwise comparison of values plus layout equality.
  friend bool operator==(const ParamVector& a, const ParamVector& b) {
    return a.same_layout(b) && a.values_ == b.values_;
  }

 private:
  LayoutPtr layout_;
  std::vector<double> values_;
};

enum class PoolKind { kNone, kMax2x2 };

struct ModelSpec {
  std::size_t channels = 1;
  std::size_t height = 28;
  std::size_t width = 28;
  std::vector<std::size_t> conv_channels{8, 16};
  std::size_t kernel_size = 5;
  PoolKind pool = PoolKind::kMax2x2;
  std::vector<std::size_t> fc_widths{64};
  std::size_t num_classes = 10;

  // Throws std::invalid_argument on empty or non-positive geometry.
  void validate() const;
  std::size_t input_size() const { return channels * height * width; }
  // Layers are named conv1.., fc1.., classifier; weights precede biases.
  LayoutPtr make_layout() const;
  std::size_t total_params() const { return make_layout()->total_params(); }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// Two conv layers (8 and 16 channels, 5x5, max-pool) and two dense layers.
ModelSpec default_cnn(std::size_t channels, std::size_t height, std::size_t width,
                      std::size_t num_classes);

// Fan-in-scaled uniform weights in [-sqrt(6/fan_in), sqrt(6/fan_in)], zero biases.
ParamVector init_params(const ModelSpec& spec, RngSeed seed);

// Logits of shape (batch, num_classes). The batch is any tensor whose leading
// axis indexes samples and whose rows hold channels*height*width values.
Tensor forward(const ParamVector& params, const ModelSpec& spec, const Tensor& batch);

// Row-wise softmax of a (batch, classes) logit tensor.
Tensor softmax(const Tensor& logits);

struct LossGrad {
  double loss = 0.0;
  ParamVector grad;
};

// Mean softmax cross-entropy over the batch and its exact gradient.
LossGrad loss_and_grad(const ParamVector& params, const ModelSpec& spec, const Tensor& batch,
                       std::span<const int> labels);

ParamVector sgd_step(const ParamVector& params, const ParamVector& grad, double eta);
void sgd_step_inplace(ParamVector& params, const ParamVector& grad, double eta);

}  // namespace fedobp
