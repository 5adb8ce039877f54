#pragma once

#include <cstddef>
#include <span>

#include "fedobp/data.hpp"
#include "fedobp/model.hpp"
#include "fedobp/rng.hpp"

namespace fedobp {

struct TrainResult {
  ParamVector params;
  double mean_loss = 0.0;  // mean of the mini-batch losses seen during training
  std::size_t steps = 0;
};

// Mini-batch SGD over the client's training split. Each epoch visits the
// samples in an order drawn from `seed` and epoch number; the trailing partial
// batch is kept.
TrainResult local_train_tracked(const ParamVector& params, const ModelSpec& spec,
                                const Dataset& dataset, const ClientDataset& client,
                                double eta, int epochs, std::size_t batch_size, RngSeed seed);

ParamVector local_train(const ParamVector& params, const ModelSpec& spec, const Dataset& dataset,
                        const ClientDataset& client, double eta, int epochs,
                        std::size_t batch_size, RngSeed seed);

// Mean loss and gradient over the given samples in one deterministic pass.
LossGrad dataset_loss_and_grad(const ParamVector& params, const ModelSpec& spec,
                               const Dataset& dataset, std::span<const std::size_t> indices);

}  // namespace fedobp
