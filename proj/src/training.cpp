#include "fedobp/training.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace fedobp {

TrainResult local_train_tracked(const ParamVector& params, const ModelSpec& spec,
                                const Dataset& dataset, const ClientDataset& client,
                                double eta, int epochs, std::size_t batch_size, RngSeed seed) {
  if (client.train_indices.empty()) throw std::invalid_argument("local_train: empty dataset");
  if (epochs < 0) throw std::invalid_argument("local_train: epochs must be >= 0");
  if (batch_size == 0) throw std::invalid_argument("local_train: batch_size must be positive");

  TrainResult result{params, 0.0, 0};
  std::vector<std::size_t> order = client.train_indices;
  const std::size_t n = order.size();
  double loss_sum = 0.0;
  for (int e = 0; e < epochs; ++e) {
    Engine eng = make_engine(seed, StreamTag::kTraining, 0, static_cast<std::uint64_t>(e));
    std::shuffle(order.begin(), order.end(), eng);
    for (std::size_t start = 0; start < n; start += batch_size) {
      const std::size_t len = std::min(batch_size, n - start);
      std::span<const std::size_t> idx(order.data() + start, len);
      const Tensor batch = gather_batch(dataset, idx);
      const std::vector<int> labels = gather_labels(dataset, idx);
      const LossGrad lg = loss_and_grad(result.params, spec, batch, labels);
      sgd_step_inplace(result.params, lg.grad, eta);
      loss_sum += lg.loss;
      ++result.steps;
    }
  }
  result.mean_loss = result.steps > 0 ? loss_sum / static_cast<double>(result.steps) : 0.0;
  return result;
}

ParamVector local_train(const ParamVector& params, const ModelSpec& spec, const Dataset& dataset,
                        const ClientDataset& client, double eta, int epochs,
                        std::size_t batch_size, RngSeed seed) {
  return local_train_tracked(params, spec, dataset, client, eta, epochs, batch_size, seed).params;
}

LossGrad dataset_loss_and_grad(const ParamVector& params, const ModelSpec& spec,
                               const Dataset& dataset, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("dataset gradient: no samples");
  const Tensor batch = gather_batch(dataset, indices);
  const std::vector<int> labels = gather_labels(dataset, indices);
  return loss_and_grad(params, spec, batch, labels);
}

}  // namespace fedobp
