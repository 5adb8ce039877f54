#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "fedobp/rng.hpp"
#include "fedobp/tensor.hpp"

namespace fedobp {

// Images are (N, channels, height, width) with pixels in [0, 1].
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
  std::span<const double> sample(std::size_t i) const { return images.row(i); }

  // Throws std::invalid_argument if labels, shape or pixel range are invalid.
  void validate() const;
};

struct ClientDataset {
  int client_id = 0;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;

  std::size_t sample_count() const { return train_indices.size(); }

  friend bool operator==(const ClientDataset&, const ClientDataset&) = default;
};

struct PartitionPlan {
  std::vector<ClientDataset> clients;
  double alpha = 0.0;
  RngSeed seed = 0;

  std::size_t total_assigned() const;

  friend bool operator==(const PartitionPlan&, const PartitionPlan&) = default;
};

// For each class, draws client proportions from Dir(alpha) and hands out that
// class's (shuffled) samples by largest-remainder rounding. Clients left with
// fewer than min_per_client samples then take one sample at a time from the
// largest client, lowest index first. All samples land in train_indices.
PartitionPlan dirichlet_partition(const Dataset& dataset, std::size_t n_clients, double alpha,
                                  RngSeed seed, std::size_t min_per_client = 1);

// Splits each client's samples into train/test, stratified by class. The test
// count is round(test_fraction * n) clamped to [1, n-1].
PartitionPlan split_train_test(const PartitionPlan& plan, const Dataset& dataset,
                               double test_fraction, RngSeed seed);

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path);

// Writes pixels as round(255 * value); labels must fit in a byte.
void save_idx(const Dataset& dataset, const std::filesystem::path& images_path,
              const std::filesystem::path& labels_path);

// One uniform random template per class plus N(0, noise_sigma^2) pixel noise,
// clamped to [0, 1]. Samples are ordered class-major.
Dataset synth_dataset(std::size_t num_classes, std::size_t per_class, std::size_t channels,
                      std::size_t height, std::size_t width, double noise_sigma, RngSeed seed);

// Copies the selected samples into a (B, C, H, W) batch.
Tensor gather_batch(const Dataset& dataset, std::span<const std::size_t> indices);
std::vector<int> gather_labels(const Dataset& dataset, std::span<const std::size_t> indices);

// Line-oriented plan file: `client_id,split,index` rows after a header.
void write_partition_plan(std::ostream& os, const PartitionPlan& plan);
PartitionPlan read_partition_plan(std::istream& is);

}  // namespace fedobp
