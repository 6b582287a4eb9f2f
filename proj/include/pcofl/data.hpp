#pragma once

// Synthetic Gaussian-blob classification data, Dirichlet non-IID client
// partitions, and the batch arrival schedule.

#include <cstdint>
#include <string>
#include <vector>

#include "pcofl/types.hpp"

namespace pcofl {

struct LabeledDataset {
  Matrix inputs;     // one sample per row
  IntVector labels;  // values in [0, classes)
  Eigen::Index classes = 0;

  void validate() const;
};

// Class means are seeded points of norm 3; samples are mean + spread * N(0, I).
// Rows are grouped by class in label order.
LabeledDataset gen_blobs(Eigen::Index dim, Eigen::Index classes,
                         Eigen::Index per_class, Scalar spread,
                         std::uint64_t seed);

struct ClientIndices {
  std::vector<int> train;
  std::vector<int> test;
};

struct PartitionPlan {
  std::vector<ClientIndices> clients;

  void validate(const LabeledDataset& data) const;  // exact disjoint cover
};

// Per class draws client shares from Dirichlet(alpha * 1) and assigns each
// sample multinomially. Clients that end up with fewer than two samples
// steal one sample at a time from the currently largest client, so every
// client can afford at least one train and one test sample.
PartitionPlan dirichlet_partition(const LabeledDataset& data, int n_clients,
                                  Scalar alpha, Scalar test_fraction,
                                  std::uint64_t seed);

// Client ids 0..n-1 shuffled once and sliced into arrival batches.
std::vector<std::vector<int>> schedule_batches(int n_clients,
                                               const std::vector<int>& sizes,
                                               std::uint64_t seed);

Matrix gather_rows(const Matrix& inputs, const std::vector<int>& idx);
IntVector gather_labels(const IntVector& labels, const std::vector<int>& idx);

// Per-class sample shares among `idx`; used by heterogeneity checks.
Vector label_distribution(const LabeledDataset& data,
                          const std::vector<int>& idx);

// Flat binary dataset file: magic "PCOFLDS1", then three little-endian
// uint64 (n, dim, classes), n*dim float32 inputs row-major, n uint32 labels.
LabeledDataset load_dataset(const std::string& path);
void save_dataset(const LabeledDataset& data, const std::string& path);

}  // namespace pcofl
