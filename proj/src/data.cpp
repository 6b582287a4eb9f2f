#include "pcofl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "pcofl/rng.hpp"

namespace pcofl {

void LabeledDataset::validate() const {
  if (inputs.rows() < 1) throw DataError("dataset: empty");
  if (labels.size() != inputs.rows())
    throw DataError("dataset: labels/inputs row mismatch");
  if (classes < 1) throw DataError("dataset: classes must be >= 1");
  if (!inputs.allFinite()) throw DataError("dataset: non-finite input");
  for (Eigen::Index i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || labels[i] >= classes)
      throw DataError("dataset: label out of range at row " +
                      std::to_string(i));
}

LabeledDataset gen_blobs(Eigen::Index dim, Eigen::Index classes,
                         Eigen::Index per_class, Scalar spread,
                         std::uint64_t seed) {
  if (dim < 1 || classes < 1 || per_class < 1)
    throw InputError("gen_blobs: dim, classes, per_class must be >= 1");
  if (spread < 0) throw InputError("gen_blobs: spread must be >= 0");

  std::normal_distribution<Scalar> stdnorm(0, 1);

  Matrix means(classes, dim);
  {
    std::mt19937_64 eng = rng::engine(seed, "blob_means");
    for (Eigen::Index c = 0; c < classes; ++c) {
      Vector v(dim);
      do {
        for (Eigen::Index j = 0; j < dim; ++j) v[j] = stdnorm(eng);
      } while (v.norm() < 1e-9);
      means.row(c) = (3.0 * v / v.norm()).transpose();
    }
    for (Eigen::Index a = 0; a < classes; ++a)
      for (Eigen::Index b = a + 1; b < classes; ++b)
        if ((means.row(a) - means.row(b)).norm() < 1e-6)
          throw DataError("gen_blobs: class means collapsed");
  }

  LabeledDataset d;
  d.classes = classes;
  d.inputs.resize(classes * per_class, dim);
  d.labels.resize(classes * per_class);
  std::mt19937_64 eng = rng::engine(seed, "blob_samples");
  Eigen::Index row = 0;
  for (Eigen::Index c = 0; c < classes; ++c) {
    for (Eigen::Index k = 0; k < per_class; ++k, ++row) {
      for (Eigen::Index j = 0; j < dim; ++j)
        d.inputs(row, j) = means(c, j) + spread * stdnorm(eng);
      d.labels[row] = int(c);
    }
  }
  d.validate();
  return d;
}

void PartitionPlan::validate(const LabeledDataset& data) const {
  std::vector<int> seen(data.inputs.rows(), 0);
  for (const ClientIndices& ci : clients) {
    if (ci.train.empty() || ci.test.empty())
      throw DataError("partition: client without train or test samples");
    for (int i : ci.train) ++seen.at(i);
    for (int i : ci.test) ++seen.at(i);
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (seen[i] == 0)
      throw DataError("partition: sample " + std::to_string(i) + " unassigned");
    if (seen[i] > 1)
      throw DataError("partition: sample " + std::to_string(i) +
                      " assigned more than once");
  }
}

PartitionPlan dirichlet_partition(const LabeledDataset& data, int n_clients,
                                  Scalar alpha, Scalar test_fraction,
                                  std::uint64_t seed) {
  data.validate();
  if (n_clients < 1) throw InputError("dirichlet_partition: n_clients >= 1");
  if (alpha <= 0) throw InputError("dirichlet_partition: alpha must be > 0");
  if (test_fraction <= 0 || test_fraction >= 1)
    throw InputError("dirichlet_partition: test_fraction in (0, 1)");
  if (data.inputs.rows() < 2 * n_clients)
    throw DataError("dirichlet_partition: fewer than two samples per client");

  std::vector<std::vector<int>> assigned(n_clients);
  for (Eigen::Index c = 0; c < data.classes; ++c) {
    std::mt19937_64 eng = rng::engine(seed, "dirichlet", std::uint64_t(c));
    std::gamma_distribution<Scalar> g(alpha, 1.0);
    std::vector<Scalar> p(n_clients);
    Scalar sum = 0;
    for (int k = 0; k < n_clients; ++k) sum += p[k] = g(eng);
    if (sum <= 0) {  // total underflow; fall back to uniform shares
      std::fill(p.begin(), p.end(), 1.0);
      sum = Scalar(n_clients);
    }
    std::discrete_distribution<int> pick(p.begin(), p.end());
    for (Eigen::Index i = 0; i < data.labels.size(); ++i)
      if (data.labels[i] == c) assigned[pick(eng)].push_back(int(i));
  }

  // Repair: every client needs >= 2 samples to hold one train and one test.
  for (;;) {
    int needy = -1;
    for (int k = 0; k < n_clients; ++k)
      if (assigned[k].size() < 2) {
        needy = k;
        break;
      }
    if (needy < 0) break;
    int largest = 0;
    for (int k = 1; k < n_clients; ++k)
      if (assigned[k].size() > assigned[largest].size()) largest = k;
    if (assigned[largest].size() <= 2)
      throw DataError("dirichlet_partition: not enough samples to repair");
    assigned[needy].push_back(assigned[largest].back());
    assigned[largest].pop_back();
  }

  PartitionPlan plan;
  plan.clients.resize(n_clients);
  for (int k = 0; k < n_clients; ++k) {
    std::vector<int>& idx = assigned[k];
    std::sort(idx.begin(), idx.end());
    std::mt19937_64 eng = rng::engine(seed, "split", std::uint64_t(k));
    std::shuffle(idx.begin(), idx.end(), eng);
    const int n = int(idx.size());
    int n_test = int(std::llround(test_fraction * n));
    n_test = std::max(1, std::min(n - 1, n_test));
    ClientIndices& ci = plan.clients[k];
    ci.test.assign(idx.begin(), idx.begin() + n_test);
    ci.train.assign(idx.begin() + n_test, idx.end());
    std::sort(ci.test.begin(), ci.test.end());
    std::sort(ci.train.begin(), ci.train.end());
  }
  plan.validate(data);
  return plan;
}

std::vector<std::vector<int>> schedule_batches(int n_clients,
                                               const std::vector<int>& sizes,
                                               std::uint64_t seed) {
  if (n_clients < 1) throw InputError("schedule_batches: n_clients >= 1");
  if (sizes.empty()) throw InputError("schedule_batches: no batch sizes");
  int total = 0;
  for (int s : sizes) {
    if (s < 1) throw InputError("schedule_batches: batch sizes must be >= 1");
    total += s;
  }
  if (total != n_clients)
    throw InputError("schedule_batches: batch sizes must sum to n_clients");

  std::vector<int> ids(n_clients);
  std::iota(ids.begin(), ids.end(), 0);
  std::mt19937_64 eng = rng::engine(seed, "batch_schedule");
  std::shuffle(ids.begin(), ids.end(), eng);

  std::vector<std::vector<int>> batches;
  auto it = ids.begin();
  for (int s : sizes) {
    std::vector<int> b(it, it + s);
    std::sort(b.begin(), b.end());
    batches.push_back(std::move(b));
    it += s;
  }
  return batches;
}

Matrix gather_rows(const Matrix& inputs, const std::vector<int>& idx) {
  Matrix out(Eigen::Index(idx.size()), inputs.cols());
  for (std::size_t i = 0; i < idx.size(); ++i)
    out.row(Eigen::Index(i)) = inputs.row(idx[i]);
  return out;
}

IntVector gather_labels(const IntVector& labels, const std::vector<int>& idx) {
  IntVector out(Eigen::Index(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i)
    out[Eigen::Index(i)] = labels[idx[i]];
  return out;
}

Vector label_distribution(const LabeledDataset& data,
                          const std::vector<int>& idx) {
  Vector share = Vector::Zero(data.classes);
  for (int i : idx) share[data.labels[i]] += 1;
  if (!idx.empty()) share /= Scalar(idx.size());
  return share;
}

namespace {
constexpr char kMagic[8] = {'P', 'C', 'O', 'F', 'L', 'D', 'S', '1'};
}

LabeledDataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("load_dataset: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw DataError("load_dataset: bad magic in " + path);
  std::uint64_t n = 0, dim = 0, classes = 0;
  f.read(reinterpret_cast<char*>(&n), 8);
  f.read(reinterpret_cast<char*>(&dim), 8);
  f.read(reinterpret_cast<char*>(&classes), 8);
  if (!f) throw DataError("load_dataset: truncated header in " + path);
  if (n < 1 || dim < 1 || classes < 1 || n > (1ull << 32) ||
      dim > (1ull << 20))
    throw DataError("load_dataset: implausible header in " + path);

  LabeledDataset d;
  d.classes = Eigen::Index(classes);
  d.inputs.resize(Eigen::Index(n), Eigen::Index(dim));
  std::vector<float> row(dim);
  for (std::uint64_t i = 0; i < n; ++i) {
    f.read(reinterpret_cast<char*>(row.data()),
           std::streamsize(dim * sizeof(float)));
    if (!f)
      throw DataError("load_dataset: truncated inputs at row " +
                      std::to_string(i));
    for (std::uint64_t j = 0; j < dim; ++j)
      d.inputs(Eigen::Index(i), Eigen::Index(j)) = Scalar(row[j]);
  }
  d.labels.resize(Eigen::Index(n));
  for (std::uint64_t i = 0; i < n; ++i) {
    std::uint32_t lab = 0;
    f.read(reinterpret_cast<char*>(&lab), 4);
    if (!f)
      throw DataError("load_dataset: truncated labels at row " +
                      std::to_string(i));
    d.labels[Eigen::Index(i)] = int(lab);
  }
  d.validate();
  return d;
}

void save_dataset(const LabeledDataset& data, const std::string& path) {
  data.validate();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("save_dataset: cannot open " + path);
  f.write(kMagic, 8);
  const std::uint64_t n = std::uint64_t(data.inputs.rows());
  const std::uint64_t dim = std::uint64_t(data.inputs.cols());
  const std::uint64_t classes = std::uint64_t(data.classes);
  f.write(reinterpret_cast<const char*>(&n), 8);
  f.write(reinterpret_cast<const char*>(&dim), 8);
  f.write(reinterpret_cast<const char*>(&classes), 8);
  for (std::uint64_t i = 0; i < n; ++i)
    for (std::uint64_t j = 0; j < dim; ++j) {
      const float v = float(data.inputs(Eigen::Index(i), Eigen::Index(j)));
      f.write(reinterpret_cast<const char*>(&v), 4);
    }
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::uint32_t lab = std::uint32_t(data.labels[Eigen::Index(i)]);
    f.write(reinterpret_cast<const char*>(&lab), 4);
  }
  if (!f) throw DataError("save_dataset: write failed for " + path);
}

}  // namespace pcofl
