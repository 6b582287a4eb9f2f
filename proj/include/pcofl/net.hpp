#pragma once

// Dense feed-forward classifier over a single flat parameter vector.
// Layers are described by NetSpec; parameters live in one Eigen vector so
// that generators, masks, and snapshots can treat a whole model as data.

#include <cstdint>
#include <utility>
#include <vector>

#include "pcofl/types.hpp"

namespace pcofl {

enum class LayerKind { Dense, BatchNorm, Relu };
enum class Mode { Train, Eval };

struct LayerSpec {
  LayerKind kind;
  Eigen::Index fan_in = 0;
  Eigen::Index fan_out = 0;
};

struct NetSpec {
  std::vector<LayerSpec> layers;
  Eigen::Index input_dim = 0;
  Eigen::Index classes = 0;
  Scalar bn_eps = 1e-5;
  Scalar bn_momentum = 0.1;

  // input -> hidden -> BN -> ReLU -> hidden -> BN -> ReLU -> classes
  static NetSpec mlp(Eigen::Index input, Eigen::Index hidden,
                     Eigen::Index classes, int hidden_layers = 2);
  // single BatchNorm over the raw input; logits = BN output
  static NetSpec bn_probe(Eigen::Index width);

  void validate() const;
  Eigen::Index param_count() const;
  Eigen::Index layer_param_count(std::size_t i) const;
  Eigen::Index layer_param_offset(std::size_t i) const;
  std::vector<std::size_t> bn_layers() const;
};

// Per-BatchNorm-layer running statistics. Entries are ordered like
// NetSpec::bn_layers(). Variances are floored at the spec's bn_eps.
struct BnLayerStats {
  Vector mean;
  Vector var;
  std::int64_t count = 0;
};

struct BnStatSet {
  std::vector<BnLayerStats> layers;
};

BnStatSet make_bn_stats(const NetSpec& spec);  // mean 0, var 1, count 0

struct LayerTrace {
  Matrix input;       // activation entering the layer
  Vector batch_mean;  // BatchNorm only: biased moments of `input`
  Vector batch_var;
  Vector inv_std;     // 1/sqrt(var_used + eps); var_used depends on mode
  Matrix normalized;  // BatchNorm only: x_hat actually used downstream
};

struct ForwardTrace {
  Mode mode = Mode::Train;
  Eigen::Index batch = 0;
  std::vector<LayerTrace> layers;
  Matrix output;  // logits
};

// Forward never mutates `stats`; running statistics change only through
// commit_bn_update on a train-mode trace.
ForwardTrace forward(const NetSpec& spec, const Vector& params,
                     const Eigen::Ref<const Matrix>& inputs,
                     const BnStatSet& stats, Mode mode);

void commit_bn_update(const NetSpec& spec, BnStatSet& stats,
                      const ForwardTrace& trace);

// Batch-mean cross entropy over softmax(logits). Returns loss and d(loss)/d(logits).
std::pair<Scalar, Matrix> softmax_cross_entropy(const Matrix& logits,
                                                const IntVector& labels);

// Cotangent injected into an intermediate activation. index i addresses
// A_i, where A_0 is the network input and A_i the output of layer i.
struct ActivationCotangent {
  std::size_t activation_index = 0;
  Matrix value;
};

struct Gradients {
  Vector param_grads;
  Matrix input_grads;
};

Gradients backward(const NetSpec& spec, const Vector& params,
                   const ForwardTrace& trace, const Matrix& dlogits,
                   const std::vector<ActivationCotangent>& injections = {});

struct LossResult {
  Scalar loss = 0;
  Vector param_grads;
  Matrix input_grads;
  ForwardTrace trace;
};

LossResult loss_and_grads(const NetSpec& spec, const Vector& params,
                          const Eigen::Ref<const Matrix>& inputs,
                          const IntVector& labels, const BnStatSet& stats,
                          Mode mode);

// Dense weights uniform in +/- sqrt(6/(fan_in+fan_out)), biases zero,
// BatchNorm scale one and shift zero.
Vector init_params(const NetSpec& spec, std::uint64_t seed);

// velocity <- momentum*velocity + grads; params <- params - lr*velocity
void sgd_step(Vector& params, Vector& velocity, const Vector& grads,
              Scalar lr, Scalar momentum);

// lr0*(1+cos(pi*round/total))/2; exactly lr0 at round 0 and 0 at round==total.
Scalar cosine_lr(std::int64_t round, std::int64_t total_rounds, Scalar lr0);

Scalar accuracy(const NetSpec& spec, const Vector& params,
                const Eigen::Ref<const Matrix>& inputs,
                const IntVector& labels, const BnStatSet& stats);

}  // namespace pcofl
