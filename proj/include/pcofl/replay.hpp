#pragma once

// Data-free replay: synthesize class-conditional surrogate inputs whose
// batch statistics match a trained model's stored normalization moments,
// then refresh earlier model snapshots on the synthesized pool.

#include <cstdint>
#include <utility>
#include <vector>

#include "pcofl/net.hpp"
#include "pcofl/types.hpp"

namespace pcofl {

struct ReplayHyperparams {
  Scalar beta_bn = 1;         // weight of the normalization-moment term
  Scalar beta_tv = 0;         // weight of the total-variation smoothness term
  Scalar beta_l2 = 1e-4;      // weight of the input-magnitude term
  Scalar beta_feature = 1e-2; // weight of the post-activation moment term
  Scalar label_weight = 0.5;  // weight of the class-label fit term
  int iterations = 400;       // synthesis optimization steps
  Scalar step_size = 0.1;     // initial synthesis step, cosine-decayed
  Scalar clamp = 5.0;         // synthesized inputs stay in [-clamp, clamp]
  int images_per_class = 100; // pool rows synthesized per class
  int finetune_epochs = 3;    // refresh passes over the pool
  Scalar finetune_lr = 0.002; // refresh step size
  int finetune_batch = 32;    // refresh minibatch size

  void validate() const;
};

// Count-weighted combination of per-client running statistics into one
// population estimate (law of total variance). Throws DataError when a
// layer has no recorded activity across all parts.
BnStatSet capture_bn_stats(const NetSpec& spec,
                           const std::vector<BnStatSet>& parts);

// Mean and variance of max(0, Z) for Z ~ Normal(m, s^2); s == 0 gives the
// deterministic limit (max(0, m), 0).
std::pair<Scalar, Scalar> relu_gaussian_moments(Scalar m, Scalar s);

// Per-feature mean squared discrepancy of batch moments against a target:
// (|mu - mu*|^2 + |var - var*|^2) / width.
Scalar bn_moment_loss(const Vector& mean, const Vector& var,
                      const BnLayerStats& target);

// Mean over rows of the summed squared difference of adjacent features.
Scalar total_variation(const Matrix& inputs);

struct SynthesisObjective {
  Scalar value = 0;
  Matrix input_grads;
};

// Full synthesis objective and its gradient with respect to the inputs.
// The model runs in eval mode against `stats`; the moment terms compare the
// batch moments observed at each normalization layer (and after each
// rectifier that follows one) to the targets implied by `stats`.
SynthesisObjective eval_synthesis_objective(const NetSpec& spec,
                                            const Vector& params,
                                            const Matrix& inputs,
                                            const BnStatSet& stats,
                                            const IntVector& labels,
                                            const ReplayHyperparams& hp);

struct SynthesisResult {
  Matrix inputs;
  Scalar initial_objective = 0;
  Scalar final_objective = 0;  // never exceeds initial_objective
};

// Gradient-based recovery of `labels.size()` inputs from noise. Steps are
// direction-normalized (g / rms(g)) with a cosine-decayed length, iterates
// are clamped, and the best-objective iterate is returned.
SynthesisResult synthesize(const NetSpec& spec, const Vector& params,
                           const BnStatSet& stats, const IntVector& labels,
                           const ReplayHyperparams& hp, std::uint64_t seed);

struct SyntheticPool {
  int source_batch = 0;  // onboarding batch whose model produced the pool
  Matrix inputs;
  IntVector labels;
};

// images_per_class rows per class, each class synthesized with its own
// derived seed.
SyntheticPool build_pool(const NetSpec& spec, const Vector& params,
                         const BnStatSet& stats, const ReplayHyperparams& hp,
                         int source_batch, std::uint64_t seed);

// Refresh a frozen model on a synthetic pool. Runs in eval mode against the
// snapshot's own statistics, applies plain gradient steps filtered by the
// hard mask (inactive positions stay bit-identical), and returns the
// end-of-epoch iterate with the lowest full-pool loss (the untouched
// snapshot included, so the result never scores worse on the pool).
Vector finetune_prior(const NetSpec& spec, const Vector& snapshot_params,
                      const BnStatSet& snapshot_stats, const Vector& hard_mask,
                      const SyntheticPool& pool, const ReplayHyperparams& hp,
                      std::uint64_t seed);

}  // namespace pcofl
