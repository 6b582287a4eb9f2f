#pragma once

// Batch-specific parameter masks. Each onboarding batch owns one mask over
// the full flat parameter vector: trainable logits s, sharpness gamma, and
// a frozen flag. Soft values are sigmoid(gamma*s); hard values threshold at
// 0.5. Once frozen, a mask never changes (hard values come from a cache).

#include <cstdint>
#include <vector>

#include "pcofl/hypernet.hpp"
#include "pcofl/net.hpp"
#include "pcofl/types.hpp"

namespace pcofl {

enum class MaskForm { Soft, Hard };

struct MaskState {
  int batch_index = 0;
  Vector logits;
  Scalar gamma = 10.0;
  bool frozen = false;
  std::vector<std::uint8_t> hard_cache;  // filled at freeze time
};

// Batch-1 masks start at logits 0 (every position on the hard-active side
// of the threshold). Later batches bias logits to +1 at positions already
// activated by any earlier frozen mask.
MaskState make_mask(int batch_index, Eigen::Index count, Scalar gamma);
MaskState make_mask_reusing(int batch_index, Scalar gamma,
                            const std::vector<const MaskState*>& earlier);

Vector materialize(const MaskState& m, MaskForm form);
Vector apply_mask(const Vector& mask_values, const Vector& theta);

void freeze(MaskState& m);  // idempotent
void anneal_gamma(MaskState& m, Scalar growth, Scalar gamma_max);
void update_logits(MaskState& m, const Vector& grad, Scalar lr);

// Gradient of  L_task(sigmoid(gamma*s) .* generate(h, e); X, y)
//            + lambda * sum_j sigmoid(gamma*s_j)
// with respect to the logits s. The forward runs in train mode and never
// commits statistics.
struct MaskGradResult {
  Vector grad_logits;
  Scalar task_loss = 0;
  Scalar l1_term = 0;
};

MaskGradResult mask_grads(const NetSpec& spec, const HypernetState& h,
                          const Vector& embedding, const MaskState& m,
                          const Eigen::Ref<const Matrix>& inputs,
                          const IntVector& labels, const BnStatSet& stats,
                          Scalar lambda);

// Hard-mask occupancy accounting. "Reused" positions were active in some
// earlier batch; a dense-layer neuron counts as active when any of its
// incoming weights or its bias is active.
struct LayerCapacity {
  std::size_t layer_index = 0;
  std::int64_t params_total = 0;
  std::int64_t params_active = 0;
  std::int64_t params_new = 0;
  std::int64_t params_reused = 0;
  std::int64_t neurons_total = 0;  // dense layers only, else 0
  std::int64_t neurons_active = 0;
};

struct BatchCapacity {
  int batch_index = 0;
  std::int64_t total = 0;
  std::int64_t active = 0;
  std::int64_t newly_activated = 0;
  std::int64_t reused = 0;
  double active_fraction = 0;
  double reuse_fraction = 0;  // reused / active, 0 when nothing is active
  std::int64_t neurons_total = 0;
  std::int64_t neurons_active = 0;
  std::vector<LayerCapacity> layers;
};

struct CapacityReport {
  std::vector<BatchCapacity> batches;
  // Union across all batches: a position or neuron counts once when any
  // batch's hard mask activates it. Zero when no masks were given.
  std::int64_t params_total = 0;
  std::int64_t params_union_active = 0;
  std::int64_t neurons_total = 0;
  std::int64_t neurons_union_active = 0;
};

CapacityReport capacity_report(const NetSpec& spec,
                               const std::vector<MaskState>& masks);

}  // namespace pcofl
