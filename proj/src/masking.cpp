#include "pcofl/masking.hpp"

#include <cmath>

namespace pcofl {

namespace {

void check_mask(const MaskState& m) {
  if (m.logits.size() < 1) throw ShapeError("mask: empty logits");
  if (m.gamma <= 0) throw StateError("mask: gamma must be > 0");
  if (!m.logits.allFinite()) throw NumericError("mask: non-finite logits");
}

std::vector<std::uint8_t> harden(const Vector& logits) {
  // sigmoid(gamma*s) >= 0.5  <=>  s >= 0 for any gamma > 0
  std::vector<std::uint8_t> bits(logits.size());
  for (Eigen::Index i = 0; i < logits.size(); ++i) bits[i] = logits[i] >= 0;
  return bits;
}

}  // namespace

MaskState make_mask(int batch_index, Eigen::Index count, Scalar gamma) {
  if (count < 1) throw ShapeError("make_mask: count must be >= 1");
  if (gamma <= 0) throw InputError("make_mask: gamma must be > 0");
  MaskState m;
  m.batch_index = batch_index;
  m.logits = Vector::Zero(count);
  m.gamma = gamma;
  return m;
}

MaskState make_mask_reusing(int batch_index, Scalar gamma,
                            const std::vector<const MaskState*>& earlier) {
  if (earlier.empty())
    throw InputError("make_mask_reusing: need at least one earlier mask");
  const Eigen::Index count = earlier.front()->logits.size();
  MaskState m = make_mask(batch_index, count, gamma);
  for (const MaskState* e : earlier) {
    if (e->logits.size() != count)
      throw ShapeError("make_mask_reusing: mask lengths differ");
    Vector hard = materialize(*e, MaskForm::Hard);
    for (Eigen::Index i = 0; i < count; ++i)
      if (hard[i] > 0) m.logits[i] = 1.0;
  }
  return m;
}

Vector materialize(const MaskState& m, MaskForm form) {
  check_mask(m);
  if (form == MaskForm::Hard) {
    if (m.frozen) {
      Vector v(m.logits.size());
      for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = m.hard_cache[i];
      return v;
    }
    Vector v(m.logits.size());
    std::vector<std::uint8_t> bits = harden(m.logits);
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = bits[i];
    return v;
  }
  return (1.0 / (1.0 + (-m.gamma * m.logits.array()).exp())).matrix();
}

Vector apply_mask(const Vector& mask_values, const Vector& theta) {
  if (mask_values.size() != theta.size())
    throw ShapeError("apply_mask: length mismatch");
  return mask_values.cwiseProduct(theta);
}

void freeze(MaskState& m) {
  check_mask(m);
  if (m.frozen) return;
  m.hard_cache = harden(m.logits);
  m.frozen = true;
}

void anneal_gamma(MaskState& m, Scalar growth, Scalar gamma_max) {
  if (m.frozen) throw StateError("anneal_gamma: mask is frozen");
  if (growth < 1) throw InputError("anneal_gamma: growth must be >= 1");
  m.gamma = std::min(gamma_max, m.gamma * growth);
}

void update_logits(MaskState& m, const Vector& grad, Scalar lr) {
  if (m.frozen) throw StateError("update_logits: mask is frozen");
  if (grad.size() != m.logits.size())
    throw ShapeError("update_logits: gradient length mismatch");
  m.logits -= lr * grad;
}

MaskGradResult mask_grads(const NetSpec& spec, const HypernetState& h,
                          const Vector& embedding, const MaskState& m,
                          const Eigen::Ref<const Matrix>& inputs,
                          const IntVector& labels, const BnStatSet& stats,
                          Scalar lambda) {
  if (m.frozen) throw StateError("mask_grads: mask is frozen");
  check_mask(m);
  if (lambda < 0) throw InputError("mask_grads: lambda must be >= 0");

  Vector theta = generate(h, embedding);
  if (theta.size() != m.logits.size())
    throw ShapeError("mask_grads: mask length does not match param count");
  Vector soft = materialize(m, MaskForm::Soft);
  Vector theta_hat = apply_mask(soft, theta);

  LossResult res = loss_and_grads(spec, theta_hat, inputs, labels, stats,
                                  Mode::Train);

  // d(soft_j)/d(s_j) = gamma * soft_j * (1 - soft_j)
  Vector dsig = (m.gamma * soft.array() * (1 - soft.array())).matrix();

  MaskGradResult r;
  r.grad_logits =
      (dsig.array() * (res.param_grads.array() * theta.array() + lambda))
          .matrix();
  r.task_loss = res.loss;
  r.l1_term = lambda * soft.sum();
  return r;
}

CapacityReport capacity_report(const NetSpec& spec,
                               const std::vector<MaskState>& masks) {
  spec.validate();
  const Eigen::Index count = spec.param_count();
  CapacityReport rep;
  std::vector<bool> earlier_union(count, false);

  for (const MaskState& m : masks) {
    if (m.logits.size() != count)
      throw ShapeError("capacity_report: mask length does not match spec");
    Vector hard = materialize(m, MaskForm::Hard);

    BatchCapacity bc;
    bc.batch_index = m.batch_index;
    bc.total = count;
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
      const LayerSpec& l = spec.layers[li];
      LayerCapacity lc;
      lc.layer_index = li;
      lc.params_total = spec.layer_param_count(li);
      const Eigen::Index off = spec.layer_param_offset(li);
      for (Eigen::Index k = 0; k < lc.params_total; ++k) {
        if (hard[off + k] > 0) {
          ++lc.params_active;
          if (earlier_union[off + k])
            ++lc.params_reused;
          else
            ++lc.params_new;
        }
      }
      if (l.kind == LayerKind::Dense) {
        lc.neurons_total = l.fan_out;
        // weights are stored column-major as (fan_out x fan_in); neuron k
        // owns row k of W plus bias k
        for (Eigen::Index k = 0; k < l.fan_out; ++k) {
          bool active = hard[off + l.fan_in * l.fan_out + k] > 0;  // bias
          for (Eigen::Index j = 0; !active && j < l.fan_in; ++j)
            active = hard[off + j * l.fan_out + k] > 0;
          if (active) ++lc.neurons_active;
        }
      }
      bc.active += lc.params_active;
      bc.newly_activated += lc.params_new;
      bc.reused += lc.params_reused;
      bc.neurons_total += lc.neurons_total;
      bc.neurons_active += lc.neurons_active;
      bc.layers.push_back(lc);
    }
    bc.active_fraction = double(bc.active) / double(bc.total);
    bc.reuse_fraction = bc.active > 0 ? double(bc.reused) / double(bc.active) : 0;
    rep.batches.push_back(std::move(bc));

    for (Eigen::Index k = 0; k < count; ++k)
      if (hard[k] > 0) earlier_union[k] = true;
  }

  if (!masks.empty()) {
    rep.params_total = count;
    for (Eigen::Index k = 0; k < count; ++k)
      if (earlier_union[k]) ++rep.params_union_active;
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
      const LayerSpec& l = spec.layers[li];
      if (l.kind != LayerKind::Dense) continue;
      const Eigen::Index off = spec.layer_param_offset(li);
      rep.neurons_total += l.fan_out;
      for (Eigen::Index k = 0; k < l.fan_out; ++k) {
        bool active = earlier_union[off + l.fan_in * l.fan_out + k];
        for (Eigen::Index j = 0; !active && j < l.fan_in; ++j)
          active = earlier_union[off + j * l.fan_out + k];
        if (active) ++rep.neurons_union_active;
      }
    }
  }
  return rep;
}

}  // namespace pcofl
