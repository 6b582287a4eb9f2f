/** Oracle tests for batch-specific trainable parameter masks. */

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pcofl/masking.hpp"
#include "pcofl/net.hpp"

using namespace pcofl;

TEST_CASE("fresh masks start at logits zero, half-soft, hard-active") {
  const MaskState m = make_mask(1, 4, 10.0);
  CHECK(m.logits == Vector::Zero(4));
  CHECK(!m.frozen);
  const Vector soft = materialize(m, MaskForm::Soft);
  const Vector hard = materialize(m, MaskForm::Hard);
  for (Eigen::Index i = 0; i < 4; ++i) {
    CHECK(soft[i] == doctest::Approx(0.5));
    CHECK(hard[i] == 1.0);  // the threshold itself counts as active
  }
}

TEST_CASE("soft values follow sigmoid(gamma * s)") {
  MaskState m = make_mask(1, 3, 10.0);
  m.logits << 1.0, -1.0, 0.0;
  const Vector soft = materialize(m, MaskForm::Soft);
  CHECK(soft[0] == doctest::Approx(0.9999546021312976).epsilon(1e-12));
  CHECK(soft[1] == doctest::Approx(1.0 - 0.9999546021312976).epsilon(1e-9));
  CHECK(soft[2] == doctest::Approx(0.5));
  const Vector hard = materialize(m, MaskForm::Hard);
  CHECK(hard[0] == 1.0);
  CHECK(hard[1] == 0.0);
  CHECK(hard[2] == 1.0);
}

TEST_CASE("reusing masks bias previously active positions to +1") {
  MaskState first = make_mask(1, 4, 10.0);
  first.logits << 1.0, -1.0, 0.5, -0.5;
  freeze(first);
  const MaskState second =
      make_mask_reusing(2, 10.0, {&first});
  CHECK(second.batch_index == 2);
  CHECK(second.logits[0] == 1.0);
  CHECK(second.logits[1] == 0.0);
  CHECK(second.logits[2] == 1.0);
  CHECK(second.logits[3] == 0.0);

  SUBCASE("the union over several earlier masks counts") {
    MaskState other = make_mask(2, 4, 10.0);
    other.logits << -1.0, 1.0, -1.0, -1.0;
    freeze(other);
    const MaskState third = make_mask_reusing(3, 10.0, {&first, &other});
    CHECK(third.logits[0] == 1.0);
    CHECK(third.logits[1] == 1.0);
    CHECK(third.logits[2] == 1.0);
    CHECK(third.logits[3] == 0.0);
  }
}

TEST_CASE("freezing is idempotent and locks every mutation out") {
  MaskState m = make_mask(1, 3, 10.0);
  m.logits << 0.2, -0.3, 0.0;
  freeze(m);
  const Vector hard_before = materialize(m, MaskForm::Hard);
  freeze(m);  // idempotent
  CHECK(materialize(m, MaskForm::Hard) == hard_before);
  CHECK_THROWS_AS(update_logits(m, Vector::Ones(3), 0.1), StateError);
  CHECK_THROWS_AS(anneal_gamma(m, 1.05, 100.0), StateError);

  // The hard cache pins the frozen decision even if logits were tampered.
  m.logits[1] = 5.0;
  CHECK(materialize(m, MaskForm::Hard) == hard_before);
}

TEST_CASE("logit updates descend and gamma anneals up to its cap") {
  MaskState m = make_mask(1, 2, 10.0);
  Vector g(2);
  g << 1.0, -2.0;
  update_logits(m, g, 0.1);
  CHECK(m.logits[0] == doctest::Approx(-0.1));
  CHECK(m.logits[1] == doctest::Approx(0.2));

  anneal_gamma(m, 1.5, 20.0);
  CHECK(m.gamma == doctest::Approx(15.0));
  anneal_gamma(m, 1.5, 20.0);
  CHECK(m.gamma == doctest::Approx(20.0));  // capped
  anneal_gamma(m, 1.5, 20.0);
  CHECK(m.gamma == doctest::Approx(20.0));
}

TEST_CASE("apply_mask multiplies elementwise") {
  Vector mask(3), theta(3);
  mask << 1.0, 0.0, 0.5;
  theta << 2.0, 3.0, 4.0;
  const Vector out = apply_mask(mask, theta);
  CHECK(out[0] == 2.0);
  CHECK(out[1] == 0.0);
  CHECK(out[2] == 2.0);
}

TEST_CASE("capacity report counts exact occupancy on a tiny network") {
  // Dense(2->2): 6 params, BN(2): 4, Relu: 0, Dense(2->2): 6. Total 16.
  const NetSpec spec = NetSpec::mlp(2, 2, 2, 1);
  REQUIRE(spec.param_count() == 16);

  MaskState first = make_mask(1, 16, 10.0);
  first.logits = -Vector::Ones(16);
  // Activate dense-1 weights touching neuron 0 (w00, w01 at flat positions
  // 0 and 2 in column-major) plus its bias (position 4).
  first.logits[0] = 1.0;
  first.logits[2] = 1.0;
  first.logits[4] = 1.0;
  freeze(first);

  MaskState second = make_mask_reusing(2, 10.0, {&first});
  // Push everything the reuse bias left at the threshold to the inactive
  // side, as trained occupancy pressure would.
  for (Eigen::Index i = 0; i < 16; ++i)
    if (second.logits[i] == 0.0) second.logits[i] = -1.0;
  second.logits[1] = 1.0;  // w10: neuron 1 of dense-1 becomes active
  second.logits[7] = 1.0;  // one BN scale (does not count as a neuron)
  freeze(second);

  const CapacityReport rep = capacity_report(spec, {first, second});
  REQUIRE(rep.batches.size() == 2);

  const BatchCapacity& b1 = rep.batches[0];
  CHECK(b1.total == 16);
  CHECK(b1.active == 3);
  CHECK(b1.newly_activated == 3);
  CHECK(b1.reused == 0);
  CHECK(b1.active_fraction == doctest::Approx(3.0 / 16));
  CHECK(b1.reuse_fraction == doctest::Approx(0.0));

  const BatchCapacity& b2 = rep.batches[1];
  CHECK(b2.active == 5);           // 3 reused + 2 new
  CHECK(b2.reused == 3);
  CHECK(b2.newly_activated == 2);
  CHECK(b2.reuse_fraction == doctest::Approx(3.0 / 5));

  // Neuron accounting: dense layers have 2+2 = 4 neurons total. Batch 1
  // activates dense-1 neuron 0; batch 2 adds dense-1 neuron 1.
  CHECK(rep.batches[0].neurons_total == 4);
  CHECK(rep.batches[0].neurons_active == 1);
  CHECK(rep.batches[1].neurons_active == 2);
  CHECK(rep.params_total == 16);
  CHECK(rep.params_union_active == 5);
  CHECK(rep.neurons_union_active == 2);
}

TEST_CASE("mask gradients carry the occupancy pull even at zero task signal") {
  // With lambda > 0 every unfrozen position feels a positive pull of
  // lambda * gamma * sigmoid'(gamma s) from the occupancy term.
  const NetSpec spec = NetSpec::mlp(2, 2, 2, 1);
  const HypernetState h = make_hypernet(spec, 3, 4, 21);
  const Vector e = init_embedding(0, 3, 21);
  const MaskState m = make_mask(1, spec.param_count(), 4.0);
  const BnStatSet stats = make_bn_stats(spec);
  Matrix x(2, 2);
  x << 0.1, -0.2, 0.3, 0.4;
  IntVector y(2);
  y << 0, 1;

  const MaskGradResult a = mask_grads(spec, h, e, m, x, y, stats, 0.0);
  const MaskGradResult b = mask_grads(spec, h, e, m, x, y, stats, 0.5);
  CHECK(a.l1_term == 0.0);
  // At logits 0 every soft value is 0.5: 0.5 * (0.5 * 16) = 4.
  CHECK(b.l1_term == doctest::Approx(0.5 * 0.5 * spec.param_count()));
  CHECK(b.task_loss == doctest::Approx(a.task_loss));
  // At logits 0: sigmoid' = 0.25, so the pull is 0.5 * 4 * 0.25 = 0.5.
  const Vector pull = b.grad_logits - a.grad_logits;
  for (Eigen::Index i = 0; i < pull.size(); ++i)
    CHECK(pull[i] == doctest::Approx(0.5).epsilon(1e-9));
}
