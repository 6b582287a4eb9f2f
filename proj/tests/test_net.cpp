/** Oracle tests for the flat-parameter classifier core. */

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pcofl/net.hpp"
#include "pcofl/rng.hpp"
#include "pcofl/types.hpp"

using namespace pcofl;

namespace {

// One Dense layer with hand-set weights; no norm layers, so the mapping is
// exactly logits = x W^T + b.
NetSpec dense_only(Eigen::Index in, Eigen::Index out) {
  NetSpec spec;
  spec.input_dim = in;
  spec.classes = out;
  spec.layers.push_back({LayerKind::Dense, in, out});
  spec.validate();
  return spec;
}

}  // namespace

TEST_CASE("mlp spec layout and parameter count") {
  const NetSpec spec = NetSpec::mlp(3, 4, 2, 1);
  // Dense(3->4) + BN(4) + Relu + Dense(4->2)
  REQUIRE(spec.layers.size() == 4);
  CHECK(spec.layers[0].kind == LayerKind::Dense);
  CHECK(spec.layers[1].kind == LayerKind::BatchNorm);
  CHECK(spec.layers[2].kind == LayerKind::Relu);
  CHECK(spec.layers[3].kind == LayerKind::Dense);
  CHECK(spec.param_count() == 3 * 4 + 4 + 2 * 4 + 2 * 4 + 2);
  CHECK(spec.layer_param_count(0) == 16);
  CHECK(spec.layer_param_count(1) == 8);
  CHECK(spec.layer_param_count(2) == 0);
  CHECK(spec.layer_param_offset(3) == 24);
  CHECK(spec.bn_layers() == std::vector<std::size_t>{1});

  const NetSpec deep = NetSpec::mlp(16, 32, 5, 2);
  CHECK(deep.layers.size() == 7);
  CHECK(deep.bn_layers() == std::vector<std::size_t>{1, 4});
}

TEST_CASE("xavier initialization bounds and determinism") {
  const NetSpec spec = NetSpec::mlp(16, 32, 5, 2);
  const Vector a = init_params(spec, 7);
  const Vector b = init_params(spec, 7);
  const Vector c = init_params(spec, 8);
  CHECK(a == b);
  CHECK(a != c);

  // First dense layer: weights within +/- sqrt(6/(16+32)), biases zero.
  const Scalar bound = std::sqrt(6.0 / (16 + 32));
  for (Eigen::Index i = 0; i < 16 * 32; ++i) {
    CHECK(a[i] <= bound);
    CHECK(a[i] >= -bound);
  }
  for (Eigen::Index i = 16 * 32; i < 16 * 32 + 32; ++i) CHECK(a[i] == 0.0);
  // BatchNorm: scale one, shift zero.
  const Eigen::Index bn = spec.layer_param_offset(1);
  for (Eigen::Index i = 0; i < 32; ++i) {
    CHECK(a[bn + i] == 1.0);
    CHECK(a[bn + 32 + i] == 0.0);
  }
}

TEST_CASE("dense forward matches hand-computed affine map") {
  const NetSpec spec = dense_only(2, 2);
  // W = [[1, 2], [3, 4]] (fan_out x fan_in, column-major), b = [0.5, -0.5]
  Vector params(6);
  params << 1, 3, 2, 4, 0.5, -0.5;
  Matrix x(1, 2);
  x << 10, 100;
  const BnStatSet stats = make_bn_stats(spec);
  const ForwardTrace trace = forward(spec, params, x, stats, Mode::Eval);
  CHECK(trace.output(0, 0) == doctest::Approx(1 * 10 + 2 * 100 + 0.5));
  CHECK(trace.output(0, 1) == doctest::Approx(3 * 10 + 4 * 100 - 0.5));
}

TEST_CASE("batch normalization uses biased batch moments in train mode") {
  const NetSpec spec = NetSpec::bn_probe(1);
  Vector params(2);
  params << 1, 0;  // identity scale/shift
  Matrix x(2, 1);
  x << 1, 3;  // mean 2, biased variance 1
  const BnStatSet stats = make_bn_stats(spec);

  const ForwardTrace train = forward(spec, params, x, stats, Mode::Train);
  CHECK(train.layers[0].batch_mean[0] == doctest::Approx(2.0));
  CHECK(train.layers[0].batch_var[0] == doctest::Approx(1.0));  // /n, not /(n-1)
  const Scalar inv = 1.0 / std::sqrt(1.0 + spec.bn_eps);
  CHECK(train.output(0, 0) == doctest::Approx(-inv));
  CHECK(train.output(1, 0) == doctest::Approx(inv));
}

TEST_CASE("eval mode normalizes with stored statistics yet records moments") {
  const NetSpec spec = NetSpec::bn_probe(1);
  Vector params(2);
  params << 1, 0;
  BnStatSet stats = make_bn_stats(spec);
  stats.layers[0].mean[0] = 10;
  stats.layers[0].var[0] = 4;
  Matrix x(2, 1);
  x << 1, 3;
  const ForwardTrace ev = forward(spec, params, x, stats, Mode::Eval);
  const Scalar inv = 1.0 / std::sqrt(4.0 + spec.bn_eps);
  CHECK(ev.output(0, 0) == doctest::Approx((1 - 10) * inv));
  CHECK(ev.output(1, 0) == doctest::Approx((3 - 10) * inv));
  // Batch moments are still observed (they feed moment-matching losses).
  CHECK(ev.layers[0].batch_mean[0] == doctest::Approx(2.0));
  CHECK(ev.layers[0].batch_var[0] == doctest::Approx(1.0));
}

TEST_CASE("commit_bn_update applies 0.1 EMA and counts rows") {
  const NetSpec spec = NetSpec::bn_probe(1);
  Vector params(2);
  params << 1, 0;
  BnStatSet stats = make_bn_stats(spec);  // mean 0, var 1, count 0
  Matrix x(2, 1);
  x << 1, 3;
  const ForwardTrace train = forward(spec, params, x, stats, Mode::Train);
  commit_bn_update(spec, stats, train);
  CHECK(stats.layers[0].mean[0] == doctest::Approx(0.9 * 0 + 0.1 * 2));
  CHECK(stats.layers[0].var[0] == doctest::Approx(0.9 * 1 + 0.1 * 1));
  CHECK(stats.layers[0].count == 2);

  const ForwardTrace ev = forward(spec, params, x, stats, Mode::Eval);
  CHECK_THROWS_AS(commit_bn_update(spec, stats, ev), StateError);
}

TEST_CASE("softmax cross entropy oracles") {
  SUBCASE("uniform logits give ln(C)") {
    Matrix logits = Matrix::Zero(1, 10);
    IntVector y(1);
    y << 3;
    const auto [loss, grad] = softmax_cross_entropy(logits, y);
    CHECK(loss == doctest::Approx(2.302585092994046).epsilon(1e-12));
    // Gradient rows sum to zero: softmax minus one-hot.
    CHECK(grad.row(0).sum() == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("a 20-logit margin bounds the loss below 1e-8") {
    Matrix logits(1, 2);
    logits << 20, 0;
    IntVector y(1);
    y << 0;
    const auto [loss, grad] = softmax_cross_entropy(logits, y);
    CHECK(loss < 1e-8);  // ln(1 + e^-20) ~= 2.06e-9
    CHECK(loss > 0);
  }
  SUBCASE("loss is averaged over the batch") {
    Matrix logits = Matrix::Zero(4, 5);
    IntVector y(4);
    y << 0, 1, 2, 3;
    const auto [loss, grad] = softmax_cross_entropy(logits, y);
    CHECK(loss == doctest::Approx(std::log(5.0)).epsilon(1e-12));
    CHECK(grad(0, 0) == doctest::Approx((0.2 - 1.0) / 4));
  }
  SUBCASE("huge logits stay finite") {
    Matrix logits(1, 2);
    logits << 1000, -1000;
    IntVector y(1);
    y << 1;
    const auto [loss, grad] = softmax_cross_entropy(logits, y);
    CHECK(std::isfinite(loss));
    CHECK(loss == doctest::Approx(2000.0));
  }
}

TEST_CASE("sgd momentum two-step oracle") {
  Vector p = Vector::Zero(1);
  Vector v = Vector::Zero(1);
  Vector g = Vector::Ones(1);
  sgd_step(p, v, g, 0.1, 0.9);
  CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-15));
  sgd_step(p, v, g, 0.1, 0.9);
  CHECK(v[0] == doctest::Approx(1.9).epsilon(1e-15));
  CHECK(p[0] == doctest::Approx(-0.29).epsilon(1e-15));
}

TEST_CASE("cosine schedule hits both endpoints exactly") {
  CHECK(cosine_lr(0, 100, 0.5) == 0.5);
  CHECK(cosine_lr(100, 100, 0.5) == 0.0);
  CHECK(cosine_lr(50, 100, 0.5) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("loss_and_grads agrees with forward plus cross entropy") {
  const NetSpec spec = NetSpec::mlp(3, 4, 3, 2);
  const Vector params = init_params(spec, 11);
  const BnStatSet stats = make_bn_stats(spec);
  Matrix x(4, 3);
  std::mt19937_64 eng(rng::derive(11, "test_inputs"));
  std::normal_distribution<Scalar> dist(0, 1);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = dist(eng);
  IntVector y(4);
  y << 0, 1, 2, 1;

  const LossResult lr = loss_and_grads(spec, params, x, y, stats, Mode::Train);
  const ForwardTrace trace = forward(spec, params, x, stats, Mode::Train);
  const auto [loss, dlogits] = softmax_cross_entropy(trace.output, y);
  CHECK(lr.loss == doctest::Approx(loss).epsilon(1e-14));
  CHECK(lr.param_grads.size() == spec.param_count());
  CHECK(lr.input_grads.rows() == 4);
  CHECK(lr.input_grads.cols() == 3);

  const Gradients g = backward(spec, params, trace, dlogits);
  CHECK((g.param_grads - lr.param_grads).lpNorm<Eigen::Infinity>() < 1e-14);
}

TEST_CASE("accuracy counts argmax matches") {
  const NetSpec spec = dense_only(2, 2);
  Vector params(6);
  params << 1, 0, 0, 1, 0, 0;  // identity: logits = x
  Matrix x(4, 2);
  x << 2, 1,   // class 0
       1, 2,   // class 1
       3, 0,   // class 0
       0, 3;   // class 1
  IntVector y(4);
  y << 0, 1, 0, 0;  // the last row is wrong on purpose
  const BnStatSet stats = make_bn_stats(spec);
  CHECK(accuracy(spec, params, x, y, stats) == doctest::Approx(0.75));
}
