#include "pcofl/gradcheck.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <random>

#include "pcofl/hypernet.hpp"
#include "pcofl/masking.hpp"
#include "pcofl/net.hpp"
#include "pcofl/replay.hpp"
#include "pcofl/rng.hpp"

namespace pcofl {

namespace {

constexpr Scalar kKinkMargin = 1e-3;
constexpr int kMaxDrawAttempts = 64;

Scalar rel_err(Scalar analytic, Scalar fd) {
  const Scalar denom =
      std::max({std::abs(analytic), std::abs(fd), Scalar(1e-3)});
  return std::abs(analytic - fd) / denom;
}

// Central differences, mutating x in place and restoring it.
Scalar fd_against(Vector& x, const Vector& analytic,
                  const std::function<Scalar()>& value) {
  Scalar worst = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const Scalar orig = x[i];
    const Scalar h = 1e-5 * std::max<Scalar>(1.0, std::abs(orig));
    x[i] = orig + h;
    const Scalar up = value();
    x[i] = orig - h;
    const Scalar down = value();
    x[i] = orig;
    worst = std::max(worst, rel_err(analytic[i], (up - down) / (2 * h)));
  }
  return worst;
}

Scalar fd_against(Matrix& x, const Matrix& analytic,
                  const std::function<Scalar()>& value) {
  Scalar worst = 0;
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const Scalar orig = x(r, c);
      const Scalar h = 1e-5 * std::max<Scalar>(1.0, std::abs(orig));
      x(r, c) = orig + h;
      const Scalar up = value();
      x(r, c) = orig - h;
      const Scalar down = value();
      x(r, c) = orig;
      worst = std::max(worst, rel_err(analytic(r, c), (up - down) / (2 * h)));
    }
  return worst;
}

Scalar relu_margin(const NetSpec& spec, const ForwardTrace& trace) {
  Scalar margin = std::numeric_limits<Scalar>::infinity();
  for (std::size_t i = 0; i < spec.layers.size(); ++i)
    if (spec.layers[i].kind == LayerKind::Relu)
      margin = std::min(margin, trace.layers[i].input.cwiseAbs().minCoeff());
  return margin;
}

Matrix random_matrix(std::mt19937_64& eng, Eigen::Index rows,
                     Eigen::Index cols, Scalar stddev) {
  std::normal_distribution<Scalar> d(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = d(eng);
  return m;
}

Vector random_vector(std::mt19937_64& eng, Eigen::Index n, Scalar stddev) {
  return random_matrix(eng, n, 1, stddev).col(0);
}

IntVector random_labels(std::mt19937_64& eng, Eigen::Index n,
                        Eigen::Index classes) {
  std::uniform_int_distribution<int> d(0, int(classes) - 1);
  IntVector y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = d(eng);
  return y;
}

struct Families {
  std::uint64_t seed = 0;
  GradCheckReport report;

  void record(const std::string& family, int instance, Eigen::Index n,
              Scalar err) {
    report.cases.push_back({family, instance, n, err});
    report.worst = std::max(report.worst, err);
    ++report.instances;
  }

  // net_params / net_inputs: train-mode cross entropy of a two-block MLP.
  void net_families(int instance) {
    const NetSpec spec = NetSpec::mlp(3, 4, 3, 2);
    const BnStatSet stats = make_bn_stats(spec);
    Vector params;
    Matrix inputs;
    IntVector labels;
    for (int attempt = 0; attempt < kMaxDrawAttempts; ++attempt) {
      std::mt19937_64 eng =
          rng::engine(seed, "gradcheck_net", std::uint64_t(instance),
                      std::uint64_t(attempt));
      params = random_vector(eng, spec.param_count(), 0.6);
      inputs = random_matrix(eng, 4, spec.input_dim, 1.0);
      labels = random_labels(eng, 4, spec.classes);
      const ForwardTrace probe =
          forward(spec, params, inputs, stats, Mode::Train);
      if (relu_margin(spec, probe) >= kKinkMargin) break;
    }
    const LossResult lr =
        loss_and_grads(spec, params, inputs, labels, stats, Mode::Train);
    const auto value = [&] {
      const ForwardTrace t = forward(spec, params, inputs, stats, Mode::Train);
      return softmax_cross_entropy(t.output, labels).first;
    };
    record("net_params", instance, params.size(),
           fd_against(params, lr.param_grads, value));
    record("net_inputs", instance, inputs.size(),
           fd_against(inputs, lr.input_grads, value));
  }

  // generator_chain: cross entropy of forward(generate(phi, e)), gradients
  // pulled back to both the generator parameters and the embedding.
  void generator_family(int instance) {
    const NetSpec spec = NetSpec::mlp(3, 4, 3, 1);
    const BnStatSet stats = make_bn_stats(spec);
    HypernetState h;
    Vector e;
    Matrix inputs;
    IntVector labels;
    for (int attempt = 0; attempt < kMaxDrawAttempts; ++attempt) {
      std::mt19937_64 eng =
          rng::engine(seed, "gradcheck_gen", std::uint64_t(instance),
                      std::uint64_t(attempt));
      h = make_hypernet(spec, 3, 5, eng());
      h.phi = random_vector(eng, h.phi_count(), 0.4);
      e = random_vector(eng, h.embed_dim, 1.0);
      inputs = random_matrix(eng, 4, spec.input_dim, 1.0);
      labels = random_labels(eng, 4, spec.classes);
      const Eigen::Map<const Matrix> w1(h.phi.data(), h.hidden, h.embed_dim);
      const Vector hidden_pre =
          w1 * e + h.phi.segment(h.embed_dim * h.hidden, h.hidden);
      if (hidden_pre.cwiseAbs().minCoeff() < kKinkMargin) continue;
      const ForwardTrace probe =
          forward(spec, generate(h, e), inputs, stats, Mode::Train);
      if (relu_margin(spec, probe) >= kKinkMargin) break;
    }
    const LossResult lr = loss_and_grads(spec, generate(h, e), inputs, labels,
                                         stats, Mode::Train);
    const HypernetGrads hg = hypernet_backprop(h, e, lr.param_grads);
    const auto value = [&] {
      const ForwardTrace t =
          forward(spec, generate(h, e), inputs, stats, Mode::Train);
      return softmax_cross_entropy(t.output, labels).first;
    };
    record("generator_phi", instance, h.phi.size(),
           fd_against(h.phi, hg.grad_phi, value));
    record("generator_embedding", instance, e.size(),
           fd_against(e, hg.grad_embedding, value));
  }

  // mask_objective: task loss of the soft-masked generated model plus the
  // occupancy penalty, differentiated with respect to the mask logits.
  void mask_family(int instance) {
    const NetSpec spec = NetSpec::mlp(3, 4, 3, 1);
    const BnStatSet stats = make_bn_stats(spec);
    const Scalar lambda = 0.01;
    HypernetState h;
    Vector e;
    Matrix inputs;
    IntVector labels;
    MaskState m;
    for (int attempt = 0; attempt < kMaxDrawAttempts; ++attempt) {
      std::mt19937_64 eng =
          rng::engine(seed, "gradcheck_mask", std::uint64_t(instance),
                      std::uint64_t(attempt));
      h = make_hypernet(spec, 3, 5, eng());
      h.phi = random_vector(eng, h.phi_count(), 0.4);
      e = random_vector(eng, h.embed_dim, 1.0);
      inputs = random_matrix(eng, 4, spec.input_dim, 1.0);
      labels = random_labels(eng, 4, spec.classes);
      m = make_mask(1, spec.param_count(), 4.0);
      m.logits = random_vector(eng, spec.param_count(), 0.5);
      const Vector masked =
          apply_mask(materialize(m, MaskForm::Soft), generate(h, e));
      const ForwardTrace probe = forward(spec, masked, inputs, stats,
                                         Mode::Train);
      if (relu_margin(spec, probe) >= kKinkMargin) break;
    }
    const MaskGradResult mg =
        mask_grads(spec, h, e, m, inputs, labels, stats, lambda);
    const auto value = [&] {
      const Vector soft = materialize(m, MaskForm::Soft);
      const ForwardTrace t = forward(spec, apply_mask(soft, generate(h, e)),
                                     inputs, stats, Mode::Train);
      return softmax_cross_entropy(t.output, labels).first +
             lambda * soft.sum();
    };
    record("mask_objective", instance, m.logits.size(),
           fd_against(m.logits, mg.grad_logits, value));
  }

  // synthesis_inputs: the full input-recovery objective (moment matching,
  // post-rectifier moments, smoothness, magnitude, label fit) against its
  // reported input gradient.
  void synthesis_family(int instance) {
    const NetSpec spec = NetSpec::mlp(4, 5, 3, 2);
    ReplayHyperparams hp;
    hp.beta_bn = 1.0;
    hp.beta_tv = 0.05;
    hp.beta_l2 = 0.05;
    hp.beta_feature = 0.2;
    hp.label_weight = 1.0;
    Vector params;
    BnStatSet stats;
    Matrix inputs;
    IntVector labels;
    for (int attempt = 0; attempt < kMaxDrawAttempts; ++attempt) {
      std::mt19937_64 eng =
          rng::engine(seed, "gradcheck_synth", std::uint64_t(instance),
                      std::uint64_t(attempt));
      params = init_params(spec, eng());
      params += random_vector(eng, spec.param_count(), 0.3);
      stats = make_bn_stats(spec);
      for (BnLayerStats& layer : stats.layers) {
        layer.mean = random_vector(eng, layer.mean.size(), 0.5);
        layer.var =
            random_vector(eng, layer.var.size(), 0.5).cwiseAbs().array() + 0.2;
        layer.count = 64;
      }
      inputs = random_matrix(eng, 3, spec.input_dim, 1.0);
      labels = random_labels(eng, 3, spec.classes);
      const ForwardTrace probe =
          forward(spec, params, inputs, stats, Mode::Eval);
      if (relu_margin(spec, probe) >= kKinkMargin) break;
    }
    const SynthesisObjective obj =
        eval_synthesis_objective(spec, params, inputs, stats, labels, hp);
    const auto value = [&] {
      return eval_synthesis_objective(spec, params, inputs, stats, labels, hp)
          .value;
    };
    record("synthesis_inputs", instance, inputs.size(),
           fd_against(inputs, obj.input_grads, value));
  }
};

}  // namespace

GradCheckReport run_gradcheck(std::uint64_t seed, int per_family) {
  if (per_family < 1) throw InputError("per_family must be at least 1");
  Families f;
  f.seed = seed;
  for (int k = 0; k < per_family; ++k) {
    f.net_families(k);
    f.generator_family(k);
    f.mask_family(k);
    f.synthesis_family(k);
  }
  return f.report;
}

}  // namespace pcofl
