#include "pcofl/replay.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "pcofl/data.hpp"
#include "pcofl/rng.hpp"

namespace pcofl {

namespace {

// out(i, j) = m(i, j) * v(j)
Matrix scale_cols(const Matrix& m, const Vector& v) {
  return (m.array().rowwise() * v.transpose().array()).matrix();
}

Scalar norm_pdf(Scalar u) {
  return std::exp(-0.5 * u * u) / std::sqrt(2 * M_PI);
}

Scalar norm_cdf(Scalar u) { return 0.5 * std::erfc(-u / std::sqrt(Scalar(2))); }

}  // namespace

void ReplayHyperparams::validate() const {
  if (beta_bn < 0 || beta_tv < 0 || beta_l2 < 0 || beta_feature < 0 ||
      label_weight < 0)
    throw ConfigError("replay: objective weights must be >= 0");
  if (iterations < 1) throw ConfigError("replay: iterations must be >= 1");
  if (step_size <= 0) throw ConfigError("replay: step_size must be > 0");
  if (clamp <= 0) throw ConfigError("replay: clamp must be > 0");
  if (images_per_class < 1)
    throw ConfigError("replay: images_per_class must be >= 1");
  if (finetune_epochs < 0)
    throw ConfigError("replay: finetune_epochs must be >= 0");
  if (finetune_lr <= 0) throw ConfigError("replay: finetune_lr must be > 0");
  if (finetune_batch < 1)
    throw ConfigError("replay: finetune_batch must be >= 1");
}

BnStatSet capture_bn_stats(const NetSpec& spec,
                           const std::vector<BnStatSet>& parts) {
  const std::size_t n_layers = spec.bn_layers().size();
  if (parts.empty()) throw DataError("capture_bn_stats: no parts");
  for (const BnStatSet& p : parts)
    if (p.layers.size() != n_layers)
      throw DataError("capture_bn_stats: part does not match spec");

  BnStatSet out = make_bn_stats(spec);
  for (std::size_t k = 0; k < n_layers; ++k) {
    std::int64_t total = 0;
    for (const BnStatSet& p : parts) total += p.layers[k].count;
    if (total <= 0)
      throw DataError("capture_bn_stats: layer " + std::to_string(k) +
                      " has no recorded activity");
    const Eigen::Index width = out.layers[k].mean.size();
    Vector mean = Vector::Zero(width);
    Vector second = Vector::Zero(width);
    for (const BnStatSet& p : parts) {
      const BnLayerStats& ls = p.layers[k];
      if (ls.mean.size() != width || ls.var.size() != width)
        throw DataError("capture_bn_stats: layer width mismatch");
      const Scalar w = Scalar(ls.count) / Scalar(total);
      mean += w * ls.mean;
      second +=
          w * (ls.var + ls.mean.cwiseProduct(ls.mean));
    }
    out.layers[k].mean = mean;
    out.layers[k].var = (second - mean.cwiseProduct(mean))
                            .cwiseMax(Vector::Constant(width, spec.bn_eps));
    out.layers[k].count = total;
  }
  return out;
}

std::pair<Scalar, Scalar> relu_gaussian_moments(Scalar m, Scalar s) {
  if (s < 0) throw InputError("relu_gaussian_moments: s must be >= 0");
  if (s < 1e-12) {
    const Scalar mean = std::max<Scalar>(0, m);
    return {mean, 0};
  }
  const Scalar u = m / s;
  const Scalar cdf = norm_cdf(u);
  const Scalar pdf = norm_pdf(u);
  const Scalar mean = m * cdf + s * pdf;
  const Scalar second = (m * m + s * s) * cdf + m * s * pdf;
  return {mean, std::max<Scalar>(0, second - mean * mean)};
}

Scalar bn_moment_loss(const Vector& mean, const Vector& var,
                      const BnLayerStats& target) {
  if (mean.size() != target.mean.size() || var.size() != target.var.size())
    throw ShapeError("bn_moment_loss: width mismatch");
  const Scalar d = Scalar(mean.size());
  return ((mean - target.mean).squaredNorm() +
          (var - target.var).squaredNorm()) /
         d;
}

Scalar total_variation(const Matrix& inputs) {
  if (inputs.rows() < 1) throw InputError("total_variation: empty batch");
  const Eigen::Index d = inputs.cols();
  if (d < 2) return 0;
  Matrix diff = inputs.rightCols(d - 1) - inputs.leftCols(d - 1);
  return diff.squaredNorm() / Scalar(inputs.rows());
}

namespace {

// Cotangent of the per-feature moment MSE with respect to the activations:
// value = weight * (|mu - mu*|^2 + |var - var*|^2) / width, with mu and var
// the biased batch moments of `act`.
Matrix moment_loss_cotangent(const Matrix& act, const Vector& batch_mean,
                             const Vector& batch_var, const Vector& target_mean,
                             const Vector& target_var, Scalar weight) {
  const Scalar n = Scalar(act.rows());
  const Scalar d = Scalar(act.cols());
  Matrix centered = act.rowwise() - batch_mean.transpose();
  Matrix g = scale_cols(centered, (4 * weight / (d * n)) * (batch_var - target_var));
  g.rowwise() += ((2 * weight / (d * n)) * (batch_mean - target_mean)).transpose();
  return g;
}

void batch_moments(const Matrix& act, Vector& mean, Vector& var) {
  const Scalar n = Scalar(act.rows());
  mean = act.colwise().mean().transpose();
  var = ((act.rowwise() - mean.transpose()).array().square().colwise().sum() /
         n)
            .matrix()
            .transpose();
}

}  // namespace

SynthesisObjective eval_synthesis_objective(const NetSpec& spec,
                                            const Vector& params,
                                            const Matrix& inputs,
                                            const BnStatSet& stats,
                                            const IntVector& labels,
                                            const ReplayHyperparams& hp) {
  hp.validate();
  if (labels.size() != inputs.rows())
    throw ShapeError("synthesis objective: labels/inputs batch mismatch");
  const Eigen::Index n = inputs.rows();
  const Eigen::Index d = inputs.cols();
  const std::size_t nl = spec.layers.size();

  ForwardTrace trace = forward(spec, params, inputs, stats, Mode::Eval);

  SynthesisObjective out;
  std::vector<ActivationCotangent> injections;

  // Normalization-moment terms at every BatchNorm input.
  std::size_t bn_seen = 0;
  for (std::size_t i = 0; i < nl; ++i) {
    if (spec.layers[i].kind != LayerKind::BatchNorm) continue;
    const LayerTrace& lt = trace.layers[i];
    const BnLayerStats& target = stats.layers[bn_seen];
    if (hp.beta_bn > 0) {
      out.value += hp.beta_bn * bn_moment_loss(lt.batch_mean, lt.batch_var, target);
      injections.push_back(
          {i, moment_loss_cotangent(lt.input, lt.batch_mean, lt.batch_var,
                                    target.mean, target.var, hp.beta_bn)});
    }
    // Post-rectifier moments against the rectified-Gaussian image of the
    // stored statistics through this layer's scale and shift.
    if (hp.beta_feature > 0 && i + 1 < nl &&
        spec.layers[i + 1].kind == LayerKind::Relu) {
      const Eigen::Index width = spec.layers[i].fan_out;
      const Eigen::Index off = spec.layer_param_offset(i);
      Vector target_mean(width), target_var(width);
      for (Eigen::Index j = 0; j < width; ++j) {
        const Scalar gamma_j = params[off + j];
        const Scalar beta_j = params[off + width + j];
        const Scalar ratio = target.var[j] / (target.var[j] + spec.bn_eps);
        const Scalar s = std::abs(gamma_j) * std::sqrt(ratio);
        auto [tm, tv] = relu_gaussian_moments(beta_j, s);
        target_mean[j] = tm;
        target_var[j] = tv;
      }
      const Matrix& post = (i + 2 < nl) ? trace.layers[i + 2].input
                                        : trace.output;
      Vector mean, var;
      batch_moments(post, mean, var);
      const Scalar w = Scalar(width);
      out.value += hp.beta_feature *
                   ((mean - target_mean).squaredNorm() +
                    (var - target_var).squaredNorm()) /
                   w;
      injections.push_back(
          {i + 2, moment_loss_cotangent(post, mean, var, target_mean,
                                        target_var, hp.beta_feature)});
    }
    ++bn_seen;
  }

  // Class-label fit.
  Matrix dlogits = Matrix::Zero(n, spec.classes);
  if (hp.label_weight > 0) {
    auto [loss, dl] = softmax_cross_entropy(trace.output, labels);
    out.value += hp.label_weight * loss;
    dlogits = hp.label_weight * dl;
  }

  Gradients g = backward(spec, params, trace, dlogits, injections);
  out.input_grads = std::move(g.input_grads);

  // Input-space regularizers act on the raw inputs directly.
  if (hp.beta_tv > 0 && d > 1) {
    Matrix diff = inputs.rightCols(d - 1) - inputs.leftCols(d - 1);
    out.value += hp.beta_tv * diff.squaredNorm() / Scalar(n);
    const Scalar c = 2 * hp.beta_tv / Scalar(n);
    out.input_grads.leftCols(d - 1) -= c * diff;
    out.input_grads.rightCols(d - 1) += c * diff;
  }
  if (hp.beta_l2 > 0) {
    out.value += hp.beta_l2 * inputs.squaredNorm() / Scalar(n);
    out.input_grads += (2 * hp.beta_l2 / Scalar(n)) * inputs;
  }

  if (!std::isfinite(out.value) || !out.input_grads.allFinite())
    throw NumericError("synthesis objective: non-finite value or gradient");
  return out;
}

SynthesisResult synthesize(const NetSpec& spec, const Vector& params,
                           const BnStatSet& stats, const IntVector& labels,
                           const ReplayHyperparams& hp, std::uint64_t seed) {
  hp.validate();
  if (labels.size() < 1) throw InputError("synthesize: empty label batch");

  Matrix x(labels.size(), spec.input_dim);
  {
    std::mt19937_64 eng = rng::engine(seed, "synth_init");
    std::normal_distribution<Scalar> stdnorm(0, 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < x.cols(); ++j)
        x(i, j) = std::clamp(stdnorm(eng), -hp.clamp, hp.clamp);
  }

  SynthesisResult res;
  Matrix best = x;
  Scalar best_obj = 0;
  for (int it = 0; it <= hp.iterations; ++it) {
    SynthesisObjective obj =
        eval_synthesis_objective(spec, params, x, stats, labels, hp);
    if (it == 0) {
      res.initial_objective = obj.value;
      best_obj = obj.value;
    } else if (obj.value < best_obj) {
      best_obj = obj.value;
      best = x;
    }
    if (it == hp.iterations) break;
    const Scalar rms =
        std::sqrt(obj.input_grads.squaredNorm() / Scalar(obj.input_grads.size()));
    const Scalar step = cosine_lr(it, hp.iterations, hp.step_size);
    x -= (step / (rms + 1e-12)) * obj.input_grads;
    x = x.cwiseMax(-hp.clamp).cwiseMin(hp.clamp);
  }
  res.inputs = std::move(best);
  res.final_objective = best_obj;
  return res;
}

SyntheticPool build_pool(const NetSpec& spec, const Vector& params,
                         const BnStatSet& stats, const ReplayHyperparams& hp,
                         int source_batch, std::uint64_t seed) {
  hp.validate();
  SyntheticPool pool;
  pool.source_batch = source_batch;
  pool.inputs.resize(spec.classes * hp.images_per_class, spec.input_dim);
  pool.labels.resize(spec.classes * hp.images_per_class);
  for (Eigen::Index c = 0; c < spec.classes; ++c) {
    IntVector labels = IntVector::Constant(hp.images_per_class, int(c));
    SynthesisResult r = synthesize(spec, params, stats, labels, hp,
                                   rng::derive(seed, "pool_class",
                                               std::uint64_t(c)));
    pool.inputs.middleRows(c * hp.images_per_class, hp.images_per_class) =
        r.inputs;
    pool.labels.segment(c * hp.images_per_class, hp.images_per_class) = labels;
  }
  return pool;
}

namespace {

Scalar pool_loss(const NetSpec& spec, const Vector& params,
                 const SyntheticPool& pool, const BnStatSet& stats) {
  ForwardTrace t = forward(spec, params, pool.inputs, stats, Mode::Eval);
  return softmax_cross_entropy(t.output, pool.labels).first;
}

}  // namespace

Vector finetune_prior(const NetSpec& spec, const Vector& snapshot_params,
                      const BnStatSet& snapshot_stats, const Vector& hard_mask,
                      const SyntheticPool& pool, const ReplayHyperparams& hp,
                      std::uint64_t seed) {
  hp.validate();
  if (hard_mask.size() != snapshot_params.size())
    throw ShapeError("finetune_prior: mask/params size mismatch");
  if (pool.labels.size() != pool.inputs.rows() || pool.inputs.rows() < 1)
    throw InputError("finetune_prior: malformed pool");

  Vector params = snapshot_params;
  Vector best = params;
  Scalar best_loss = pool_loss(spec, params, pool, snapshot_stats);

  const int n = int(pool.inputs.rows());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < hp.finetune_epochs; ++epoch) {
    std::mt19937_64 eng =
        rng::engine(seed, "finetune_shuffle", std::uint64_t(epoch));
    std::shuffle(order.begin(), order.end(), eng);
    for (int start = 0; start < n; start += hp.finetune_batch) {
      const int stop = std::min(n, start + hp.finetune_batch);
      std::vector<int> idx(order.begin() + start, order.begin() + stop);
      Matrix xb = gather_rows(pool.inputs, idx);
      IntVector yb(Eigen::Index(idx.size()));
      for (std::size_t i = 0; i < idx.size(); ++i)
        yb[Eigen::Index(i)] = pool.labels[idx[i]];
      LossResult res =
          loss_and_grads(spec, params, xb, yb, snapshot_stats, Mode::Eval);
      params -= hp.finetune_lr * res.param_grads.cwiseProduct(hard_mask);
    }
    const Scalar loss = pool_loss(spec, params, pool, snapshot_stats);
    if (loss < best_loss) {
      best_loss = loss;
      best = params;
    }
  }
  return best;
}

}  // namespace pcofl
