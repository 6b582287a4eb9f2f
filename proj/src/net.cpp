#include "pcofl/net.hpp"

#include <cmath>
#include <random>

namespace pcofl {

namespace {

Eigen::Index dense_params(const LayerSpec& l) {
  return l.fan_in * l.fan_out + l.fan_out;
}

Eigen::Index bn_params(const LayerSpec& l) { return 2 * l.fan_out; }

// out(i, j) = m(i, j) * v(j)
Matrix scale_cols(const Matrix& m, const Vector& v) {
  return (m.array().rowwise() * v.transpose().array()).matrix();
}

}  // namespace

NetSpec NetSpec::mlp(Eigen::Index input, Eigen::Index hidden,
                     Eigen::Index classes, int hidden_layers) {
  if (hidden_layers < 1) throw InputError("mlp: hidden_layers must be >= 1");
  NetSpec s;
  s.input_dim = input;
  s.classes = classes;
  Eigen::Index prev = input;
  for (int i = 0; i < hidden_layers; ++i) {
    s.layers.push_back({LayerKind::Dense, prev, hidden});
    s.layers.push_back({LayerKind::BatchNorm, hidden, hidden});
    s.layers.push_back({LayerKind::Relu, hidden, hidden});
    prev = hidden;
  }
  s.layers.push_back({LayerKind::Dense, prev, classes});
  s.validate();
  return s;
}

NetSpec NetSpec::bn_probe(Eigen::Index width) {
  NetSpec s;
  s.input_dim = width;
  s.classes = width;
  s.layers.push_back({LayerKind::BatchNorm, width, width});
  s.validate();
  return s;
}

void NetSpec::validate() const {
  if (layers.empty()) throw ShapeError("NetSpec: no layers");
  if (input_dim < 1) throw ShapeError("NetSpec: input_dim must be >= 1");
  if (classes < 1) throw ShapeError("NetSpec: classes must be >= 1");
  if (bn_eps <= 0) throw ShapeError("NetSpec: bn_eps must be > 0");
  if (bn_momentum <= 0 || bn_momentum > 1)
    throw ShapeError("NetSpec: bn_momentum must be in (0, 1]");
  Eigen::Index prev = input_dim;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    if (l.fan_in < 1 || l.fan_out < 1)
      throw ShapeError("NetSpec: layer " + std::to_string(i) +
                       " has non-positive fan");
    if (l.fan_in != prev)
      throw ShapeError("NetSpec: layer " + std::to_string(i) +
                       " fan_in does not match previous width");
    if (l.kind != LayerKind::Dense && l.fan_in != l.fan_out)
      throw ShapeError("NetSpec: layer " + std::to_string(i) +
                       " must preserve width");
    prev = l.fan_out;
  }
  if (prev != classes)
    throw ShapeError("NetSpec: final width does not match classes");
}

Eigen::Index NetSpec::layer_param_count(std::size_t i) const {
  const LayerSpec& l = layers.at(i);
  switch (l.kind) {
    case LayerKind::Dense:
      return dense_params(l);
    case LayerKind::BatchNorm:
      return bn_params(l);
    case LayerKind::Relu:
      return 0;
  }
  return 0;
}

Eigen::Index NetSpec::layer_param_offset(std::size_t i) const {
  Eigen::Index off = 0;
  for (std::size_t k = 0; k < i; ++k) off += layer_param_count(k);
  return off;
}

Eigen::Index NetSpec::param_count() const {
  return layer_param_offset(layers.size());
}

std::vector<std::size_t> NetSpec::bn_layers() const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].kind == LayerKind::BatchNorm) idx.push_back(i);
  return idx;
}

BnStatSet make_bn_stats(const NetSpec& spec) {
  BnStatSet s;
  for (std::size_t i : spec.bn_layers()) {
    BnLayerStats ls;
    ls.mean = Vector::Zero(spec.layers[i].fan_out);
    ls.var = Vector::Ones(spec.layers[i].fan_out);
    ls.count = 0;
    s.layers.push_back(std::move(ls));
  }
  return s;
}

namespace {

void check_forward_args(const NetSpec& spec, const Vector& params,
                        const Eigen::Ref<const Matrix>& inputs,
                        const BnStatSet& stats) {
  spec.validate();
  if (params.size() != spec.param_count())
    throw ShapeError("forward: params length " + std::to_string(params.size()) +
                     " != " + std::to_string(spec.param_count()));
  if (inputs.cols() != spec.input_dim)
    throw ShapeError("forward: input width does not match spec");
  if (inputs.rows() < 1) throw InputError("forward: empty batch");
  if (stats.layers.size() != spec.bn_layers().size())
    throw ShapeError("forward: BnStatSet layer count does not match spec");
  if (!inputs.allFinite()) throw NumericError("forward: non-finite input");
  if (!params.allFinite()) throw NumericError("forward: non-finite params");
}

}  // namespace

ForwardTrace forward(const NetSpec& spec, const Vector& params,
                     const Eigen::Ref<const Matrix>& inputs,
                     const BnStatSet& stats, Mode mode) {
  check_forward_args(spec, params, inputs, stats);
  const Eigen::Index n = inputs.rows();

  ForwardTrace trace;
  trace.mode = mode;
  trace.batch = n;
  trace.layers.resize(spec.layers.size());

  Matrix act = inputs;
  std::size_t bn_seen = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    LayerTrace& lt = trace.layers[i];
    lt.input = std::move(act);
    switch (l.kind) {
      case LayerKind::Dense: {
        const Eigen::Index off = spec.layer_param_offset(i);
        Eigen::Map<const Matrix> w(params.data() + off, l.fan_out, l.fan_in);
        Eigen::Map<const Vector> b(params.data() + off + l.fan_in * l.fan_out,
                                   l.fan_out);
        act = lt.input * w.transpose();
        act.rowwise() += b.transpose();
        break;
      }
      case LayerKind::BatchNorm: {
        const Eigen::Index off = spec.layer_param_offset(i);
        Eigen::Map<const Vector> gamma(params.data() + off, l.fan_out);
        Eigen::Map<const Vector> beta(params.data() + off + l.fan_out,
                                      l.fan_out);
        lt.batch_mean = lt.input.colwise().mean().transpose();
        Matrix centered = lt.input.rowwise() - lt.batch_mean.transpose();
        lt.batch_var =
            (centered.array().square().colwise().sum() / Scalar(n))
                .matrix()
                .transpose();
        const BnLayerStats& rs = stats.layers[bn_seen];
        if (mode == Mode::Train) {
          lt.inv_std = (lt.batch_var.array() + spec.bn_eps).rsqrt().matrix();
          lt.normalized = scale_cols(centered, lt.inv_std);
        } else {
          lt.inv_std = (rs.var.array() + spec.bn_eps).rsqrt().matrix();
          lt.normalized = scale_cols(
              lt.input.rowwise() - rs.mean.transpose(), lt.inv_std);
        }
        act = scale_cols(lt.normalized, gamma);
        act.rowwise() += beta.transpose();
        ++bn_seen;
        break;
      }
      case LayerKind::Relu: {
        act = lt.input.cwiseMax(Scalar(0));
        break;
      }
    }
  }
  trace.output = std::move(act);
  return trace;
}

void commit_bn_update(const NetSpec& spec, BnStatSet& stats,
                      const ForwardTrace& trace) {
  if (trace.mode != Mode::Train)
    throw StateError("commit_bn_update: trace must come from train mode");
  if (stats.layers.size() != spec.bn_layers().size())
    throw ShapeError("commit_bn_update: BnStatSet does not match spec");
  const Scalar m = spec.bn_momentum;
  std::size_t bn_seen = 0;
  for (std::size_t i : spec.bn_layers()) {
    const LayerTrace& lt = trace.layers.at(i);
    BnLayerStats& rs = stats.layers[bn_seen];
    rs.mean = (1 - m) * rs.mean + m * lt.batch_mean;
    rs.var = ((1 - m) * rs.var + m * lt.batch_var)
                 .cwiseMax(Vector::Constant(rs.var.size(), spec.bn_eps));
    rs.count += trace.batch;
    ++bn_seen;
  }
}

std::pair<Scalar, Matrix> softmax_cross_entropy(const Matrix& logits,
                                                const IntVector& labels) {
  const Eigen::Index n = logits.rows();
  const Eigen::Index c = logits.cols();
  if (labels.size() != n)
    throw ShapeError("softmax_cross_entropy: labels/logits batch mismatch");
  for (Eigen::Index i = 0; i < n; ++i)
    if (labels[i] < 0 || labels[i] >= c)
      throw InputError("softmax_cross_entropy: label out of range");

  Matrix dlogits(n, c);
  Scalar loss = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar mx = logits.row(i).maxCoeff();
    Eigen::ArrayXd ex = (logits.row(i).array() - mx).exp().transpose();
    const Scalar z = ex.sum();
    loss += std::log(z) + mx - logits(i, labels[i]);
    dlogits.row(i) = (ex / z).matrix().transpose();
    dlogits(i, labels[i]) -= 1;
  }
  loss /= Scalar(n);
  dlogits /= Scalar(n);
  if (!std::isfinite(loss))
    throw NumericError("softmax_cross_entropy: non-finite loss");
  return {loss, dlogits};
}

Gradients backward(const NetSpec& spec, const Vector& params,
                   const ForwardTrace& trace, const Matrix& dlogits,
                   const std::vector<ActivationCotangent>& injections) {
  const std::size_t nl = spec.layers.size();
  if (trace.layers.size() != nl)
    throw ShapeError("backward: trace does not match spec");

  std::vector<const Matrix*> inject(nl + 1, nullptr);
  for (const ActivationCotangent& ic : injections) {
    if (ic.activation_index > nl)
      throw ShapeError("backward: injection index out of range");
    inject[ic.activation_index] = &ic.value;
  }

  Gradients g;
  g.param_grads = Vector::Zero(spec.param_count());

  Matrix da = dlogits;
  if (inject[nl]) da += *inject[nl];

  for (std::size_t ri = nl; ri-- > 0;) {
    const LayerSpec& l = spec.layers[ri];
    const LayerTrace& lt = trace.layers[ri];
    const Eigen::Index off = spec.layer_param_offset(ri);
    switch (l.kind) {
      case LayerKind::Dense: {
        Eigen::Map<const Matrix> w(params.data() + off, l.fan_out, l.fan_in);
        Eigen::Map<Matrix> dw(g.param_grads.data() + off, l.fan_out, l.fan_in);
        Eigen::Map<Vector> db(g.param_grads.data() + off + l.fan_in * l.fan_out,
                              l.fan_out);
        dw = da.transpose() * lt.input;
        db = da.colwise().sum().transpose();
        da = da * w;
        break;
      }
      case LayerKind::BatchNorm: {
        Eigen::Map<const Vector> gamma(params.data() + off, l.fan_out);
        Eigen::Map<Vector> dgamma(g.param_grads.data() + off, l.fan_out);
        Eigen::Map<Vector> dbeta(g.param_grads.data() + off + l.fan_out,
                                 l.fan_out);
        dgamma = (da.array() * lt.normalized.array())
                     .colwise()
                     .sum()
                     .matrix()
                     .transpose();
        dbeta = da.colwise().sum().transpose();
        Matrix dxhat = scale_cols(da, gamma);
        if (trace.mode == Mode::Train) {
          const Scalar n = Scalar(trace.batch);
          Vector sum_dxhat = dxhat.colwise().sum().transpose();
          Vector sum_dxhat_xhat = (dxhat.array() * lt.normalized.array())
                                      .colwise()
                                      .sum()
                                      .matrix()
                                      .transpose();
          Matrix t = n * dxhat;
          t.rowwise() -= sum_dxhat.transpose();
          t -= scale_cols(lt.normalized, sum_dxhat_xhat);
          da = scale_cols(t, lt.inv_std) / n;
        } else {
          da = scale_cols(dxhat, lt.inv_std);
        }
        break;
      }
      case LayerKind::Relu: {
        da = ((lt.input.array() > 0).cast<Scalar>() * da.array()).matrix();
        break;
      }
    }
    if (inject[ri]) da += *inject[ri];
  }
  g.input_grads = std::move(da);
  return g;
}

LossResult loss_and_grads(const NetSpec& spec, const Vector& params,
                          const Eigen::Ref<const Matrix>& inputs,
                          const IntVector& labels, const BnStatSet& stats,
                          Mode mode) {
  LossResult r;
  r.trace = forward(spec, params, inputs, stats, mode);
  auto [loss, dlogits] = softmax_cross_entropy(r.trace.output, labels);
  r.loss = loss;
  Gradients g = backward(spec, params, r.trace, dlogits);
  r.param_grads = std::move(g.param_grads);
  r.input_grads = std::move(g.input_grads);
  return r;
}

Vector init_params(const NetSpec& spec, std::uint64_t seed) {
  spec.validate();
  Vector p = Vector::Zero(spec.param_count());
  std::mt19937_64 eng(seed);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const Eigen::Index off = spec.layer_param_offset(i);
    if (l.kind == LayerKind::Dense) {
      const Scalar bound = std::sqrt(Scalar(6) / Scalar(l.fan_in + l.fan_out));
      std::uniform_real_distribution<Scalar> u(-bound, bound);
      for (Eigen::Index k = 0; k < l.fan_in * l.fan_out; ++k)
        p[off + k] = u(eng);
      // biases stay zero
    } else if (l.kind == LayerKind::BatchNorm) {
      p.segment(off, l.fan_out).setOnes();  // scale 1, shift 0
    }
  }
  return p;
}

void sgd_step(Vector& params, Vector& velocity, const Vector& grads,
              Scalar lr, Scalar momentum) {
  if (velocity.size() != params.size() || grads.size() != params.size())
    throw ShapeError("sgd_step: size mismatch");
  velocity = momentum * velocity + grads;
  params -= lr * velocity;
}

Scalar cosine_lr(std::int64_t round, std::int64_t total_rounds, Scalar lr0) {
  if (total_rounds < 1) throw InputError("cosine_lr: total_rounds must be >= 1");
  if (round < 0 || round > total_rounds)
    throw InputError("cosine_lr: round out of [0, total_rounds]");
  if (round == total_rounds) return 0;
  if (round == 0) return lr0;
  return lr0 * (1 + std::cos(M_PI * Scalar(round) / Scalar(total_rounds))) / 2;
}

Scalar accuracy(const NetSpec& spec, const Vector& params,
                const Eigen::Ref<const Matrix>& inputs,
                const IntVector& labels, const BnStatSet& stats) {
  if (labels.size() != inputs.rows())
    throw ShapeError("accuracy: labels/inputs batch mismatch");
  ForwardTrace t = forward(spec, params, inputs, stats, Mode::Eval);
  Eigen::Index correct = 0;
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
    Eigen::Index pred;
    t.output.row(i).maxCoeff(&pred);
    if (pred == labels[i]) ++correct;
  }
  return Scalar(correct) / Scalar(inputs.rows());
}

}  // namespace pcofl
