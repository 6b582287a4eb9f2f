#include "pcofl/hypernet.hpp"

#include <cmath>
#include <random>

#include "pcofl/rng.hpp"

namespace pcofl {

void HypernetState::validate() const {
  if (embed_dim < 1 || hidden < 1 || theta_dim < 1)
    throw ShapeError("HypernetState: dimensions must be >= 1");
  if (phi.size() != phi_count())
    throw ShapeError("HypernetState: phi length does not match layout");
}

namespace {

struct PhiView {
  Eigen::Map<const Matrix> w1;
  Eigen::Map<const Vector> b1;
  Eigen::Map<const Matrix> w2;
  Eigen::Map<const Vector> b2;
};

PhiView view(const HypernetState& h) {
  const Scalar* p = h.phi.data();
  const Eigen::Index n1 = h.hidden * h.embed_dim;
  return PhiView{
      Eigen::Map<const Matrix>(p, h.hidden, h.embed_dim),
      Eigen::Map<const Vector>(p + n1, h.hidden),
      Eigen::Map<const Matrix>(p + n1 + h.hidden, h.theta_dim, h.hidden),
      Eigen::Map<const Vector>(p + n1 + h.hidden + h.theta_dim * h.hidden,
                               h.theta_dim)};
}

void check_embedding(const HypernetState& h, const Vector& e) {
  h.validate();
  if (e.size() != h.embed_dim)
    throw ShapeError("hypernet: embedding length does not match embed_dim");
  if (!e.allFinite()) throw NumericError("hypernet: non-finite embedding");
  if (!h.phi.allFinite()) throw NumericError("hypernet: non-finite phi");
}

}  // namespace

HypernetState make_hypernet(const NetSpec& target, Eigen::Index embed_dim,
                            Eigen::Index hidden, std::uint64_t seed) {
  target.validate();
  if (embed_dim < 1 || hidden < 1)
    throw ShapeError("make_hypernet: dimensions must be >= 1");
  HypernetState h;
  h.embed_dim = embed_dim;
  h.hidden = hidden;
  h.theta_dim = target.param_count();
  h.phi = Vector::Zero(h.phi_count());

  std::mt19937_64 eng(seed);
  auto fill = [&](Eigen::Index offset, Eigen::Index count, Eigen::Index fan_in,
                  Eigen::Index fan_out) {
    const Scalar bound = std::sqrt(Scalar(6) / Scalar(fan_in + fan_out));
    std::uniform_real_distribution<Scalar> u(-bound, bound);
    for (Eigen::Index k = 0; k < count; ++k) h.phi[offset + k] = u(eng);
  };
  fill(0, hidden * embed_dim, embed_dim, hidden);
  fill(hidden * embed_dim + hidden, h.theta_dim * hidden, hidden, h.theta_dim);
  // biases stay zero
  return h;
}

Vector generate(const HypernetState& h, const Vector& embedding) {
  check_embedding(h, embedding);
  PhiView v = view(h);
  Vector z = (v.w1 * embedding + v.b1).cwiseMax(Scalar(0));
  return v.w2 * z + v.b2;
}

HypernetGrads hypernet_backprop(const HypernetState& h, const Vector& embedding,
                                const Vector& delta_theta) {
  check_embedding(h, embedding);
  if (delta_theta.size() != h.theta_dim)
    throw ShapeError("hypernet_backprop: delta length does not match theta_dim");
  if (!delta_theta.allFinite())
    throw NumericError("hypernet_backprop: non-finite delta");

  PhiView v = view(h);
  Vector z_pre = v.w1 * embedding + v.b1;
  Vector z = z_pre.cwiseMax(Scalar(0));

  HypernetGrads g;
  g.grad_phi = Vector::Zero(h.phi_count());
  const Eigen::Index n1 = h.hidden * h.embed_dim;
  Eigen::Map<Matrix> dw1(g.grad_phi.data(), h.hidden, h.embed_dim);
  Eigen::Map<Vector> db1(g.grad_phi.data() + n1, h.hidden);
  Eigen::Map<Matrix> dw2(g.grad_phi.data() + n1 + h.hidden, h.theta_dim,
                         h.hidden);
  Eigen::Map<Vector> db2(
      g.grad_phi.data() + n1 + h.hidden + h.theta_dim * h.hidden, h.theta_dim);

  db2 = delta_theta;
  dw2 = delta_theta * z.transpose();
  Vector dz = (v.w2.transpose() * delta_theta).array() *
              (z_pre.array() > 0).cast<Scalar>();
  db1 = dz;
  dw1 = dz * embedding.transpose();
  g.grad_embedding = v.w1.transpose() * dz;
  return g;
}

Vector init_embedding(std::uint64_t client_id, Eigen::Index embed_dim,
                      std::uint64_t seed) {
  if (embed_dim < 1) throw ShapeError("init_embedding: embed_dim must be >= 1");
  std::mt19937_64 eng = rng::engine(seed, "embedding", client_id);
  std::normal_distribution<Scalar> n(0, 1.0 / std::sqrt(Scalar(embed_dim)));
  Vector e(embed_dim);
  for (Eigen::Index i = 0; i < embed_dim; ++i) e[i] = n(eng);
  return e;
}

}  // namespace pcofl
