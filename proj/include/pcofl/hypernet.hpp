#pragma once

// Central generator that maps a client embedding to a full flat parameter
// vector for the target NetSpec. Two dense layers with a ReLU between
// them; the generator itself has no norm layers.

#include <cstdint>
#include <utility>

#include "pcofl/net.hpp"
#include "pcofl/types.hpp"

namespace pcofl {

struct HypernetState {
  Vector phi;  // [W1 | b1 | W2 | b2], matrices flattened column-major
  Eigen::Index embed_dim = 0;
  Eigen::Index hidden = 0;
  Eigen::Index theta_dim = 0;

  Eigen::Index phi_count() const {
    return embed_dim * hidden + hidden + hidden * theta_dim + theta_dim;
  }
  void validate() const;
};

HypernetState make_hypernet(const NetSpec& target, Eigen::Index embed_dim,
                            Eigen::Index hidden, std::uint64_t seed);

// theta = W2 * relu(W1 e + b1) + b2
Vector generate(const HypernetState& h, const Vector& embedding);

// Pullback of a parameter-space cotangent through generate:
// returns (d theta/d phi)^T delta and (d theta/d e)^T delta.
struct HypernetGrads {
  Vector grad_phi;
  Vector grad_embedding;
};

HypernetGrads hypernet_backprop(const HypernetState& h, const Vector& embedding,
                                const Vector& delta_theta);

// i.i.d. normal entries with standard deviation 1/sqrt(d); the stream is
// keyed by client id so ids map to stable, distinct vectors.
Vector init_embedding(std::uint64_t client_id, Eigen::Index embed_dim,
                      std::uint64_t seed);

}  // namespace pcofl
