#pragma once

// Finite-difference validation of every analytic gradient path: classifier
// parameter and input gradients, the generator pullback, the trainable-mask
// objective, and the synthesis objective with its moment-matching terms.
// Instances are rejected while any rectifier input sits within 1e-3 of its
// kink, so central differences stay on one linear piece.

#include <cstdint>
#include <string>
#include <vector>

#include "pcofl/types.hpp"

namespace pcofl {

struct GradCheckCase {
  std::string family;
  int instance = 0;
  Eigen::Index components = 0;  // gradient entries compared
  Scalar max_rel_err = 0;
};

struct GradCheckReport {
  std::vector<GradCheckCase> cases;
  Scalar worst = 0;
  int instances = 0;
};

// Runs `per_family` independent random instances of each of the five
// families: net_params, net_inputs, generator_chain, mask_objective,
// synthesis_inputs. Relative error uses a 1e-3 denominator floor.
GradCheckReport run_gradcheck(std::uint64_t seed, int per_family);

}  // namespace pcofl
