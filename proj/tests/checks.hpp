#pragma once

// Reusable numerical checks on small seeded instances, run by the unit tests
// and by the acceptance runner.

#include <cstdint>
#include <string>
#include <vector>

namespace fairlab::checks {

struct Named {
  std::string name;
  double value;
};

// Relative error between analytic and central-difference gradients for each
// loss (d = 4, |A| = 2, batch of 4).
std::vector<Named> gradient_errors(std::uint64_t seed);

// |composite - weighted sum of separately computed components| for L_sen and
// L_b.
std::vector<Named> additivity_errors(std::uint64_t seed);

struct MiEstimates {
  double club = 0.0;
  double infonce = 0.0;
  double log_batch = 0.0;
};

// S, P standard normal with correlation rho (d = 1). CLUB after fitting its
// variational net; InfoNCE as ln(B) - loss, averaged over fresh batches.
MiEstimates gaussian_mi_estimates(std::uint64_t seed, double rho);

}  // namespace fairlab::checks
