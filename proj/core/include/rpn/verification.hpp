#pragma once

// Monte-Carlo verification of every closed-form expression in the library:
// posterior-predictive entropy, expected data entropy, mutual information,
// EPKL, total predictive variance, the expected-Gaussian-NLL bracket of the
// reverse-KL objective, the three KL divergences, and the posterior
// predictive density itself.  Each formula is checked on randomized
// parameter settings against a sample mean, reporting the z-score of the
// closed form under the Monte-Carlo standard error.

#include <cstdint>
#include <string>
#include <vector>

namespace rpn {

struct VerificationRow {
  std::string formula;
  int dim = 1;       // target dimension K of the setting
  int setting = 0;   // index within the formula's settings
  double closed_form = 0.0;
  double mc_estimate = 0.0;
  double abs_z = 0.0;  // |closed_form - estimate| / standard error
  bool pass = false;   // abs_z < threshold
};

struct VerificationReport {
  std::vector<VerificationRow> rows;
  long samples = 0;
  double threshold = 4.0;
  double max_abs_z = 0.0;
  bool pass = false;

  // Largest |z| for one formula across its settings.
  double max_abs_z_for(const std::string& formula) const;
  std::string to_json() const;
};

// Runs the suite: `settings` randomized parameter draws per formula with
// the target dimension cycling through 1, 2, 3, and `samples` Monte-Carlo
// draws per setting.  Deterministic per seed.
VerificationReport run_verification(std::uint64_t seed, long samples,
                                    int settings = 20, double threshold = 4.0);

}  // namespace rpn
