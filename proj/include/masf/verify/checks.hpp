#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace masf::verify {

struct CheckResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct CheckOptions {
  std::uint64_t seed = 20240611;
  // Scratch space for runs that write artifacts.
  std::filesystem::path workdir = std::filesystem::temp_directory_path() / "masf_checks";
  int jobs = 1;
  std::ostream* log = nullptr;
};

// Sampler with the exact Gaussian prior score against the Kalman posterior.
CheckResult check_posterior_exactness(const CheckOptions& opt);
// Euler-Maruyama of the moment-matching SDE against A(t) x0 and Sigma(t).
CheckResult check_moment_matching_sde(const CheckOptions& opt);
// Closed-form likelihood score against finite differences of the log-density.
CheckResult check_likelihood_score(const CheckOptions& opt);
// Backprop gradients of the score-matching loss against finite differences.
CheckResult check_dsm_gradient(const CheckOptions& opt);
// Trained net on N(0, I) data against the analytic marginal score.
CheckResult check_gaussian_score_recovery(const CheckOptions& opt);
CheckResult check_lorenz63_end_to_end(const CheckOptions& opt);
CheckResult check_lorenz96_trend(const CheckOptions& opt);
// Two identical runs must give byte-identical metrics.csv.
CheckResult check_determinism(const CheckOptions& opt);
// Composition identities of the transition kernels.
CheckResult check_kernel_algebra(const CheckOptions& opt);

// Criteria ids 1..9 in order.
std::vector<int> all_check_ids();
// Ids of the checks that finish in seconds to a couple of minutes.
std::vector<int> analytic_check_ids();
CheckResult run_check(int id, const CheckOptions& opt);

std::string format_result(const CheckResult& r);

}  // namespace masf::verify
