#pragma once

// Reference computations that share no code with the diffusion math or the
// network, and the self-check suite built on them.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "diffmt/common.hpp"
#include "diffmt/model.hpp"

namespace diffmt {

namespace oracle {

/// Distribution of x_t after t single uniform-noise steps started at x0,
/// by explicit propagation through the per-step transition matrices.
std::vector<double> chain_marginal(Token x0, int t, const std::vector<double>& betas, int categories);

/// q(x_{t-1} | x_t, x_0) by Bayes' rule over every value of x_{t-1}.
std::vector<double> bayes_posterior(Token x_t, Token x0, int t, const std::vector<double>& betas, int categories);

/// Posterior under a distribution over x_0:
/// sum_{x0} w(x0) q(x_t | x_{t-1}) q(x_{t-1} | x0), normalized.
std::vector<double> mixture_posterior(Token x_t, const std::vector<double>& x0_weights, int t,
                                      const std::vector<double>& betas);

/// One variational-bound term for a sequence, assembled from the above.
double bound_term(const std::vector<Token>& y0, const std::vector<Token>& y_t,
                  const std::vector<std::vector<double>>& x0_hat, int t, const std::vector<double>& betas);

}  // namespace oracle

/// Largest deviation found by one comparison sweep.
struct SweepResult {
  double max_error = 0;
  long cases = 0;
};

/// posterior_probs vs oracle::bayes_posterior for every (K, T, t, x_t, x_0)
/// on cosine schedules, plus random-beta schedules from `seed`. With
/// `zero_betas` every schedule is replaced by an all-zero one.
SweepResult sweep_posterior(const std::vector<int>& categories, const std::vector<int>& lengths,
                            std::uint64_t seed, bool zero_betas = false);

/// forward_cumulative_probs vs oracle::chain_marginal.
SweepResult sweep_chain(const std::vector<int>& categories, const std::vector<int>& lengths, std::uint64_t seed);

/// vb_loss_term vs oracle::bound_term on random inputs (K <= 4, L <= 2,
/// T <= 5).
SweepResult sweep_bound(int trials, std::uint64_t seed);

/// Largest vb_loss_term for perfect predictions over random sequences and
/// every t.
SweepResult sweep_perfect_predictor(int trials, std::uint64_t seed);

struct GradientCheckEntry {
  std::string tensor_class;  // tensor name with the layer index removed
  int coordinates = 0;
  double max_relative_error = 0;
};

struct GradientCheckOptions {
  ModelConfig config{1, 2, 16, 32, 8, 4, 10};
  int batch = 3;
  int coordinates_per_class = 20;
  double epsilon = 1e-4;
  std::uint64_t seed = 1;
};

/// Central finite differences of the batch loss against the analytic
/// gradient, in double precision.
std::vector<GradientCheckEntry> gradient_check(const GradientCheckOptions& options = {});

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0;
};

struct VerifyOptions {
  /// Run only checks whose name contains this substring.
  std::string filter;
  /// Fault injection: the posterior check runs on schedules with every beta
  /// set to zero.
  bool zero_beta_fault = false;
  /// Offsets the seeds of the randomized sweeps; 0 gives the default draws.
  std::uint64_t seed = 0;
};

std::vector<std::string> verify_check_names();
std::vector<CheckResult> run_verify(const VerifyOptions& options = {});
void print_verify_table(std::ostream& out, const std::vector<CheckResult>& results);

}  // namespace diffmt
