#pragma once

// Probability math of the uniform-noise categorical diffusion chain.
// Everything here works in double precision regardless of the network's
// scalar type.

#include <span>
#include <vector>

#include "diffmt/common.hpp"
#include "diffmt/schedule.hpp"

namespace diffmt {

/// Probability vector over K >= 2 categories.
class CategoricalDistribution {
 public:
  static constexpr double kSumTolerance = 1e-9;

  /// Validates non-negativity and unit mass.
  explicit CategoricalDistribution(std::vector<double> probs);

  static CategoricalDistribution one_hot(Token k, int categories);
  static CategoricalDistribution uniform(int categories);

  int size() const { return static_cast<int>(probs_.size()); }
  double operator[](int k) const { return probs_[static_cast<std::size_t>(k)]; }
  std::span<const double> probs() const { return probs_; }

  /// Inverse-CDF draw using one uniform variate.
  Token sample(Rng& rng) const;
  Token argmax() const;

 private:
  struct Unchecked {};
  CategoricalDistribution(std::vector<double> probs, Unchecked) : probs_(std::move(probs)) {}
  friend CategoricalDistribution normalized(std::vector<double> weights);

  std::vector<double> probs_;
};

/// Rescales non-negative weights to unit mass. Throws NumericalError when the
/// total is zero or not finite.
CategoricalDistribution normalized(std::vector<double> weights);

/// Floor applied to probabilities before taking logs in the loss.
inline constexpr double kLogFloor = 1e-12;

/// q(x_t | x_{t-1}) = (1 - beta_t) onehot(x_prev) + beta_t / K.
CategoricalDistribution forward_step_probs(Token x_prev, int t, const NoiseSchedule& sched,
                                           int categories);

/// q(x_t | x_0) = alpha_bar_t onehot(x0) + (1 - alpha_bar_t) / K.
CategoricalDistribution forward_cumulative_probs(Token x0, int t, const NoiseSchedule& sched,
                                                 int categories);

/// Draws x_t ~ q(x_t | x_0): keep x0 with probability alpha_bar_t, otherwise
/// resample uniformly.
Token sample_forward(Token x0, int t, const NoiseSchedule& sched, int categories, Rng& rng);

/// q(x_{t-1} | x_t, x_0) with x_0 given as a distribution (one-hot for the
/// true token, a network prediction otherwise). Requires 1 <= t <= T.
CategoricalDistribution posterior_probs(Token x_t, std::span<const double> x0_dist, int t,
                                        const NoiseSchedule& sched);

/// KL(p || q) in nats, with q floored at kLogFloor and 0 ln 0 = 0.
double kl_categorical(std::span<const double> p, std::span<const double> q);

/// KL(q(x_T | x_0) || uniform); reported as a diagnostic, never trained on.
double prior_kl(Token x0, const NoiseSchedule& sched, int categories);

/// One term of the variational bound for a whole sequence, summed over
/// positions.
///
/// t = 1: -sum_pos ln x0_hat[pos][y0[pos]] (reconstruction).
/// t >= 2: sum_pos KL(post(y_t, y0) || post(y_t, x0_hat)).
///
/// `x0_hat` is row-major, one row of K probabilities per position.
double vb_loss_term(std::span<const Token> y0, std::span<const Token> y_t,
                    std::span<const double> x0_hat, int categories, int t,
                    const NoiseSchedule& sched);

/// Same value as vb_loss_term; also writes d loss / d x0_hat into `grad`
/// (same layout as x0_hat).
double vb_loss_term_with_grad(std::span<const Token> y0, std::span<const Token> y_t,
                              std::span<const double> x0_hat, int categories, int t,
                              const NoiseSchedule& sched, std::span<double> grad);

}  // namespace diffmt
