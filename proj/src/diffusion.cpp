#include "diffmt/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace diffmt {

namespace {

void check_categories(int categories) {
  if (categories < 2) throw InvalidArgument("categorical distribution needs K >= 2");
}

void check_token(Token x, int categories) {
  if (x < 0 || x >= categories) {
    throw InvalidArgument("token id " + std::to_string(x) + " outside [0, " +
                          std::to_string(categories) + ")");
  }
}

// theta-tilde before normalization; `x0_dist` has K entries.
void unnormalized_posterior(Token x_t, std::span<const double> x0_dist, int t,
                            const NoiseSchedule& sched, std::span<double> out) {
  const int categories = static_cast<int>(x0_dist.size());
  const double a = sched.alpha(t);
  const double ab_prev = sched.alpha_bar(t - 1);
  const double step_floor = (1.0 - a) / categories;
  const double cum_floor = (1.0 - ab_prev) / categories;
  for (int k = 0; k < categories; ++k) {
    const double step = (k == x_t ? a : 0.0) + step_floor;
    out[k] = step * (ab_prev * x0_dist[k] + cum_floor);
  }
}

}  // namespace

CategoricalDistribution::CategoricalDistribution(std::vector<double> probs)
    : probs_(std::move(probs)) {
  check_categories(size());
  double total = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw InvalidArgument("probabilities must be finite and >= 0");
    total += p;
  }
  if (std::abs(total - 1.0) > kSumTolerance) {
    throw InvalidArgument("probabilities sum to " + std::to_string(total) + ", expected 1");
  }
}

CategoricalDistribution CategoricalDistribution::one_hot(Token k, int categories) {
  check_categories(categories);
  check_token(k, categories);
  std::vector<double> p(static_cast<std::size_t>(categories), 0.0);
  p[static_cast<std::size_t>(k)] = 1.0;
  return CategoricalDistribution(std::move(p), Unchecked{});
}

CategoricalDistribution CategoricalDistribution::uniform(int categories) {
  check_categories(categories);
  return CategoricalDistribution(std::vector<double>(static_cast<std::size_t>(categories), 1.0 / categories),
                                 Unchecked{});
}

Token CategoricalDistribution::sample(Rng& rng) const {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (int k = 0; k < size(); ++k) {
    acc += probs_[k];
    if (u < acc) return k;
  }
  // Rounding left u above the accumulated mass; return the last non-zero entry.
  for (int k = size() - 1; k >= 0; --k) {
    if (probs_[k] > 0.0) return k;
  }
  return size() - 1;
}

Token CategoricalDistribution::argmax() const {
  return static_cast<Token>(std::max_element(probs_.begin(), probs_.end()) - probs_.begin());
}

CategoricalDistribution normalized(std::vector<double> weights) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw NumericalError("degenerate normalization: total mass " + std::to_string(total));
  }
  for (double& w : weights) w /= total;
  if (weights.size() < 2) throw InvalidArgument("categorical distribution needs K >= 2");
  return CategoricalDistribution(std::move(weights), CategoricalDistribution::Unchecked{});
}

CategoricalDistribution forward_step_probs(Token x_prev, int t, const NoiseSchedule& sched,
                                           int categories) {
  check_categories(categories);
  check_token(x_prev, categories);
  const double b = sched.beta(t);
  std::vector<double> p(static_cast<std::size_t>(categories), b / categories);
  p[static_cast<std::size_t>(x_prev)] += 1.0 - b;
  return CategoricalDistribution(std::move(p));
}

CategoricalDistribution forward_cumulative_probs(Token x0, int t, const NoiseSchedule& sched,
                                                 int categories) {
  check_categories(categories);
  check_token(x0, categories);
  if (t < 1 || t > sched.steps()) throw InvalidArgument("diffusion step out of range: " + std::to_string(t));
  const double ab = sched.alpha_bar(t);
  std::vector<double> p(static_cast<std::size_t>(categories), (1.0 - ab) / categories);
  p[static_cast<std::size_t>(x0)] += ab;
  return CategoricalDistribution(std::move(p));
}

Token sample_forward(Token x0, int t, const NoiseSchedule& sched, int categories, Rng& rng) {
  check_categories(categories);
  check_token(x0, categories);
  if (t < 1 || t > sched.steps()) throw InvalidArgument("diffusion step out of range: " + std::to_string(t));
  // Two draws always, so the stream position does not depend on the outcome.
  const double keep = uniform01(rng);
  const auto replacement = static_cast<Token>(uniform_index(rng, static_cast<std::uint64_t>(categories)));
  return keep < sched.alpha_bar(t) ? x0 : replacement;
}

CategoricalDistribution posterior_probs(Token x_t, std::span<const double> x0_dist, int t,
                                        const NoiseSchedule& sched) {
  const int categories = static_cast<int>(x0_dist.size());
  check_categories(categories);
  check_token(x_t, categories);
  if (t < 1 || t > sched.steps()) throw InvalidArgument("diffusion step out of range: " + std::to_string(t));
  std::vector<double> theta(static_cast<std::size_t>(categories));
  unnormalized_posterior(x_t, x0_dist, t, sched, theta);
  return normalized(std::move(theta));
}

double kl_categorical(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) {
    throw InvalidArgument("KL between distributions of different sizes (" + std::to_string(p.size()) +
                          " vs " + std::to_string(q.size()) + ")");
  }
  double kl = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] > 0.0) kl += p[k] * (std::log(p[k]) - std::log(std::max(q[k], kLogFloor)));
  }
  return std::max(kl, 0.0);
}

double prior_kl(Token x0, const NoiseSchedule& sched, int categories) {
  const auto q = forward_cumulative_probs(x0, sched.steps(), sched, categories);
  const auto u = CategoricalDistribution::uniform(categories);
  return kl_categorical(q.probs(), u.probs());
}

double vb_loss_term(std::span<const Token> y0, std::span<const Token> y_t,
                    std::span<const double> x0_hat, int categories, int t,
                    const NoiseSchedule& sched) {
  std::vector<double> scratch(x0_hat.size());
  return vb_loss_term_with_grad(y0, y_t, x0_hat, categories, t, sched, scratch);
}

double vb_loss_term_with_grad(std::span<const Token> y0, std::span<const Token> y_t,
                              std::span<const double> x0_hat, int categories, int t,
                              const NoiseSchedule& sched, std::span<double> grad) {
  check_categories(categories);
  const std::size_t length = y0.size();
  if (y_t.size() != length || x0_hat.size() != length * categories || grad.size() != x0_hat.size()) {
    throw InvalidArgument("vb_loss_term: sequence/prediction length mismatch");
  }
  if (t < 1 || t > sched.steps()) throw InvalidArgument("diffusion step out of range: " + std::to_string(t));
  std::fill(grad.begin(), grad.end(), 0.0);

  const auto K = static_cast<std::size_t>(categories);
  double loss = 0.0;
  if (t == 1) {
    for (std::size_t pos = 0; pos < length; ++pos) {
      check_token(y0[pos], categories);
      const double p = x0_hat[pos * K + y0[pos]];
      loss -= std::log(std::max(p, kLogFloor));
      if (p >= kLogFloor) grad[pos * K + y0[pos]] = -1.0 / p;
    }
    return loss;
  }

  const double a = sched.alpha(t);
  const double ab_prev = sched.alpha_bar(t - 1);
  const double step_floor = (1.0 - a) / categories;
  const double cum_floor = (1.0 - ab_prev) / categories;
  std::vector<double> target(K), pred(K), step(K);
  for (std::size_t pos = 0; pos < length; ++pos) {
    check_token(y0[pos], categories);
    check_token(y_t[pos], categories);
    const auto row = x0_hat.subspan(pos * K, K);

    double target_total = 0.0, pred_total = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      step[k] = (static_cast<Token>(k) == y_t[pos] ? a : 0.0) + step_floor;
      target[k] = step[k] * ((static_cast<Token>(k) == y0[pos] ? ab_prev : 0.0) + cum_floor);
      pred[k] = step[k] * (ab_prev * row[k] + cum_floor);
      target_total += target[k];
      pred_total += pred[k];
    }
    if (!(target_total > 0.0) || !(pred_total > 0.0)) {
      throw NumericalError("degenerate posterior normalization at step " + std::to_string(t));
    }

    // KL(p || q) = sum p ln p - sum_{active} p ln u + P_active ln Z, with u the
    // unnormalized prediction and "active" the entries above the log floor.
    double active_mass = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const double p = target[k] / target_total;
      if (p <= 0.0) continue;
      const double q = pred[k] / pred_total;
      loss += p * (std::log(p) - std::log(std::max(q, kLogFloor)));
      if (q >= kLogFloor) {
        active_mass += p;
        grad[pos * K + k] -= p * step[k] * ab_prev / pred[k];
      }
    }
    for (std::size_t k = 0; k < K; ++k) {
      grad[pos * K + k] += active_mass * step[k] * ab_prev / pred_total;
    }
  }
  return std::max(loss, 0.0);
}

}  // namespace diffmt
