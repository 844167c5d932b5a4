#pragma once

#include <string_view>
#include <vector>

namespace diffmt {

enum class ScheduleKind { Cosine, Linear };

ScheduleKind parse_schedule_kind(std::string_view name);
std::string_view to_string(ScheduleKind kind);

/// Noise schedule of a categorical diffusion chain.
///
/// Steps are 1-based. `alpha_bar(0)` is defined as 1 so that the posterior
/// at t = 1 and the cumulative recursion need no special case.
class NoiseSchedule {
 public:
  /// Largest per-step beta produced by the built-in kinds. Keeps alpha_bar
  /// strictly positive.
  static constexpr double kMaxBeta = 0.999;
  static constexpr double kCosineOffset = 0.008;

  /// Takes betas for t = 1..T. Each beta must lie in [0, 1]; zero betas are
  /// accepted so degenerate chains can be built in tests.
  static NoiseSchedule from_betas(std::vector<double> betas);

  /// alpha_bar(t) = f(t)/f(0), f(t) = cos^2(((t/T + s)/(1 + s)) pi/2).
  static NoiseSchedule cosine(int steps);

  /// Betas linearly spaced from `beta_first` to `beta_last`.
  static NoiseSchedule linear(int steps, double beta_first, double beta_last);

  int steps() const { return static_cast<int>(beta_.size()); }
  double beta(int t) const;
  double alpha(int t) const;
  /// Valid for t in [0, T].
  double alpha_bar(int t) const;

  const std::vector<double>& betas() const { return beta_; }

 private:
  explicit NoiseSchedule(std::vector<double> betas);

  std::vector<double> beta_;
  std::vector<double> alpha_bar_;  // index 0 holds alpha_bar(0) = 1
};

/// Linear kind uses the DDPM betas rescaled to T steps:
/// beta in [1e-4, 2e-2] * 1000 / T, clipped to kMaxBeta.
NoiseSchedule build_schedule(ScheduleKind kind, int steps);

}  // namespace diffmt
