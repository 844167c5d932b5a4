#include "diffmt/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "diffmt/common.hpp"

namespace diffmt {

ScheduleKind parse_schedule_kind(std::string_view name) {
  if (name == "cosine") return ScheduleKind::Cosine;
  if (name == "linear" || name == "linear-beta") return ScheduleKind::Linear;
  throw InvalidArgument("unknown schedule kind '" + std::string(name) + "'");
}

std::string_view to_string(ScheduleKind kind) {
  return kind == ScheduleKind::Cosine ? "cosine" : "linear";
}

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : beta_(std::move(betas)) {
  alpha_bar_.resize(beta_.size() + 1);
  alpha_bar_[0] = 1.0;
  for (std::size_t t = 1; t <= beta_.size(); ++t) {
    alpha_bar_[t] = alpha_bar_[t - 1] * (1.0 - beta_[t - 1]);
  }
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  if (betas.empty()) throw InvalidArgument("noise schedule needs T >= 1");
  for (double b : betas) {
    if (!(b >= 0.0 && b <= 1.0)) {
      throw InvalidArgument("beta must lie in [0, 1], got " + std::to_string(b));
    }
  }
  return NoiseSchedule(std::move(betas));
}

NoiseSchedule NoiseSchedule::cosine(int steps) {
  if (steps < 1) throw InvalidArgument("noise schedule needs T >= 1");
  const double s = kCosineOffset;
  auto f = [&](int t) {
    const double c = std::cos((static_cast<double>(t) / steps + s) / (1.0 + s) *
                              std::numbers::pi / 2.0);
    return c * c;
  };
  std::vector<double> betas(static_cast<std::size_t>(steps));
  const double f0 = f(0);
  double prev = 1.0;
  for (int t = 1; t <= steps; ++t) {
    const double ab = f(t) / f0;
    betas[t - 1] = std::clamp(1.0 - ab / prev, 0.0, kMaxBeta);
    prev = ab;
  }
  return NoiseSchedule(std::move(betas));
}

NoiseSchedule NoiseSchedule::linear(int steps, double beta_first, double beta_last) {
  if (steps < 1) throw InvalidArgument("noise schedule needs T >= 1");
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const double w = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    betas[i] = beta_first + w * (beta_last - beta_first);
  }
  return from_betas(std::move(betas));
}

double NoiseSchedule::beta(int t) const {
  if (t < 1 || t > steps()) throw InvalidArgument("diffusion step out of range: " + std::to_string(t));
  return beta_[t - 1];
}

double NoiseSchedule::alpha(int t) const { return 1.0 - beta(t); }

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > steps()) throw InvalidArgument("diffusion step out of range: " + std::to_string(t));
  return alpha_bar_[t];
}

NoiseSchedule build_schedule(ScheduleKind kind, int steps) {
  if (steps < 1) throw InvalidArgument("noise schedule needs T >= 1");
  switch (kind) {
    case ScheduleKind::Cosine:
      return NoiseSchedule::cosine(steps);
    case ScheduleKind::Linear: {
      const double scale = 1000.0 / steps;
      return NoiseSchedule::linear(steps, std::min(1e-4 * scale, NoiseSchedule::kMaxBeta),
                                   std::min(2e-2 * scale, NoiseSchedule::kMaxBeta));
    }
  }
  throw InvalidArgument("unknown schedule kind");
}

}  // namespace diffmt
