#pragma once

// Forward-process schedule: interpolating mean, variance, loss weight and the
// timestep grid shared by training and inference. Header-only; the array
// templates work for plain doubles and for torch tensors (per-item times are
// passed as broadcastable tensors).

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "dcem/errors.hpp"

namespace dcem {

struct ScheduleParams {
  double gamma = 1.5;
  double sigma_min = 0.05;
  double sigma_max = 0.5;

  void validate() const {
    if (!(gamma > 0.0)) throw DomainError("schedule: gamma must be > 0");
    if (!(sigma_min > 0.0) || !(sigma_max > sigma_min))
      throw DomainError("schedule: need 0 < sigma_min < sigma_max");
  }

  bool operator==(const ScheduleParams&) const = default;
};

// Smallest t fed to the loss weight; 1/(e^t - 1) diverges at 0.
inline constexpr double kLossWeightMinT = 1e-3;

namespace detail {

inline double exp_(double v) { return std::exp(v); }
inline torch::Tensor exp_(const torch::Tensor& v) { return torch::exp(v); }
inline double sqrt_(double v) { return std::sqrt(v); }
inline torch::Tensor sqrt_(const torch::Tensor& v) { return torch::sqrt(v); }

inline void require_same_shape(double, double) {}
inline void require_same_shape(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes())
    throw ContractError("schedule: operand shapes differ");
}

inline void require_unit_interval(double t) {
  if (!(t >= 0.0 && t <= 1.0))
    throw DomainError("schedule: t must lie in [0, 1], got " + std::to_string(t));
}
inline void require_unit_interval(const torch::Tensor& t) {
  if (t.numel() == 0) return;
  auto lo = t.min().item<double>();
  auto hi = t.max().item<double>();
  if (!(lo >= 0.0 && hi <= 1.0))
    throw DomainError("schedule: t must lie in [0, 1]");
}

}  // namespace detail

/// Weight exp(-gamma t) that the mean puts on the clean signal.
template <class Time>
Time clean_coefficient(const Time& t, const ScheduleParams& p) {
  return detail::exp_(-p.gamma * t);
}

/// mu(x0, y, t) = e^{-gamma t} x0 + (1 - e^{-gamma t}) y.
/// At t = 0 the result is x0 exactly.
template <class Array, class Time>
Array interpolate_mean(const Array& x0, const Array& y, const Time& t,
                       const ScheduleParams& p) {
  detail::require_same_shape(x0, y);
  detail::require_unit_interval(t);
  const Time w = clean_coefficient(t, p);
  return w * x0 + (1.0 - w) * y;
}

/// Closed-form sigma(t)^2; solves dv/dt = 2 log(r) sigma_min^2 r^{2t} - 2 gamma v
/// with v(0) = 0 and r = sigma_max / sigma_min.
template <class Time>
Time variance(const Time& t, const ScheduleParams& p) {
  detail::require_unit_interval(t);
  const double log_ratio = std::log(p.sigma_max / p.sigma_min);
  const double scale =
      p.sigma_min * p.sigma_min * log_ratio / (p.gamma + log_ratio);
  return scale * (detail::exp_(2.0 * log_ratio * t) -
                  detail::exp_(-2.0 * p.gamma * t));
}

template <class Time>
Time std_dev(const Time& t, const ScheduleParams& p) {
  return detail::sqrt_(variance(t, p));
}

/// x_t = mu(x0, y, t) + sigma(t) * noise. Noise is scaled by the standard
/// deviation so that x_t ~ N(mu, sigma^2).
template <class Array, class Time>
Array sample_forward(const Array& x0, const Array& y, const Time& t,
                     const Array& noise, const ScheduleParams& p) {
  detail::require_same_shape(x0, noise);
  return interpolate_mean(x0, y, t, p) + std_dev(t, p) * noise;
}

/// lambda(t) = 1 / (e^t - 1), with t clamped to kLossWeightMinT.
inline double loss_weight(double t) {
  if (!(t >= 0.0 && t <= 1.0))
    throw DomainError("loss_weight: t must lie in [0, 1]");
  const double tc = t < kLossWeightMinT ? kLossWeightMinT : t;
  return 1.0 / std::expm1(tc);
}

inline torch::Tensor loss_weight(const torch::Tensor& t) {
  detail::require_unit_interval(t);
  return 1.0 / torch::expm1(t.clamp_min(kLossWeightMinT));
}

/// Timesteps visited by the sampler, strictly decreasing from 1 to 0.
class TimestepGrid {
 public:
  explicit TimestepGrid(std::vector<double> values) : values_(std::move(values)) {
    if (values_.size() < 2 || values_.front() != 1.0 || values_.back() != 0.0)
      throw ContractError("timestep grid must run from 1 to 0");
    for (std::size_t i = 1; i < values_.size(); ++i)
      if (!(values_[i] < values_[i - 1]))
        throw ContractError("timestep grid must be strictly decreasing");
  }

  const std::vector<double>& values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }

  /// The final `n` grid points (the tail visited by regeneration).
  std::vector<double> tail(std::size_t n) const {
    if (n > values_.size()) throw DomainError("grid tail longer than grid");
    return {values_.end() - static_cast<std::ptrdiff_t>(n), values_.end()};
  }

 private:
  std::vector<double> values_;
};

/// `steps` equally spaced points from 1 down to 0 inclusive; one denoiser
/// evaluation per point.
inline TimestepGrid make_grid(int steps) {
  if (steps < 2) throw DomainError("make_grid: steps must be >= 2");
  std::vector<double> v(static_cast<std::size_t>(steps));
  const double denom = static_cast<double>(steps - 1);
  for (int i = 0; i < steps; ++i)
    v[static_cast<std::size_t>(i)] = static_cast<double>(steps - 1 - i) / denom;
  return TimestepGrid(std::move(v));
}

}  // namespace dcem
