#pragma once

#include "semdir/core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace semdir {

enum class ScheduleKind { linear, cosine };

inline std::string to_string(ScheduleKind kind) { return kind == ScheduleKind::linear ? "linear" : "cosine"; }

inline ScheduleKind parse_schedule_kind(const std::string& s) {
  if (s == "linear") return ScheduleKind::linear;
  if (s == "cosine") return ScheduleKind::cosine;
  throw Error(ErrorKind::invalid_argument, "unknown schedule kind '" + s + "'");
}

/// Forward-process variances. alphas_cum[t] is the cumulative product of
/// (1 - beta) up to and including index t; the DDIM equations call it alpha_t.
struct NoiseSchedule {
  int T = 0;
  ScheduleKind kind = ScheduleKind::linear;
  double snr_shift = 1.0;
  std::vector<double> betas;
  std::vector<double> alphas_cum;

  double alpha(int t) const {
    require(t >= 0 && t < T, ErrorKind::timestep_out_of_range,
            "timestep " + std::to_string(t) + " outside [0, " + std::to_string(T) + ")");
    return alphas_cum[std::size_t(t)];
  }
};

/// `snr_shift` multiplies the signal-to-noise ratio alpha / (1 - alpha) of
/// every step; betas are re-derived from the shifted cumulative products.
inline NoiseSchedule make_schedule(int T, ScheduleKind kind, double snr_shift = 1.0) {
  require(T >= 2, ErrorKind::invalid_argument, "schedule needs T >= 2");
  require(snr_shift > 0.0 && std::isfinite(snr_shift), ErrorKind::invalid_argument, "snr_shift must be positive");
  NoiseSchedule s;
  s.T = T;
  s.kind = kind;
  s.snr_shift = snr_shift;
  s.betas.resize(std::size_t(T));
  if (kind == ScheduleKind::linear) {
    // Endpoints 1e-4 and 2e-2 are defined for T = 1000; rescale so that the
    // total noise injected stays comparable at other lengths.
    const double scale = 1000.0 / T;
    const double lo = std::min(scale * 1e-4, 0.5);
    const double hi = std::min(scale * 2e-2, 0.999);
    for (int i = 0; i < T; ++i) s.betas[std::size_t(i)] = lo + (hi - lo) * double(i) / double(T - 1);
  } else {
    constexpr double offset = 0.008;
    auto f = [&](double t) {
      const double c = std::cos((t / T + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
      return c * c;
    };
    for (int i = 0; i < T; ++i) {
      const double beta = 1.0 - f(i + 1) / f(i);
      s.betas[std::size_t(i)] = std::clamp(beta, 1e-8, 0.999);
    }
  }
  s.alphas_cum.resize(std::size_t(T));
  double prod = 1.0;
  for (int i = 0; i < T; ++i) {
    prod *= 1.0 - s.betas[std::size_t(i)];
    s.alphas_cum[std::size_t(i)] = prod;
  }
  if (snr_shift != 1.0) {
    double prev = 1.0;
    for (int i = 0; i < T; ++i) {
      const double a = s.alphas_cum[std::size_t(i)];
      const double shifted = snr_shift * a / (1.0 - a + snr_shift * a);
      s.alphas_cum[std::size_t(i)] = shifted;
      s.betas[std::size_t(i)] = 1.0 - shifted / prev;
      prev = shifted;
    }
  }
  return s;
}

/// Schedule index for a time written as a fraction of T ("0.25T").
/// The final index T-1 stands for t = T.
inline int timestep_at(double fraction, int T) {
  require(fraction >= 0.0 && fraction <= 1.0, ErrorKind::invalid_argument, "timestep fraction outside [0, 1]");
  const int idx = int(std::lround(fraction * T)) - 1;
  return std::clamp(idx, 0, T - 1);
}

/// Decreasing DDIM sub-grid t_start = g[0] > g[1] > ... > g[steps] = 0.
/// Fewer points are returned when t_start < steps.
inline std::vector<int> step_grid(int t_start, int steps) {
  require(t_start >= 0, ErrorKind::invalid_argument, "negative start timestep");
  require(steps >= 1, ErrorKind::invalid_argument, "step count must be >= 1");
  std::vector<int> grid;
  grid.reserve(std::size_t(steps) + 1);
  for (int k = steps; k >= 0; --k) {
    const int t = int(std::lround(double(t_start) * k / steps));
    if (grid.empty() || t < grid.back()) grid.push_back(t);
  }
  if (grid.back() != 0) grid.push_back(0);
  return grid;
}

}  // namespace semdir
