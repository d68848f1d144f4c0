#pragma once

// Deterministic DDIM sampling and inversion plus the stochastic tail used for
// quality boosting. All functions operate on schedule indices t in [0, T);
// decoding to the clean image is the final predict_x0 at t = 0.

#include "semdir/core.hpp"
#include "semdir/model.hpp"
#include "semdir/schedule.hpp"

#include <optional>
#include <vector>

namespace semdir {

inline constexpr double kAlphaFloor = 1e-12;

template <DiffusionModel M>
Vec predict_eps(const M& model, const LatentState& state) {
  return model.predict_eps(state.x, state.t);
}

template <DiffusionModel M>
Vec encode_h(const M& model, const LatentState& state) {
  return model.encode_h(state.x, state.t);
}

/// x0 from the DDIM identity sqrt(a) x0 = x_t - sqrt(1 - a) eps, given eps.
inline Mat x0_from_eps(const Mat& x, const Mat& eps, double alpha) {
  require(alpha > kAlphaFloor, ErrorKind::degenerate_timestep, "alpha_t below numeric floor");
  return (x - std::sqrt(1.0 - alpha) * eps) / std::sqrt(alpha);
}

template <DiffusionModel M>
Vec predict_x0(const M& model, const LatentState& state, const NoiseSchedule& schedule) {
  const double a = schedule.alpha(state.t);
  require(a > kAlphaFloor, ErrorKind::degenerate_timestep, "alpha_t below numeric floor");
  return x0_from_eps(state.x, model.predict_eps(state.x, state.t), a);
}

/// One deterministic DDIM update on a batch of columns sharing timestep t.
template <DiffusionModel M>
Mat ddim_step_batch(const M& model, const Mat& x, int t, int next_t, const NoiseSchedule& schedule) {
  require(next_t < t, ErrorKind::invalid_argument, "DDIM step must decrease t");
  require(next_t >= 0, ErrorKind::timestep_out_of_range, "negative target timestep");
  const double a = schedule.alpha(t);
  const double an = schedule.alpha(next_t);
  const Mat eps = predict_eps_columns(model, x, std::vector<int>(std::size_t(x.cols()), t));
  const Mat x0 = x0_from_eps(x, eps, a);
  return std::sqrt(an) * x0 + std::sqrt(1.0 - an) * eps;
}

template <DiffusionModel M>
LatentState ddim_step(const M& model, const LatentState& state, const NoiseSchedule& schedule, int next_t) {
  return {ddim_step_batch(model, state.x, state.t, next_t, schedule).col(0), next_t};
}

/// Inverse DDIM update t -> next_t > t. With refine_iters = 0 this is the
/// usual DDIM inversion (noise evaluated at x_t). Each refinement iteration
/// re-evaluates the noise at the current estimate of x_{next_t}, converging to
/// the exact preimage of ddim_step.
template <DiffusionModel M>
Mat ddim_invert_step_batch(const M& model, const Mat& x, int t, int next_t, const NoiseSchedule& schedule,
                           int refine_iters = 0) {
  require(next_t > t, ErrorKind::invalid_argument, "inversion step must increase t");
  const double a = schedule.alpha(t);
  const double an = schedule.alpha(next_t);
  const auto ts = [&](int tt) { return std::vector<int>(std::size_t(x.cols()), tt); };
  Mat eps = predict_eps_columns(model, x, ts(t));
  Mat xn = std::sqrt(an) * x0_from_eps(x, eps, a) + std::sqrt(1.0 - an) * eps;
  for (int it = 0; it < refine_iters; ++it) {
    eps = predict_eps_columns(model, xn, ts(next_t));
    xn = std::sqrt(an) * x0_from_eps(x, eps, a) + std::sqrt(1.0 - an) * eps;
  }
  return xn;
}

template <DiffusionModel M>
LatentState ddim_invert_step(const M& model, const LatentState& state, const NoiseSchedule& schedule, int next_t,
                             int refine_iters = 0) {
  return {ddim_invert_step_batch(model, state.x, state.t, next_t, schedule, refine_iters).col(0), next_t};
}

/// Lifts clean images to t = 0 (inverse of the final decoding step).
template <DiffusionModel M>
Mat lift_clean_batch(const M& model, const Mat& images, const NoiseSchedule& schedule, int refine_iters = 0) {
  const double a0 = schedule.alpha(0);
  const auto t0 = std::vector<int>(std::size_t(images.cols()), 0);
  Mat eps = predict_eps_columns(model, images, t0);
  Mat x = std::sqrt(a0) * images + std::sqrt(1.0 - a0) * eps;
  for (int it = 0; it < refine_iters; ++it) {
    eps = predict_eps_columns(model, x, t0);
    x = std::sqrt(a0) * images + std::sqrt(1.0 - a0) * eps;
  }
  return x;
}

struct InversionOptions {
  int steps = 40;
  int refine_iters = 0;
};

/// DDIM inversion of clean images (columns) up to t_end.
template <DiffusionModel M>
Mat ddim_invert_batch(const M& model, const Mat& images, const NoiseSchedule& schedule, int t_end,
                      const InversionOptions& opt) {
  require(opt.steps >= 1, ErrorKind::invalid_argument, "inversion needs steps >= 1");
  std::vector<int> grid = step_grid(t_end, opt.steps);
  Mat x = lift_clean_batch(model, images, schedule, opt.refine_iters);
  for (std::size_t k = grid.size() - 1; k > 0; --k) {
    x = ddim_invert_step_batch(model, x, grid[k], grid[k - 1], schedule, opt.refine_iters);
    require(x.allFinite(), ErrorKind::inversion_diverged, "non-finite latent during inversion");
  }
  return x;
}

template <DiffusionModel M>
LatentState ddim_invert(const M& model, const Vec& image, const NoiseSchedule& schedule, int steps,
                        int t_end = -1, int refine_iters = 0) {
  if (t_end < 0) t_end = schedule.T - 1;
  return {ddim_invert_batch(model, image, schedule, t_end, {steps, refine_iters}).col(0), t_end};
}

struct SampleOptions {
  int steps = 50;
  /// Steps starting at t <= t_boost use stochastic (eta = 1) updates.
  /// Zero disables boosting.
  double t_boost = 0.0;
};

/// Decodes latents at a common timestep t down to clean images.
/// `rng` is only consulted when boosting is active.
template <DiffusionModel M>
Mat ddim_sample_batch(const M& model, const Mat& x_t, int t, const NoiseSchedule& schedule, const SampleOptions& opt,
                      Rng* rng = nullptr, std::vector<Mat>* trajectory = nullptr) {
  require(opt.t_boost >= 0.0 && opt.t_boost < schedule.T, ErrorKind::invalid_argument, "t_boost outside [0, T)");
  std::vector<int> grid = step_grid(t, opt.steps);
  Mat x = x_t;
  if (trajectory) trajectory->push_back(x);
  for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
    const int tc = grid[k];
    const int tn = grid[k + 1];
    if (opt.t_boost > 0.0 && tc <= opt.t_boost) {
      require(rng != nullptr, ErrorKind::invalid_argument, "quality boosting needs an rng");
      const double a = schedule.alpha(tc);
      const double an = schedule.alpha(tn);
      const Mat eps = predict_eps_columns(model, x, std::vector<int>(std::size_t(x.cols()), tc));
      const Mat x0 = x0_from_eps(x, eps, a);
      const double sigma = std::sqrt((1.0 - an) / (1.0 - a)) * std::sqrt(1.0 - a / an);
      const double dir = std::sqrt(std::max(0.0, 1.0 - an - sigma * sigma));
      Mat z(x.rows(), x.cols());
      for (Index j = 0; j < x.cols(); ++j) z.col(j) = standard_normal(*rng, x.rows());
      x = std::sqrt(an) * x0 + dir * eps + sigma * z;
    } else {
      x = ddim_step_batch(model, x, tc, tn, schedule);
    }
    if (trajectory) trajectory->push_back(x);
  }
  const Mat eps0 = predict_eps_columns(model, x, std::vector<int>(std::size_t(x.cols()), 0));
  return x0_from_eps(x, eps0, schedule.alpha(0));
}

template <DiffusionModel M>
Vec ddim_sample(const M& model, const LatentState& state, const NoiseSchedule& schedule, int steps = 50) {
  return ddim_sample_batch(model, state.x, state.t, schedule, {steps, 0.0}).col(0);
}

struct BoostedSample {
  std::vector<LatentState> tail;  // states visited at t <= t_boost
  Vec image;
};

/// DDIM decoding whose final phase (t <= t_boost) is stochastic.
template <DiffusionModel M>
BoostedSample quality_boost(const M& model, const LatentState& state, const NoiseSchedule& schedule, double t_boost,
                            Rng& rng, int steps = 50) {
  std::vector<Mat> traj;
  BoostedSample out;
  out.image = ddim_sample_batch(model, state.x, state.t, schedule, {steps, t_boost}, &rng, &traj).col(0);
  std::vector<int> grid = step_grid(state.t, steps);
  for (std::size_t k = 0; k < grid.size(); ++k)
    if (grid[k] <= t_boost) out.tail.push_back({traj[k].col(0), grid[k]});
  return out;
}

/// Latents at timestep t obtained by DDIM from fresh x_T ~ N(0, I).
template <DiffusionModel M>
Mat sample_latents(const M& model, const NoiseSchedule& schedule, Index count, int t, Rng& rng, int steps = 50) {
  const Index dim = model.shape().size();
  Mat x(dim, count);
  for (Index j = 0; j < count; ++j) x.col(j) = standard_normal(rng, dim);
  const int t_top = schedule.T - 1;
  if (t >= t_top) return x;
  std::vector<int> grid = step_grid(t_top, steps);
  int current = t_top;
  for (std::size_t k = 1; k < grid.size() && grid[k] > t; ++k) {
    x = ddim_step_batch(model, x, current, grid[k], schedule);
    current = grid[k];
  }
  if (current != t) x = ddim_step_batch(model, x, current, t, schedule);
  return x;
}

}  // namespace semdir
