#pragma once

// Editing along semantic directions: the x0-normalized correction step and
// the iterative shooting loop that re-transports the direction into the
// tangent frame at every iterate.

#include "semdir/core.hpp"
#include "semdir/directions.hpp"
#include "semdir/geometry.hpp"
#include "semdir/model.hpp"
#include "semdir/sampling.hpp"

#include <string>
#include <utility>
#include <vector>

namespace semdir {

struct EditConfig {
  int t_edit = 0;
  double gamma = 0.0025;
  int n_iter = 1;
  double kappa = 0.99;
  double threshold = 0.5;
  bool use_global = false;
  Index direction_index = 0;
  /// Rescale the edited x0 to the original x0's spread. Disabling it is the
  /// "no normalization" ablation.
  bool normalize = true;

  void validate() const {
    require(gamma >= 0.0, ErrorKind::invalid_argument, "gamma must be non-negative");
    require(kappa > 0.0 && kappa < 1.0, ErrorKind::invalid_argument, "kappa must lie in (0, 1)");
    require(n_iter >= 1, ErrorKind::invalid_argument, "n_iter must be >= 1");
    require(threshold > 0.0 && threshold <= 1.0, ErrorKind::invalid_argument, "threshold must be in (0, 1]");
  }
};

namespace detail {

struct Moments {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation about the mean
};

inline Moments moments(const Vec& x) {
  Moments m;
  m.mean = x.mean();
  m.std = std::sqrt((x.array() - m.mean).square().mean());
  return m;
}

inline constexpr double kStdFloor = 1e-12;

}  // namespace detail

/// Keeps x0_edit's mean and rescales its deviations to x0_ref's spread.
inline Vec normalize_x0(const Vec& x0_edit, const Vec& x0_ref) {
  require(x0_edit.size() == x0_ref.size(), ErrorKind::dimension_mismatch, "images differ in shape");
  const auto e = detail::moments(x0_edit);
  const auto r = detail::moments(x0_ref);
  require(e.std > detail::kStdFloor, ErrorKind::cannot_normalize, "edited x0 is constant");
  return (e.mean + (x0_edit.array() - e.mean) * (r.std / e.std)).matrix();
}

/// sqrt(alpha_t) / (1 - kappa sqrt(1 - alpha_t)).
inline double correction_coefficient(double alpha, double kappa) {
  const double denom = 1.0 - kappa * std::sqrt(1.0 - alpha);
  require(denom > 1e-6, ErrorKind::step_degenerate, "editing coefficient denominator below 1e-6");
  return std::sqrt(alpha) / denom;
}

struct EditStep {
  Vec dx;
  Vec x0;           // prediction at the unedited state
  Vec x0_edit_raw;  // prediction at x + gamma v
  Vec x0_edit;      // after normalization (== raw when disabled)
};

/// dx = c(alpha_t) (x0' - x0(x)) with x0' the (normalized) prediction at x + gamma v.
template <DiffusionModel M>
EditStep edit_step(const M& model, const LatentState& state, const Vec& v, const EditConfig& cfg,
                   const NoiseSchedule& schedule) {
  cfg.validate();
  require(v.size() == state.x.size(), ErrorKind::dimension_mismatch, "direction does not live in X");
  const double coef = correction_coefficient(schedule.alpha(state.t), cfg.kappa);
  EditStep out;
  out.x0 = predict_x0(model, state, schedule);
  out.x0_edit_raw = predict_x0(model, LatentState{state.x + cfg.gamma * v, state.t}, schedule);
  Vec delta0;
  if (cfg.normalize) {
    const auto e = detail::moments(out.x0_edit_raw);
    const auto r = detail::moments(out.x0);
    require(e.std > detail::kStdFloor, ErrorKind::cannot_normalize, "edited x0 is constant");
    const double ratio = r.std / e.std;
    out.x0_edit = (e.mean + (out.x0_edit_raw.array() - e.mean) * ratio).matrix();
    // Grouped so an unchanged prediction yields an exactly zero delta.
    delta0 = ((e.mean - r.mean) + (out.x0_edit_raw.array() - e.mean) * ratio - (out.x0.array() - r.mean)).matrix();
  } else {
    out.x0_edit = out.x0_edit_raw;
    delta0 = out.x0_edit_raw - out.x0;
  }
  out.dx = coef * delta0;
  require(out.dx.allFinite(), ErrorKind::step_degenerate, "non-finite edit step");
  return out;
}

/// Initial H-direction for a shooting run.
struct DirectionSource {
  Vec u;
  std::string label;

  static DirectionSource local(const TangentFrame& frame, Index i) {
    require(i >= 0 && i < frame.n, ErrorKind::index_out_of_range, "direction index beyond frame rank");
    return {frame.U.col(i), "local:" + std::to_string(i)};
  }
  static DirectionSource global(const GlobalBasis& basis, Index i) {
    require(i >= 0 && i < basis.n, ErrorKind::index_out_of_range, "direction index beyond basis size");
    return {basis.U_bar.col(i) / basis.U_bar.col(i).norm(), "global:" + std::to_string(i)};
  }
};

struct EditRecord {
  Vec x;  // state before this iteration
  Vec h;
  Vec v;
  Vec u;
  Index frame_rank = 0;
  double dx_norm = 0.0;
  Vec x0_before;  // edited prediction before normalization
  Vec x0_after;   // after normalization
};

using EditTrace = std::vector<EditRecord>;

struct ShootResult {
  LatentState state;
  EditTrace trace;
};

/// Iterative editing: transport u into the frame at the current x, take one
/// correction step along the transported v, repeat n_iter times.
template <DiffusionModel M>
ShootResult shoot(const M& model, const LatentState& start, const DirectionSource& source, const EditConfig& cfg,
                  const NoiseSchedule& schedule) {
  cfg.validate();
  ShootResult out{start, {}};
  Vec u = source.u;
  for (int it = 0; it < cfg.n_iter; ++it) {
    auto [moved, frame] = transport(model, out.state, u, cfg.threshold);
    const EditStep step = edit_step(model, out.state, moved.v, cfg, schedule);
    EditRecord rec;
    rec.x = out.state.x;
    rec.h = model.encode_h(out.state.x, out.state.t);
    rec.v = moved.v;
    rec.u = moved.u;
    rec.frame_rank = frame.n;
    rec.dx_norm = step.dx.norm();
    rec.x0_before = step.x0_edit_raw;
    rec.x0_after = step.x0_edit;
    out.trace.push_back(std::move(rec));
    out.state.x += step.dx;
    u = moved.u;
  }
  return out;
}

/// cos(eps(x + step v) - eps(x), v): how well grad(eps) ~ kappa I holds along v.
template <DiffusionModel M>
double validate_kappa(const M& model, const LatentState& state, const Vec& v, double step) {
  require(v.size() == state.x.size(), ErrorKind::dimension_mismatch, "direction does not live in X");
  require(step != 0.0, ErrorKind::invalid_argument, "step must be non-zero");
  const Vec d = model.predict_eps(state.x + step * v, state.t) - model.predict_eps(state.x, state.t);
  require(d.norm() > 1e-300 && v.norm() > 0.0, ErrorKind::degenerate_direction,
          "epsilon does not change along the direction");
  return d.dot(v) / (d.norm() * v.norm());
}

}  // namespace semdir
