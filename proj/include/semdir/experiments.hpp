#pragma once

// Ablation study of the editing pipeline: the full method against a random
// direction and against edits without x0 normalization.

#include "semdir/editing.hpp"
#include "semdir/sampling.hpp"

#include <algorithm>
#include <array>
#include <string>
#include <vector>

namespace semdir {

enum class AblationArm { full, random_direction, no_normalization };

inline const char* to_string(AblationArm a) {
  switch (a) {
    case AblationArm::full: return "full";
    case AblationArm::random_direction: return "random-direction";
    case AblationArm::no_normalization: return "no-normalization";
  }
  return "?";
}

inline constexpr std::array<AblationArm, 3> kAblationArms = {AblationArm::full, AblationArm::random_direction,
                                                            AblationArm::no_normalization};

/// Denoising loss of the model on a clean image: mean over `probes` noise
/// draws of ||eps_hat - eps||^2 / dim at timesteps uniform in [0, t_max].
template <DiffusionModel M>
double denoising_loss(const M& model, const NoiseSchedule& schedule, const Vec& x0, Rng& rng, int probes,
                    int t_max = -1) {
  require(probes >= 1, ErrorKind::invalid_argument, "denoising_loss needs probes >= 1");
  if (t_max < 0) t_max = schedule.T - 1;
  require(t_max < schedule.T, ErrorKind::timestep_out_of_range, "t_max beyond schedule");
  std::uniform_int_distribution<int> pick(0, t_max);
  double total = 0.0;
  for (int k = 0; k < probes; ++k) {
    const int t = pick(rng);
    const Vec eps = standard_normal(rng, x0.size());
    const double a = schedule.alpha(t);
    const Vec xt = std::sqrt(a) * x0 + std::sqrt(1.0 - a) * eps;
    total += (model.predict_eps(xt, t) - eps).squaredNorm() / double(x0.size());
  }
  return total / probes;
}

struct AblationConfig {
  int edits = 20;
  int n_iter = 5;
  double gamma = 0.0025;
  double kappa = 0.99;
  double threshold = 0.5;
  int t_edit = 0;
  int decode_steps = 50;
  int loss_probes = 16;
  double loss_t_fraction = 0.25;  // loss probes use t <= this * T
  std::uint64_t seed = 3;
};

struct AblationEdit {
  int edit = 0;
  AblationArm arm = AblationArm::full;
  double std_drift = 0.0;  // |std(x0_final) - std(x0_orig)|
  double eps_loss = 0.0;
  double pixel_change = 0.0;  // ||x0_final - x0_orig|| / sqrt(dim)
};

struct AblationSummary {
  AblationArm arm = AblationArm::full;
  double mean_std_drift = 0.0;
  double mean_eps_loss = 0.0;
  double mean_pixel_change = 0.0;
};

struct AblationResult {
  AblationConfig config;
  std::vector<AblationEdit> edits;
  std::array<AblationSummary, 3> summary;
  double baseline_eps_loss = 0.0;  // unedited samples

  const AblationSummary& arm(AblationArm a) const { return summary[std::size_t(a)]; }
};

/// Same step as shoot(), but along a fixed X-direction that never passes
/// through a tangent frame.
template <DiffusionModel M>
LatentState push_fixed_direction(const M& model, LatentState state, const Vec& v, const EditConfig& cfg,
                                 const NoiseSchedule& schedule) {
  for (int it = 0; it < cfg.n_iter; ++it) state.x += edit_step(model, state, v, cfg, schedule).dx;
  return state;
}

template <DiffusionModel M>
AblationResult run_ablation(const M& model, const NoiseSchedule& schedule, const AblationConfig& ac) {
  require(ac.edits >= 1, ErrorKind::invalid_argument, "ablation needs edits >= 1");
  AblationResult out;
  out.config = ac;
  Rng rng(ac.seed);
  const Index dim = model.shape().size();
  const Mat starts = sample_latents(model, schedule, ac.edits, ac.t_edit, rng);
  EditConfig cfg;
  cfg.t_edit = ac.t_edit;
  cfg.gamma = ac.gamma;
  cfg.kappa = ac.kappa;
  cfg.threshold = ac.threshold;
  cfg.n_iter = ac.n_iter;
  const int t_loss = std::clamp(int(std::lround(ac.loss_t_fraction * schedule.T)) - 1, 0, schedule.T - 1);
  for (int e = 0; e < ac.edits; ++e) {
    const LatentState start{starts.col(e), ac.t_edit};
    const Vec x0_orig = ddim_sample(model, start, schedule, ac.decode_steps);
    const double std_orig = detail::moments(x0_orig).std;
    const std::uint64_t loss_seed = ac.seed * 1000003ULL + std::uint64_t(e);
    {
      Rng lr(loss_seed);
      out.baseline_eps_loss += denoising_loss(model, schedule, x0_orig, lr, ac.loss_probes, t_loss);
    }
    const Vec random_v = random_unit(rng, dim);
    const Jacobian jac = jacobian(model, start);
    const TangentFrame frame = svd_frame(jac, ac.threshold);
    const DirectionSource top = DirectionSource::local(frame, 0);
    for (AblationArm arm : kAblationArms) {
      LatentState end;
      if (arm == AblationArm::random_direction) {
        end = push_fixed_direction(model, start, random_v, cfg, schedule);
      } else {
        EditConfig c = cfg;
        c.normalize = arm == AblationArm::full;
        end = shoot(model, start, top, c, schedule).state;
      }
      const Vec x0 = ddim_sample(model, end, schedule, ac.decode_steps);
      Rng lr(loss_seed);  // common random numbers across arms
      AblationEdit rec;
      rec.edit = e;
      rec.arm = arm;
      rec.std_drift = std::abs(detail::moments(x0).std - std_orig);
      rec.eps_loss = denoising_loss(model, schedule, x0, lr, ac.loss_probes, t_loss);
      rec.pixel_change = (x0 - x0_orig).norm() / std::sqrt(double(dim));
      out.edits.push_back(rec);
    }
  }
  out.baseline_eps_loss /= ac.edits;
  for (AblationArm arm : kAblationArms) {
    auto& s = out.summary[std::size_t(arm)];
    s.arm = arm;
    for (const auto& r : out.edits) {
      if (r.arm != arm) continue;
      s.mean_std_drift += r.std_drift / ac.edits;
      s.mean_eps_loss += r.eps_loss / ac.edits;
      s.mean_pixel_change += r.pixel_change / ac.edits;
    }
  }
  return out;
}

}  // namespace semdir
