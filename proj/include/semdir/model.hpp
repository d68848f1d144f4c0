#pragma once

#include "semdir/core.hpp"
#include "semdir/schedule.hpp"
#include "semdir/unet.hpp"

#include <concepts>
#include <string>
#include <utility>
#include <vector>

namespace semdir {

/// What the geometry and editing code needs from a noise predictor: the
/// epsilon output, the encoder map f into H, and its exact Jacobian.
template <typename M>
concept DiffusionModel = requires(const M& m, const Vec& x, int t) {
  { m.shape() } -> std::convertible_to<ImageShape>;
  { m.h_dim() } -> std::convertible_to<Index>;
  { m.timesteps() } -> std::convertible_to<int>;
  { m.predict_eps(x, t) } -> std::convertible_to<Vec>;
  { m.encode_h(x, t) } -> std::convertible_to<Vec>;
  { m.encode_jacobian(x, t) } -> std::convertible_to<Mat>;
};

/// Trained, frozen epsilon predictor. Immutable after construction, so one
/// instance can be shared by concurrent readers.
class EpsilonModel {
 public:
  EpsilonModel(UNet<double> net, NoiseSchedule schedule)
      : net_(std::move(net)), schedule_(std::move(schedule)), timesteps_(schedule_.T) {}

  const UNet<double>& net() const { return net_; }
  const ArchConfig& arch() const { return net_.arch(); }
  ImageShape shape() const { return net_.shape(); }
  Index x_dim() const { return net_.x_dim(); }
  Index h_dim() const { return net_.h_dim(); }
  int timesteps() const { return timesteps_; }
  /// The schedule the model was trained with.
  const NoiseSchedule& schedule() const { return schedule_; }

  Vec predict_eps(const Vec& x, int t) const {
    check(x, t);
    return net_.forward(x, {t}).col(0);
  }

  /// Batched prediction; column j is evaluated at timestep t[j].
  Mat predict_eps_batch(const Mat& x, const std::vector<int>& t) const {
    require(Index(t.size()) == x.cols(), ErrorKind::dimension_mismatch, "one timestep per column expected");
    for (int ti : t) check_t(ti);
    return net_.forward(x, t);
  }

  Vec encode_h(const Vec& x, int t) const {
    check(x, t);
    return net_.encode(x, {t}).col(0);
  }

  Mat encode_jacobian(const Vec& x, int t) const {
    check(x, t);
    return net_.encode_jacobian(x, t);
  }

  /// Debug hook: the bottleneck map before sum pooling.
  Mat bottleneck_map(const Vec& x, int t) const {
    check(x, t);
    return net_.bottleneck_map(x, t);
  }

 private:
  void check_t(int t) const {
    require(t >= 0 && t < timesteps_, ErrorKind::timestep_out_of_range,
            "timestep " + std::to_string(t) + " outside [0, " + std::to_string(timesteps_) + ")");
  }
  void check(const Vec& x, int t) const {
    check_t(t);
    require(x.size() == net_.x_dim(), ErrorKind::dimension_mismatch, "latent has wrong dimension");
  }

  UNet<double> net_;
  NoiseSchedule schedule_;
  int timesteps_;
};

static_assert(DiffusionModel<EpsilonModel>);

/// Batched epsilon for any model; falls back to per-column calls.
template <DiffusionModel M>
Mat predict_eps_columns(const M& model, const Mat& x, const std::vector<int>& t) {
  if constexpr (requires { model.predict_eps_batch(x, t); }) {
    return model.predict_eps_batch(x, t);
  } else {
    Mat out(x.rows(), x.cols());
    for (Index j = 0; j < x.cols(); ++j) out.col(j) = model.predict_eps(x.col(j), t[std::size_t(j)]);
    return out;
  }
}

}  // namespace semdir
