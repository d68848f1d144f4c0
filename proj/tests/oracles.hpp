#pragma once

// Independent reference computations shared by unit and acceptance tests.

#include "semdir/directions.hpp"
#include "semdir/geometry.hpp"

#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <vector>

namespace semdir::testing {

/// h = tanh(W x): a small nonlinear encoder with a closed-form Jacobian.
struct TanhModel {
  Mat W;
  ImageShape image{1, 2, 2};
  int T = 10;
  ImageShape shape() const { return image; }
  Index h_dim() const { return W.rows(); }
  int timesteps() const { return T; }
  Vec predict_eps(const Vec& x, int) const { return 0.5 * x; }
  Vec encode_h(const Vec& x, int) const { return (W * x).array().tanh().matrix(); }
  Mat encode_jacobian(const Vec& x, int) const {
    const Vec d = (1.0 - (W * x).array().tanh().square()).matrix();
    return d.asDiagonal() * W;
  }
};

/// Global directions transcribed step by step: draw the L local bases,
/// then for each later basis walk the reference columns m = 1..n, pick the
/// most similar unused column, and add it with the sign of its dot product.
inline Mat reference_global(const TanhModel& model, Index L, Index n, std::uint64_t seed) {
  Rng rng(seed);
  const int t = model.T - 1;
  std::vector<Mat> local;
  for (Index l = 0; l < L; ++l) {
    const Vec x = standard_normal(rng, model.shape().size());
    local.push_back(svd_frame_top(jacobian(model, LatentState{x, t}), n).U);
  }
  Mat ubar;
  for (Index l = 0; l < L; ++l) {
    if (l == 0) {
      ubar = local[0];
      continue;
    }
    const Mat& u = local[std::size_t(l)];
    std::vector<bool> taken(std::size_t(n), false);
    for (Index m = 0; m < n; ++m) {
      Index pick = -1;
      double best = -1.0;
      for (Index k = 0; k < n; ++k) {
        if (taken[std::size_t(k)]) continue;
        const double c = std::abs(u.col(k).dot(ubar.col(m))) / (u.col(k).norm() * ubar.col(m).norm());
        if (c > best) {
          best = c;
          pick = k;
        }
      }
      taken[std::size_t(pick)] = true;
      double s = 0.0;
      for (Index c = 0; c < u.rows(); ++c) s += u(c, pick) * ubar(c, m);
      ubar.col(m) += (s < 0.0 ? -1.0 : 1.0) * u.col(pick);
    }
  }
  ubar /= double(L);
  for (Index m = 0; m < n; ++m) ubar.col(m) /= ubar.col(m).norm();
  return ubar;
}

/// Principal angles through LAPACK's dgesvd on U1^T U2, independent of Eigen.
inline double lapack_dgeo(const Mat& u1, const Mat& u2) {
  Mat m = u1.transpose() * u2;  // column-major
  const lapack_int rows = lapack_int(m.rows());
  const lapack_int cols = lapack_int(m.cols());
  std::vector<double> s(std::size_t(std::min(rows, cols)));
  std::vector<double> superb(s.size() + 1);
  const lapack_int info = LAPACKE_dgesvd(LAPACK_COL_MAJOR, 'N', 'N', rows, cols, m.data(), rows, s.data(), nullptr,
                                         1, nullptr, 1, superb.data());
  require(info == 0, ErrorKind::differentiation_failed, "dgesvd failed");
  double sum = 0.0;
  for (double c : s) {
    const double th = std::acos(std::min(1.0, std::max(-1.0, c)));
    sum += th * th;
  }
  return std::sqrt(sum);
}

}  // namespace semdir::testing
