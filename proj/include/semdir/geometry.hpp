#pragma once

// Pullback geometry of the encoder map f: X -> H. The Jacobian J = df/dx
// induces the metric <v, w>_x = v^T J^T J w on X; its singular vectors give
// the tangent frames used for direction discovery, parallel transport and
// the principal-angle (geodesic) metric between tangent spaces.

#include "semdir/core.hpp"
#include "semdir/model.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <utility>

namespace semdir {

struct Jacobian {
  Mat matrix;  // dim H x dim X
  Vec base_x;
  int t = 0;
};

template <DiffusionModel M>
Jacobian jacobian(const M& model, const LatentState& state) {
  Jacobian j{model.encode_jacobian(state.x, state.t), state.x, state.t};
  require(j.matrix.allFinite(), ErrorKind::differentiation_failed, "non-finite Jacobian entries");
  return j;
}

/// Low-rank SVD frame of a Jacobian: J V = U diag(lambdas) on the retained
/// columns.
struct TangentFrame {
  Mat V;  // dim X x n
  Mat U;  // dim H x n
  Vec lambdas;
  Index n = 0;
  Vec base_x;
  int t = 0;
  double threshold_used = 1.0;
};

/// Smallest k whose normalized cumulative lambda^2 mass reaches `threshold`,
/// counting only strictly positive singular values.
inline Index rank_for_threshold(const Vec& lambdas, double threshold) {
  require(threshold > 0.0 && threshold <= 1.0, ErrorKind::invalid_argument, "threshold must be in (0, 1]");
  const double lmax = lambdas.size() ? lambdas.maxCoeff() : 0.0;
  Index positive = 0;
  for (Index i = 0; i < lambdas.size(); ++i)
    if (lambdas[i] > lmax * 1e-12 && lambdas[i] > 0.0) ++positive;
  require(positive > 0, ErrorKind::rank_zero, "Jacobian has no positive singular value");
  const double total = lambdas.head(positive).squaredNorm();
  double cum = 0.0;
  for (Index k = 0; k < positive; ++k) {
    cum += lambdas[k] * lambdas[k];
    if (cum / total >= threshold - 1e-12) return k + 1;
  }
  return positive;
}

namespace detail {

struct FullSvd {
  Mat U;  // dim H x r
  Mat V;  // dim X x r
  Vec s;  // r, descending
};

inline FullSvd thin_svd(const Mat& a) {
  Eigen::JacobiSVD<Mat, Eigen::ColPivHouseholderQRPreconditioner> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  FullSvd out{svd.matrixU(), svd.matrixV(), svd.singularValues()};
  // Largest-magnitude entry of every right singular vector is positive.
  for (Index i = 0; i < out.V.cols(); ++i) {
    Index arg = 0;
    out.V.col(i).cwiseAbs().maxCoeff(&arg);
    if (out.V(arg, i) < 0.0) {
      out.V.col(i) *= -1.0;
      out.U.col(i) *= -1.0;
    }
  }
  return out;
}

}  // namespace detail

/// Singular values of J in non-increasing order.
inline Vec singular_values(const Jacobian& jac) {
  Eigen::JacobiSVD<Mat, Eigen::ColPivHouseholderQRPreconditioner> svd(jac.matrix);
  return svd.singularValues();
}

inline TangentFrame svd_frame(const Jacobian& jac, double threshold) {
  require(threshold > 0.0 && threshold <= 1.0, ErrorKind::invalid_argument, "threshold must be in (0, 1]");
  require(jac.matrix.size() > 0 && jac.matrix.cwiseAbs().maxCoeff() > 0.0, ErrorKind::rank_zero,
          "all-zero Jacobian");
  const detail::FullSvd svd = detail::thin_svd(jac.matrix);
  const Index n = rank_for_threshold(svd.s, threshold);
  return TangentFrame{svd.V.leftCols(n), svd.U.leftCols(n), svd.s.head(n), n, jac.base_x, jac.t, threshold};
}

/// Frame keeping exactly the top `count` directions (used where the number of
/// directions is fixed rather than threshold-driven).
inline TangentFrame svd_frame_top(const Jacobian& jac, Index count) {
  require(jac.matrix.size() > 0 && jac.matrix.cwiseAbs().maxCoeff() > 0.0, ErrorKind::rank_zero,
          "all-zero Jacobian");
  const detail::FullSvd svd = detail::thin_svd(jac.matrix);
  const Index positive = rank_for_threshold(svd.s, 1.0);
  require(count >= 1 && count <= positive, ErrorKind::index_out_of_range,
          "requested " + std::to_string(count) + " directions, rank is " + std::to_string(positive));
  return TangentFrame{svd.V.leftCols(count), svd.U.leftCols(count), svd.s.head(count), count, jac.base_x, jac.t, 1.0};
}

/// ||v||_pb^2 = v^T J^T J v, evaluated as ||J v||^2.
inline double pullback_norm_sq(const Vec& v, const Jacobian& jac) {
  require(v.size() == jac.matrix.cols(), ErrorKind::dimension_mismatch, "direction does not live in X");
  return (jac.matrix * v).squaredNorm();
}

/// (v_i, u_i) with u_i = J v_i / lambda_i.
inline std::pair<Vec, Vec> push_direction(const Jacobian& jac, const TangentFrame& frame, Index i) {
  require(i >= 0 && i < frame.n, ErrorKind::index_out_of_range, "direction index beyond frame rank");
  Vec v = frame.V.col(i);
  Vec u = jac.matrix * v / frame.lambdas[i];
  return {std::move(v), std::move(u)};
}

struct Transported {
  Vec v;  // in X
  Vec u;  // in H, unit norm, inside span(U)
};

inline constexpr double kDirectionFloor = 1e-8;

/// Projects a unit H-direction onto a frame's tangent space, renormalizes,
/// and maps it back to X through V U^T.
inline Transported project_to_frame(const TangentFrame& frame, const Vec& u) {
  require(u.size() == frame.U.rows(), ErrorKind::dimension_mismatch, "direction does not live in H");
  require(std::abs(u.norm() - 1.0) < 1e-6, ErrorKind::invalid_argument, "direction must have unit norm");
  const Vec coeff = frame.U.transpose() * u;
  Vec projected = frame.U * coeff;
  const double norm = projected.norm();
  require(norm > kDirectionFloor, ErrorKind::direction_lost, "direction is orthogonal to the tangent space");
  projected /= norm;
  Vec v = frame.V * (frame.U.transpose() * projected);
  return {std::move(v), std::move(projected)};
}

/// Parallel transport of `u` into the tangent frame at `state`.
template <DiffusionModel M>
std::pair<Transported, TangentFrame> transport(const M& model, const LatentState& state, const Vec& u,
                                               double threshold) {
  TangentFrame frame = svd_frame(jacobian(model, state), threshold);
  Transported moved = project_to_frame(frame, u);
  return {std::move(moved), std::move(frame)};
}

struct SubspaceAngleReport {
  Vec thetas;  // ascending, radians
  double d_geo = 0.0;
};

inline bool is_orthonormal(const Mat& basis, double tol = 1e-4) {
  if (basis.cols() == 0) return true;
  return ((basis.transpose() * basis) - Mat::Identity(basis.cols(), basis.cols())).cwiseAbs().maxCoeff() <= tol;
}

/// Principal angles theta_k = arccos(sigma_k(U1^T U2)) and D_geo = sqrt(sum theta_k^2).
/// Angles whose cosine exceeds 1/sqrt(2) are taken from the sines (singular
/// values of the residual A - B B^T A), which stays accurate near zero.
inline SubspaceAngleReport principal_angles(const Mat& u1, const Mat& u2) {
  require(u1.rows() == u2.rows(), ErrorKind::dimension_mismatch, "bases live in different ambient spaces");
  require(is_orthonormal(u1) && is_orthonormal(u2), ErrorKind::invalid_basis, "bases must be column-orthonormal");
  const Mat& a = u1.cols() <= u2.cols() ? u1 : u2;
  const Mat& b = u1.cols() <= u2.cols() ? u2 : u1;
  const Index p = a.cols();
  SubspaceAngleReport r;
  r.thetas = Vec::Zero(p);
  if (p == 0) return r;
  const Mat cross = b.transpose() * a;
  Eigen::JacobiSVD<Mat> cos_svd(cross);
  const Vec cosines = cos_svd.singularValues();  // descending
  Eigen::JacobiSVD<Mat> sin_svd(a - b * cross);
  Vec sines = sin_svd.singularValues();  // descending
  std::reverse(sines.data(), sines.data() + sines.size());
  for (Index k = 0; k < p; ++k) {
    const double c = std::clamp(cosines[k], -1.0, 1.0);
    r.thetas[k] = c * c > 0.5 ? std::asin(std::clamp(sines[k], 0.0, 1.0)) : std::acos(c);
  }
  std::sort(r.thetas.data(), r.thetas.data() + p);
  r.d_geo = r.thetas.norm();
  return r;
}

}  // namespace semdir
