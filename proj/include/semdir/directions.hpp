#pragma once

// Semantic directions: per-sample frames, the sign-corrected global average
// of matched frames over samples at t = T, and the PCA-on-H baseline.

#include "semdir/core.hpp"
#include "semdir/geometry.hpp"
#include "semdir/model.hpp"
#include "semdir/sampling.hpp"

#include <Eigen/Eigenvalues>

#include <cstdint>
#include <utility>
#include <vector>

namespace semdir {

template <DiffusionModel M>
TangentFrame local_directions(const M& model, const LatentState& state, double threshold) {
  return svd_frame(jacobian(model, state), threshold);
}

struct Matching {
  std::vector<Index> permutation;  // permutation[m] = column of U_new matched to reference column m
  std::vector<int> signs;          // +1 / -1 so that matched dot products are non-negative
};

/// Greedy one-to-one matching: reference columns are visited in order and
/// each takes the unused new column with the largest |cosine|, ties going to
/// the lower index.
inline Matching match_and_sign(const Mat& u_new, const Mat& u_ref) {
  require(u_new.cols() == u_ref.cols(), ErrorKind::column_count_mismatch, "bases have different column counts");
  require(u_new.rows() == u_ref.rows(), ErrorKind::dimension_mismatch, "bases live in different spaces");
  const Index n = u_ref.cols();
  Matching out;
  std::vector<bool> used(std::size_t(n), false);
  for (Index m = 0; m < n; ++m) {
    const double ref_norm = u_ref.col(m).norm();
    Index best = -1;
    double best_score = -1.0;
    double best_dot = 0.0;
    for (Index j = 0; j < n; ++j) {
      if (used[std::size_t(j)]) continue;
      const double dot = u_new.col(j).dot(u_ref.col(m));
      const double denom = u_new.col(j).norm() * ref_norm;
      const double score = denom > 0.0 ? std::abs(dot) / denom : 0.0;
      if (score > best_score) {
        best = j;
        best_score = score;
        best_dot = dot;
      }
    }
    used[std::size_t(best)] = true;
    out.permutation.push_back(best);
    out.signs.push_back(best_dot < 0.0 ? -1 : 1);
  }
  return out;
}

struct GlobalBasis {
  Mat U_bar;          // dim H x n, unit columns
  Vec raw_norms;      // column norms of the 1/L-scaled accumulation
  Index n = 0;
  Index sample_count = 0;
  std::uint64_t seed = 0;
  int t = 0;
};

/// Running sign-corrected sum of matched local bases. The first basis seeds
/// the accumulator; each later basis is matched against it column by column.
inline GlobalBasis aggregate_global(const std::vector<Mat>& local_bases) {
  require(local_bases.size() >= 2, ErrorKind::invalid_argument, "global directions need L >= 2 samples");
  Mat acc = local_bases.front();
  for (std::size_t l = 1; l < local_bases.size(); ++l) {
    const Mat& u = local_bases[l];
    const Matching match = match_and_sign(u, acc);
    for (Index m = 0; m < acc.cols(); ++m)
      acc.col(m) += double(match.signs[std::size_t(m)]) * u.col(match.permutation[std::size_t(m)]);
  }
  acc /= double(local_bases.size());
  GlobalBasis g;
  g.raw_norms = acc.colwise().norm().transpose();
  for (Index m = 0; m < acc.cols(); ++m) {
    require(g.raw_norms[m] > 0.0, ErrorKind::degenerate_direction, "global direction cancelled out");
    acc.col(m) /= g.raw_norms[m];
  }
  g.U_bar = std::move(acc);
  g.n = g.U_bar.cols();
  g.sample_count = Index(local_bases.size());
  return g;
}

/// Top-n left singular vectors at t = T for L fresh samples x ~ N(0, I),
/// aggregated by aggregate_global. Samples are drawn in seeded order.
template <DiffusionModel M>
GlobalBasis global_directions(const M& model, Index sample_count, Index n, std::uint64_t seed, int t = -1) {
  const int top = model.timesteps() - 1;
  if (t < 0) t = top;
  require(t == top, ErrorKind::invalid_argument, "global directions are only defined at t = T");
  require(sample_count >= 2, ErrorKind::invalid_argument, "global directions need L >= 2 samples");
  require(n >= 1, ErrorKind::invalid_argument, "need n >= 1");
  Rng rng(seed);
  std::vector<Mat> bases;
  bases.reserve(std::size_t(sample_count));
  const Index dim = model.shape().size();
  for (Index l = 0; l < sample_count; ++l) {
    const LatentState s{standard_normal(rng, dim), t};
    bases.push_back(svd_frame_top(jacobian(model, s), n).U);
  }
  GlobalBasis g = aggregate_global(bases);
  g.seed = seed;
  g.t = t;
  return g;
}

/// Projects a global direction into the local tangent space at `state`.
template <DiffusionModel M>
std::pair<Transported, TangentFrame> project_global(const M& model, const LatentState& state, const Vec& u_bar,
                                                    double threshold) {
  return transport(model, state, u_bar / u_bar.norm(), threshold);
}

struct PCABasis {
  Mat components;  // dim H x k, orthonormal
  Vec mean_h;
  Vec explained;   // variance fractions, non-increasing
  Index k = 0;
  int t = 0;
};

/// Centered PCA of H samples (one per column). Components whose variance is
/// numerically zero are dropped, so k may come back smaller than requested.
inline PCABasis pca_from_samples(const Mat& h, Index k, std::vector<std::string>* warnings = nullptr) {
  require(h.cols() >= 1, ErrorKind::invalid_argument, "no samples");
  require(k >= 0 && h.cols() >= k, ErrorKind::invalid_argument, "need sample_count >= k");
  PCABasis out;
  out.mean_h = h.rowwise().mean();
  const Mat centered = h.colwise() - out.mean_h;
  const Mat cov = centered * centered.transpose() / double(std::max<Index>(1, h.cols() - 1));
  Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
  const Vec values = eig.eigenvalues().reverse();
  const Mat vectors = eig.eigenvectors().rowwise().reverse();
  const double total = values.cwiseMax(0.0).sum();
  const double scale = std::max(1.0, std::abs(out.mean_h.maxCoeff()));
  Index usable = 0;
  while (usable < std::min<Index>(k, values.size()) && values[usable] > 1e-12 * scale * scale &&
         values[usable] > 1e-12 * total)
    ++usable;
  if (usable < k && warnings) warnings->push_back("degenerate covariance: k reduced from " + std::to_string(k) + " to " +
                                                  std::to_string(usable));
  out.k = usable;
  out.components = vectors.leftCols(usable);
  for (Index i = 0; i < usable; ++i) {
    Index arg = 0;
    out.components.col(i).cwiseAbs().maxCoeff(&arg);
    if (out.components(arg, i) < 0.0) out.components.col(i) *= -1.0;
  }
  out.explained = total > 0.0 ? Vec(values.head(usable) / total) : Vec::Zero(usable);
  return out;
}

/// PCA baseline in H: h = f(x_t, t) over DDIM trajectories from fresh noise.
template <DiffusionModel M>
PCABasis pca_baseline(const M& model, const NoiseSchedule& schedule, Index sample_count, int t, Index k,
                      std::uint64_t seed, int steps = 50, std::vector<std::string>* warnings = nullptr) {
  require(sample_count >= k, ErrorKind::invalid_argument, "need sample_count >= k");
  Rng rng(seed);
  const Mat x = sample_latents(model, schedule, sample_count, t, rng, steps);
  Mat h(model.h_dim(), sample_count);
  for (Index j = 0; j < sample_count; ++j) h.col(j) = model.encode_h(x.col(j), t);
  PCABasis p = pca_from_samples(h, k, warnings);
  p.t = t;
  return p;
}

}  // namespace semdir
