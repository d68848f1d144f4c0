#pragma once

#include <Eigen/Dense>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace semdir {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Failure categories. The names are stable identifiers surfaced by the CLI
/// and in HTTP error payloads.
enum class ErrorKind {
  invalid_argument,
  training_diverged,
  training_underfit,
  timestep_out_of_range,
  degenerate_timestep,
  inversion_diverged,
  differentiation_failed,
  rank_zero,
  dimension_mismatch,
  index_out_of_range,
  direction_lost,
  invalid_basis,
  column_count_mismatch,
  cannot_normalize,
  step_degenerate,
  degenerate_direction,
  format_error,
  io_error,
  config_invalid,
  unknown_session,
};

constexpr std::string_view error_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::training_diverged: return "training-diverged";
    case ErrorKind::training_underfit: return "training-underfit";
    case ErrorKind::timestep_out_of_range: return "timestep-out-of-range";
    case ErrorKind::degenerate_timestep: return "degenerate-timestep";
    case ErrorKind::inversion_diverged: return "inversion-diverged";
    case ErrorKind::differentiation_failed: return "differentiation-failed";
    case ErrorKind::rank_zero: return "rank-zero";
    case ErrorKind::dimension_mismatch: return "dimension-mismatch";
    case ErrorKind::index_out_of_range: return "index-out-of-range";
    case ErrorKind::direction_lost: return "direction-lost";
    case ErrorKind::invalid_basis: return "invalid-basis";
    case ErrorKind::column_count_mismatch: return "column-count-mismatch";
    case ErrorKind::cannot_normalize: return "cannot-normalize";
    case ErrorKind::step_degenerate: return "step-degenerate";
    case ErrorKind::degenerate_direction: return "degenerate-direction";
    case ErrorKind::format_error: return "format-error";
    case ErrorKind::io_error: return "io-error";
    case ErrorKind::config_invalid: return "config-invalid";
    case ErrorKind::unknown_session: return "unknown-session";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(error_name(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  std::string_view name() const noexcept { return error_name(kind_); }

 private:
  ErrorKind kind_;
};

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

struct ImageShape {
  int channels = 1;
  int height = 32;
  int width = 32;

  Index size() const { return Index(channels) * height * width; }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

/// A point x_t of the latent space together with its schedule index.
struct LatentState {
  Vec x;
  int t = 0;
};

/// Shortest decimal text that reads back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline bool all_finite(const Eigen::Ref<const Mat>& m) { return m.allFinite(); }

using Rng = std::mt19937_64;

inline Vec standard_normal(Rng& rng, Index n) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Vec out(n);
  for (Index i = 0; i < n; ++i) out[i] = dist(rng);
  return out;
}

inline Vec random_unit(Rng& rng, Index n) {
  Vec v = standard_normal(rng, n);
  return v / v.norm();
}

/// Orthonormal basis (n x k) of a uniformly random k-dimensional subspace.
inline Mat random_orthonormal(Rng& rng, Index n, Index k) {
  Mat g(n, k);
  for (Index j = 0; j < k; ++j) g.col(j) = standard_normal(rng, n);
  Eigen::HouseholderQR<Mat> qr(g);
  return qr.householderQ() * Mat::Identity(n, k);
}

inline double cosine(const Eigen::Ref<const Vec>& a, const Eigen::Ref<const Vec>& b) {
  return a.dot(b) / (a.norm() * b.norm());
}

}  // namespace semdir
