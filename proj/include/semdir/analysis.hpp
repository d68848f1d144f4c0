#pragma once

// Quantitative analyses of the latent geometry: radial power spectra of
// directions, cross-sample homogeneity of frames, Jacobian spectra per
// timestep, and semantic path lengths along lerp / slerp / shooting paths.

#include "semdir/core.hpp"
#include "semdir/editing.hpp"
#include "semdir/geometry.hpp"
#include "semdir/model.hpp"
#include "semdir/sampling.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numeric>
#include <string>
#include <vector>

namespace semdir {

// ---------------------------------------------------------------- spectra --

struct PSDResult {
  Vec radial_freqs;  // bin radius in cycles per image; bin 0 is DC
  Vec power;         // mean power per frequency in each bin
  Vec counts;        // frequencies per bin
  int t = 0;
  Index direction_count = 0;
  double low_fraction = 0.0;  // share of power strictly below half-Nyquist
};

/// Unitary 2-D DFT power |F|^2 / (H W), so the total equals ||v||^2.
inline Mat power_spectrum_2d(const Vec& v, const ImageShape& shape) {
  require(shape.channels == 1, ErrorKind::invalid_argument, "power spectra need single-channel images");
  require(v.size() == shape.size(), ErrorKind::dimension_mismatch, "direction does not match the image shape");
  const Index h = shape.height;
  const Index w = shape.width;
  Eigen::FFT<double> fft;
  using CVec = Eigen::VectorXcd;
  Eigen::MatrixXcd rows(h, w);
  for (Index r = 0; r < h; ++r) {
    std::vector<double> in(static_cast<std::size_t>(w));
    for (Index c = 0; c < w; ++c) in[std::size_t(c)] = v[r * w + c];
    std::vector<std::complex<double>> out;
    fft.fwd(out, in);
    for (Index c = 0; c < w; ++c) rows(r, c) = out[std::size_t(c)];
  }
  Mat p(h, w);
  for (Index c = 0; c < w; ++c) {
    CVec col = rows.col(c);
    CVec out(h);
    fft.fwd(out, col);
    p.col(c) = out.cwiseAbs2();
  }
  return p / double(h * w);
}

inline double signed_frequency(Index k, Index n) { return k <= n / 2 ? double(k) : double(k - n); }

inline Index radial_bin_count(const ImageShape& shape) {
  const double fy = shape.height / 2.0;
  const double fx = shape.width / 2.0;
  return Index(std::lround(std::sqrt(fy * fy + fx * fx))) + 1;
}

/// Integer-radius annuli (nearest integer radius); the DC term alone has radius 0.
inline PSDResult radial_psd(const Vec& v, const ImageShape& shape) {
  const Mat p = power_spectrum_2d(v, shape);
  const Index bins = radial_bin_count(shape);
  PSDResult r;
  r.radial_freqs = Vec::LinSpaced(bins, 0.0, double(bins - 1));
  r.power = Vec::Zero(bins);
  r.counts = Vec::Zero(bins);
  const double half_nyquist = std::min(shape.height, shape.width) / 4.0;
  double low = 0.0;
  for (Index y = 0; y < shape.height; ++y)
    for (Index x = 0; x < shape.width; ++x) {
      const double fy = signed_frequency(y, shape.height);
      const double fx = signed_frequency(x, shape.width);
      const double rad = std::sqrt(fy * fy + fx * fx);
      const Index b = Index(std::lround(rad));
      r.power[b] += p(y, x);
      r.counts[b] += 1.0;
      if (rad < half_nyquist) low += p(y, x);
    }
  const double total = r.power.sum();
  for (Index b = 0; b < bins; ++b)
    if (r.counts[b] > 0) r.power[b] /= r.counts[b];
  r.low_fraction = total > 0.0 ? low / total : 0.0;
  r.direction_count = 1;
  return r;
}

/// Radial PSD averaged over the top_k right singular vectors of `samples`
/// latents at t (fresh noise at t = T, DDIM trajectories below).
template <DiffusionModel M>
PSDResult direction_psd(const M& model, const NoiseSchedule& schedule, Index samples, int t, Index top_k,
                        std::uint64_t seed, int steps = 50) {
  require(samples >= 1 && top_k >= 1, ErrorKind::invalid_argument, "need samples >= 1 and top_k >= 1");
  Rng rng(seed);
  const Mat x = sample_latents(model, schedule, samples, t, rng, steps);
  PSDResult acc;
  double low = 0.0;
  for (Index s = 0; s < samples; ++s) {
    const TangentFrame frame = svd_frame_top(jacobian(model, LatentState{x.col(s), t}), top_k);
    for (Index i = 0; i < top_k; ++i) {
      const PSDResult one = radial_psd(frame.V.col(i), model.shape());
      if (acc.power.size() == 0) {
        acc = one;
        acc.power.setZero();
        acc.direction_count = 0;
      }
      acc.power += one.power;
      low += one.low_fraction;
      ++acc.direction_count;
    }
  }
  acc.power /= double(acc.direction_count);
  acc.low_fraction = low / double(acc.direction_count);
  acc.t = t;
  return acc;
}

// ------------------------------------------------------------ homogeneity --

/// One-sided Mann-Whitney test that `a` tends to exceed `b`. Midranks for
/// ties, normal approximation with tie-corrected variance and continuity
/// correction.
struct RankSum {
  double u = 0.0;
  double z = 0.0;
  double p_greater = 1.0;
};

inline RankSum rank_sum_greater(const std::vector<double>& a, const std::vector<double>& b) {
  require(!a.empty() && !b.empty(), ErrorKind::invalid_argument, "rank-sum needs two non-empty samples");
  struct Item {
    double value;
    bool first;
  };
  std::vector<Item> all;
  for (double v : a) all.push_back({v, true});
  for (double v : b) all.push_back({v, false});
  std::stable_sort(all.begin(), all.end(), [](const Item& l, const Item& r) { return l.value < r.value; });
  const double n1 = double(a.size());
  const double n2 = double(b.size());
  const double n = n1 + n2;
  double rank_a = 0.0;
  double tie_term = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].value == all[i].value) ++j;
    const double mid = (double(i + 1) + double(j)) / 2.0;
    const double tcount = double(j - i);
    tie_term += tcount * tcount * tcount - tcount;
    for (std::size_t k = i; k < j; ++k)
      if (all[k].first) rank_a += mid;
    i = j;
  }
  RankSum r;
  r.u = rank_a - n1 * (n1 + 1.0) / 2.0;
  const double mean = n1 * n2 / 2.0;
  const double var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
  if (var <= 0.0) return r;
  r.z = (r.u - mean - 0.5) / std::sqrt(var);
  r.p_greater = 0.5 * std::erfc(r.z / std::sqrt(2.0));
  return r;
}

/// max_j |cos(u, U[:, j])| for a direction u against a frame's columns.
inline double max_abs_cosine(const Vec& u, const Mat& frame_u) {
  double best = 0.0;
  for (Index j = 0; j < frame_u.cols(); ++j) best = std::max(best, std::abs(cosine(u, frame_u.col(j))));
  return best;
}

struct HomogeneityStats {
  int t = 0;
  Index top_k = 0;
  Mat maxima;   // pairs x top_k: sample-1 direction i against sample 2's frame
  Mat control;  // pairs x top_k: random unit vectors against the same frames
  std::vector<Index> frame_ranks;
  RankSum top1;  // maxima.col(0) vs control.col(0)
};

inline HomogeneityStats homogeneity_from_frames(const std::vector<std::pair<Mat, Mat>>& pairs, Index top_k, Rng& rng) {
  HomogeneityStats s;
  s.top_k = top_k;
  const Index count = Index(pairs.size());
  s.maxima.resize(count, top_k);
  s.control.resize(count, top_k);
  for (Index p = 0; p < count; ++p) {
    const auto& [top, frame] = pairs[std::size_t(p)];
    require(top.cols() >= top_k, ErrorKind::index_out_of_range, "first frame has fewer than top_k directions");
    s.frame_ranks.push_back(frame.cols());
    for (Index i = 0; i < top_k; ++i) {
      s.maxima(p, i) = max_abs_cosine(top.col(i), frame);
      s.control(p, i) = max_abs_cosine(random_unit(rng, frame.rows()), frame);
    }
  }
  std::vector<double> a(s.maxima.col(0).data(), s.maxima.col(0).data() + count);
  std::vector<double> b(s.control.col(0).data(), s.control.col(0).data() + count);
  s.top1 = rank_sum_greater(a, b);
  return s;
}

/// For `pairs` pairs of fresh latents at t: top_k directions of the first
/// sample are matched against the threshold frame of the second.
template <DiffusionModel M>
HomogeneityStats homogeneity_stats(const M& model, const NoiseSchedule& schedule, Index pairs, Index top_k, int t,
                                   double threshold, std::uint64_t seed, int steps = 50) {
  require(pairs >= 1 && top_k >= 1, ErrorKind::invalid_argument, "need pairs >= 1 and top_k >= 1");
  Rng rng(seed);
  const Mat x = sample_latents(model, schedule, 2 * pairs, t, rng, steps);
  std::vector<std::pair<Mat, Mat>> frames;
  for (Index p = 0; p < pairs; ++p) {
    const Mat top = svd_frame_top(jacobian(model, LatentState{x.col(2 * p), t}), top_k).U;
    const Mat other = svd_frame(jacobian(model, LatentState{x.col(2 * p + 1), t}), threshold).U;
    frames.emplace_back(top, other);
  }
  HomogeneityStats s = homogeneity_from_frames(frames, top_k, rng);
  s.t = t;
  return s;
}

// ---------------------------------------------------------- eigen spectra --

struct Spectrum {
  int t = 0;
  Vec mean_singular_values;  // descending, averaged over samples
  double top_share = 0.0;    // lambda_1 / sum lambda of the mean spectrum
  double top_energy = 0.0;   // mean over samples of lambda_1^2 / sum lambda^2
  Index samples = 0;
};

template <DiffusionModel M>
std::vector<Spectrum> eigen_spectrum(const M& model, const NoiseSchedule& schedule, Index samples,
                                     const std::vector<int>& t_list, std::uint64_t seed, int steps = 50) {
  require(samples >= 1, ErrorKind::invalid_argument, "need samples >= 1");
  std::vector<Spectrum> out;
  for (std::size_t k = 0; k < t_list.size(); ++k) {
    Rng rng(seed + k);
    const int t = t_list[k];
    const Mat x = sample_latents(model, schedule, samples, t, rng, steps);
    Spectrum s;
    s.t = t;
    s.samples = samples;
    for (Index j = 0; j < samples; ++j) {
      const Vec sv = singular_values(jacobian(model, LatentState{x.col(j), t}));
      if (s.mean_singular_values.size() == 0) s.mean_singular_values = Vec::Zero(sv.size());
      s.mean_singular_values += sv;
      const double mass = sv.squaredNorm();
      s.top_energy += mass > 0.0 ? sv[0] * sv[0] / mass : 0.0;
    }
    s.mean_singular_values /= double(samples);
    s.top_energy /= double(samples);
    const double total = s.mean_singular_values.sum();
    s.top_share = total > 0.0 ? s.mean_singular_values[0] / total : 0.0;
    out.push_back(std::move(s));
  }
  return out;
}

// ------------------------------------------------------------------ paths --

enum class PathKind { lerp, slerp, shoot };

inline std::string to_string(PathKind k) {
  switch (k) {
    case PathKind::lerp: return "lerp";
    case PathKind::slerp: return "slerp";
    case PathKind::shoot: return "shoot";
  }
  return "?";
}

inline PathKind parse_path_kind(const std::string& s) {
  if (s == "lerp") return PathKind::lerp;
  if (s == "slerp") return PathKind::slerp;
  if (s == "shoot") return PathKind::shoot;
  throw Error(ErrorKind::invalid_argument, "unknown path kind '" + s + "'");
}

struct PathProbe {
  PathKind kind = PathKind::lerp;
  std::vector<Vec> points;
  std::vector<double> seg_dgeo;
  double total = 0.0;
};

inline Vec slerp(const Vec& a, const Vec& b, double s) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return (1.0 - s) * a + s * b;
  const double c = std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
  const double omega = std::acos(c);
  const double so = std::sin(omega);
  // Parallel endpoints fall back to lerp.
  if (so < 1e-12) return (1.0 - s) * a + s * b;
  return (std::sin((1.0 - s) * omega) / so) * a + (std::sin(s * omega) / so) * b;
}

/// Interpolating paths with segments + 1 points. Shooting paths need the
/// model; see shoot_path.
inline PathProbe build_path(const Vec& x1, const Vec& x2, PathKind kind, int segments) {
  require(x1.size() == x2.size(), ErrorKind::dimension_mismatch, "endpoints differ in shape");
  require(segments >= 1, ErrorKind::invalid_argument, "segments must be >= 1");
  require(kind != PathKind::shoot, ErrorKind::invalid_argument, "shooting paths are built by shoot_path");
  PathProbe p;
  p.kind = kind;
  for (int k = 0; k <= segments; ++k) {
    const double s = double(k) / segments;
    if (k == 0) p.points.push_back(x1);
    else if (k == segments) p.points.push_back(x2);
    else p.points.push_back(kind == PathKind::lerp ? Vec((1.0 - s) * x1 + s * x2) : slerp(x1, x2, s));
  }
  return p;
}

/// Shooting from x1 toward x2. The first H-direction is the image under J of
/// (x2 - x1) projected onto the tangent frame at x1; each step then
/// transports it into the frame at the current point and applies the
/// normalized editing step, with no re-aiming at x2. Each step is rescaled
/// so its pullback length ||J dx|| is ||J (x2 - x1)|| / segments; the path
/// generally misses x2.
template <DiffusionModel M>
PathProbe shoot_path(const M& model, const NoiseSchedule& schedule, const Vec& x1, const Vec& x2, int t,
                     int segments, const EditConfig& cfg) {
  require(x1.size() == x2.size(), ErrorKind::dimension_mismatch, "endpoints differ in shape");
  require(segments >= 1, ErrorKind::invalid_argument, "segments must be >= 1");
  PathProbe p;
  p.kind = PathKind::shoot;
  p.points.push_back(x1);
  const Vec chord = x2 - x1;
  const double length = chord.norm();
  if (length == 0.0) {
    for (int k = 0; k < segments; ++k) p.points.push_back(x1);
    return p;
  }
  const Jacobian jac = jacobian(model, LatentState{x1, t});
  const TangentFrame frame = svd_frame(jac, cfg.threshold);
  const Vec v0 = frame.V * (frame.V.transpose() * chord);
  require(v0.norm() > kDirectionFloor * length, ErrorKind::direction_lost, "chord is orthogonal to the tangent space");
  const double step = (jac.matrix * chord).norm() / segments;
  Vec u = jac.matrix * v0;
  u /= u.norm();
  LatentState state{x1, t};
  for (int k = 0; k < segments; ++k) {
    const Jacobian here = k == 0 ? jac : jacobian(model, state);
    const Transported moved = project_to_frame(svd_frame(here, cfg.threshold), u);
    const EditStep e = edit_step(model, state, moved.v, cfg, schedule);
    const double n = (here.matrix * e.dx).norm();
    require(n > 0.0, ErrorKind::step_degenerate, "editing step vanished along the shooting path");
    state.x += (step / n) * e.dx;
    p.points.push_back(state.x);
    u = moved.u;
  }
  return p;
}

/// Fills per-segment D_geo between the H-side tangent frames at consecutive
/// points, and their sum.
template <DiffusionModel M>
PathProbe semantic_path_length(const M& model, PathProbe probe, int t, double threshold) {
  require(probe.points.size() >= 2, ErrorKind::invalid_argument, "path needs at least two points");
  std::vector<Mat> frames;
  frames.reserve(probe.points.size());
  for (const Vec& x : probe.points) frames.push_back(svd_frame(jacobian(model, LatentState{x, t}), threshold).U);
  probe.seg_dgeo.clear();
  probe.total = 0.0;
  for (std::size_t k = 0; k + 1 < frames.size(); ++k) {
    const double d = principal_angles(frames[k], frames[k + 1]).d_geo;
    probe.seg_dgeo.push_back(d);
    probe.total += d;
  }
  return probe;
}

struct PathKindStats {
  PathKind kind = PathKind::lerp;
  std::vector<double> totals;  // one per pair
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> profile_mean;  // per segment
  std::vector<double> profile_std;
};

struct PathExperiment {
  int t = 0;
  int segments = 0;
  double threshold = 0.0;
  std::array<PathKindStats, 3> kinds;

  const PathKindStats& of(PathKind k) const { return kinds[std::size_t(k)]; }
};

inline double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = 0.0;
  for (double x : v) m += x;
  m /= double(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / double(v.size() - 1));
}

/// Semantic path lengths of lerp, slerp and shooting paths between pairs of
/// x ~ N(0, I) at timestep t.
template <DiffusionModel M>
PathExperiment path_experiment(const M& model, const NoiseSchedule& schedule, Index pairs, int segments,
                               double threshold, int t, const EditConfig& shoot_cfg, std::uint64_t seed) {
  require(pairs >= 1, ErrorKind::invalid_argument, "need pairs >= 1");
  PathExperiment out;
  out.t = t;
  out.segments = segments;
  out.threshold = threshold;
  Rng rng(seed);
  const Index dim = model.shape().size();
  std::array<std::vector<std::vector<double>>, 3> profiles;
  for (Index p = 0; p < pairs; ++p) {
    const Vec a = standard_normal(rng, dim);
    const Vec b = standard_normal(rng, dim);
    for (PathKind k : {PathKind::lerp, PathKind::slerp, PathKind::shoot}) {
      PathProbe probe = k == PathKind::shoot ? shoot_path(model, schedule, a, b, t, segments, shoot_cfg)
                                             : build_path(a, b, k, segments);
      probe = semantic_path_length(model, std::move(probe), t, threshold);
      out.kinds[std::size_t(k)].totals.push_back(probe.total);
      profiles[std::size_t(k)].push_back(probe.seg_dgeo);
    }
  }
  for (PathKind k : {PathKind::lerp, PathKind::slerp, PathKind::shoot}) {
    auto& st = out.kinds[std::size_t(k)];
    st.kind = k;
    for (double v : st.totals) st.mean += v / double(pairs);
    st.stddev = sample_std(st.totals);
    for (int s = 0; s < segments; ++s) {
      std::vector<double> col;
      for (const auto& prof : profiles[std::size_t(k)]) col.push_back(prof[std::size_t(s)]);
      double m = 0.0;
      for (double v : col) m += v / double(col.size());
      st.profile_mean.push_back(m);
      st.profile_std.push_back(sample_std(col));
    }
  }
  return out;
}

/// Mean of the first and last 10% of a segment profile over the mean of its
/// middle 20%.
struct ProfileShape {
  double ends = 0.0;
  double middle = 0.0;
};

inline ProfileShape profile_shape(const std::vector<double>& profile) {
  const std::size_t n = profile.size();
  require(n >= 5, ErrorKind::invalid_argument, "profile too short");
  const std::size_t edge = std::max<std::size_t>(1, std::size_t(std::lround(0.1 * double(n))));
  const std::size_t mid = std::max<std::size_t>(1, std::size_t(std::lround(0.2 * double(n))));
  ProfileShape out;
  for (std::size_t i = 0; i < edge; ++i) out.ends += profile[i] + profile[n - 1 - i];
  out.ends /= double(2 * edge);
  const std::size_t start = (n - mid) / 2;
  for (std::size_t i = start; i < start + mid; ++i) out.middle += profile[i];
  out.middle /= double(mid);
  return out;
}

// ------------------------------------------------------------------ kappa --

struct KappaStats {
  int t = 0;
  double step = 0.0;
  std::vector<double> cosines;
  double mean = 0.0;
};

/// validate_kappa along the top local direction of `samples` DDIM latents at t.
template <DiffusionModel M>
KappaStats kappa_statistics(const M& model, const NoiseSchedule& schedule, Index samples, int t, double step,
                            std::uint64_t seed, int steps = 50) {
  require(samples >= 1, ErrorKind::invalid_argument, "need samples >= 1");
  Rng rng(seed);
  const Mat x = sample_latents(model, schedule, samples, t, rng, steps);
  KappaStats out;
  out.t = t;
  out.step = step;
  for (Index j = 0; j < samples; ++j) {
    const LatentState s{x.col(j), t};
    const TangentFrame f = svd_frame_top(jacobian(model, s), 1);
    out.cosines.push_back(validate_kappa(model, s, f.V.col(0), step));
    out.mean += out.cosines.back() / double(samples);
  }
  return out;
}

}  // namespace semdir
