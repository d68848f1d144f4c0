// Acceptance run: one PASS/FAIL line per criterion, at full configured sizes
// against the trained checkpoint.

#include "semdir/pipeline.hpp"

#include "oracles.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <optional>

using namespace semdir;
using namespace semdir::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

const fs::path kOut = fs::path(SEMDIR_TEST_SCRATCH) / "acceptance";

RunConfig config(std::vector<std::string> extra = {}) {
  std::vector<std::string> o{"model.checkpoint=" + std::string(SEMDIR_TEST_CHECKPOINT), "output.dir=" + kOut.string()};
  o.insert(o.end(), extra.begin(), extra.end());
  return load_config(SEMDIR_TEST_CONFIG, o);
}

const EpsilonModel& model() {
  static const EpsilonModel m = load_model(config());
  return m;
}

// Full analysis suite, run once and shared by the trend criteria.
const json& analysis() {
  static const json m = [] {
    std::ostringstream log;
    const auto t0 = Clock::now();
    json r = cmd_analyze(config(), analysis_parts(), log);
    r["seconds"] = seconds_since(t0);
    return r;
  }();
  return m;
}

// ------------------------------------------------------------- criteria --

Outcome jacobian_fd() {
  const auto t0 = Clock::now();
  const EpsilonModel& m = model();
  Rng rng(101);
  const double h = 1e-3;
  double worst = 0.0;
  for (int s = 0; s < 10; ++s) {
    const int t = 99 + 100 * s;
    const Vec x = standard_normal(rng, m.x_dim());
    const Mat J = m.encode_jacobian(x, t);
    std::vector<Index> cols(std::size_t(m.x_dim()));
    std::iota(cols.begin(), cols.end(), Index(0));
    std::shuffle(cols.begin(), cols.end(), rng);
    for (int k = 0; k < 20; ++k) {
      const Index c = cols[std::size_t(k)];
      Vec xp = x, xm = x;
      xp[c] += h;
      xm[c] -= h;
      const Vec fd = (m.encode_h(xp, t) - m.encode_h(xm, t)) / (2 * h);
      worst = std::max(worst, (J.col(c) - fd).norm() / fd.norm());
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-3 && secs < 120.0,
          fmt("max relative error %.2e over 200 columns (bound 1e-3), %.1f s (bound 120 s)", worst, secs)};
}

Outcome svd_identities() {
  const EpsilonModel& m = model();
  Rng rng(102);
  double orth = 0.0, push = 0.0, pull = 0.0, excess = -1e300;
  for (int t : {999, 749, 499, 249}) {
    const Jacobian j = jacobian(m, LatentState{standard_normal(rng, m.x_dim()), t});
    const TangentFrame f = svd_frame(j, 1.0);
    const Mat I = Mat::Identity(f.n, f.n);
    orth = std::max({orth, (f.V.transpose() * f.V - I).cwiseAbs().maxCoeff(),
                     (f.U.transpose() * f.U - I).cwiseAbs().maxCoeff()});
    for (Index i = 0; i < f.n; ++i)
      push = std::max(push, (j.matrix * f.V.col(i) - f.lambdas[i] * f.U.col(i)).norm() / f.lambdas[0]);
    const double l1sq = f.lambdas[0] * f.lambdas[0];
    for (int k = 0; k < 1000; ++k) {
      const Vec v = random_unit(rng, m.x_dim());
      const double q = pullback_norm_sq(v, j);
      // Spectral route: sum_i lambda_i^2 (v_i . v)^2 over the full frame.
      const double spectral = (f.lambdas.array().square() * (f.V.transpose() * v).array().square()).sum();
      pull = std::max(pull, std::abs(q - spectral) / l1sq);
      excess = std::max(excess, q - l1sq);
    }
  }
  return {orth <= 1e-5 && push <= 1e-5 && pull <= 1e-8 && excess <= 1e-6,
          fmt("orthonormality %.1e, Jv-lu %.1e (1e-5); pullback vs spectral form %.1e (1e-8); "
              "max q - l1^2 = %.2e (<= 1e-6)",
              orth, push, pull, excess)};
}

Outcome principal_angle_oracle() {
  Rng rng(103);
  std::uniform_int_distribution<int> pick(1, 6);
  double dev = 0.0, asym = 0.0, self = 0.0;
  for (int k = 0; k < 100; ++k) {
    const Mat a = random_orthonormal(rng, 20, pick(rng));
    const Mat b = random_orthonormal(rng, 20, pick(rng));
    const double d = principal_angles(a, b).d_geo;
    dev = std::max(dev, std::abs(d - lapack_dgeo(a, b)));
    asym = std::max(asym, std::abs(d - principal_angles(b, a).d_geo));
    self = std::max(self, principal_angles(a, a).d_geo);
  }
  return {dev <= 1e-8 && asym <= 1e-8 && self <= 1e-8,
          fmt("100 pairs: |d - lapack| %.1e, asymmetry %.1e, d(U,U) %.1e (all <= 1e-8)", dev, asym, self)};
}

Outcome global_reference() {
  Rng rng(104);
  int cases = 0, exact = 0;
  for (Index hdim : {2, 4, 6})
    for (Index n = 1; n <= std::min<Index>(3, hdim); ++n)
      for (Index L : {2, 3}) {
        TanhModel tm;
        tm.W = Mat::NullaryExpr(hdim, 4, [&]() { return std::normal_distribution<double>(0, 1)(rng); });
        for (std::uint64_t seed : {1u, 2u, 3u}) {
          ++cases;
          if (global_directions(tm, L, n, seed).U_bar == reference_global(tm, L, n, seed)) ++exact;
        }
      }
  return {exact == cases, fmt("%d of %d instances bit-identical to the reference", exact, cases)};
}

Outcome eq3_and_inversion() {
  const EpsilonModel& m = model();
  Rng rng(105);
  double worst = 0.0;
  for (int t = 0; t < m.timesteps(); ++t) {
    const Vec x = standard_normal(rng, m.x_dim());
    const double a = m.schedule().alpha(t);
    const Vec rebuilt =
        std::sqrt(a) * predict_x0(m, LatentState{x, t}, m.schedule()) + std::sqrt(1 - a) * m.predict_eps(x, t);
    worst = std::max(worst, (rebuilt - x).norm() / x.norm());
  }
  const RunConfig cfg = config();
  const InversionSummary s = cmd_invert(cfg, {}, "T", 20);
  return {worst <= 1e-5 && s.mean_mse < cfg.inversion_max_mse,
          fmt("identity %.1e at all %d timesteps (1e-5); inversion MSE mean %.5f, max %.5f over 20 images "
              "(bound %.4g on the mean)",
              worst, m.timesteps(), s.mean_mse, s.max_mse, cfg.inversion_max_mse)};
}

Outcome normalize_exactness() {
  Rng rng(106);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  double mean_err = 0.0, std_err = 0.0;
  auto pop_std = [](const Vec& v) { return std::sqrt((v.array() - v.mean()).square().mean()); };
  for (int k = 0; k < 100; ++k) {
    const Vec edit = (standard_normal(rng, 1024) * std::exp(u(rng))).array() + u(rng);
    const Vec ref = (standard_normal(rng, 1024) * std::exp(u(rng))).array() + u(rng);
    const Vec out = normalize_x0(edit, ref);
    mean_err = std::max(mean_err, std::abs(out.mean() - edit.mean()));
    std_err = std::max(std_err, std::abs(pop_std(out) - pop_std(ref)));
  }
  bool raised = false;
  try {
    normalize_x0(Vec::Constant(1024, 0.2), standard_normal(rng, 1024));
  } catch (const Error& e) {
    raised = e.kind() == ErrorKind::cannot_normalize;
  }
  return {mean_err <= 1e-6 && std_err <= 1e-6 && raised,
          fmt("mean error %.1e, std error %.1e (1e-6); constant input %s", mean_err, std_err,
              raised ? "raises cannot-normalize" : "does not raise")};
}

Outcome path_ordering() {
  const json& p = analysis().at("paths");
  const double lerp = p.at("lerp").at("mean"), slerp = p.at("slerp").at("mean"), shoot = p.at("shoot").at("mean");
  const RunConfig cfg = config();
  return {lerp >= 1.05 * slerp && slerp >= 1.05 * shoot,
          fmt("%ld pairs: lerp %.4f +- %.4f, slerp %.4f +- %.4f, shoot %.4f +- %.4f; ratios %.3f, %.3f (need >= 1.05)",
              long(cfg.path_pairs), lerp, p.at("lerp").at("std").get<double>(), slerp,
              p.at("slerp").at("std").get<double>(), shoot, p.at("shoot").at("std").get<double>(), lerp / slerp,
              slerp / shoot)};
}

Outcome psd_trend() {
  const json& p = analysis().at("psd_low_fraction");
  const double hi = p.at("T"), lo = p.at("0.25T");
  return {hi >= 1.05 * lo,
          fmt("low-frequency fraction T %.4f vs 0.25T %.4f, ratio %.3f (need >= 1.05)", hi, lo, hi / lo)};
}

Outcome homogeneity_trend() {
  const json& h = analysis().at("homogeneity").at("T");
  const double p = h.at("p"), mean = h.at("mean"), control = h.at("control");
  return {p < 0.01 && mean > control,
          fmt("%ld pairs at T: mean max|cos| %.4f vs control %.4f, rank-sum p = %.2e (need < 0.01)",
              long(config().homogeneity_pairs), mean, control, p)};
}

Outcome spectrum_trend() {
  const json& s = analysis().at("spectrum");
  const double hi = s.at("T").at("top_share"), lo = s.at("0.25T").at("top_share");
  return {hi > lo, fmt("%ld samples: top share T %.4f vs 0.25T %.4f", long(config().spectrum_samples), hi, lo)};
}

Outcome kappa_trend() {
  const json& k = analysis().at("kappa_mean_cosine");
  const double hi = k.at("T"), lo = k.at("0.25T");
  return {hi > 0.0 && hi > lo,
          fmt("%ld samples: mean cosine T %.4f vs 0.25T %.4f", long(config().kappa_samples), hi, lo)};
}

Outcome ablation() {
  std::ostringstream log;
  const AblationResult r = cmd_ablate(config(), log);
  const auto& full = r.arm(AblationArm::full);
  const auto& rnd = r.arm(AblationArm::random_direction);
  const auto& raw = r.arm(AblationArm::no_normalization);
  const bool ok = r.config.edits >= 20 && full.mean_std_drift < rnd.mean_std_drift &&
                  full.mean_std_drift < raw.mean_std_drift && full.mean_eps_loss < rnd.mean_eps_loss &&
                  full.mean_eps_loss < raw.mean_eps_loss;
  return {ok, fmt("%d edits: std drift full %.5f, random %.5f, no-norm %.5f; eps loss full %.5f, random %.5f, "
                  "no-norm %.5f",
                  r.config.edits, full.mean_std_drift, rnd.mean_std_drift, raw.mean_std_drift, full.mean_eps_loss,
                  rnd.mean_eps_loss, raw.mean_eps_loss)};
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_text(e.path());
  return out;
}

Outcome cli_determinism() {
  const fs::path out = kOut / "determinism";
  const std::string opts = std::string(" -c ") + SEMDIR_TEST_CONFIG + " --checkpoint " + SEMDIR_TEST_CHECKPOINT +
                           " -o " + out.string() +
                           " -s discover.global_samples=10 -s discover.global_n=5 -s discover.pca_samples=50"
                           " -s discover.local_samples=2";
  auto run_once = [&]() -> std::optional<std::map<std::string, std::string>> {
    fs::remove_all(out);
    for (const std::string cmd : {" discover", " edit -d global:0 --seed 17 --name g",
                                  " edit -t 0.5T -d local:0 --seed 17 --name l"})
      if (std::system((SEMDIR_CLI + cmd + opts + " > /dev/null 2>&1").c_str()) != 0) return std::nullopt;
    return tree_bytes(out);
  };
  const auto a = run_once();
  const auto b = run_once();
  if (!a || !b) return {false, "CLI command failed"};
  std::size_t differ = 0;
  for (const auto& [name, bytes] : *a)
    if (!b->count(name) || b->at(name) != bytes) ++differ;
  return {differ == 0 && a->size() == b->size() && !a->empty(),
          fmt("discover + 2 edits twice: %zu files, %zu differ", a->size(), differ)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::string only = argc > 1 ? argv[1] : "";  // substring filter on criterion names
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"jacobian-finite-differences", jacobian_fd},
      {"svd-frame-identities", svd_identities},
      {"principal-angle-oracle", principal_angle_oracle},
      {"global-directions-reference", global_reference},
      {"x0-identity-and-inversion", eq3_and_inversion},
      {"normalize-x0-exactness", normalize_exactness},
      {"path-length-ordering", path_ordering},
      {"psd-low-frequency-trend", psd_trend},
      {"homogeneity-vs-random", homogeneity_trend},
      {"spectrum-top-share-trend", spectrum_trend},
      {"kappa-cosine-trend", kappa_trend},
      {"ablation-arms", ablation},
      {"cli-determinism", cli_determinism},
  };
  fs::create_directories(kOut);
  int failed = 0, ran = 0;
  for (const auto& [name, fn] : criteria) {
    if (name.find(only) == std::string::npos) continue;
    ++ran;
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s  %-30s %s [%.0f s]\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d criteria, %d failed\n", ran, failed);
  return failed == 0 ? 0 : 1;
}
