#pragma once

#include "semdir/checkpoint.hpp"
#include "semdir/model.hpp"
#include "semdir/schedule.hpp"
#include "semdir/unet.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

namespace semdir::testing {

/// Untrained network on 8x8 images; enough structure for calculus checks.
inline EpsilonModel tiny_model(std::uint64_t seed = 5, int groups = 2, int T = 100) {
  ArchConfig arch;
  arch.width1 = 4;
  arch.width2 = 8;
  arch.width3 = 8;
  arch.bottleneck = 6;
  arch.temb_dim = 8;
  arch.groups = groups;
  arch.image = {1, 8, 8};
  UNet<double> net(arch);
  Rng rng(seed);
  net.init_random(rng);
  return EpsilonModel(std::move(net), make_schedule(T, ScheduleKind::linear));
}

/// Linear stand-in: eps(x) = kappa x + b, h(x) = A x. Exact Jacobian A.
struct LinearModel {
  Mat A;
  double kappa = 0.5;
  Vec bias;
  ImageShape image{1, 2, 2};
  int T = 10;

  ImageShape shape() const { return image; }
  Index h_dim() const { return A.rows(); }
  int timesteps() const { return T; }
  Vec predict_eps(const Vec& x, int) const { return kappa * x + (bias.size() ? bias : Vec::Zero(x.size())); }
  Vec encode_h(const Vec& x, int) const { return A * x; }
  Mat encode_jacobian(const Vec&, int) const { return A; }
};
static_assert(DiffusionModel<LinearModel>);

/// Stand-in returning a known noise field, for plug-in checks of x0 recovery.
struct OracleEpsModel {
  Vec eps;
  ImageShape image{1, 4, 4};
  int T = 100;
  ImageShape shape() const { return image; }
  Index h_dim() const { return 1; }
  int timesteps() const { return T; }
  Vec predict_eps(const Vec&, int) const { return eps; }
  Vec encode_h(const Vec& x, int) const { return Vec::Constant(1, x.sum()); }
  Mat encode_jacobian(const Vec& x, int) const { return Mat::Ones(1, x.size()); }
};

/// Trained checkpoint produced by the ctest fixture.
inline std::filesystem::path trained_checkpoint() { return SEMDIR_TEST_CHECKPOINT; }
inline std::filesystem::path default_config() { return SEMDIR_TEST_CONFIG; }

inline const EpsilonModel& trained_model() {
  static const EpsilonModel m = load_checkpoint(trained_checkpoint());
  return m;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::path(SEMDIR_TEST_SCRATCH) / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

#define EXPECT_SEMDIR_ERROR(stmt, expected_kind)                                   \
  do {                                                                             \
    try {                                                                          \
      stmt;                                                                        \
      ADD_FAILURE() << "expected " << ::semdir::error_name(expected_kind);         \
    } catch (const ::semdir::Error& e) {                                           \
      EXPECT_EQ(e.kind(), expected_kind) << e.what();                              \
    }                                                                              \
  } while (0)

}  // namespace semdir::testing
