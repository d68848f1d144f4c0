#include "semdir/blobs.hpp"
#include "semdir/checkpoint.hpp"
#include "semdir/sampling.hpp"
#include "semdir/train.hpp"
#include "support.hpp"

#include <cmath>

using namespace semdir;
using namespace semdir::testing;

TEST(Schedule, LinearEndpointsAndMonotone) {
  const NoiseSchedule s = make_schedule(1000, ScheduleKind::linear);
  EXPECT_DOUBLE_EQ(s.betas.front(), 1e-4);
  EXPECT_DOUBLE_EQ(s.betas.back(), 2e-2);
  double prod = 1.0;
  for (int i = 0; i < s.T; ++i) {
    const double b = s.betas[std::size_t(i)];
    EXPECT_GT(b, 0.0);
    EXPECT_LT(b, 1.0);
    if (i) { EXPECT_GE(b, s.betas[std::size_t(i) - 1]); }
    prod *= 1.0 - b;
    EXPECT_NEAR(s.alphas_cum[std::size_t(i)], prod, 1e-15);
    if (i) { EXPECT_LT(s.alphas_cum[std::size_t(i)], s.alphas_cum[std::size_t(i) - 1]); }
  }
}

TEST(Schedule, CosineEndpoints) {
  const NoiseSchedule s = make_schedule(1000, ScheduleKind::cosine);
  EXPECT_GT(s.alphas_cum.front(), 0.999);
  EXPECT_LT(s.alphas_cum.back(), 1e-3);
  for (int i = 1; i < s.T; ++i) EXPECT_LT(s.alphas_cum[std::size_t(i)], s.alphas_cum[std::size_t(i) - 1]);
}

TEST(Schedule, MinimalLengthAndErrors) {
  const NoiseSchedule s = make_schedule(2, ScheduleKind::linear);
  ASSERT_EQ(s.alphas_cum.size(), 2u);
  EXPECT_GT(s.alphas_cum[0], s.alphas_cum[1]);
  EXPECT_SEMDIR_ERROR(make_schedule(1, ScheduleKind::linear), ErrorKind::invalid_argument);
  EXPECT_SEMDIR_ERROR(s.alpha(2), ErrorKind::timestep_out_of_range);
  EXPECT_SEMDIR_ERROR(make_schedule(10, ScheduleKind::linear, 0.0), ErrorKind::invalid_argument);
}

TEST(Schedule, SnrShiftMultipliesSignalToNoise) {
  const NoiseSchedule base = make_schedule(1000, ScheduleKind::linear);
  const NoiseSchedule shifted = make_schedule(1000, ScheduleKind::linear, 192.0);
  for (int t : {0, 10, 250, 500, 999}) {
    const double a = base.alpha(t);
    const double b = shifted.alpha(t);
    EXPECT_NEAR(b / (1.0 - b), 192.0 * a / (1.0 - a), 1e-9 * 192.0 * a / (1.0 - a));
  }
  double prod = 1.0;
  for (int i = 0; i < shifted.T; ++i) {
    prod *= 1.0 - shifted.betas[std::size_t(i)];
    EXPECT_NEAR(prod, shifted.alphas_cum[std::size_t(i)], 1e-12);
  }
}

TEST(Schedule, TimestepLabelsAndGrid) {
  EXPECT_EQ(timestep_at(1.0, 1000), 999);
  EXPECT_EQ(timestep_at(0.5, 1000), 499);
  EXPECT_EQ(timestep_at(0.25, 1000), 249);
  EXPECT_EQ(timestep_at(0.0, 1000), 0);
  const auto g = step_grid(999, 50);
  ASSERT_EQ(g.size(), 51u);
  EXPECT_EQ(g.front(), 999);
  EXPECT_EQ(g.back(), 0);
  for (std::size_t i = 1; i < g.size(); ++i) EXPECT_LT(g[i], g[i - 1]);
  const auto short_grid = step_grid(3, 50);
  EXPECT_EQ(short_grid.front(), 3);
  EXPECT_EQ(short_grid.back(), 0);
}

TEST(Model, EncodeIsSumOfBottleneckMap) {
  const EpsilonModel m = tiny_model();
  Rng rng(1);
  for (int t : {0, 37, 99}) {
    const Vec x = standard_normal(rng, m.x_dim());
    const Vec h = m.encode_h(x, t);
    const Mat map = m.bottleneck_map(x, t);
    ASSERT_EQ(h.size(), m.h_dim());
    const Vec sum = map.rowwise().sum();
    EXPECT_LE((h - sum).norm(), 1e-10 * std::max(1.0, sum.norm()));
  }
}

TEST(Model, DeterministicAndFinite) {
  const EpsilonModel m = tiny_model();
  Rng rng(2);
  const Vec x = standard_normal(rng, m.x_dim());
  const Vec a = m.predict_eps(x, 50);
  const Vec b = m.predict_eps(x, 50);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(m.predict_eps(Vec::Zero(m.x_dim()), 0).allFinite());
  EXPECT_SEMDIR_ERROR(m.predict_eps(x, 100), ErrorKind::timestep_out_of_range);
  EXPECT_SEMDIR_ERROR(m.predict_eps(Vec::Zero(3), 1), ErrorKind::dimension_mismatch);
}

TEST(Model, BatchMatchesSingle) {
  const EpsilonModel m = tiny_model();
  Rng rng(3);
  Mat x(m.x_dim(), 3);
  for (Index j = 0; j < 3; ++j) x.col(j) = standard_normal(rng, m.x_dim());
  const Mat batch = m.predict_eps_batch(x, {5, 50, 90});
  const std::vector<int> ts{5, 50, 90};
  for (Index j = 0; j < 3; ++j)
    EXPECT_LE((batch.col(j) - m.predict_eps(x.col(j), ts[std::size_t(j)])).norm(), 1e-12);
}

TEST(Model, JacobianMatchesCentralDifferences) {
  for (int groups : {0, 2}) {
    const EpsilonModel m = tiny_model(11, groups);
    Rng rng(4);
    for (int t : {3, 60}) {
      const Vec x = standard_normal(rng, m.x_dim());
      const Mat J = m.encode_jacobian(x, t);
      ASSERT_EQ(J.rows(), m.h_dim());
      ASSERT_EQ(J.cols(), m.x_dim());
      const double h = 1e-5;
      for (Index c = 0; c < m.x_dim(); c += 5) {
        Vec xp = x, xm = x;
        xp[c] += h;
        xm[c] -= h;
        const Vec fd = (m.encode_h(xp, t) - m.encode_h(xm, t)) / (2 * h);
        EXPECT_LE((J.col(c) - fd).norm(), 1e-6 * std::max(1.0, fd.norm())) << "groups " << groups << " col " << c;
      }
    }
  }
}

TEST(Model, ParameterGradientsMatchFiniteDifferences) {
  ArchConfig arch;
  arch.width1 = 2;
  arch.width2 = 4;
  arch.width3 = 4;
  arch.bottleneck = 4;
  arch.temb_dim = 4;
  arch.groups = 2;
  arch.image = {1, 4, 4};
  UNet<double> net(arch);
  Rng rng(9);
  net.init_random(rng);
  std::normal_distribution<double> nd(0.0, 0.3);
  for (auto* p : net.params())
    for (Index i = 0; i < p->value.size(); ++i) p->value.data()[i] += nd(rng);
  Mat x(arch.image.size(), 2);
  for (Index j = 0; j < 2; ++j) x.col(j) = standard_normal(rng, x.rows());
  const Mat target = Mat::Random(x.rows(), 2);
  const std::vector<int> ts{4, 71};
  auto loss = [&](const UNet<double>& n) { return 0.5 * (n.forward(x, ts) - target).squaredNorm(); };

  for (auto* p : net.params()) p->zero_grad();
  UNet<double>::Tape tape;
  const Mat out = net.forward(x, ts, tape);
  net.backward(tape, out - target);

  double worst = 0.0;
  for (auto* p : net.params()) {
    for (Index i = 0; i < p->value.size(); i += std::max<Index>(1, p->value.size() / 7)) {
      const double keep = p->value.data()[i];
      const double h = 1e-6;
      p->value.data()[i] = keep + h;
      const double lp = loss(net);
      p->value.data()[i] = keep - h;
      const double lm = loss(net);
      p->value.data()[i] = keep;
      const double fd = (lp - lm) / (2 * h);
      const double g = p->grad.data()[i];
      worst = std::max(worst, std::abs(fd - g) / std::max(1e-3, std::abs(fd)));
    }
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Sampling, PredictX0WithOracleNoise) {
  const NoiseSchedule s = make_schedule(100, ScheduleKind::linear);
  Rng rng(5);
  OracleEpsModel m;
  m.eps = standard_normal(rng, 16);
  const Vec x0 = standard_normal(rng, 16);
  for (int t : {0, 10, 50, 99}) {
    const double a = s.alpha(t);
    const Vec xt = std::sqrt(a) * x0 + std::sqrt(1 - a) * m.eps;
    EXPECT_LE((predict_x0(m, LatentState{xt, t}, s) - x0).norm(), 1e-5 * x0.norm());
  }
  OracleEpsModel zero;
  zero.eps = Vec::Zero(16);
  const Vec x = standard_normal(rng, 16);
  const Vec back = predict_x0(zero, LatentState{x, 0}, s);
  EXPECT_LE((back - x / std::sqrt(s.alpha(0))).norm(), 1e-15);
  EXPECT_LE((back - x).norm(), 1e-3 * x.norm());
}

TEST(Sampling, DegenerateAlphaRejected) {
  NoiseSchedule s = make_schedule(10, ScheduleKind::linear);
  s.alphas_cum.back() = 0.0;
  OracleEpsModel m;
  m.eps = Vec::Zero(16);
  m.T = 10;
  EXPECT_SEMDIR_ERROR(predict_x0(m, LatentState{Vec::Zero(16), 9}, s), ErrorKind::degenerate_timestep);
}

TEST(Sampling, StepThenInvertIsLocalInverse) {
  const EpsilonModel m = tiny_model();
  const NoiseSchedule& s = m.schedule();
  Rng rng(6);
  const LatentState start{standard_normal(rng, m.x_dim()), 60};
  const LatentState down = ddim_step(m, start, s, 58);
  const LatentState back = ddim_invert_step(m, down, s, 60, 30);
  EXPECT_LE((back.x - start.x).norm(), 1e-4 * start.x.norm());
  EXPECT_SEMDIR_ERROR(ddim_step(m, start, s, 60), ErrorKind::invalid_argument);
}

TEST(Sampling, InversionOfZeroImageIsFinite) {
  const EpsilonModel m = tiny_model();
  const LatentState z = ddim_invert(m, Vec::Zero(m.x_dim()), m.schedule(), 10);
  EXPECT_EQ(z.t, 99);
  EXPECT_TRUE(z.x.allFinite());
}

TEST(Sampling, BoostIsDeterministicAndZeroIsPlainDdim) {
  const EpsilonModel m = tiny_model();
  Rng rng(7);
  const LatentState st{standard_normal(rng, m.x_dim()), 99};
  Rng a(1), b(1), c(2);
  const BoostedSample s1 = quality_boost(m, st, m.schedule(), 15.0, a, 20);
  const BoostedSample s2 = quality_boost(m, st, m.schedule(), 15.0, b, 20);
  const BoostedSample s3 = quality_boost(m, st, m.schedule(), 15.0, c, 20);
  EXPECT_EQ(s1.image, s2.image);
  EXPECT_NE(s1.image, s3.image);
  EXPECT_FALSE(s1.tail.empty());
  for (const auto& ls : s1.tail) EXPECT_LE(ls.t, 15);
  const Vec plain = ddim_sample(m, st, m.schedule(), 20);
  const Vec none = ddim_sample_batch(m, st.x, st.t, m.schedule(), {20, 0.0}).col(0);
  EXPECT_EQ(plain, none);
}

TEST(Blobs, DeterministicAndMeasurable) {
  const BlobDataset a = make_blobs(20, 7);
  const BlobDataset b = make_blobs(20, 7);
  EXPECT_EQ(a.images, b.images);
  EXPECT_LE(a.images.maxCoeff(), 1.0);
  EXPECT_GE(a.images.minCoeff(), -1.0);
  for (Index j = 0; j < 20; ++j) {
    const auto& f = a.factors[std::size_t(j)];
    const MeasuredBlob mb = measure_blob(a.images.col(j), a.shape);
    EXPECT_NEAR(mb.cx, f.cx, 1.5) << j;
    EXPECT_NEAR(mb.cy, f.cy, 1.5) << j;
  }
}

TEST(Train, DeterministicAndLossDecreases) {
  ArchConfig arch;
  arch.width1 = 4;
  arch.width2 = 8;
  arch.width3 = 8;
  arch.bottleneck = 8;
  arch.temb_dim = 8;
  arch.groups = 4;
  arch.image = {1, 8, 8};
  const BlobDataset data = make_blobs(64, 3, arch.image);
  const NoiseSchedule s = make_schedule(100, ScheduleKind::linear);
  TrainConfig tc;
  tc.epochs = 6;
  tc.batch_size = 16;
  tc.validation_count = 0;
  tc.max_validation_loss = 10.0;
  TrainReport r1, r2;
  const EpsilonModel m1 = train(data.images, s, arch, tc, &r1);
  const EpsilonModel m2 = train(data.images, s, arch, tc, &r2);
  EXPECT_EQ(r1.epoch_loss, r2.epoch_loss);
  const auto p1 = m1.net().params();
  const auto p2 = m2.net().params();
  for (std::size_t i = 0; i < p1.size(); ++i) EXPECT_EQ(p1[i]->value, p2[i]->value);
  EXPECT_LT(r1.epoch_loss.back(), r1.epoch_loss.front());
  EXPECT_SEMDIR_ERROR(train(Mat(arch.image.size(), 0), s, arch, tc), ErrorKind::invalid_argument);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const EpsilonModel m = tiny_model(21);
  const auto dir = scratch_dir("checkpoint");
  save_checkpoint(m, dir / "m.sdc");
  const EpsilonModel back = load_checkpoint(dir / "m.sdc");
  EXPECT_EQ(back.arch(), m.arch());
  EXPECT_EQ(back.schedule().alphas_cum, m.schedule().alphas_cum);
  // Blocks are float32 on disk.
  const auto pa = m.net().params();
  const auto pb = back.net().params();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i)
    EXPECT_EQ(pb[i]->value, pa[i]->value.cast<float>().cast<double>()) << pa[i]->name;
  save_checkpoint(back, dir / "m2.sdc");
  EXPECT_EQ(file_bytes(dir / "m.sdc"), file_bytes(dir / "m2.sdc"));
  const EpsilonModel again = load_checkpoint(dir / "m2.sdc");
  Rng rng(1);
  const Vec x = standard_normal(rng, m.x_dim());
  EXPECT_EQ(again.predict_eps(x, 40), back.predict_eps(x, 40));
}

TEST(Checkpoint, CorruptFilesRejected) {
  const auto dir = scratch_dir("checkpoint_bad");
  save_checkpoint(tiny_model(), dir / "m.sdc");
  std::string bytes = file_bytes(dir / "m.sdc");
  EXPECT_SEMDIR_ERROR(deserialize(bytes.substr(0, bytes.size() - 3)), ErrorKind::format_error);
  EXPECT_SEMDIR_ERROR(deserialize(bytes + "x"), ErrorKind::format_error);
  EXPECT_SEMDIR_ERROR(deserialize("NOT-A-CONTAINER\n"), ErrorKind::format_error);
  Container c = deserialize(bytes);
  c.kind = "tangent-frame";
  EXPECT_SEMDIR_ERROR(model_from_container(c), ErrorKind::format_error);
  EXPECT_SEMDIR_ERROR(load_checkpoint(dir / "missing.sdc"), ErrorKind::io_error);
}

TEST(TrainedModel, Eq3IdentityAtAllSampledTimesteps) {
  const EpsilonModel& m = trained_model();
  Rng rng(12);
  for (int t = 0; t < m.timesteps(); t += 37) {
    const Vec x = standard_normal(rng, m.x_dim());
    const double a = m.schedule().alpha(t);
    const Vec rebuilt = std::sqrt(a) * predict_x0(m, LatentState{x, t}, m.schedule()) +
                        std::sqrt(1 - a) * m.predict_eps(x, t);
    EXPECT_LE((rebuilt - x).norm(), 1e-5 * x.norm()) << t;
  }
}

TEST(TrainedModel, PredictedNoiseCorrelatesWithInjectedNoise) {
  const EpsilonModel& m = trained_model();
  const BlobDataset data = make_blobs(8, 1234);
  Rng rng(13);
  for (Index j = 0; j < 8; ++j) {
    const int t = 100 + int(j) * 100;
    const Vec eps = standard_normal(rng, m.x_dim());
    const double a = m.schedule().alpha(t);
    const Vec xt = std::sqrt(a) * data.images.col(j) + std::sqrt(1 - a) * eps;
    EXPECT_GT(cosine(m.predict_eps(xt, t), eps), 0.5) << t;
  }
}

TEST(TrainedModel, DistinctImagesGiveDistinctH) {
  const EpsilonModel& m = trained_model();
  const BlobDataset data = make_blobs(2, 77);
  const Vec h1 = m.encode_h(data.images.col(0), 499);
  const Vec h2 = m.encode_h(data.images.col(1), 499);
  EXPECT_GT((h1 - h2).norm(), 1e-6 * h1.norm());
}

TEST(TrainedModel, InversionImprovesWithSteps) {
  const EpsilonModel& m = trained_model();
  const BlobDataset data = make_blobs(4, 99);
  double coarse = 0.0, fine = 0.0;
  for (Index j = 0; j < 4; ++j) {
    const Vec img = data.images.col(j);
    const LatentState z1 = ddim_invert(m, img, m.schedule(), 1);
    const LatentState z40 = ddim_invert(m, img, m.schedule(), 40);
    coarse += (ddim_sample(m, z1, m.schedule(), 1) - img).squaredNorm();
    fine += (ddim_sample(m, z40, m.schedule(), 40) - img).squaredNorm();
  }
  EXPECT_LT(fine, coarse);
}

TEST(TrainedModel, BoostedSeedsAgreeAtLowFrequency) {
  const EpsilonModel& m = trained_model();
  Rng rng(14);
  const LatentState st{standard_normal(rng, m.x_dim()), 999};
  Rng a(1), b(2);
  const Vec i1 = quality_boost(m, st, m.schedule(), 150.0, a).image;
  const Vec i2 = quality_boost(m, st, m.schedule(), 150.0, b).image;
  auto down = [&](const Vec& v) {
    Vec d = Vec::Zero(64);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) d[(y / 4) * 8 + x / 4] += v[y * 32 + x] / 16.0;
    return d;
  };
  const double full = (i1 - i2).norm() / std::sqrt(1024.0);
  const double low = (down(i1) - down(i2)).norm() / 8.0;
  EXPECT_GT(full, 0.0);
  EXPECT_LT(low, full);
  EXPECT_LT(low, 0.1);
}
