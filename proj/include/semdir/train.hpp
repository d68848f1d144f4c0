#pragma once

// Seeded single-threaded training of the epsilon predictor with the standard
// noise-matching objective. Training runs in float; the returned model holds
// the float32 weights widened to double, so it is bit-identical to the model
// reloaded from a checkpoint.

#include "semdir/core.hpp"
#include "semdir/model.hpp"
#include "semdir/schedule.hpp"
#include "semdir/unet.hpp"

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

namespace semdir {

struct TrainConfig {
  int epochs = 20;
  int batch_size = 32;
  double learning_rate = 2e-3;
  double final_learning_rate = 2e-4;  // cosine decay target
  double grad_clip = 1.0;
  double ema_decay = 0.995;
  std::uint64_t seed = 7;
  Index validation_count = 200;  // held out when the dataset is large enough
  double max_validation_loss = 0.25;
  std::function<void(int epoch, double mean_loss)> on_epoch;
};

struct TrainReport {
  std::vector<double> epoch_loss;
  double validation_loss = 0.0;
};

/// Mean squared noise-prediction error on fixed (seeded) noise and timesteps.
template <DiffusionModel M>
double epsilon_loss(const M& model, const Mat& images, const NoiseSchedule& schedule, std::uint64_t seed,
                    int batch = 64) {
  if (images.cols() == 0) return 0.0;
  Rng rng(seed);
  std::uniform_int_distribution<int> pick_t(0, schedule.T - 1);
  double total = 0.0;
  for (Index start = 0; start < images.cols(); start += batch) {
    const Index n = std::min<Index>(batch, images.cols() - start);
    Mat xt(images.rows(), n);
    Mat eps(images.rows(), n);
    std::vector<int> ts(static_cast<std::size_t>(n));
    for (Index j = 0; j < n; ++j) {
      ts[std::size_t(j)] = pick_t(rng);
      eps.col(j) = standard_normal(rng, images.rows());
      const double a = schedule.alphas_cum[std::size_t(ts[std::size_t(j)])];
      xt.col(j) = std::sqrt(a) * images.col(start + j) + std::sqrt(1.0 - a) * eps.col(j);
    }
    total += (predict_eps_columns(model, xt, ts) - eps).squaredNorm();
  }
  return total / double(images.size());
}

namespace detail {

struct AdamState {
  std::vector<nn::MatT<float>> m, v;
  long step = 0;
};

inline void adam_update(std::vector<nn::Param<float>*>& params, AdamState& st, double lr, double clip) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double sq = 0.0;
  for (auto* p : params) sq += double(p->grad.squaredNorm());
  const double norm = std::sqrt(sq);
  const float scale = (clip > 0 && norm > clip) ? float(clip / norm) : 1.0f;
  ++st.step;
  const double c1 = 1.0 - std::pow(b1, double(st.step));
  const double c2 = 1.0 - std::pow(b2, double(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& g = params[i]->grad;
    st.m[i] = float(b1) * st.m[i] + float(1 - b1) * scale * g;
    st.v[i] = float(b2) * st.v[i] + float(1 - b2) * (scale * g).cwiseAbs2();
    params[i]->value.array() -=
        float(lr / c1) * st.m[i].array() / ((st.v[i].array() / float(c2)).sqrt() + float(eps));
  }
}

}  // namespace detail

inline EpsilonModel train(const Mat& dataset, const NoiseSchedule& schedule, const ArchConfig& arch,
                          const TrainConfig& cfg, TrainReport* report = nullptr) {
  require(dataset.cols() > 0, ErrorKind::invalid_argument, "empty dataset");
  require(dataset.rows() == arch.image.size(), ErrorKind::dimension_mismatch, "images do not match model shape");
  require(cfg.epochs >= 1 && cfg.batch_size >= 1, ErrorKind::invalid_argument, "bad epoch or batch settings");

  Rng rng(cfg.seed);
  UNet<float> net(arch);
  net.init_random(rng);
  UNet<float> ema = net;

  const Index n_all = dataset.cols();
  const Index n_val = n_all >= 20 ? std::min<Index>(cfg.validation_count, n_all / 10) : 0;
  const Index n_train = n_all - n_val;
  const nn::MatT<float> train_images = dataset.leftCols(n_train).cast<float>();

  auto params = net.params();
  auto ema_params = ema.params();
  detail::AdamState adam;
  for (auto* p : params) {
    adam.m.push_back(nn::MatT<float>::Zero(p->value.rows(), p->value.cols()));
    adam.v.push_back(nn::MatT<float>::Zero(p->value.rows(), p->value.cols()));
  }

  std::vector<Index> order(static_cast<std::size_t>(n_train));
  std::iota(order.begin(), order.end(), Index(0));
  std::uniform_int_distribution<int> pick_t(0, schedule.T - 1);
  std::normal_distribution<float> n01(0.0f, 1.0f);

  const long steps_per_epoch = long((n_train + cfg.batch_size - 1) / cfg.batch_size);
  const long total_steps = steps_per_epoch * cfg.epochs;
  TrainReport local;
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    Index seen = 0;
    for (Index start = 0; start < n_train; start += cfg.batch_size) {
      const Index n = std::min<Index>(cfg.batch_size, n_train - start);
      nn::MatT<float> xt(dataset.rows(), n);
      nn::MatT<float> eps(dataset.rows(), n);
      std::vector<int> ts(static_cast<std::size_t>(n));
      for (Index j = 0; j < n; ++j) {
        const int t = pick_t(rng);
        ts[std::size_t(j)] = t;
        for (Index i = 0; i < eps.rows(); ++i) eps(i, j) = n01(rng);
        const double a = schedule.alphas_cum[std::size_t(t)];
        xt.col(j) = float(std::sqrt(a)) * train_images.col(order[std::size_t(start + j)]) +
                    float(std::sqrt(1.0 - a)) * eps.col(j);
      }
      for (auto* p : params) p->zero_grad();
      typename UNet<float>::Tape tape;
      const nn::MatT<float> pred = net.forward(xt, ts, tape);
      const nn::MatT<float> diff = pred - eps;
      const double loss = double(diff.squaredNorm()) / double(diff.size());
      require(std::isfinite(loss), ErrorKind::training_diverged, "non-finite loss at epoch " + std::to_string(epoch));
      net.backward(tape, diff * (2.0f / float(diff.size())));

      const double progress = double(step) / double(std::max<long>(1, total_steps - 1));
      const double lr = cfg.final_learning_rate +
                        0.5 * (cfg.learning_rate - cfg.final_learning_rate) * (1.0 + std::cos(progress * 3.141592653589793));
      detail::adam_update(params, adam, lr, cfg.grad_clip);
      const float d = float(std::min(cfg.ema_decay, (1.0 + step) / (10.0 + step)));
      for (std::size_t i = 0; i < params.size(); ++i)
        ema_params[i]->value = d * ema_params[i]->value + (1.0f - d) * params[i]->value;
      ++step;
      loss_sum += loss * double(n);
      seen += n;
    }
    local.epoch_loss.push_back(loss_sum / double(seen));
    if (cfg.on_epoch) cfg.on_epoch(epoch, local.epoch_loss.back());
  }

  EpsilonModel model(ema.cast<double>(), schedule);
  const Mat val = n_val > 0 ? Mat(dataset.rightCols(n_val)) : dataset;
  local.validation_loss = epsilon_loss(model, val, schedule, cfg.seed + 1);
  require(std::isfinite(local.validation_loss), ErrorKind::training_diverged, "non-finite validation loss");
  if (report) *report = local;
  require(local.validation_loss <= cfg.max_validation_loss, ErrorKind::training_underfit,
          "validation loss " + std::to_string(local.validation_loss) + " above " +
              std::to_string(cfg.max_validation_loss));
  return model;
}

}  // namespace semdir
