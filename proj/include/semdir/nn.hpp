#pragma once

// Minimal layer kernels for the denoiser. Feature maps are stored as
// (channels x batch*height*width) matrices: each column is the channel vector
// of one pixel, columns ordered (b, y, x) row-major. Concatenation along
// channels is therefore row stacking.

#include "semdir/core.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace semdir::nn {

template <typename S>
using MatT = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using VecT = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <typename S>
struct Param {
  std::string name;
  MatT<S> value;
  MatT<S> grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <typename S>
struct Fmap {
  MatT<S> data;  // channels x (batch * height * width)
  int batch = 0;
  int height = 0;
  int width = 0;

  Index channels() const { return data.rows(); }
  Index pixels() const { return Index(height) * width; }
};

template <typename S>
S silu(S z) {
  return z / (S(1) + std::exp(-z));
}

template <typename S>
S silu_grad(S z) {
  const S sig = S(1) / (S(1) + std::exp(-z));
  return sig * (S(1) + z * (S(1) - sig));
}

/// 3x3 patches with zero padding 1. Row index of the result is tap * C + c.
template <typename S>
MatT<S> im2col(const Fmap<S>& in, int stride, int out_h, int out_w) {
  const Index c = in.channels();
  const Index n_out = Index(in.batch) * out_h * out_w;
  MatT<S> cols = MatT<S>::Zero(9 * c, n_out);
  for (int b = 0; b < in.batch; ++b) {
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        const Index col = (Index(b) * out_h + oy) * out_w + ox;
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= in.height) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox * stride + kx - 1;
            if (ix < 0 || ix >= in.width) continue;
            const Index src = (Index(b) * in.height + iy) * in.width + ix;
            cols.block((ky * 3 + kx) * c, col, c, 1) = in.data.col(src);
          }
        }
      }
    }
  }
  return cols;
}

/// Adjoint of im2col: scatters patch gradients back onto the input grid.
template <typename S>
MatT<S> col2im(const MatT<S>& dcols, Index channels, int batch, int in_h, int in_w, int stride, int out_h,
               int out_w) {
  MatT<S> out = MatT<S>::Zero(channels, Index(batch) * in_h * in_w);
  for (int b = 0; b < batch; ++b) {
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        const Index col = (Index(b) * out_h + oy) * out_w + ox;
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= in_h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox * stride + kx - 1;
            if (ix < 0 || ix >= in_w) continue;
            const Index dst = (Index(b) * in_h + iy) * in_w + ix;
            out.col(dst) += dcols.block((ky * 3 + kx) * channels, col, channels, 1);
          }
        }
      }
    }
  }
  return out;
}

template <typename S>
Fmap<S> upsample2(const Fmap<S>& in) {
  Fmap<S> out{MatT<S>(in.channels(), Index(in.batch) * in.height * in.width * 4), in.batch, in.height * 2,
              in.width * 2};
  for (int b = 0; b < in.batch; ++b)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x)
        out.data.col((Index(b) * out.height + y) * out.width + x) =
            in.data.col((Index(b) * in.height + y / 2) * in.width + x / 2);
  return out;
}

/// Adjoint of upsample2: sums each 2x2 block.
template <typename S>
MatT<S> upsample2_adjoint(const MatT<S>& dout, int batch, int in_h, int in_w) {
  MatT<S> din = MatT<S>::Zero(dout.rows(), Index(batch) * in_h * in_w);
  const int oh = in_h * 2;
  const int ow = in_w * 2;
  for (int b = 0; b < batch; ++b)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x)
        din.col((Index(b) * in_h + y / 2) * in_w + x / 2) += dout.col((Index(b) * oh + y) * ow + x);
  return din;
}

template <typename S>
struct Linear {
  Param<S> weight;  // out x in
  Param<S> bias;    // out x 1

  Linear() = default;
  Linear(const std::string& name, Index in, Index out)
      : weight{name + ".weight", MatT<S>::Zero(out, in), {}}, bias{name + ".bias", MatT<S>::Zero(out, 1), {}} {}

  MatT<S> forward(const MatT<S>& x) const { return (weight.value * x).colwise() + bias.value.col(0); }
};

/// conv3x3 -> group norm -> per-sample affine modulation from the time
/// embedding -> SiLU. The modulation is z = n * (1 + scale) + shift. With
/// groups == 0 the normalization is skipped (n = a).
template <typename S>
struct ConvBlock {
  int cin = 0;
  int cout = 0;
  int stride = 1;
  int groups = 0;
  Param<S> weight;  // cout x 9*cin
  Param<S> bias;    // cout x 1
  Linear<S> film;   // temb -> [scale; shift]

  static constexpr double kNormEps = 1e-5;

  struct Tape {
    MatT<S> cols;
    MatT<S> n;        // normalized conv output
    MatT<S> inv_std;  // groups x batch
    MatT<S> z;
    MatT<S> scale;  // cout x batch
    int in_h = 0, in_w = 0, out_h = 0, out_w = 0, batch = 0;
  };

  ConvBlock() = default;
  ConvBlock(const std::string& name, int in, int out, int stride_, Index temb_dim, int groups_ = 0)
      : cin(in),
        cout(out),
        stride(stride_),
        groups(groups_),
        weight{name + ".conv.weight", MatT<S>::Zero(out, 9 * in), {}},
        bias{name + ".conv.bias", MatT<S>::Zero(out, 1), {}},
        film(name + ".film", temb_dim, 2 * out) {}

  Fmap<S> forward(const Fmap<S>& x, const MatT<S>& temb, Tape& tape) const {
    tape.batch = x.batch;
    tape.in_h = x.height;
    tape.in_w = x.width;
    tape.out_h = x.height / stride;
    tape.out_w = x.width / stride;
    tape.cols = im2col(x, stride, tape.out_h, tape.out_w);
    tape.n = (weight.value * tape.cols).colwise() + bias.value.col(0);
    const Index hw = Index(tape.out_h) * tape.out_w;
    if (groups > 0) {
      const Index cg = cout / groups;
      tape.inv_std.resize(groups, x.batch);
      for (int b = 0; b < x.batch; ++b)
        for (int g = 0; g < groups; ++g) {
          auto blk = tape.n.block(g * cg, b * hw, cg, hw);
          const S mean = blk.mean();
          blk.array() -= mean;
          const S inv = S(1) / std::sqrt(blk.squaredNorm() / S(blk.size()) + S(kNormEps));
          blk *= inv;
          tape.inv_std(g, b) = inv;
        }
    }
    const MatT<S> ss = film.forward(temb);
    tape.scale = ss.topRows(cout);
    tape.z.resize(tape.n.rows(), tape.n.cols());
    for (int b = 0; b < x.batch; ++b) {
      const auto one_plus = (tape.scale.col(b).array() + S(1)).matrix();
      tape.z.middleCols(b * hw, hw) =
          (tape.n.middleCols(b * hw, hw).array().colwise() * one_plus.array()).colwise() +
          ss.col(b).bottomRows(cout).array();
    }
    Fmap<S> y{tape.z.unaryExpr([](S v) { return silu(v); }), x.batch, tape.out_h, tape.out_w};
    return y;
  }

  /// dn -> da through the group norm of sample `b` (in place, hw columns at `col0`).
  void norm_backward(const Tape& tape, MatT<S>& d, Index col0, int b) const {
    if (groups == 0) return;
    const Index hw = Index(tape.out_h) * tape.out_w;
    const Index cg = cout / groups;
    const Index src0 = Index(b) * hw;
    for (int g = 0; g < groups; ++g) {
      auto db = d.block(g * cg, col0, cg, hw);
      const auto nb = tape.n.block(g * cg, src0, cg, hw);
      const S m1 = db.mean();
      const S m2 = db.cwiseProduct(nb).sum() / S(db.size());
      db = (tape.inv_std(g, b) * (db.array() - m1 - nb.array() * m2)).matrix();
    }
  }

  /// Full backward pass: accumulates parameter gradients, returns the input
  /// gradient and adds into dtemb.
  MatT<S> backward(const Tape& tape, const MatT<S>& dy, const MatT<S>& temb, MatT<S>& dtemb) {
    const Index hw = Index(tape.out_h) * tape.out_w;
    MatT<S> dz = dy.cwiseProduct(tape.z.unaryExpr([](S v) { return silu_grad(v); }));
    MatT<S> dss(2 * cout, tape.batch);
    MatT<S> da(dz.rows(), dz.cols());
    for (int b = 0; b < tape.batch; ++b) {
      auto dzb = dz.middleCols(b * hw, hw);
      dss.col(b).topRows(cout) = dzb.cwiseProduct(tape.n.middleCols(b * hw, hw)).rowwise().sum();
      dss.col(b).bottomRows(cout) = dzb.rowwise().sum();
      da.middleCols(b * hw, hw) = dzb.array().colwise() * (tape.scale.col(b).array() + S(1));
      norm_backward(tape, da, Index(b) * hw, b);
    }
    film.weight.grad.noalias() += dss * temb.transpose();
    film.bias.grad += dss.rowwise().sum();
    dtemb.noalias() += film.weight.value.transpose() * dss;
    weight.grad.noalias() += da * tape.cols.transpose();
    bias.grad += da.rowwise().sum();
    MatT<S> dcols = weight.value.transpose() * da;
    return col2im(dcols, cin, tape.batch, tape.in_h, tape.in_w, stride, tape.out_h, tape.out_w);
  }

  /// Input-only backward of a single-sample tape against `copies` stacked
  /// cotangents (dy has copies * out_h * out_w columns). Parameters untouched.
  MatT<S> backward_input(const Tape& tape, const MatT<S>& dy, int copies) const {
    const Index hw = Index(tape.out_h) * tape.out_w;
    const MatT<S> gate = tape.z.unaryExpr([](S v) { return silu_grad(v); }).array().colwise() *
                         (tape.scale.col(0).array() + S(1));
    MatT<S> da(dy.rows(), dy.cols());
    for (int k = 0; k < copies; ++k) {
      da.middleCols(k * hw, hw) = dy.middleCols(k * hw, hw).cwiseProduct(gate);
      norm_backward(tape, da, Index(k) * hw, 0);
    }
    MatT<S> dcols = weight.value.transpose() * da;
    return col2im(dcols, cin, copies, tape.in_h, tape.in_w, stride, tape.out_h, tape.out_w);
  }
};

/// Sinusoidal features of the (integer) timestep, one column per sample.
template <typename S>
MatT<S> timestep_features(const std::vector<int>& t, Index dim) {
  MatT<S> out(dim, Index(t.size()));
  const Index half = dim / 2;
  for (std::size_t j = 0; j < t.size(); ++j) {
    for (Index i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
      const double arg = double(t[j]) * freq;
      out(i, Index(j)) = S(std::sin(arg));
      out(i + half, Index(j)) = S(std::cos(arg));
    }
  }
  return out;
}

}  // namespace semdir::nn
