#pragma once

#include "semdir/core.hpp"
#include "semdir/nn.hpp"

#include <functional>
#include <sstream>
#include <string>
#include <vector>

namespace semdir {

/// Layer widths of the denoiser. The bottleneck has `bottleneck` channels on
/// an (H/4 x W/4) grid; its spatial sum is the H-space point.
struct ArchConfig {
  int width1 = 8;       // full resolution
  int width2 = 32;      // H/2
  int width3 = 64;      // H/4, before the bottleneck conv
  int bottleneck = 64;  // C_h
  int temb_dim = 64;
  int groups = 8;  // group-norm groups per conv block, 0 disables
  ImageShape image{};

  std::string to_string() const {
    std::ostringstream os;
    os << "unet-" << width1 << "-" << width2 << "-" << width3 << "-" << bottleneck << "-t" << temb_dim << "-g" << groups
       << "-" << image.channels << "x" << image.height << "x" << image.width;
    return os.str();
  }

  static ArchConfig parse(const std::string& s) {
    ArchConfig a;
    char sep = 0;
    std::istringstream is(s);
    std::string head(5, '\0');
    is.read(head.data(), 5);
    require(head == "unet-", ErrorKind::format_error, "bad arch string '" + s + "'");
    is >> a.width1 >> sep >> a.width2 >> sep >> a.width3 >> sep >> a.bottleneck >> sep;
    char t = 0;
    char g = 0;
    is >> t >> a.temb_dim >> sep >> g >> a.groups >> sep >> a.image.channels >> t >> a.image.height >> t >>
        a.image.width;
    require(!is.fail() && g == 'g' && a.image.height % 4 == 0 && a.image.width % 4 == 0, ErrorKind::format_error,
            "bad arch string '" + s + "'");
    a.validate();
    return a;
  }

  void validate() const {
    require(width1 > 0 && width2 > 0 && width3 > 0 && bottleneck > 0 && temb_dim > 0, ErrorKind::invalid_argument,
            "layer widths must be positive");
    require(groups >= 0, ErrorKind::invalid_argument, "groups must be >= 0");
    if (groups > 0)
      for (int w : {width1, width2, width3, bottleneck, 2 * width1})
        require(w % groups == 0, ErrorKind::invalid_argument, "every block width must be divisible by groups");
  }

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

/// Small U-shaped epsilon predictor with FiLM timestep conditioning.
///
/// Encoder: e1 (full res) -> e2 (stride 2) -> e3 (stride 2) -> e4 (bottleneck).
/// Decoder: d1 -> up -> [.., e2] -> d2 -> up -> [.., e1] -> d3 -> d4 -> out conv.
template <typename S>
class UNet {
 public:
  using MatS = nn::MatT<S>;
  using Block = nn::ConvBlock<S>;

  static constexpr Index kTimeFeatures = 32;

  struct Tape {
    MatS tfeat, t1, temb;
    typename Block::Tape e1, e2, e3, e4, d1, d2, d3, d4;
    MatS out_cols;
    nn::Fmap<S> e1y, e2y, d1y, d2y;
  };

  UNet() : UNet(ArchConfig{}) {}

  explicit UNet(const ArchConfig& arch) : arch_(arch) {
    arch.validate();
    const Index e = arch.temb_dim;
    const int c = arch.image.channels;
    const int g = arch.groups;
    tlin1_ = nn::Linear<S>("temb.lin1", kTimeFeatures, e);
    tlin2_ = nn::Linear<S>("temb.lin2", e, e);
    e1_ = Block("enc1", c, arch.width1, 1, e, g);
    e2_ = Block("enc2", arch.width1, arch.width2, 2, e, g);
    e3_ = Block("enc3", arch.width2, arch.width3, 2, e, g);
    e4_ = Block("enc4", arch.width3, arch.bottleneck, 1, e, g);
    d1_ = Block("dec1", arch.bottleneck, arch.width2, 1, e, g);
    d2_ = Block("dec2", 2 * arch.width2, arch.width1 * 2, 1, e, g);
    d3_ = Block("dec3", arch.width1 * 2 + arch.width1, arch.width1 * 2, 1, e, g);
    d4_ = Block("dec4", arch.width1 * 2, arch.width1 * 2, 1, e, g);
    out_w_ = {"out.conv.weight", MatS::Zero(c, 9 * arch.width1 * 2), {}};
    out_b_ = {"out.conv.bias", MatS::Zero(c, 1), {}};
  }

  const ArchConfig& arch() const { return arch_; }
  ImageShape shape() const { return arch_.image; }
  Index x_dim() const { return arch_.image.size(); }
  Index h_dim() const { return arch_.bottleneck; }

  /// Parameters in checkpoint order.
  std::vector<nn::Param<S>*> params() {
    std::vector<nn::Param<S>*> out{&tlin1_.weight, &tlin1_.bias, &tlin2_.weight, &tlin2_.bias};
    for (Block* b : blocks()) {
      out.push_back(&b->weight);
      out.push_back(&b->bias);
      out.push_back(&b->film.weight);
      out.push_back(&b->film.bias);
    }
    out.push_back(&out_w_);
    out.push_back(&out_b_);
    return out;
  }

  std::vector<const nn::Param<S>*> params() const {
    auto mut = const_cast<UNet*>(this)->params();
    return {mut.begin(), mut.end()};
  }

  void init_random(Rng& rng) {
    std::normal_distribution<double> n01(0.0, 1.0);
    auto fill = [&](MatS& m, double stddev) {
      for (Index i = 0; i < m.size(); ++i) m.data()[i] = S(n01(rng) * stddev);
    };
    fill(tlin1_.weight.value, std::sqrt(1.0 / kTimeFeatures));
    fill(tlin2_.weight.value, std::sqrt(1.0 / arch_.temb_dim));
    for (Block* b : blocks()) {
      fill(b->weight.value, std::sqrt(2.0 / (9.0 * b->cin)));
      fill(b->film.weight.value, 0.1 * std::sqrt(1.0 / arch_.temb_dim));
    }
    fill(out_w_.value, 0.1 * std::sqrt(1.0 / (9.0 * arch_.width1 * 2)));
  }

  template <typename T>
  UNet<T> cast() const {
    UNet<T> out(arch_);
    auto src = params();
    auto dst = out.params();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value.template cast<T>();
    return out;
  }

  /// Forward pass on a batch: x is (x_dim x batch), one timestep per column.
  /// Returns the predicted noise with the same layout.
  MatS forward(const MatS& x, const std::vector<int>& t, Tape& tape) const {
    const int batch = int(x.cols());
    time_embedding(t, tape);
    nn::Fmap<S> in = to_fmap(x);
    tape.e1y = e1_.forward(in, tape.temb, tape.e1);
    tape.e2y = e2_.forward(tape.e1y, tape.temb, tape.e2);
    nn::Fmap<S> e3y = e3_.forward(tape.e2y, tape.temb, tape.e3);
    nn::Fmap<S> e4y = e4_.forward(e3y, tape.temb, tape.e4);
    tape.d1y = d1_.forward(e4y, tape.temb, tape.d1);
    nn::Fmap<S> up1 = nn::upsample2(tape.d1y);
    nn::Fmap<S> cat1{MatS(up1.channels() + tape.e2y.channels(), up1.data.cols()), batch, up1.height, up1.width};
    cat1.data << up1.data, tape.e2y.data;
    tape.d2y = d2_.forward(cat1, tape.temb, tape.d2);
    nn::Fmap<S> up2 = nn::upsample2(tape.d2y);
    nn::Fmap<S> cat2{MatS(up2.channels() + tape.e1y.channels(), up2.data.cols()), batch, up2.height, up2.width};
    cat2.data << up2.data, tape.e1y.data;
    nn::Fmap<S> d3y = d3_.forward(cat2, tape.temb, tape.d3);
    nn::Fmap<S> d4y = d4_.forward(d3y, tape.temb, tape.d4);
    tape.out_cols = nn::im2col(d4y, 1, d4y.height, d4y.width);
    MatS out = (out_w_.value * tape.out_cols).colwise() + out_b_.value.col(0);
    return from_fmap(out, batch);
  }

  MatS forward(const MatS& x, const std::vector<int>& t) const {
    Tape tape;
    return forward(x, t, tape);
  }

  /// Backpropagates dL/d(eps) through the tape, accumulating parameter grads.
  void backward(const Tape& tape, const MatS& deps) {
    const int batch = int(deps.cols());
    const ImageShape& im = arch_.image;
    MatS dtemb = MatS::Zero(tape.temb.rows(), tape.temb.cols());
    const MatS dout = to_fmap(deps).data;
    out_w_.grad.noalias() += dout * tape.out_cols.transpose();
    out_b_.grad += dout.rowwise().sum();
    MatS dd4 = nn::col2im<S>(out_w_.value.transpose() * dout, d4_.cout, batch, im.height, im.width, 1,
                             im.height, im.width);
    MatS dd3 = d4_.backward(tape.d4, dd4, tape.temb, dtemb);
    MatS dcat2 = d3_.backward(tape.d3, dd3, tape.temb, dtemb);
    const Index up2_rows = d2_.cout;
    MatS dd2 = nn::upsample2_adjoint<S>(dcat2.topRows(up2_rows), batch, tape.d2y.height, tape.d2y.width);
    MatS de1_skip = dcat2.bottomRows(dcat2.rows() - up2_rows);
    MatS dcat1 = d2_.backward(tape.d2, dd2, tape.temb, dtemb);
    const Index up1_rows = d1_.cout;
    MatS dd1 = nn::upsample2_adjoint<S>(dcat1.topRows(up1_rows), batch, tape.d1y.height, tape.d1y.width);
    MatS de2_skip = dcat1.bottomRows(dcat1.rows() - up1_rows);
    MatS de4 = d1_.backward(tape.d1, dd1, tape.temb, dtemb);
    MatS de3 = e4_.backward(tape.e4, de4, tape.temb, dtemb);
    MatS de2 = e3_.backward(tape.e3, de3, tape.temb, dtemb);
    de2 += de2_skip;
    MatS de1 = e2_.backward(tape.e2, de2, tape.temb, dtemb);
    de1 += de1_skip;
    (void)e1_.backward(tape.e1, de1, tape.temb, dtemb);
    // temb = silu(lin2(silu(lin1(features))))
    MatS pre2 = tlin2_.forward(tape.t1.unaryExpr([](S v) { return nn::silu(v); }));
    MatS dpre2 = dtemb.cwiseProduct(pre2.unaryExpr([](S v) { return nn::silu_grad(v); }));
    const MatS a1 = tape.t1.unaryExpr([](S v) { return nn::silu(v); });
    tlin2_.weight.grad.noalias() += dpre2 * a1.transpose();
    tlin2_.bias.grad += dpre2.rowwise().sum();
    MatS dpre1 = (tlin2_.weight.value.transpose() * dpre2).cwiseProduct(
        tape.t1.unaryExpr([](S v) { return nn::silu_grad(v); }));
    tlin1_.weight.grad.noalias() += dpre1 * tape.tfeat.transpose();
    tlin1_.bias.grad += dpre1.rowwise().sum();
  }

  /// Un-pooled bottleneck feature map of one sample: (C_h x (H/4 * W/4)).
  MatS bottleneck_map(const MatS& x, int t) const {
    Tape tape;
    return encode_tape(x, t, tape);
  }

  /// Sum-pooled bottleneck features, one column per sample.
  MatS encode(const MatS& x, const std::vector<int>& t) const {
    Tape tape;
    time_embedding(t, tape);
    nn::Fmap<S> in = to_fmap(x);
    nn::Fmap<S> y1 = e1_.forward(in, tape.temb, tape.e1);
    nn::Fmap<S> y2 = e2_.forward(y1, tape.temb, tape.e2);
    nn::Fmap<S> y3 = e3_.forward(y2, tape.temb, tape.e3);
    nn::Fmap<S> y4 = e4_.forward(y3, tape.temb, tape.e4);
    return pool(y4);
  }

  /// Exact Jacobian d(encode)/dx at one point: (C_h x x_dim), one reverse pass
  /// per H coordinate, batched.
  MatS encode_jacobian(const MatS& x, int t) const {
    Tape tape;
    const MatS map = encode_tape(x, t, tape);
    const Index ch = map.rows();
    const Index hw = map.cols();
    const int copies = int(ch);
    MatS dy = MatS::Zero(ch, ch * hw);
    for (Index k = 0; k < ch; ++k) dy.row(k).segment(k * hw, hw).setOnes();
    MatS g = e4_.backward_input(tape.e4, dy, copies);
    g = e3_.backward_input(tape.e3, g, copies);
    g = e2_.backward_input(tape.e2, g, copies);
    g = e1_.backward_input(tape.e1, g, copies);
    const ImageShape& im = arch_.image;
    const Index px = Index(im.height) * im.width;
    MatS jac(ch, x_dim());
    for (Index k = 0; k < ch; ++k)
      for (int c = 0; c < im.channels; ++c) jac.row(k).segment(c * px, px) = g.row(c).segment(k * px, px);
    return jac;
  }

 private:
  std::vector<Block*> blocks() { return {&e1_, &e2_, &e3_, &e4_, &d1_, &d2_, &d3_, &d4_}; }

  void time_embedding(const std::vector<int>& t, Tape& tape) const {
    tape.tfeat = nn::timestep_features<S>(t, kTimeFeatures);
    tape.t1 = tlin1_.forward(tape.tfeat);
    tape.temb = tlin2_.forward(tape.t1.unaryExpr([](S v) { return nn::silu(v); }))
                    .unaryExpr([](S v) { return nn::silu(v); });
  }

  MatS encode_tape(const MatS& x, int t, Tape& tape) const {
    time_embedding({t}, tape);
    nn::Fmap<S> in = to_fmap(x);
    nn::Fmap<S> y1 = e1_.forward(in, tape.temb, tape.e1);
    nn::Fmap<S> y2 = e2_.forward(y1, tape.temb, tape.e2);
    nn::Fmap<S> y3 = e3_.forward(y2, tape.temb, tape.e3);
    return e4_.forward(y3, tape.temb, tape.e4).data;
  }

  static MatS pool(const nn::Fmap<S>& f) {
    const Index hw = f.pixels();
    MatS h(f.channels(), f.batch);
    for (int b = 0; b < f.batch; ++b) h.col(b) = f.data.middleCols(b * hw, hw).rowwise().sum();
    return h;
  }

  nn::Fmap<S> to_fmap(const MatS& x) const {
    const ImageShape& im = arch_.image;
    require(x.rows() == im.size(), ErrorKind::dimension_mismatch, "input does not match the model image shape");
    const Index px = Index(im.height) * im.width;
    nn::Fmap<S> f{MatS(im.channels, px * x.cols()), int(x.cols()), im.height, im.width};
    for (Index b = 0; b < x.cols(); ++b)
      for (int c = 0; c < im.channels; ++c) f.data.row(c).segment(b * px, px) = x.col(b).segment(c * px, px).transpose();
    return f;
  }

  MatS from_fmap(const MatS& data, int batch) const {
    const ImageShape& im = arch_.image;
    const Index px = Index(im.height) * im.width;
    MatS x(im.size(), batch);
    for (int b = 0; b < batch; ++b)
      for (int c = 0; c < im.channels; ++c) x.col(b).segment(c * px, px) = data.row(c).segment(b * px, px).transpose();
    return x;
  }

  ArchConfig arch_;
  nn::Linear<S> tlin1_, tlin2_;
  Block e1_, e2_, e3_, e4_, d1_, d2_, d3_, d4_;
  nn::Param<S> out_w_, out_b_;
};

}  // namespace semdir
