#pragma once

// Procedural "blob" images: one soft-edged ellipse on a flat background.
// Each image carries its generating factors so edits can be interpreted.

#include "semdir/core.hpp"

#include <algorithm>
#include <cstdint>
#include <numbers>
#include <vector>

namespace semdir {

struct BlobFactors {
  double cx = 16.0;  // pixels
  double cy = 16.0;
  double radius = 6.0;        // major semi-axis, pixels
  double eccentricity = 1.0;  // minor / major
  double angle = 0.0;         // radians
  double intensity = 0.8;     // foreground level in [-1, 1]
  double background = -0.8;   // background level in [-1, 1]
};

inline BlobFactors random_blob_factors(Rng& rng, const ImageShape& shape) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double h = shape.height;
  const double w = shape.width;
  BlobFactors f;
  f.cx = w * (0.3 + 0.4 * u(rng));
  f.cy = h * (0.3 + 0.4 * u(rng));
  f.radius = std::min(h, w) * (0.09 + 0.2 * u(rng));
  f.eccentricity = 0.45 + 0.55 * u(rng);
  f.angle = std::numbers::pi * u(rng);
  f.background = -1.0 + 0.7 * u(rng);
  f.intensity = std::min(1.0, f.background + 0.7 + 1.0 * u(rng));
  return f;
}

inline Vec render_blob(const BlobFactors& f, const ImageShape& shape) {
  Vec img(shape.size());
  const double ca = std::cos(f.angle);
  const double sa = std::sin(f.angle);
  const double a = f.radius;
  const double b = f.radius * f.eccentricity;
  const Index px = Index(shape.height) * shape.width;
  for (int y = 0; y < shape.height; ++y) {
    for (int x = 0; x < shape.width; ++x) {
      const double dx = x + 0.5 - f.cx;
      const double dy = y + 0.5 - f.cy;
      const double u = (ca * dx + sa * dy) / a;
      const double v = (-sa * dx + ca * dy) / b;
      const double d = std::sqrt(u * u + v * v);
      // ~1 px soft edge
      const double inside = 1.0 / (1.0 + std::exp(-(1.0 - d) * b * 2.0));
      const double value = f.background + (f.intensity - f.background) * inside;
      for (int c = 0; c < shape.channels; ++c) img[c * px + Index(y) * shape.width + x] = value;
    }
  }
  return img;
}

struct BlobDataset {
  ImageShape shape;
  Mat images;  // x_dim x count
  std::vector<BlobFactors> factors;
};

inline BlobDataset make_blobs(Index count, std::uint64_t seed, const ImageShape& shape = {}) {
  Rng rng(seed);
  BlobDataset ds{shape, Mat(shape.size(), count), {}};
  ds.factors.reserve(std::size_t(count));
  for (Index j = 0; j < count; ++j) {
    ds.factors.push_back(random_blob_factors(rng, shape));
    ds.images.col(j) = render_blob(ds.factors.back(), shape);
  }
  return ds;
}

/// Factors recovered from pixels (first channel only).
struct MeasuredBlob {
  double background = 0.0;
  double foreground = 0.0;
  double area = 0.0;  // pixels above the mid level
  double radius = 0.0;  // sqrt(area / pi)
  double mass = 0.0;    // sum of (pixel - background)
  double cx = 0.0;
  double cy = 0.0;
};

inline MeasuredBlob measure_blob(const Vec& img, const ImageShape& shape) {
  MeasuredBlob m;
  const int h = shape.height;
  const int w = shape.width;
  std::vector<double> border;
  for (int x = 0; x < w; ++x) {
    border.push_back(img[x]);
    border.push_back(img[Index(h - 1) * w + x]);
  }
  for (int y = 1; y + 1 < h; ++y) {
    border.push_back(img[Index(y) * w]);
    border.push_back(img[Index(y) * w + w - 1]);
  }
  std::nth_element(border.begin(), border.begin() + border.size() / 2, border.end());
  m.background = border[border.size() / 2];
  m.foreground = img.head(Index(h) * w).maxCoeff();
  const double mid = 0.5 * (m.background + m.foreground);
  double wsum = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double v = img[Index(y) * w + x];
      if (v > mid) m.area += 1.0;
      const double e = std::max(0.0, v - m.background);
      m.mass += v - m.background;
      wsum += e;
      m.cx += e * (x + 0.5);
      m.cy += e * (y + 0.5);
    }
  }
  if (wsum > 0) {
    m.cx /= wsum;
    m.cy /= wsum;
  }
  m.radius = std::sqrt(m.area / std::numbers::pi);
  return m;
}

}  // namespace semdir
