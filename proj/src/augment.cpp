#include "panoswin/augment.hpp"

#include <algorithm>
#include <cmath>

namespace panoswin {

PlanarAug PlanarAug::draw(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PlanarAug a;
  a.scale = 1.0 + 0.2 * u(rng);
  a.angle = u(rng) * kPi / 12.0;
  a.crop_area = 0.9 + 0.1 * u(rng);
  a.crop_x = u(rng);
  a.crop_y = u(rng);
  return a;
}

bool PlanarAug::is_identity() const { return scale == 1.0 && angle == 0.0 && crop_area == 1.0; }

EquirectMap apply_planar(const EquirectMap& img, const PlanarAug& a) {
  const std::size_t h = img.h(), w = img.w();
  const double side = std::sqrt(a.crop_area);
  const double ox = 0.5 * (1.0 - side) * a.crop_x, oy = 0.5 * (1.0 - side) * a.crop_y;
  const double c = std::cos(a.angle), s = std::sin(a.angle);
  SampleGrid g;
  g.out_h = h;
  g.out_w = w;
  g.edge = EdgePolicy::kZero;
  g.rows.resize(h * w);
  g.cols.resize(h * w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t k = 0; k < w; ++k) {
      // Offset from the frame centre in pixels, after cropping.
      const double x = (ox + side * ((k + 0.5) / w - 0.5)) * w;
      const double y = (oy + side * ((r + 0.5) / h - 0.5)) * h;
      g.cols[r * w + k] = (c * x + s * y) / a.scale + 0.5 * w - 0.5;
      g.rows[r * w + k] = (-s * x + c * y) / a.scale + 0.5 * h - 0.5;
    }
  }
  EquirectMap out = sample_bilinear(img, g);
  out.non_standard = img.non_standard;
  return out;
}

EquirectMap augment_planar(const EquirectMap& img, std::mt19937_64& rng) { return apply_planar(img, PlanarAug::draw(rng)); }

PanoAug PanoAug::draw(std::mt19937_64& rng, double rotate_prob) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PanoAug a;
  a.rotate = unit(rng) < rotate_prob;
  // Area-uniform target for the pole.
  const double lon = -kPi + 2.0 * kPi * unit(rng);
  const double lat = std::asin(std::clamp(2.0 * unit(rng) - 1.0, -1.0, 1.0));
  if (a.rotate) a.p1 = {lon, lat};
  a.flip = unit(rng) < 0.5;
  a.brightness = 0.1 * (2.0 * unit(rng) - 1.0);
  a.contrast = 0.8 + 0.4 * unit(rng);
  return a;
}

EquirectMap flip_horizontal(const EquirectMap& img) {
  const std::size_t c = img.c(), h = img.h(), w = img.w();
  std::vector<double> v(img.data.size());
  const auto src = img.data.values();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t r = 0; r < h; ++r) {
      const double* row = src.data() + (ch * h + r) * w;
      double* dst = v.data() + (ch * h + r) * w;
      for (std::size_t k = 0; k < w; ++k) dst[k] = row[w - 1 - k];
    }
  }
  return EquirectMap(Tensor::from(img.data.shape(), std::move(v)), img.non_standard);
}

EquirectMap apply_pano(const EquirectMap& img, const PanoAug& a) {
  EquirectMap out = a.rotate ? rotate_map(img, a.p1) : img;
  if (a.flip) out = flip_horizontal(out);
  if (a.brightness == 0.0 && a.contrast == 1.0) return out;
  const auto src = out.data.values();
  double mean = 0.0;
  for (double x : src) mean += x;
  mean /= static_cast<double>(src.size());
  std::vector<double> v(src.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::clamp(a.contrast * (src[i] - mean) + mean + a.brightness, 0.0, 1.0);
  return EquirectMap(Tensor::from(out.data.shape(), std::move(v)), out.non_standard);
}

EquirectMap augment_pano(const EquirectMap& img, std::mt19937_64& rng, double rotate_prob) {
  return apply_pano(img, PanoAug::draw(rng, rotate_prob));
}

}  // namespace panoswin
