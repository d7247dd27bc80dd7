#include "panoswin/equirect.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <thread>

namespace panoswin {

namespace {

double snap(double x) {
  const double r = std::nearbyint(x);
  return std::abs(x - r) < 1e-9 ? r : x;
}

void require_standard(const EquirectMap& map, const char* op) {
  if (!map.non_standard && map.w() != 2 * map.h()) {
    throw std::invalid_argument(std::string(op) + ": map is " + std::to_string(map.h()) + "x" + std::to_string(map.w()) +
                                " but not flagged non-standard");
  }
}

// Runs body(begin, end) over [0, n) split into contiguous chunks.
template <class F>
void parallel_rows(std::size_t n, std::size_t threads, F&& body) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    body(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t b = t * chunk, e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&, b, e] { body(b, e); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

EquirectMap::EquirectMap(Tensor t, bool non_standard_extents) : data(std::move(t)), non_standard(non_standard_extents) {
  if (data.rank() != 3) throw ShapeError("EquirectMap: expected [c, h, w], got " + shape_str(data.shape()));
  if (!non_standard && w() != 2 * h()) {
    throw ShapeError("EquirectMap: w must equal 2h for a standard map, got " + shape_str(data.shape()));
  }
}

EquirectMap EquirectMap::zeros(std::size_t c, std::size_t h, std::size_t w, bool non_standard_extents) {
  return EquirectMap(Tensor::zeros({c, h, w}), non_standard_extents);
}

EquirectMap EquirectMap::from_image(const Image& img, bool non_standard_extents) {
  return EquirectMap(Tensor::from({img.c, img.h, img.w}, img.px), non_standard_extents);
}

Image EquirectMap::to_image() const {
  Image img(c(), h(), w());
  std::copy(data.values().begin(), data.values().end(), img.px.begin());
  return img;
}

LonLat pixel_lonlat(double row, double col, std::size_t h, std::size_t w) {
  return {-kPi + 2.0 * kPi * (col + 0.5) / static_cast<double>(w), -kHalfPi + kPi * (row + 0.5) / static_cast<double>(h)};
}

std::pair<double, double> lonlat_pixel(const LonLat& p, std::size_t h, std::size_t w) {
  return {(p.v + kHalfPi) / kPi * static_cast<double>(h) - 0.5, (p.u + kPi) / (2.0 * kPi) * static_cast<double>(w) - 0.5};
}

SampleGrid SampleGrid::identity(std::size_t h, std::size_t w) {
  SampleGrid g;
  g.out_h = h;
  g.out_w = w;
  g.rows.resize(h * w);
  g.cols.resize(h * w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t k = 0; k < w; ++k) {
      g.rows[r * w + k] = static_cast<double>(r);
      g.cols[r * w + k] = static_cast<double>(k);
    }
  }
  return g;
}

SampleTaps compile_grid(const SampleGrid& grid, std::size_t src_h, std::size_t src_w) {
  const std::size_t n = grid.out_h * grid.out_w;
  if (grid.rows.size() != n || grid.cols.size() != n) {
    throw std::invalid_argument("compile_grid: coordinate arrays do not match " + std::to_string(grid.out_h) + "x" +
                                std::to_string(grid.out_w));
  }
  if (src_h == 0 || src_w == 0) throw std::invalid_argument("compile_grid: empty source");
  const auto H = static_cast<long long>(src_h);
  const auto W = static_cast<long long>(src_w);

  SampleTaps taps;
  taps.in_size = src_h * src_w;
  taps.taps = 4;
  taps.index.assign(4 * n, 0);
  taps.weight.assign(4 * n, 0.0);

  // Resolves an integer (row, col) to a flat source index, or -1 for a zero read.
  auto resolve = [&](long long r, long long k) -> long long {
    if (grid.edge == EdgePolicy::kZero) {
      if (r < 0 || r >= H || k < 0 || k >= W) return -1;
      return r * W + k;
    }
    while (r < 0 || r >= H) {
      r = r < 0 ? -1 - r : 2 * H - 1 - r;
      k += W / 2;
    }
    k %= W;
    if (k < 0) k += W;
    return r * W + k;
  };

  for (std::size_t j = 0; j < n; ++j) {
    const double row = snap(grid.rows[j]);
    const double col = snap(grid.cols[j]);
    if (!std::isfinite(row) || !std::isfinite(col)) throw std::invalid_argument("compile_grid: non-finite coordinate");
    const double r0 = std::floor(row), k0 = std::floor(col);
    const double fr = row - r0, fk = col - k0;
    const long long ri = static_cast<long long>(r0), ki = static_cast<long long>(k0);
    const long long cand_r[4] = {ri, ri, ri + 1, ri + 1};
    const long long cand_k[4] = {ki, ki + 1, ki, ki + 1};
    const double wts[4] = {(1.0 - fr) * (1.0 - fk), (1.0 - fr) * fk, fr * (1.0 - fk), fr * fk};
    for (int t = 0; t < 4; ++t) {
      if (wts[t] == 0.0) continue;
      const long long idx = resolve(cand_r[t], cand_k[t]);
      if (idx < 0) continue;
      taps.index[4 * j + t] = static_cast<std::uint32_t>(idx);
      taps.weight[4 * j + t] = wts[t];
    }
  }
  return taps;
}

EquirectMap sample_bilinear(const EquirectMap& map, const SampleGrid& grid) {
  const SampleTaps taps = compile_grid(grid, map.h(), map.w());
  Tensor flat = ops::reshape(map.data, {map.c(), map.h() * map.w()});
  Tensor out = ops::resample(flat, 1, taps);
  return EquirectMap(ops::reshape(out, {map.c(), grid.out_h, grid.out_w}), grid.out_w != 2 * grid.out_h);
}

SampleGrid rotation_grid(std::size_t h, std::size_t w, const Rotation3& m, std::size_t threads) {
  SampleGrid g;
  g.out_h = h;
  g.out_w = w;
  g.rows.resize(h * w);
  g.cols.resize(h * w);
  parallel_rows(h, threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t r = b; r < e; ++r) {
      for (std::size_t k = 0; k < w; ++k) {
        const LonLat src = sph_inv(m.apply(sph(pixel_lonlat(static_cast<double>(r), static_cast<double>(k), h, w))));
        const auto [row, col] = lonlat_pixel(src, h, w);
        g.rows[r * w + k] = row;
        g.cols[r * w + k] = col;
      }
    }
  });
  return g;
}

EquirectMap rotate_map(const EquirectMap& map, const LonLat& p1, std::size_t threads) {
  return rotate_map(map, rotation_taking_pole_to(p1), threads);
}

EquirectMap rotate_map(const EquirectMap& map, const Rotation3& m, std::size_t threads) {
  require_standard(map, "rotate_map");
  const SampleGrid grid = rotation_grid(map.h(), map.w(), m, threads);
  if (threads <= 1 || map.data.requires_grad()) return sample_bilinear(map, grid);

  // Value-only fast path: gather per row range on worker threads.
  const SampleTaps taps = compile_grid(grid, map.h(), map.w());
  const std::size_t plane = map.h() * map.w();
  std::vector<double> out(map.c() * plane, 0.0);
  const auto src = map.data.values();
  parallel_rows(plane, threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t ch = 0; ch < map.c(); ++ch) {
      const double* s = src.data() + ch * plane;
      double* o = out.data() + ch * plane;
      for (std::size_t j = b; j < e; ++j) {
        double acc = 0.0;
        for (std::size_t t = 0; t < 4; ++t) acc += taps.weight[4 * j + t] * s[taps.index[4 * j + t]];
        o[j] = acc;
      }
    }
  });
  return EquirectMap(Tensor::from({map.c(), map.h(), map.w()}, std::move(out)), map.non_standard);
}

EquirectMap project_perspective_to_equirect(const Image& img, double fov, const LonLat& center, std::size_t out_h,
                                            std::size_t out_w, std::size_t supersample) {
  if (!(fov > 0.0 && fov < kPi)) throw std::invalid_argument("project_perspective_to_equirect: fov must lie in (0, pi)");
  if (supersample == 0) throw std::invalid_argument("project_perspective_to_equirect: supersample must be >= 1");
  const std::size_t hh = out_h * supersample, ww = out_w * supersample;

  const Cart3 f = sph(center);
  const Cart3 eu{std::cos(center.u), -std::sin(center.u), 0.0};
  const Cart3 ev{-std::sin(center.u) * std::sin(center.v), -std::cos(center.u) * std::sin(center.v), -std::cos(center.v)};
  const double t = std::tan(0.5 * fov);

  SampleGrid g;
  g.out_h = hh;
  g.out_w = ww;
  g.edge = EdgePolicy::kZero;
  g.rows.resize(hh * ww);
  g.cols.resize(hh * ww);
  // Points behind the tangent plane read far outside the image.
  constexpr double kOutside = -1e6;
  for (std::size_t r = 0; r < hh; ++r) {
    for (std::size_t k = 0; k < ww; ++k) {
      const Cart3 d = sph(pixel_lonlat(static_cast<double>(r), static_cast<double>(k), hh, ww));
      const double z = dot(d, f);
      double row = kOutside, col = kOutside;
      if (z > 1e-12) {
        const double x = dot(d, eu) / z, y = dot(d, ev) / z;
        col = (x / t + 1.0) * 0.5 * static_cast<double>(img.w) - 0.5;
        row = (y / t + 1.0) * 0.5 * static_cast<double>(img.h) - 0.5;
        if (std::abs(col) > 1e6 || std::abs(row) > 1e6) row = col = kOutside;
      }
      g.rows[r * ww + k] = row;
      g.cols[r * ww + k] = col;
    }
  }
  const SampleTaps taps = compile_grid(g, img.h, img.w);
  const std::size_t src_plane = img.h * img.w;

  EquirectMap out = EquirectMap::zeros(img.c, out_h, out_w, out_w != 2 * out_h);
  auto dst = out.data.mutable_values();
  const double inv = 1.0 / static_cast<double>(supersample * supersample);
  for (std::size_t ch = 0; ch < img.c; ++ch) {
    const double* s = img.px.data() + ch * src_plane;
    for (std::size_t r = 0; r < hh; ++r) {
      for (std::size_t k = 0; k < ww; ++k) {
        const std::size_t j = r * ww + k;
        double acc = 0.0;
        for (std::size_t q = 0; q < 4; ++q) acc += taps.weight[4 * j + q] * s[taps.index[4 * j + q]];
        dst[(ch * out_h + r / supersample) * out_w + k / supersample] += acc * inv;
      }
    }
  }
  return out;
}

std::uint64_t count_rotation_flops(std::size_t h) {
  if (h == 0) throw std::invalid_argument("count_rotation_flops: h must be positive");
  return 2 * kRotationFlopConstant * static_cast<std::uint64_t>(h) * static_cast<std::uint64_t>(h);
}

std::vector<bool> latitude_row_mask(std::size_t h, double max_abs_v) {
  std::vector<bool> mask(h);
  for (std::size_t r = 0; r < h; ++r) mask[r] = std::abs(pixel_lonlat(static_cast<double>(r), 0.0, h, 2 * h).v) < max_abs_v;
  return mask;
}

}  // namespace panoswin
