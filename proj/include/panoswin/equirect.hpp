#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "panoswin/image_io.hpp"
#include "panoswin/ops.hpp"
#include "panoswin/sphere_geom.hpp"
#include "panoswin/tensor.hpp"

namespace panoswin {

/// Equirectangular map holding a [c, h, w] tensor.
///
/// Pixel (r, k) has latitude v = -pi/2 + pi (r + 0.5) / h and longitude
/// u = -pi + 2 pi (k + 0.5) / w. Maps are 2:1 (w = 2h) unless flagged
/// non-standard.
struct EquirectMap {
  Tensor data;
  bool non_standard = false;

  EquirectMap() = default;
  explicit EquirectMap(Tensor t, bool non_standard_extents = false);

  static EquirectMap zeros(std::size_t c, std::size_t h, std::size_t w, bool non_standard_extents = false);
  static EquirectMap from_image(const Image& img, bool non_standard_extents = false);
  Image to_image() const;

  std::size_t c() const { return data.dim(0); }
  std::size_t h() const { return data.dim(1); }
  std::size_t w() const { return data.dim(2); }
  double at(std::size_t ch, std::size_t r, std::size_t k) const { return data.values()[(ch * h() + r) * w() + k]; }
};

/// Lon/lat at fractional pixel coordinates (row, col) of an h x w map.
LonLat pixel_lonlat(double row, double col, std::size_t h, std::size_t w);
/// Inverse of pixel_lonlat: fractional (row, col).
std::pair<double, double> lonlat_pixel(const LonLat& p, std::size_t h, std::size_t w);

enum class EdgePolicy {
  /// Columns wrap modulo w; rows past a pole reflect back with a half-turn
  /// longitude shift.
  kSphere,
  /// Samples outside the image read 0 (planar images).
  kZero,
};

/// Source (row, col) coordinates per output pixel, row-major over the output.
struct SampleGrid {
  std::size_t out_h = 0;
  std::size_t out_w = 0;
  std::vector<double> rows;
  std::vector<double> cols;
  EdgePolicy edge = EdgePolicy::kSphere;

  static SampleGrid identity(std::size_t h, std::size_t w);
};

/// Compiles a grid against an src_h x src_w source into bilinear taps.
/// Coordinates within 1e-9 of an integer are snapped, so integer grids copy
/// source pixels exactly.
SampleTaps compile_grid(const SampleGrid& grid, std::size_t src_h, std::size_t src_w);

/// Bilinear sampling; differentiable w.r.t. the map values only.
EquirectMap sample_bilinear(const EquirectMap& map, const SampleGrid& grid);

/// Grid realizing the rotation `m` on an h x w map: output pixel P' reads
/// source P = sph_inv(m sph(P')), i.e. P' = sph_inv(m^T sph(P)).
SampleGrid rotation_grid(std::size_t h, std::size_t w, const Rotation3& m, std::size_t threads = 1);

/// Rotates a standard map so that content at P moves to rotate_coord(P, p1).
EquirectMap rotate_map(const EquirectMap& map, const LonLat& p1, std::size_t threads = 1);
EquirectMap rotate_map(const EquirectMap& map, const Rotation3& m, std::size_t threads = 1);

/// Places a planar image on the tangent plane at `center` spanning `fov`
/// radians both ways, then inverse-gnomonic samples it into an out_h x out_w
/// equirect canvas. `supersample` renders at that factor and box-averages
/// down. Pixels outside the field of view are 0.
EquirectMap project_perspective_to_equirect(const Image& img, double fov, const LonLat& center, std::size_t out_h,
                                            std::size_t out_w, std::size_t supersample = 1);

/// Multiplications per output pixel in the rotation lower bound: 3*1 + 2*3 + 6*4 + 8.
inline constexpr std::uint64_t kRotationFlopConstant = 3 * 1 + 2 * 3 + 6 * 4 + 8;

/// 2 K h^2 for an h x 2h map.
std::uint64_t count_rotation_flops(std::size_t h);

/// Rows whose center latitude satisfies |v| < max_abs_v.
std::vector<bool> latitude_row_mask(std::size_t h, double max_abs_v);

}  // namespace panoswin
