#pragma once

#include <random>

#include "panoswin/equirect.hpp"

namespace panoswin {

/// Planar draw: crop a box covering `crop_area` of the frame at a relative
/// offset, rotate by `angle` and scale by `scale` about the centre, and
/// resample back to the input extents. Outside samples are zero.
struct PlanarAug {
  double scale = 1.0;
  double angle = 0.0;      // radians
  double crop_area = 1.0;  // fraction of the frame kept
  double crop_x = 0.0;     // in [-1, 1]: where the box sits in its slack
  double crop_y = 0.0;

  static PlanarAug draw(std::mt19937_64& rng);
  bool is_identity() const;
};

EquirectMap apply_planar(const EquirectMap& img, const PlanarAug& a);
EquirectMap augment_planar(const EquirectMap& img, std::mt19937_64& rng);

/// Panorama-safe draw: optional rotation taking the north pole to `p1`,
/// optional horizontal mirror, then brightness/contrast about the mean.
struct PanoAug {
  bool rotate = false;
  LonLat p1{0.0, -kHalfPi};
  bool flip = false;
  double brightness = 0.0;
  double contrast = 1.0;

  static PanoAug draw(std::mt19937_64& rng, double rotate_prob = 0.5);
};

EquirectMap apply_pano(const EquirectMap& img, const PanoAug& a);
EquirectMap augment_pano(const EquirectMap& img, std::mt19937_64& rng, double rotate_prob = 0.5);

/// Mirror about the central meridian: column c takes column w - 1 - c.
EquirectMap flip_horizontal(const EquirectMap& img);

}  // namespace panoswin
