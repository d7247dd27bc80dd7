#pragma once

#include <array>
#include <string>
#include <numbers>
#include <utility>

namespace panoswin {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kHalfPi = std::numbers::pi / 2.0;

/// Longitude/latitude pair in radians.
///
/// u lies in [-pi, pi), v in [-pi/2, pi/2]. The north pole sits at v = -pi/2,
/// which is also the top row of an equirectangular image.
struct LonLat {
  double u = 0.0;
  double v = 0.0;

  /// Wraps u into [-pi, pi) and clamps v into [-pi/2, pi/2].
  static LonLat normalized(double u, double v);
};

/// North pole of the panorama.
inline constexpr LonLat kNorthPole{0.0, -kHalfPi};
inline constexpr LonLat kSouthPole{0.0, kHalfPi};

struct Cart3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend Cart3 operator+(const Cart3& a, const Cart3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Cart3 operator-(const Cart3& a, const Cart3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Cart3 operator*(double s, const Cart3& a) { return {s * a.x, s * a.y, s * a.z}; }
};

double dot(const Cart3& a, const Cart3& b);
Cart3 cross(const Cart3& a, const Cart3& b);
double norm(const Cart3& a);

/// Proper rotation stored row-major.
struct Rotation3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Rotation3 identity() { return {}; }
  /// Right-handed rotation by `angle` about `axis` (need not be unit length).
  static Rotation3 axis_angle(const Cart3& axis, double angle);

  double operator()(int r, int c) const { return m[static_cast<std::size_t>(3 * r + c)]; }
  Cart3 apply(const Cart3& p) const;
  Cart3 apply_transpose(const Cart3& p) const;
  Rotation3 transpose() const;
  Rotation3 operator*(const Rotation3& rhs) const;
  double determinant() const;
  /// Largest |(m^T m - I)_ij|.
  double orthogonality_error() const;
};

/// Radians from text: a plain number, or a multiple of pi such as "0.3pi",
/// "-pi" or "pi/2". Throws std::invalid_argument otherwise.
double parse_angle(const std::string& text);

/// Wraps an angle into [-pi, pi).
double wrap_angle(double a);

/// Unit vector of a lon/lat: (sin u cos v, cos u cos v, -sin v).
Cart3 sph(const LonLat& p);

struct SphInverse {
  LonLat coord;
  /// True when the input norm deviated from 1 by more than 1e-6.
  bool renormalized = false;
};

/// Inverse of sph(). Non-unit input is normalized first. Longitude at either
/// pole is canonicalized to 0 and u = pi is reported as -pi.
SphInverse sph_inv_checked(const Cart3& c);
LonLat sph_inv(const Cart3& c);

/// Great-circle arc length in [0, pi], computed from the chord.
double angular_distance(const LonLat& a, const LonLat& b);

/// Angle from x1 to x2 in (-pi, pi]; positive when (x1 x x2) points along x3.
/// Parallel or zero-length inputs give 0.
double signed_angle(const Cart3& x1, const Cart3& x2, const Cart3& x3);

/// Panoramic rotation R(P, P1): p1 becomes the new north pole.
///
/// Latitude follows the chord formula; longitude is the angle of the great
/// circle through p and p1 measured from the great circle through the old
/// pole and p1, counterclockwise toward (sph(P0) x sph(p1)) x sph(p1).
/// Degenerate longitudes (p coincident with or antipodal to p1) are 0.
LonLat rotate_coord(const LonLat& p, const LonLat& p1);

/// Rigid rotation m with m * sph(P0) = sph(p1) whose inverse reproduces
/// rotate_coord exactly: rotate_coord(p, p1) == sph_inv(m^T * sph(p)).
///
/// Equals the minimal rotation composed with a roll of -(u1 + pi) about the
/// pole. p1 at the north pole gives the identity; at the south pole, a half
/// turn about the x-axis.
Rotation3 rotation_taking_pole_to(const LonLat& p1);

/// Smallest-angle rotation about sph(P0) x sph(p1) taking P0 to p1.
Rotation3 minimal_rotation_taking_pole_to(const LonLat& p1);

/// Rotation about the polar axis; in lon/lat terms it maps u to u - angle.
Rotation3 yaw_rotation(double angle);

/// sph_inv(m^T * sph(p)), the coordinate-level action used by map rotation.
LonLat apply_inverse(const Rotation3& m, const LonLat& p);

}  // namespace panoswin
