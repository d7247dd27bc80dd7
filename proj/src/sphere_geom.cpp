#include "panoswin/sphere_geom.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace panoswin {

namespace {

constexpr double kDegenerate = 1e-15;

bool is_north_pole(const LonLat& p) { return p.v <= -kHalfPi + 1e-15; }
bool is_south_pole(const LonLat& p) { return p.v >= kHalfPi - 1e-15; }

}  // namespace

double parse_angle(const std::string& text) {
  const auto fail = [&] { return std::invalid_argument("bad angle '" + text + "' (expected e.g. 1.2, 0.3pi, -pi or pi/2)"); };
  const auto at = text.find("pi");
  std::size_t used = 0;
  double value = 0.0;
  try {
    if (at == std::string::npos) {
      value = std::stod(text, &used);
      if (used != text.size()) throw fail();
      return value;
    }
    const std::string head = text.substr(0, at), tail = text.substr(at + 2);
    double factor = 1.0;
    if (head == "-") {
      factor = -1.0;
    } else if (!head.empty() && head != "+") {
      factor = std::stod(head, &used);
      if (used != head.size()) throw fail();
    }
    double divisor = 1.0;
    if (!tail.empty()) {
      if (tail[0] != '/') throw fail();
      divisor = std::stod(tail.substr(1), &used);
      if (used != tail.size() - 1 || divisor == 0.0) throw fail();
    }
    return factor * kPi / divisor;
  } catch (const std::out_of_range&) {
    throw fail();
  } catch (const std::invalid_argument&) {
    throw fail();
  }
}

double wrap_angle(double a) {
  if (a >= -kPi && a < kPi) return a;
  double w = std::fmod(a + kPi, 2.0 * kPi);
  if (w < 0.0) w += 2.0 * kPi;
  w -= kPi;
  // fmod can land exactly on +pi after the shift.
  return w >= kPi ? -kPi : w;
}

LonLat LonLat::normalized(double u, double v) {
  return {wrap_angle(u), std::clamp(v, -kHalfPi, kHalfPi)};
}

double dot(const Cart3& a, const Cart3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

Cart3 cross(const Cart3& a, const Cart3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

double norm(const Cart3& a) { return std::sqrt(dot(a, a)); }

Rotation3 Rotation3::axis_angle(const Cart3& axis, double angle) {
  const double n = norm(axis);
  if (n == 0.0) return identity();
  const double x = axis.x / n, y = axis.y / n, z = axis.z / n;
  const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
  Rotation3 r;
  r.m = {t * x * x + c,     t * x * y - s * z, t * x * z + s * y,
         t * x * y + s * z, t * y * y + c,     t * y * z - s * x,
         t * x * z - s * y, t * y * z + s * x, t * z * z + c};
  return r;
}

Cart3 Rotation3::apply(const Cart3& p) const {
  return {m[0] * p.x + m[1] * p.y + m[2] * p.z,
          m[3] * p.x + m[4] * p.y + m[5] * p.z,
          m[6] * p.x + m[7] * p.y + m[8] * p.z};
}

Cart3 Rotation3::apply_transpose(const Cart3& p) const {
  return {m[0] * p.x + m[3] * p.y + m[6] * p.z,
          m[1] * p.x + m[4] * p.y + m[7] * p.z,
          m[2] * p.x + m[5] * p.y + m[8] * p.z};
}

Rotation3 Rotation3::transpose() const {
  Rotation3 r;
  r.m = {m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]};
  return r;
}

Rotation3 Rotation3::operator*(const Rotation3& rhs) const {
  Rotation3 r;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += (*this)(i, k) * rhs(k, j);
      r.m[static_cast<std::size_t>(3 * i + j)] = acc;
    }
  }
  return r;
}

double Rotation3::determinant() const {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

double Rotation3::orthogonality_error() const {
  const Rotation3 p = transpose() * (*this);
  double worst = 0.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      worst = std::max(worst, std::abs(p(i, j) - (i == j ? 1.0 : 0.0)));
    }
  }
  return worst;
}

Cart3 sph(const LonLat& p) {
  const double cv = std::cos(p.v);
  return {std::sin(p.u) * cv, std::cos(p.u) * cv, -std::sin(p.v)};
}

SphInverse sph_inv_checked(const Cart3& c) {
  const double n = norm(c);
  SphInverse out;
  out.renormalized = std::abs(n - 1.0) > 1e-6;
  if (n == 0.0) {
    out.coord = {0.0, 0.0};
    return out;
  }
  const Cart3 q = (1.0 / n) * c;
  const double horiz = std::hypot(q.x, q.y);
  // atan2 on the horizontal radius keeps latitude accurate near the poles.
  const double v = std::atan2(-q.z, horiz);
  double u = horiz < kDegenerate ? 0.0 : std::atan2(q.x, q.y);
  out.coord = {wrap_angle(u), v};
  return out;
}

LonLat sph_inv(const Cart3& c) { return sph_inv_checked(c).coord; }

double angular_distance(const LonLat& a, const LonLat& b) {
  const double chord = norm(sph(a) - sph(b));
  return 2.0 * std::asin(std::min(1.0, 0.5 * chord));
}

double signed_angle(const Cart3& x1, const Cart3& x2, const Cart3& x3) {
  const double n1 = norm(x1), n2 = norm(x2);
  if (n1 == 0.0 || n2 == 0.0) return 0.0;
  const Cart3 c = cross(x1, x2);
  const double cn = norm(c);
  const double cosine = std::clamp(dot(x1, x2) / (n1 * n2), -1.0, 1.0);
  if (cn <= kDegenerate * n1 * n2) return cosine > 0.0 ? 0.0 : kPi;
  const double angle = std::acos(cosine);
  return dot(c, x3) < 0.0 ? -angle : angle;
}

LonLat rotate_coord(const LonLat& p, const LonLat& p1) {
  if (is_north_pole(p1)) return LonLat::normalized(p.u, p.v);
  if (is_south_pole(p1)) return apply_inverse(rotation_taking_pole_to(p1), p);

  const Cart3 s = sph(p);
  const Cart3 n1 = sph(p1);
  const double chord = norm(s - n1);
  const double v = 2.0 * std::asin(std::min(1.0, 0.5 * chord)) - kHalfPi;

  const Cart3 x1 = cross(s, n1);
  const Cart3 x2 = cross(sph(kNorthPole), n1);
  const Cart3 x3 = cross(x2, n1);
  const double n_x1 = norm(x1);
  if (n_x1 < 1e-12) return {0.0, std::clamp(v, -kHalfPi, kHalfPi)};

  // x2 and x3 span the plane orthogonal to p1: x2 is the zero direction and
  // x3 the counterclockwise quarter turn. Arc cosine gives the magnitude, the
  // side of x3 the sign.
  const double cosine = std::clamp(dot(x1, x2) / (n_x1 * norm(x2)), -1.0, 1.0);
  double u = std::acos(cosine);
  if (dot(x1, x3) < 0.0) u = -u;
  return LonLat::normalized(u, v);
}

Rotation3 minimal_rotation_taking_pole_to(const LonLat& p1) {
  if (is_north_pole(p1)) return Rotation3::identity();
  if (is_south_pole(p1)) return Rotation3::axis_angle({1.0, 0.0, 0.0}, kPi);
  const Cart3 pole = sph(kNorthPole);
  const Cart3 target = sph(p1);
  const double angle = std::acos(std::clamp(dot(pole, target), -1.0, 1.0));
  return Rotation3::axis_angle(cross(pole, target), angle);
}

Rotation3 yaw_rotation(double angle) { return Rotation3::axis_angle({0.0, 0.0, 1.0}, angle); }

Rotation3 rotation_taking_pole_to(const LonLat& p1) {
  if (is_north_pole(p1) || is_south_pole(p1)) return minimal_rotation_taking_pole_to(p1);
  return minimal_rotation_taking_pole_to(p1) * yaw_rotation(-(p1.u + kPi));
}

LonLat apply_inverse(const Rotation3& m, const LonLat& p) { return sph_inv(m.apply_transpose(sph(p))); }

}  // namespace panoswin
