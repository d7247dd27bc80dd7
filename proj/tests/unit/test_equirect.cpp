#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "panoswin/equirect.hpp"
#include "panoswin/image_io.hpp"

using namespace panoswin;

namespace {

EquirectMap random_map(std::size_t c, std::size_t h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  EquirectMap m = EquirectMap::zeros(c, h, 2 * h);
  for (double& v : m.data.mutable_values()) v = d(rng);
  return m;
}

// Smooth test scene defined on the sphere itself, so it has no seam or pole artifacts.
EquirectMap smooth_scene(std::size_t h) {
  EquirectMap m = EquirectMap::zeros(1, h, 2 * h);
  auto v = m.data.mutable_values();
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t k = 0; k < 2 * h; ++k) {
      const Cart3 p = sph(pixel_lonlat(static_cast<double>(r), static_cast<double>(k), h, 2 * h));
      v[r * 2 * h + k] = 0.5 + 0.2 * std::sin(3.0 * p.x + 1.0) * std::cos(2.0 * p.y) + 0.15 * p.z * p.x + 0.1 * std::cos(4.0 * p.z);
    }
  }
  return m;
}

double mean_of(const EquirectMap& m) {
  double s = 0.0;
  for (double v : m.data.values()) s += v;
  return s / static_cast<double>(m.data.size());
}

}  // namespace

TEST_CASE("identity grid copies bit-exactly") {
  const EquirectMap m = random_map(2, 6, 1);
  const EquirectMap out = sample_bilinear(m, SampleGrid::identity(6, 12));
  for (std::size_t i = 0; i < m.data.size(); ++i) CHECK(out.data.at(i) == m.data.at(i));
}

TEST_CASE("constant map stays constant under any grid") {
  EquirectMap m = EquirectMap::zeros(1, 5, 10);
  for (double& v : m.data.mutable_values()) v = 0.37;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> d(-7.0, 17.0);
  SampleGrid g;
  g.out_h = 4;
  g.out_w = 9;
  for (int i = 0; i < 36; ++i) {
    g.rows.push_back(d(rng));
    g.cols.push_back(d(rng));
  }
  const EquirectMap out = sample_bilinear(m, g);
  for (double v : out.data.values()) CHECK(std::abs(v - 0.37) < 1e-12);
}

TEST_CASE("column wrap and pole reflection") {
  const EquirectMap m = random_map(1, 6, 3);
  SampleGrid g = SampleGrid::identity(6, 12);
  for (double& c : g.cols) c += 12.0;
  const EquirectMap out = sample_bilinear(m, g);
  for (std::size_t i = 0; i < m.data.size(); ++i) CHECK(std::abs(out.data.at(i) - m.data.at(i)) < 1e-12);

  // Row -1 is row 0 seen across the pole, half a turn away.
  SampleGrid p;
  p.out_h = 1;
  p.out_w = 2;
  p.rows = {-1.0, 6.0};
  p.cols = {2.0, 3.0};
  const EquirectMap q = sample_bilinear(m, p);
  CHECK(q.data.at(0) == m.at(0, 0, 8));
  CHECK(q.data.at(1) == m.at(0, 5, 9));
}

TEST_CASE("sampling is differentiable w.r.t. map values") {
  EquirectMap m = random_map(1, 4, 4);
  m.data.set_requires_grad(true);
  SampleGrid g;
  g.out_h = 1;
  g.out_w = 1;
  g.rows = {0.25};
  g.cols = {7.5};
  ops::sum(sample_bilinear(m, g).data).backward();
  const auto gr = m.data.grad();
  CHECK(gr[0 * 8 + 7] == doctest::Approx(0.375));
  CHECK(gr[0 * 8 + 0] == doctest::Approx(0.375));
  CHECK(gr[1 * 8 + 7] == doctest::Approx(0.125));
  CHECK(gr[1 * 8 + 0] == doctest::Approx(0.125));
}

TEST_CASE("rotate_map toward the north pole is the identity") {
  const EquirectMap m = random_map(3, 16, 5);
  const EquirectMap out = rotate_map(m, kNorthPole);
  for (std::size_t i = 0; i < m.data.size(); ++i) CHECK(out.data.at(i) == m.data.at(i));
}

TEST_CASE("pure yaw equals an integer column roll exactly") {
  const EquirectMap m = random_map(2, 12, 6);
  for (int shift : {1, 5, -3, 24}) {
    const Rotation3 yaw = yaw_rotation(2.0 * kPi * shift / 24.0);
    const EquirectMap out = rotate_map(m, yaw);
    for (std::size_t ch = 0; ch < 2; ++ch) {
      for (std::size_t r = 0; r < 12; ++r) {
        for (std::size_t k = 0; k < 24; ++k) {
          const std::size_t src = static_cast<std::size_t>(((static_cast<int>(k) - shift) % 24 + 24) % 24);
          CHECK(out.at(ch, r, k) == m.at(ch, r, src));
        }
      }
    }
  }
}

TEST_CASE("rotation moves content along rotate_coord") {
  // A narrow bump at P must appear near rotate_coord(P, p1).
  const std::size_t h = 64;
  const LonLat bump{0.7, -0.3};
  const LonLat p1{0.3 * kPi, -0.4 * kPi};
  EquirectMap m = EquirectMap::zeros(1, h, 2 * h);
  auto v = m.data.mutable_values();
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t k = 0; k < 2 * h; ++k) {
      const double d = angular_distance(pixel_lonlat(static_cast<double>(r), static_cast<double>(k), h, 2 * h), bump);
      v[r * 2 * h + k] = std::exp(-d * d / 0.005);
    }
  }
  const EquirectMap out = rotate_map(m, p1);
  std::size_t best = 0;
  for (std::size_t i = 1; i < out.data.size(); ++i) {
    if (out.data.at(i) > out.data.at(best)) best = i;
  }
  const LonLat peak = pixel_lonlat(static_cast<double>(best / (2 * h)), static_cast<double>(best % (2 * h)), h, 2 * h);
  CHECK(angular_distance(peak, rotate_coord(bump, p1)) < 2.0 * kPi / h);
}

TEST_CASE("pitch rotation swaps pole and equator content") {
  const std::size_t h = 32;
  EquirectMap m = EquirectMap::zeros(1, h, 2 * h);
  // Mark the polar cap |v| > 75 deg in the north.
  auto v = m.data.mutable_values();
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t k = 0; k < 2 * h; ++k) v[r * 2 * h + k] = 1.0;
  }
  const EquirectMap out = rotate_map(m, LonLat{0.0, 0.0});
  // The cap now sits on the equator; the old pole lands at (0, 0).
  const auto [row, col] = lonlat_pixel(rotate_coord(kNorthPole, {0.0, 0.0}), h, 2 * h);
  CHECK(out.at(0, static_cast<std::size_t>(std::lround(row)), static_cast<std::size_t>(std::lround(col))) > 0.99);
  double top = 0.0;
  for (std::size_t k = 0; k < 2 * h; ++k) top += out.at(0, 0, k);
  CHECK(top < 1e-9);
}

TEST_CASE("rotation round trip keeps mid latitudes above 35 dB and preserves energy") {
  const std::size_t h = 128;
  const EquirectMap m = smooth_scene(h);
  const Rotation3 rot = rotation_taking_pole_to({0.3 * kPi, -0.4 * kPi});
  const EquirectMap there = rotate_map(m, rot);
  const EquirectMap back = rotate_map(there, rot.transpose());
  const double db = psnr(m.to_image(), back.to_image(), latitude_row_mask(h, kPi / 3.0));
  MESSAGE("round-trip PSNR " << db << " dB");
  CHECK(db > 35.0);
  CHECK(std::abs(mean_of(there) - mean_of(m)) < 0.02 * mean_of(m));
}

TEST_CASE("threaded rotation matches the serial result") {
  const EquirectMap m = random_map(3, 32, 7);
  const LonLat p1{0.4, 0.2};
  const EquirectMap a = rotate_map(m, p1, 1), b = rotate_map(m, p1, 3);
  for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(a.data.at(i) == b.data.at(i));
}

TEST_CASE("rotation flop lower bound") {
  CHECK(kRotationFlopConstant == 41);
  CHECK(count_rotation_flops(1) == 82);
  CHECK(count_rotation_flops(512) == 2ull * 41 * 512 * 512);
  CHECK_THROWS(count_rotation_flops(0));
}

TEST_CASE("perspective projection: angular extent matches the gnomonic oracle") {
  const Image ones(1, 28, 28, 1.0);
  const double fov = 2.0 * kPi / 3.0, t = std::tan(fov / 2.0);
  const EquirectMap out = project_perspective_to_equirect(ones, fov, {0.0, 0.0}, 48, 96);
  for (std::size_t k : {std::size_t{47}, std::size_t{48}}) {
    std::size_t rows = 0;
    for (std::size_t r = 0; r < 48; ++r) {
      const LonLat p = pixel_lonlat(static_cast<double>(r), static_cast<double>(k), 48, 96);
      // Tangent plane at (0,0): x = tan u, y = tan v / cos u.
      const double y = std::tan(p.v) / std::cos(p.u), x = std::tan(p.u);
      const double src_r = (y / t + 1.0) * 14.0 - 0.5, src_c = (x / t + 1.0) * 14.0 - 0.5;
      const bool inside = src_r > -1.0 && src_r < 28.0 && src_c > -1.0 && src_c < 28.0;
      CHECK((out.at(0, r, k) > 0.0) == inside);
      rows += out.at(0, r, k) > 0.0;
    }
    // Two thirds of the vertical extent, give or take the edge pixels.
    CHECK(std::abs(static_cast<double>(rows) - 32.0) <= 2.0);
  }
}

TEST_CASE("perspective projection symmetry and limits") {
  Image sym(1, 28, 28);
  for (std::size_t r = 0; r < 28; ++r) {
    for (std::size_t k = 0; k < 14; ++k) sym.at(0, r, k) = sym.at(0, r, 27 - k) = std::sin(0.3 * r + 0.1 * k) * 0.5 + 0.5;
  }
  const EquirectMap out = project_perspective_to_equirect(sym, 2.0 * kPi / 3.0, {0.0, 0.0}, 48, 96, 2);
  for (std::size_t r = 0; r < 48; ++r) {
    for (std::size_t k = 0; k < 48; ++k) CHECK(std::abs(out.at(0, r, k) - out.at(0, r, 95 - k)) < 1e-9);
  }

  const Image ones(1, 28, 28, 1.0);
  const EquirectMap tiny = project_perspective_to_equirect(ones, 0.01, {0.0, 0.0}, 48, 96);
  double total = 0.0, central = 0.0;
  for (std::size_t r = 0; r < 48; ++r) {
    for (std::size_t k = 0; k < 96; ++k) {
      total += tiny.at(0, r, k);
      if (r >= 23 && r <= 24 && k >= 47 && k <= 48) central += tiny.at(0, r, k);
    }
  }
  CHECK(total == central);

  const EquirectMap blank = project_perspective_to_equirect(Image(1, 28, 28), 2.0, {0.5, 1.2}, 48, 96, 2);
  for (double v : blank.data.values()) CHECK(v == 0.0);
  CHECK_THROWS(project_perspective_to_equirect(ones, kPi, {0.0, 0.0}, 48, 96));
}

TEST_CASE("PNM round trip and errors") {
  const auto dir = std::filesystem::temp_directory_path();
  Image rgb(3, 4, 5);
  for (std::size_t i = 0; i < rgb.px.size(); ++i) rgb.px[i] = static_cast<double>(i % 256) / 255.0;
  write_pnm(dir / "pw_test.ppm", rgb);
  const Image back = read_pnm(dir / "pw_test.ppm");
  REQUIRE(back.c == 3);
  for (std::size_t i = 0; i < rgb.px.size(); ++i) CHECK(std::abs(back.px[i] - rgb.px[i]) < 1e-12);

  Image gray(1, 3, 2, 0.5);
  write_pnm(dir / "pw_test.pgm", gray);
  CHECK(read_pnm(dir / "pw_test.pgm").c == 1);

  {
    std::ofstream bad(dir / "pw_bad.pgm", std::ios::binary);
    bad << "P5\n4 4\n255\nabc";
  }
  CHECK_THROWS(read_pnm(dir / "pw_bad.pgm"));
  {
    std::ofstream bad(dir / "pw_bad2.pgm", std::ios::binary);
    bad << "P3\n1 1\n255\n0 0 0";
  }
  CHECK_THROWS(read_pnm(dir / "pw_bad2.pgm"));
  CHECK_THROWS(read_pnm(dir / "does_not_exist.pgm"));

  write_raw(dir / "pw_test.raw", rgb);
  CHECK(read_raw(dir / "pw_test.raw").px == rgb.px);
  for (const char* f : {"pw_test.ppm", "pw_test.pgm", "pw_bad.pgm", "pw_bad2.pgm", "pw_test.raw"}) std::filesystem::remove(dir / f);
}
