#include <array>
#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "panoswin/windowing.hpp"

using namespace panoswin;

namespace {

using Grid = std::vector<std::vector<std::size_t>>;

Grid labels(std::size_t rows, std::size_t cols) {
  Grid g(rows, std::vector<std::size_t>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) g[r][c] = r * cols + c;
  }
  return g;
}

Grid roll_cols(const Grid& g, std::size_t s) {
  Grid out = g;
  const std::size_t C = g[0].size();
  for (std::size_t r = 0; r < g.size(); ++r) {
    for (std::size_t c = 0; c < C; ++c) out[r][c] = g[r][(c + s) % C];
  }
  return out;
}

Grid roll_rows(const Grid& g, std::size_t s) {
  Grid out = g;
  for (std::size_t r = 0; r < g.size(); ++r) out[r] = g[(r + s) % g.size()];
  return out;
}

// Simulates the three pictured steps on a labeled grid.
Grid psw_oracle(std::size_t rows, std::size_t cols, std::size_t m, bool rotate180) {
  Grid g = roll_cols(labels(rows, cols), m / 2);
  const std::size_t half = cols / 2;
  Grid left(rows), right(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    left[r].assign(g[r].begin(), g[r].begin() + static_cast<long>(half));
    right[r].assign(g[r].begin() + static_cast<long>(half), g[r].end());
  }
  std::reverse(right.begin(), right.end());
  if (rotate180) {
    for (auto& row : right) std::reverse(row.begin(), row.end());
  }
  Grid stacked = right;
  stacked.insert(stacked.end(), left.begin(), left.end());
  return roll_rows(stacked, m / 2);
}

void check_against_oracle(const WindowLayout& lay, const Grid& oracle, std::size_t m) {
  const std::size_t lr = oracle.size(), lc = oracle[0].size();
  REQUIRE(lay.layout_rows == lr);
  REQUIRE(lay.layout_cols == lc);
  std::size_t mismatches = 0;
  for (std::size_t r = 0; r < lr; ++r) {
    for (std::size_t c = 0; c < lc; ++c) mismatches += lay.perm[oracle[r][c]] != r * lc + c;
  }
  CHECK(mismatches == 0);
  std::size_t w = 0;
  for (std::size_t wr = 0; wr < lr / m; ++wr) {
    for (std::size_t wc = 0; wc < lc / m; ++wc, ++w) {
      std::vector<std::size_t> expect;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) expect.push_back(oracle[wr * m + i][wc * m + j]);
      }
      CHECK(lay.groups[w] == expect);
    }
  }
}

bool is_permutation_of_n(const std::vector<std::size_t>& p) {
  std::vector<bool> seen(p.size(), false);
  for (std::size_t v : p) {
    if (v >= p.size() || seen[v]) return false;
    seen[v] = true;
  }
  return true;
}

std::size_t window_of(const WindowLayout& lay, std::size_t idx) {
  for (std::size_t w = 0; w < lay.groups.size(); ++w) {
    if (std::find(lay.groups[w].begin(), lay.groups[w].end(), idx) != lay.groups[w].end()) return w;
  }
  return static_cast<std::size_t>(-1);
}

double max_window_spread(const PatchGrid& g, const WindowLayout& lay) {
  const auto centers = g.centers();
  double worst = 0.0;
  for (const auto& grp : lay.groups) {
    for (std::size_t a : grp) {
      for (std::size_t b : grp) worst = std::max(worst, angular_distance(centers[a], centers[b]));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("partition_windows") {
  const WindowLayout a = partition_windows({2, 4, 2});
  CHECK(a.num_windows() == 2);
  for (std::size_t i = 0; i < 8; ++i) CHECK(a.perm[i] == i);
  const WindowLayout b = partition_windows({4, 8, 2});
  CHECK(b.num_windows() == 8);
  for (const auto& g : b.groups) CHECK(g.size() == 4);
  CHECK(b.groups[1] == std::vector<std::size_t>{2, 3, 10, 11});
  CHECK_THROWS(partition_windows({4, 6, 4}));
}

TEST_CASE("psw_layout matches the step-simulation oracle") {
  for (auto [rows, cols, m] : {std::array<std::size_t, 3>{4, 8, 2}, {8, 16, 4}, {12, 24, 6}, {6, 12, 6}, {3, 6, 3}}) {
    for (bool rot : {false, true}) {
      CAPTURE(rows);
      CAPTURE(m);
      const WindowLayout lay = psw_layout({rows, cols, m}, rot ? PswFold::kRotate180 : PswFold::kVerticalFlip);
      check_against_oracle(lay, psw_oracle(rows, cols, m, rot), m);
      CHECK(is_permutation_of_n(lay.perm));
    }
  }
  CHECK_THROWS(psw_layout({4, 7, 2}));
  CHECK_THROWS(psw_layout({4, 12, 4}));
}

TEST_CASE("psw_inverse composes to the identity") {
  for (auto [rows, cols, m] : {std::array<std::size_t, 3>{4, 8, 2}, {8, 16, 4}, {16, 32, 4}, {12, 24, 6}}) {
    const WindowLayout lay = psw_layout({rows, cols, m});
    const WindowLayout inv = psw_inverse(lay);
    for (std::size_t i = 0; i < lay.perm.size(); ++i) {
      CHECK(inv.perm[lay.perm[i]] == i);
      CHECK(lay.perm[inv.perm[i]] == i);
    }
  }
  const WindowLayout id = partition_windows({4, 8, 2});
  CHECK(psw_inverse(id).perm == id.perm);
}

TEST_CASE("psw pole adjacency: top-row patches half a turn apart share a window") {
  for (auto [rows, cols, m] : {std::array<std::size_t, 3>{8, 16, 4}, {12, 24, 6}, {4, 8, 2}}) {
    const WindowLayout lay = psw_layout({rows, cols, m});
    std::size_t misses = 0;
    for (std::size_t k = 0; k < cols; ++k) misses += window_of(lay, k) != window_of(lay, (k + cols / 2) % cols);
    CHECK(misses == 0);
  }
}

TEST_CASE("180 degree fold mirrors the top row instead") {
  const std::size_t rows = 8, cols = 16, m = 4;
  const WindowLayout lay = psw_layout({rows, cols, m}, PswFold::kRotate180);
  // Top-row column c meets column (cols - 1 + 2s - c) after the fold.
  const std::size_t s = m / 2;
  for (std::size_t c = 0; c < cols; ++c) {
    const std::size_t partner = (2 * cols - 1 + 2 * s - c) % cols;
    CHECK(window_of(lay, c) == window_of(lay, partner));
  }
}

TEST_CASE("psw windows are connected on the sphere") {
  // Neighbors: 8-connected grid moves with column wrap, plus crossing a pole
  // to the patch half a turn away in the same edge row.
  for (auto [rows, cols, m] : {std::array<std::size_t, 3>{8, 16, 4}, {12, 24, 6}}) {
    const PatchGrid g{rows, cols, m};
    auto adjacent = [&](std::size_t a, std::size_t b) {
      const long ra = static_cast<long>(a / cols), rb = static_cast<long>(b / cols);
      const long ca = static_cast<long>(a % cols), cb = static_cast<long>(b % cols);
      const long dc = std::min((ca - cb + static_cast<long>(cols)) % static_cast<long>(cols),
                               (cb - ca + static_cast<long>(cols)) % static_cast<long>(cols));
      if (std::abs(ra - rb) <= 1 && dc <= 1) return true;
      const bool same_edge = ra == rb && (ra == 0 || ra == static_cast<long>(rows) - 1);
      const long opp = std::min(std::abs(dc - static_cast<long>(cols) / 2), std::abs(static_cast<long>(cols) / 2 - dc));
      return same_edge && opp <= 1;
    };
    auto connected = [&](const std::vector<std::size_t>& grp) {
      std::vector<bool> seen(grp.size(), false);
      std::vector<std::size_t> stack{0};
      seen[0] = true;
      std::size_t count = 1;
      while (!stack.empty()) {
        const std::size_t i = stack.back();
        stack.pop_back();
        for (std::size_t j = 0; j < grp.size(); ++j) {
          if (!seen[j] && adjacent(grp[i], grp[j])) {
            seen[j] = true;
            ++count;
            stack.push_back(j);
          }
        }
      }
      return count == grp.size();
    };
    std::size_t disconnected = 0;
    for (const auto& grp : psw_layout(g).groups) disconnected += !connected(grp);
    CHECK(disconnected == 0);
    // The Swin cyclic shift, by contrast, glues far-apart patches together.
    std::size_t swin_disconnected = 0;
    for (const auto& grp : swin_shift_layout(g).layout.groups) swin_disconnected += !connected(grp);
    CHECK(swin_disconnected > 0);
    CHECK(max_window_spread(g, psw_layout(g)) < max_window_spread(g, swin_shift_layout(g).layout));
  }
}

TEST_CASE("swin shift mask matches a brute-force neighborhood check") {
  for (auto [rows, cols, m] : {std::array<std::size_t, 3>{4, 4, 2}, {8, 16, 4}, {6, 12, 3}}) {
    const PatchGrid g{rows, cols, m};
    const ShiftedLayout sl = swin_shift_layout(g);
    CHECK(is_permutation_of_n(sl.layout.perm));
    const std::size_t area = m * m;
    REQUIRE(sl.mask.size() == sl.layout.num_windows() * area * area);
    for (std::size_t w = 0; w < sl.layout.num_windows(); ++w) {
      const auto& grp = sl.layout.groups[w];
      for (std::size_t i = 0; i < area; ++i) {
        for (std::size_t j = 0; j < area; ++j) {
          // Neighbors before the roll keep their offset after it.
          const long dr_old = static_cast<long>(grp[j] / cols) - static_cast<long>(grp[i] / cols);
          const long dc_old = static_cast<long>(grp[j] % cols) - static_cast<long>(grp[i] % cols);
          const long dr_new = static_cast<long>(j / m) - static_cast<long>(i / m);
          const long dc_new = static_cast<long>(j % m) - static_cast<long>(i % m);
          const bool neighbors = dr_old == dr_new && dc_old == dc_new;
          const double v = sl.mask[(w * area + i) * area + j];
          CHECK(v == (neighbors ? 0.0 : kMaskedLogit));
          CHECK(v == sl.mask[(w * area + j) * area + i]);
        }
        CHECK(sl.mask[(w * area + i) * area + i] == 0.0);
      }
    }
  }
  CHECK(swin_shift_layout({4, 4, 2}, false).mask.empty());
  CHECK(swin_shift_layout({4, 4, 1}).mask.empty());
}

TEST_CASE("bijectivity of every layout up to 16x32") {
  for (std::size_t rows = 1; rows <= 16; ++rows) {
    for (std::size_t cols = 2; cols <= 32; cols += 2) {
      for (std::size_t m = 1; m <= 6; ++m) {
        const PatchGrid g{rows, cols, m};
        if (rows % m == 0 && cols % m == 0) {
          CHECK(is_permutation_of_n(partition_windows(g).perm));
          CHECK(is_permutation_of_n(swin_shift_layout(g).layout.perm));
        }
        if ((2 * rows) % m == 0 && (cols / 2) % m == 0) {
          const WindowLayout lay = psw_layout(g);
          CHECK(is_permutation_of_n(lay.perm));
          CHECK(is_permutation_of_n(lay.gather_order()));
        }
      }
    }
  }
}

TEST_CASE("pitch window centers") {
  for (auto [rows, cols, m] : {std::array<std::size_t, 3>{12, 24, 6}, {8, 16, 4}, {6, 12, 3}}) {
    const PatchGrid g{rows, cols, m};
    const auto centers = pitch_window_centers(g);
    REQUIRE(centers.size() == (rows / m) * (cols / m));
    for (std::size_t wc = 0; wc < cols / m; ++wc) {
      // Top window row: the polar cap ends up on the equator.
      CHECK(std::abs(centers[wc].v) <= kPi / (2.0 * static_cast<double>(rows)) * static_cast<double>(m) + 1e-12);
    }
    for (const LonLat& c : centers) {
      CHECK(c.u >= -kPi);
      CHECK(c.u < kPi);
      CHECK(std::abs(c.v) <= kHalfPi);
    }
  }
  // Equator centers at u = 0 move to the pole; at u = +-pi/2 they stay on the equator.
  const PatchGrid g{2, 4, 1};
  const LonLat eq0 = apply_inverse(pitch_rotation(), {0.0, 0.0});
  CHECK(eq0.v == doctest::Approx(-kHalfPi));
  const LonLat side = apply_inverse(pitch_rotation(), {kHalfPi, 0.0});
  CHECK(std::abs(side.v) < 1e-12);
  (void)g;
}
