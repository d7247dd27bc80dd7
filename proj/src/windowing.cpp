#include "panoswin/windowing.hpp"

#include <stdexcept>
#include <string>

namespace panoswin {

namespace {

std::string dims(const PatchGrid& g) {
  return std::to_string(g.rows) + "x" + std::to_string(g.cols) + " with m=" + std::to_string(g.m);
}

void require_tileable(const char* op, std::size_t rows, std::size_t cols, const PatchGrid& g) {
  if (g.m == 0 || rows == 0 || cols == 0 || rows % g.m != 0 || cols % g.m != 0) {
    throw std::invalid_argument(std::string(op) + ": " + std::to_string(rows) + "x" + std::to_string(cols) +
                                " layout is not tileable by m=" + std::to_string(g.m) + " (grid " + dims(g) + ")");
  }
}

// Builds perm/groups from where[new position] = old index on a lr x lc layout.
WindowLayout tile_layout(const PatchGrid& g, std::size_t lr, std::size_t lc, const std::vector<std::size_t>& where) {
  WindowLayout out;
  out.rows = g.rows;
  out.cols = g.cols;
  out.m = g.m;
  out.layout_rows = lr;
  out.layout_cols = lc;
  out.perm.assign(where.size(), 0);
  out.flip_rows.assign(where.size(), false);
  out.flip_cols.assign(where.size(), false);
  for (std::size_t pos = 0; pos < where.size(); ++pos) out.perm[where[pos]] = pos;
  const std::size_t m = g.m;
  for (std::size_t wr = 0; wr < lr / m; ++wr) {
    for (std::size_t wc = 0; wc < lc / m; ++wc) {
      std::vector<std::size_t> group;
      group.reserve(m * m);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) group.push_back(where[(wr * m + i) * lc + wc * m + j]);
      }
      out.groups.push_back(std::move(group));
    }
  }
  return out;
}

}  // namespace

LonLat PatchGrid::center(std::size_t r, std::size_t c) const { return center_at(static_cast<double>(r), static_cast<double>(c)); }

LonLat PatchGrid::center_at(double r, double c) const {
  return {-kPi + 2.0 * kPi * (c + 0.5) / static_cast<double>(cols), -kHalfPi + kPi * (r + 0.5) / static_cast<double>(rows)};
}

std::vector<LonLat> PatchGrid::centers() const {
  std::vector<LonLat> out;
  out.reserve(size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out.push_back(center(r, c));
  }
  return out;
}

std::vector<std::size_t> WindowLayout::gather_order() const {
  std::vector<std::size_t> order;
  order.reserve(rows * cols);
  for (const auto& g : groups) order.insert(order.end(), g.begin(), g.end());
  return order;
}

std::vector<std::size_t> WindowLayout::scatter_order() const {
  const auto order = gather_order();
  std::vector<std::size_t> inv(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) inv[order[i]] = i;
  return inv;
}

std::size_t WindowLayout::relative_slot(std::size_t w, std::size_t i, std::size_t j) const {
  const std::size_t a = groups[w][i];
  long dr = static_cast<long>(i / m) - static_cast<long>(j / m);
  long dc = static_cast<long>(i % m) - static_cast<long>(j % m);
  if (flip_rows[a]) dr = -dr;
  if (flip_cols[a]) dc = -dc;
  const long mm = static_cast<long>(m);
  return static_cast<std::size_t>((dr + mm - 1) * (2 * mm - 1) + dc + mm - 1);
}

WindowLayout partition_windows(const PatchGrid& grid) {
  require_tileable("partition_windows", grid.rows, grid.cols, grid);
  std::vector<std::size_t> where(grid.size());
  for (std::size_t i = 0; i < where.size(); ++i) where[i] = i;
  return tile_layout(grid, grid.rows, grid.cols, where);
}

WindowLayout psw_layout(const PatchGrid& grid, PswFold fold) {
  if (grid.cols == 0 || grid.cols % 2 != 0) throw std::invalid_argument("psw_layout: cols must be even (grid " + dims(grid) + ")");
  const std::size_t R = grid.rows, C = grid.cols, half = C / 2, LR = 2 * R;
  require_tileable("psw_layout", LR, half, grid);
  const std::size_t s = grid.m / 2;

  std::vector<std::size_t> where(grid.size());
  for (std::size_t nr = 0; nr < LR; ++nr) {
    // Step (3) reads layout row (nr + s) of the stacked halves.
    const std::size_t sr = (nr + s) % LR;
    for (std::size_t nc = 0; nc < half; ++nc) {
      std::size_t r = 0, c = 0;  // coordinates after step (1)
      if (sr < R) {
        r = R - 1 - sr;
        c = half + (fold == PswFold::kRotate180 ? half - 1 - nc : nc);
      } else {
        r = sr - R;
        c = nc;
      }
      where[nr * half + nc] = r * C + (c + s) % C;
    }
  }
  WindowLayout out = tile_layout(grid, LR, half, where);
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t c = 0; c < C; ++c) {
      // Right half after step (1).
      if ((c + C - s) % C >= half) {
        out.flip_rows[r * C + c] = true;
        out.flip_cols[r * C + c] = fold == PswFold::kRotate180;
      }
    }
  }
  return out;
}

WindowLayout psw_inverse(const WindowLayout& layout) {
  WindowLayout inv = layout;
  for (std::size_t old = 0; old < layout.perm.size(); ++old) {
    inv.perm[layout.perm[old]] = old;
    inv.flip_rows[layout.perm[old]] = layout.flip_rows[old];
    inv.flip_cols[layout.perm[old]] = layout.flip_cols[old];
  }
  for (auto& g : inv.groups) {
    for (std::size_t& idx : g) idx = layout.perm[idx];
  }
  return inv;
}

ShiftedLayout swin_shift_layout(const PatchGrid& grid, bool shifted) {
  require_tileable("swin_shift_layout", grid.rows, grid.cols, grid);
  const std::size_t s = shifted ? grid.m / 2 : 0;
  if (s == 0) return {partition_windows(grid), {}};

  const std::size_t R = grid.rows, C = grid.cols, m = grid.m;
  std::vector<std::size_t> where(grid.size());
  for (std::size_t nr = 0; nr < R; ++nr) {
    for (std::size_t nc = 0; nc < C; ++nc) where[nr * C + nc] = ((nr + s) % R) * C + (nc + s) % C;
  }
  ShiftedLayout out{tile_layout(grid, R, C, where), {}};

  // Positions that came around the seam form their own region per axis.
  const std::size_t area = m * m;
  out.mask.assign(out.layout.num_windows() * area * area, 0.0);
  for (std::size_t w = 0; w < out.layout.num_windows(); ++w) {
    const auto& g = out.layout.groups[w];
    for (std::size_t i = 0; i < area; ++i) {
      const std::size_t pi = out.layout.perm[g[i]];
      for (std::size_t j = 0; j < area; ++j) {
        const std::size_t pj = out.layout.perm[g[j]];
        const bool row_split = (pi / C >= R - s) != (pj / C >= R - s);
        const bool col_split = (pi % C >= C - s) != (pj % C >= C - s);
        if (row_split || col_split) out.mask[(w * area + i) * area + j] = kMaskedLogit;
      }
    }
  }
  return out;
}

Rotation3 pitch_rotation() { return rotation_taking_pole_to({0.0, 0.0}); }

std::vector<LonLat> pitch_window_centers(const PatchGrid& grid) {
  require_tileable("pitch_window_centers", grid.rows, grid.cols, grid);
  const Rotation3 rot = pitch_rotation();
  const double half = 0.5 * static_cast<double>(grid.m - 1);
  std::vector<LonLat> out;
  for (std::size_t wr = 0; wr < grid.rows / grid.m; ++wr) {
    for (std::size_t wc = 0; wc < grid.cols / grid.m; ++wc) {
      const LonLat c = grid.center_at(static_cast<double>(wr * grid.m) + half, static_cast<double>(wc * grid.m) + half);
      out.push_back(apply_inverse(rot, c));
    }
  }
  return out;
}

}  // namespace panoswin
