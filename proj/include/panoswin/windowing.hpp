#pragma once

#include <cstddef>
#include <vector>

#include "panoswin/sphere_geom.hpp"

namespace panoswin {

/// rows x cols patch grid with window side m. Patch (r, c) is centered at
/// the same lon/lat a pixel (r, c) of a rows x cols equirect map would be.
struct PatchGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t m = 1;

  std::size_t size() const { return rows * cols; }
  LonLat center(std::size_t r, std::size_t c) const;
  /// Lon/lat at fractional patch coordinates.
  LonLat center_at(double r, double c) const;
  std::vector<LonLat> centers() const;
};

/// A permutation of the patches plus the windows of the rearranged layout.
struct WindowLayout {
  std::size_t rows = 0, cols = 0, m = 1;
  /// Extents of the rearranged layout the windows tile.
  std::size_t layout_rows = 0, layout_cols = 0;
  /// perm[old] = position in the rearranged layout (row-major).
  std::vector<std::size_t> perm;
  /// Each window lists m*m original patch indices, row-major within the window.
  std::vector<std::vector<std::size_t>> groups;
  /// Per original patch: whether the layout shows it with rows (cols)
  /// reversed relative to the panorama.
  std::vector<bool> flip_rows, flip_cols;

  std::size_t num_windows() const { return groups.size(); }
  /// Concatenated groups: gathering tokens in this order yields [windows, m*m].
  std::vector<std::size_t> gather_order() const;
  /// Inverse of gather_order, for scattering windowed tokens back.
  std::vector<std::size_t> scatter_order() const;
  /// Table slot for the pair (i, j) of window w's members, from their
  /// in-window offset expressed in the panorama orientation of member i.
  std::size_t relative_slot(std::size_t w, std::size_t i, std::size_t j) const;
};

/// Plain row-major m x m tiling with the identity permutation.
WindowLayout partition_windows(const PatchGrid& grid);

/// How step (2) of pano-style shifting turns the right half before stacking
/// it above the left half.
enum class PswFold {
  /// Flip rows only. Columns stay aligned, so patches half a turn apart in
  /// the top row meet across the junction.
  kVerticalFlip,
  /// Full 180 degree turn of the right half.
  kRotate180,
};

/// Pano-style shifted windows: (1) roll columns by floor(m/2), (2) stack
/// the folded right half above the left half, giving a 2rows x cols/2
/// layout, (3) roll rows by floor(m/2), then tile m x m windows. No mask.
WindowLayout psw_layout(const PatchGrid& grid, PswFold fold = PswFold::kVerticalFlip);

/// Layout whose permutation undoes `layout`'s: new position -> old index.
WindowLayout psw_inverse(const WindowLayout& layout);

struct ShiftedLayout {
  WindowLayout layout;
  /// [windows][m*m][m*m] additive mask: 0 for pairs that were neighbors
  /// before the cyclic roll, -100 otherwise. Empty when nothing is shifted.
  std::vector<double> mask;
};

inline constexpr double kMaskedLogit = -100.0;

/// Swin-style cyclic shift by floor(m/2) in both axes with its mask.
/// With shifted = false (or m = 1) this is partition_windows and an empty mask.
ShiftedLayout swin_shift_layout(const PatchGrid& grid, bool shifted = true);

/// The pitch rotation used by pitch attention: north pole to (0, 0).
Rotation3 pitch_rotation();

/// Per plain window, the lon/lat of its center after the pitch rotation.
std::vector<LonLat> pitch_window_centers(const PatchGrid& grid);

}  // namespace panoswin
