#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace panoswin {

/// Planar multi-channel image, channel-major ([c][h][w]), values nominally in [0, 1].
struct Image {
  std::size_t c = 1;
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<double> px;

  Image() = default;
  Image(std::size_t channels, std::size_t rows, std::size_t cols, double fill = 0.0)
      : c(channels), h(rows), w(cols), px(channels * rows * cols, fill) {}

  double& at(std::size_t ch, std::size_t r, std::size_t k) { return px[(ch * h + r) * w + k]; }
  double at(std::size_t ch, std::size_t r, std::size_t k) const { return px[(ch * h + r) * w + k]; }
};

/// Reads binary PGM (P5) or PPM (P6) with maxval <= 255.
Image read_pnm(const std::filesystem::path& path);
/// Writes P5 for one channel, P6 for three; values are clamped to [0, 1]
/// and rounded to 8 bits.
void write_pnm(const std::filesystem::path& path, const Image& img);

/// Raw float64 dump in the tensor archive format (single entry "image",
/// shape [c, h, w]).
void write_raw(const std::filesystem::path& path, const Image& img);
Image read_raw(const std::filesystem::path& path);

/// Peak signal-to-noise ratio in dB for peak value 1, optionally restricted
/// to rows for which `row_mask` is true. Identical images give +inf.
double psnr(const Image& a, const Image& b, const std::vector<bool>& row_mask = {});

}  // namespace panoswin
