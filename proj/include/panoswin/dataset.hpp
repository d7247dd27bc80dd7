#pragma once

#include <cstdint>
#include <array>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "panoswin/equirect.hpp"
#include "panoswin/image_io.hpp"
#include "panoswin/sphere_geom.hpp"
#include "panoswin/tensor.hpp"

namespace panoswin {

/// Planar digits, 8-bit, row-major per image.
struct DigitSource {
  std::size_t rows = 28;
  std::size_t cols = 28;
  std::vector<std::uint8_t> pixels;
  std::vector<int> labels;
  /// "mnist" or "glyphs".
  std::string origin;

  std::size_t size() const { return labels.size(); }
  /// Single-channel image with values in [0, 1].
  Image image(std::size_t i) const;
};

struct IdxImages {
  std::size_t count = 0, rows = 0, cols = 0;
  std::vector<std::uint8_t> pixels;
};

/// IDX containers (magic 0x00000803 for images, 0x00000801 for labels).
IdxImages read_idx_images(const std::filesystem::path& path);
std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path);
/// Pairs an image file with its label file; counts must agree.
DigitSource read_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
/// train-images-idx3-ubyte etc. (or t10k-* when `test`) from `dir`, if both exist.
std::optional<DigitSource> find_mnist(const std::filesystem::path& dir, bool test);

/// One 28x28 procedural digit: jittered polyline strokes under a random
/// affine map with random stroke width.
Image render_glyph(int label, std::mt19937_64& rng);
/// n glyphs with labels i % 10; glyph i depends only on (seed, i).
DigitSource glyph_digits(std::size_t n, std::uint64_t seed);

enum class SplitKind { kTrain, kTestEquator, kTestPolar, kTestUniform };
const char* split_name(SplitKind k);
SplitKind parse_split(const std::string& s);

/// Projection centre for a split. Area-uniform over the split's latitude
/// range: all latitudes for train/test_uniform, |v| <= pi/12 for
/// test_equator, |v| >= pi/3 for test_polar.
LonLat sample_center(SplitKind kind, std::mt19937_64& rng);

inline constexpr double kSphFov = 2.0 * kPi / 3.0;
inline constexpr std::size_t kSphHeight = 48;
inline constexpr std::size_t kSphWidth = 96;

struct SphSample {
  EquirectMap map;
  int label = 0;
  LonLat center;
};

/// Gnomonic projection of a planar digit with a 120 degree field of view
/// centred at `center`, rendered at 48x96.
SphSample synthesize_sph(const Image& img, int label, const LonLat& center, std::size_t supersample = 4);

struct Dataset {
  SplitKind kind = SplitKind::kTrain;
  std::uint64_t seed = 0;
  std::string origin;
  /// Set when more samples were requested than the source holds.
  bool with_replacement = false;
  Tensor images;  // [n, 1, 48, 96], values in [0, 1]
  std::vector<int> labels;
  std::vector<LonLat> centers;
  std::vector<std::size_t> source_index;

  std::size_t size() const { return labels.size(); }
  Tensor batch_images(const std::vector<std::size_t>& idx) const;
  std::vector<int> batch_labels(const std::vector<std::size_t>& idx) const;
};

struct SourceOptions {
  /// Directory holding MNIST IDX files; procedural glyphs when absent.
  std::optional<std::filesystem::path> mnist_dir;
  std::size_t threads = 1;
};

/// Train draws from the training pool, every test split from the test pool,
/// so no source image is shared between them.
Dataset make_split(SplitKind kind, std::size_t n, std::uint64_t seed, const SourceOptions& opt = {});

/// Directory with data.bin (tensor archive) and manifest.txt.
void save_dataset(const Dataset& d, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace panoswin
