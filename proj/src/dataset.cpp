#include "panoswin/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "panoswin/checkpoint.hpp"
#include "panoswin/random.hpp"

namespace panoswin {

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path.string() + ": cannot open");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) | b[at + 3];
}

void check_idx(const std::filesystem::path& path, const std::vector<std::uint8_t>& b, std::uint32_t magic, std::size_t header) {
  if (b.size() < header) {
    throw std::runtime_error(path.string() + ": truncated IDX header, expected " + std::to_string(header) + " bytes, got " +
                             std::to_string(b.size()));
  }
  if (be32(b, 0) != magic) {
    std::ostringstream msg;
    msg << path.string() << ": bad IDX magic 0x" << std::hex << be32(b, 0) << ", expected 0x" << magic;
    throw std::runtime_error(msg.str());
  }
}

void check_length(const std::filesystem::path& path, std::size_t expected, std::size_t actual) {
  if (actual != expected) {
    throw std::runtime_error(path.string() + ": IDX payload length mismatch, expected " + std::to_string(expected) +
                             " bytes, got " + std::to_string(actual));
  }
}

using Stroke = std::vector<std::array<double, 2>>;

Stroke arc(double cx, double cy, double rx, double ry, double a0, double a1, int n = 20) {
  Stroke s;
  for (int i = 0; i <= n; ++i) {
    const double a = a0 + (a1 - a0) * i / n;
    s.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
  }
  return s;
}

// Image coordinates on the 28x28 canvas, y pointing down.
std::vector<Stroke> digit_strokes(int label) {
  switch (label) {
    case 0: return {arc(14, 14, 5, 8, 0, 2 * kPi)};
    case 1: return {{{11, 8}, {14, 5}, {14, 23}}};
    case 2: return {{{9, 9}, {11, 6}, {14, 5}, {17, 6}, {19, 9}, {18, 12}, {9, 23}, {20, 23}}};
    case 3: return {{{9, 6}, {14, 5}, {18, 7}, {18, 11}, {14, 14}, {18, 17}, {18, 21}, {14, 23}, {9, 22}}, {{14, 14}, {11, 14}}};
    case 4: return {{{17, 23}, {17, 5}, {8, 17}, {20, 17}}};
    case 5: return {{{19, 5}, {10, 5}, {9, 13}, {14, 12}, {18, 14}, {19, 18}, {16, 22}, {12, 23}, {9, 21}}};
    case 6: return {{{17, 5}, {12, 9}, {9, 15}, {9, 20}, {12, 23}, {16, 23}, {19, 20}, {18, 15}, {14, 13}, {10, 15}}};
    case 7: return {{{8, 5}, {20, 5}, {13, 23}}};
    case 8: return {arc(14, 9.5, 4, 4.5, 0, 2 * kPi), arc(14, 18.5, 5, 4.5, 0, 2 * kPi)};
    case 9: return {arc(14, 10, 4.5, 4.5, 0, 2 * kPi), {{18.5, 10}, {17, 23}}};
    default: throw std::invalid_argument("glyph label must be in [0, 10), got " + std::to_string(label));
  }
}

double segment_distance(double px, double py, const std::array<double, 2>& a, const std::array<double, 2>& b) {
  const double dx = b[0] - a[0], dy = b[1] - a[1];
  const double len2 = dx * dx + dy * dy;
  const double t = len2 > 0 ? std::clamp(((px - a[0]) * dx + (py - a[1]) * dy) / len2, 0.0, 1.0) : 0.0;
  return std::hypot(px - a[0] - t * dx, py - a[1] - t * dy);
}

std::vector<std::string> mnist_names(bool test) {
  const std::string p = test ? "t10k" : "train";
  return {p + "-images-idx3-ubyte", p + "-labels-idx1-ubyte", p + "-images.idx3-ubyte", p + "-labels.idx1-ubyte"};
}

template <typename F>
void parallel_for(std::size_t n, std::size_t threads, F&& f) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += threads) f(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

Image DigitSource::image(std::size_t i) const {
  Image img(1, rows, cols);
  const std::uint8_t* p = pixels.data() + i * rows * cols;
  for (std::size_t k = 0; k < rows * cols; ++k) img.px[k] = p[k] / 255.0;
  return img;
}

IdxImages read_idx_images(const std::filesystem::path& path) {
  const auto b = read_file(path);
  check_idx(path, b, 0x00000803, 16);
  IdxImages out;
  out.count = be32(b, 4);
  out.rows = be32(b, 8);
  out.cols = be32(b, 12);
  check_length(path, out.count * out.rows * out.cols, b.size() - 16);
  out.pixels.assign(b.begin() + 16, b.end());
  return out;
}

std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path) {
  const auto b = read_file(path);
  check_idx(path, b, 0x00000801, 8);
  const std::size_t n = be32(b, 4);
  check_length(path, n, b.size() - 8);
  return {b.begin() + 8, b.end()};
}

DigitSource read_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  IdxImages im = read_idx_images(images);
  const auto lab = read_idx_labels(labels);
  if (lab.size() != im.count) {
    throw std::runtime_error(labels.string() + ": " + std::to_string(lab.size()) + " labels for " + std::to_string(im.count) +
                             " images in " + images.string());
  }
  DigitSource d;
  d.rows = im.rows;
  d.cols = im.cols;
  d.pixels = std::move(im.pixels);
  d.origin = "mnist";
  for (std::uint8_t l : lab) {
    if (l > 9) throw std::runtime_error(labels.string() + ": label " + std::to_string(l) + " outside [0, 10)");
    d.labels.push_back(l);
  }
  return d;
}

std::optional<DigitSource> find_mnist(const std::filesystem::path& dir, bool test) {
  const auto names = mnist_names(test);
  for (std::size_t k = 0; k < names.size(); k += 2) {
    const auto im = dir / names[k], lb = dir / names[k + 1];
    if (std::filesystem::exists(im) && std::filesystem::exists(lb)) return read_idx(im, lb);
  }
  return std::nullopt;
}

Image render_glyph(int label, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Stroke> strokes = digit_strokes(label);
  const double theta = u(rng) * kPi / 12.0;
  const double sx = 0.95 + 0.12 * u(rng), sy = 0.95 + 0.12 * u(rng), shear = 0.15 * u(rng);
  const double tx = 1.5 * u(rng), ty = 1.5 * u(rng);
  const double c = std::cos(theta), s = std::sin(theta);
  for (Stroke& st : strokes) {
    for (auto& p : st) {
      const double x = (p[0] + 0.9 * u(rng) - 14.0) * sx, y = (p[1] + 0.9 * u(rng) - 14.0) * sy;
      const double xs = x + shear * y;
      p = {14.0 + c * xs - s * y + tx, 14.0 + s * xs + c * y + ty};
    }
  }
  const double half_width = 1.0 + 0.5 * (u(rng) + 1.0) / 2.0;
  const double peak = 0.85 + 0.15 * (u(rng) + 1.0) / 2.0;
  Image img(1, 28, 28);
  for (std::size_t r = 0; r < 28; ++r) {
    for (std::size_t k = 0; k < 28; ++k) {
      double d = 1e9;
      for (const Stroke& st : strokes) {
        for (std::size_t i = 0; i + 1 < st.size(); ++i) d = std::min(d, segment_distance(k + 0.5, r + 0.5, st[i], st[i + 1]));
      }
      img.at(0, r, k) = peak * std::clamp(half_width + 0.5 - d, 0.0, 1.0);
    }
  }
  return img;
}

DigitSource glyph_digits(std::size_t n, std::uint64_t seed) {
  DigitSource d;
  d.origin = "glyphs";
  d.pixels.resize(n * 28 * 28);
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::mt19937_64 rng(derive_seed({seed, i}));
    const int label = static_cast<int>(i % 10);
    const Image img = render_glyph(label, rng);
    for (std::size_t k = 0; k < 28 * 28; ++k) d.pixels[i * 28 * 28 + k] = static_cast<std::uint8_t>(std::lround(img.px[k] * 255.0));
    d.labels[i] = label;
  }
  return d;
}

const char* split_name(SplitKind k) {
  switch (k) {
    case SplitKind::kTrain: return "train";
    case SplitKind::kTestEquator: return "test_equator";
    case SplitKind::kTestPolar: return "test_polar";
    case SplitKind::kTestUniform: return "test_uniform";
  }
  return "?";
}

SplitKind parse_split(const std::string& s) {
  for (SplitKind k : {SplitKind::kTrain, SplitKind::kTestEquator, SplitKind::kTestPolar, SplitKind::kTestUniform}) {
    if (s == split_name(k)) return k;
  }
  throw std::invalid_argument("unknown split '" + s + "' (expected train, test_equator, test_polar or test_uniform)");
}

LonLat sample_center(SplitKind kind, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = -kPi + 2.0 * kPi * unit(rng);
  double z = 0.0;
  switch (kind) {
    case SplitKind::kTrain:
    case SplitKind::kTestUniform:
      z = 2.0 * unit(rng) - 1.0;
      break;
    case SplitKind::kTestEquator: {
      const double zmax = std::sin(kPi / 12.0);
      z = zmax * (2.0 * unit(rng) - 1.0);
      break;
    }
    case SplitKind::kTestPolar: {
      const double zmin = std::sin(kPi / 3.0);
      z = zmin + (1.0 - zmin) * unit(rng);
      if (unit(rng) < 0.5) z = -z;
      break;
    }
  }
  return {u, std::asin(std::clamp(z, -1.0, 1.0))};
}

SphSample synthesize_sph(const Image& img, int label, const LonLat& center, std::size_t supersample) {
  return {project_perspective_to_equirect(img, kSphFov, center, kSphHeight, kSphWidth, supersample), label, center};
}

Tensor Dataset::batch_images(const std::vector<std::size_t>& idx) const { return ops::gather(images, 0, idx); }

std::vector<int> Dataset::batch_labels(const std::vector<std::size_t>& idx) const {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(labels.at(i));
  return out;
}

Dataset make_split(SplitKind kind, std::size_t n, std::uint64_t seed, const SourceOptions& opt) {
  if (n == 0) throw std::invalid_argument("make_split: n must be positive");
  const bool test = kind != SplitKind::kTrain;
  std::optional<DigitSource> src;
  if (opt.mnist_dir) src = find_mnist(*opt.mnist_dir, test);
  // Glyph pools for train and test come from disjoint generator streams.
  if (!src) src = glyph_digits(n, derive_seed({seed, test ? 2u : 1u}));

  Dataset d;
  d.kind = kind;
  d.seed = seed;
  d.origin = src->origin;
  std::mt19937_64 pick(derive_seed({seed, 3, static_cast<std::uint64_t>(kind)}));
  if (n <= src->size()) {
    std::vector<std::size_t> perm(src->size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), pick);
    d.source_index.assign(perm.begin(), perm.begin() + static_cast<long>(n));
  } else {
    d.with_replacement = true;
    std::uniform_int_distribution<std::size_t> any(0, src->size() - 1);
    for (std::size_t i = 0; i < n; ++i) d.source_index.push_back(any(pick));
  }

  const std::size_t plane = kSphHeight * kSphWidth;
  std::vector<double> px(n * plane);
  d.labels.resize(n);
  d.centers.resize(n);
  parallel_for(n, opt.threads, [&](std::size_t i) {
    std::mt19937_64 rng(derive_seed({seed, 4, static_cast<std::uint64_t>(kind), i}));
    const LonLat c = sample_center(kind, rng);
    const std::size_t s = d.source_index[i];
    const SphSample smp = synthesize_sph(src->image(s), src->labels[s], c);
    std::copy(smp.map.data.values().begin(), smp.map.data.values().end(), px.begin() + static_cast<long>(i * plane));
    d.labels[i] = smp.label;
    d.centers[i] = c;
  });
  d.images = Tensor::from({n, 1, kSphHeight, kSphWidth}, std::move(px));
  return d;
}

void save_dataset(const Dataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::size_t n = d.size();
  std::vector<double> labels(d.labels.begin(), d.labels.end()), centers, index(d.source_index.begin(), d.source_index.end());
  for (const LonLat& c : d.centers) {
    centers.push_back(c.u);
    centers.push_back(c.v);
  }
  const std::vector<Param> entries{{"images", d.images, false},
                                   {"labels", Tensor::from({n}, std::move(labels)), false},
                                   {"centers", Tensor::from({n, 2}, std::move(centers)), false},
                                   {"source_index", Tensor::from({n}, std::move(index)), false}};
  save_tensors(dir / "data.bin", entries);
  std::ofstream m(dir / "manifest.txt");
  m << "kind=" << split_name(d.kind) << "\nn=" << n << "\nseed=" << d.seed << "\norigin=" << d.origin
    << "\nwith_replacement=" << d.with_replacement << "\nheight=" << kSphHeight << "\nwidth=" << kSphWidth << "\n";
  if (!m) throw std::runtime_error((dir / "manifest.txt").string() + ": write failed");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream m(dir / "manifest.txt");
  if (!m) throw std::runtime_error((dir / "manifest.txt").string() + ": cannot open");
  Dataset d;
  std::size_t n = 0;
  std::string line;
  while (std::getline(m, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
    if (k == "kind") d.kind = parse_split(v);
    else if (k == "n") n = std::stoull(v);
    else if (k == "seed") d.seed = std::stoull(v);
    else if (k == "origin") d.origin = v;
    else if (k == "with_replacement") d.with_replacement = v == "1";
  }
  const std::vector<Param> entries = load_tensors(dir / "data.bin");
  auto get = [&](const std::string& name) -> const Tensor& {
    for (const Param& p : entries) {
      if (p.name == name) return p.tensor;
    }
    throw std::runtime_error((dir / "data.bin").string() + ": missing entry '" + name + "'");
  };
  d.images = get("images");
  if (d.images.shape() != Shape{n, 1, kSphHeight, kSphWidth}) {
    throw std::runtime_error((dir / "data.bin").string() + ": images " + shape_str(d.images.shape()) + " disagree with manifest n=" +
                             std::to_string(n));
  }
  for (double v : get("labels").values()) d.labels.push_back(static_cast<int>(v));
  const Tensor& c = get("centers");
  for (std::size_t i = 0; i < n; ++i) d.centers.push_back({c.at(2 * i), c.at(2 * i + 1)});
  for (double v : get("source_index").values()) d.source_index.push_back(static_cast<std::size_t>(v));
  return d;
}

}  // namespace panoswin
