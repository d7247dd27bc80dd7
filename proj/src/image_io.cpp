#include "panoswin/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>

#include "panoswin/checkpoint.hpp"

namespace panoswin {

namespace {

// Reads one header token, skipping whitespace and '#' comments.
std::string header_token(std::istream& in, const std::filesystem::path& path) {
  std::string tok;
  int ch = 0;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  if (tok.empty()) throw std::runtime_error(path.string() + ": truncated PNM header");
  return tok;
}

std::size_t header_number(std::istream& in, const std::filesystem::path& path, const char* what) {
  const std::string tok = header_token(in, path);
  std::size_t pos = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(tok, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != tok.size()) throw std::runtime_error(path.string() + ": bad PNM " + what + " '" + tok + "'");
  return v;
}

}  // namespace

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::string magic = header_token(in, path);
  std::size_t channels = 0;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    throw std::runtime_error(path.string() + ": unsupported PNM magic '" + magic + "' (need P5 or P6)");
  }
  const std::size_t w = header_number(in, path, "width");
  const std::size_t h = header_number(in, path, "height");
  const std::size_t maxval = header_number(in, path, "maxval");
  if (w == 0 || h == 0) throw std::runtime_error(path.string() + ": empty image");
  if (maxval == 0 || maxval > 255) throw std::runtime_error(path.string() + ": maxval must be in 1..255");

  std::vector<unsigned char> raw(w * h * channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    throw std::runtime_error(path.string() + ": pixel data truncated (expected " + std::to_string(raw.size()) + " bytes, got " +
                             std::to_string(in.gcount()) + ")");
  }
  Image img(channels, h, w);
  const double inv = 1.0 / static_cast<double>(maxval);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t k = 0; k < w; ++k) {
      for (std::size_t ch = 0; ch < channels; ++ch) img.at(ch, r, k) = raw[(r * w + k) * channels + ch] * inv;
    }
  }
  return img;
}

void write_pnm(const std::filesystem::path& path, const Image& img) {
  if (img.c != 1 && img.c != 3) throw std::invalid_argument("write_pnm: need 1 or 3 channels, got " + std::to_string(img.c));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << (img.c == 1 ? "P5" : "P6") << '\n' << img.w << ' ' << img.h << "\n255\n";
  std::vector<unsigned char> raw(img.w * img.h * img.c);
  for (std::size_t r = 0; r < img.h; ++r) {
    for (std::size_t k = 0; k < img.w; ++k) {
      for (std::size_t ch = 0; ch < img.c; ++ch) {
        const double v = std::clamp(img.at(ch, r, k), 0.0, 1.0);
        raw[(r * img.w + k) * img.c + ch] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_raw(const std::filesystem::path& path, const Image& img) {
  const Param entry{"image", Tensor::from({img.c, img.h, img.w}, img.px), false};
  save_tensors(path, std::span<const Param>(&entry, 1));
}

Image read_raw(const std::filesystem::path& path) {
  const auto entries = load_tensors(path);
  for (const Param& p : entries) {
    if (p.name != "image") continue;
    if (p.tensor.rank() != 3) throw std::runtime_error(path.string() + ": image entry must be rank 3");
    Image img(p.tensor.dim(0), p.tensor.dim(1), p.tensor.dim(2));
    std::copy(p.tensor.values().begin(), p.tensor.values().end(), img.px.begin());
    return img;
  }
  throw std::runtime_error(path.string() + ": no 'image' entry");
}

double psnr(const Image& a, const Image& b, const std::vector<bool>& row_mask) {
  if (a.c != b.c || a.h != b.h || a.w != b.w) throw std::invalid_argument("psnr: image sizes differ");
  double se = 0.0;
  std::size_t n = 0;
  for (std::size_t ch = 0; ch < a.c; ++ch) {
    for (std::size_t r = 0; r < a.h; ++r) {
      if (!row_mask.empty() && !row_mask[r]) continue;
      for (std::size_t k = 0; k < a.w; ++k) {
        const double d = a.at(ch, r, k) - b.at(ch, r, k);
        se += d * d;
        ++n;
      }
    }
  }
  if (n == 0) throw std::invalid_argument("psnr: mask selects no pixels");
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(static_cast<double>(n) / se);
}

}  // namespace panoswin
