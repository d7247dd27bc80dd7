#include "panoswin/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <unordered_map>

namespace panoswin {

namespace {

constexpr char kMagic[4] = {'P', 'S', 'W', 'N'};
constexpr const char* kMetaPrefix = "meta/";

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>((value >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get_le(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw std::runtime_error(std::string("tensor archive truncated while reading ") + what + ": need " + std::to_string(n) +
                               " bytes at offset " + std::to_string(pos_) + ", have " + std::to_string(bytes_.size() - pos_));
    }
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_tensors(std::span<const Param> entries) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const Param& p : entries) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.insert(out.end(), p.name.begin(), p.name.end());
    const Shape& s = p.tensor.shape();
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    for (std::size_t e : s) put_le<std::uint64_t>(out, e);
    for (double v : p.tensor.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

std::vector<Param> decode_tensors(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw std::runtime_error("tensor archive: bad magic (expected PSWN)");
  const auto version = r.get_le<std::uint32_t>("version");
  if (version != kCheckpointVersion) throw std::runtime_error("tensor archive: unsupported version " + std::to_string(version));
  const auto count = r.get_le<std::uint32_t>("entry count");
  std::vector<Param> out;
  out.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = r.get_le<std::uint32_t>("name length");
    const auto name = r.take(len, "name");
    const auto rank = r.get_le<std::uint32_t>("rank");
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(r.get_le<std::uint64_t>("extent"));
    std::vector<double> values(numel(shape));
    for (double& v : values) v = std::bit_cast<double>(r.get_le<std::uint64_t>("data"));
    out.push_back({std::string(name.begin(), name.end()), Tensor::from(std::move(shape), std::move(values)), false});
  }
  if (!r.done()) throw std::runtime_error("tensor archive: trailing bytes after last entry");
  return out;
}

void save_tensors(const std::filesystem::path& path, std::span<const Param> entries) {
  const auto bytes = encode_tensors(entries);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::vector<Param> load_tensors(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_tensors(bytes);
}

Param text_entry(const std::string& key, const std::string& text) {
  std::vector<double> codes;
  codes.reserve(text.size());
  for (unsigned char c : text) codes.push_back(static_cast<double>(c));
  const std::size_t n = codes.size();
  return {kMetaPrefix + key, Tensor::from({n}, std::move(codes)), false};
}

std::optional<std::string> find_text(std::span<const Param> entries, const std::string& key) {
  const std::string full = kMetaPrefix + key;
  for (const Param& p : entries) {
    if (p.name != full) continue;
    std::string s;
    for (double v : p.tensor.values()) s.push_back(static_cast<char>(static_cast<unsigned char>(v)));
    return s;
  }
  return std::nullopt;
}

void assign_by_name(std::span<Param> params, std::span<const Param> loaded) {
  std::unordered_map<std::string, const Param*> by_name;
  for (const Param& p : loaded) by_name.emplace(p.name, &p);
  for (Param& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint has no entry for parameter " + p.name);
    const Tensor& src = it->second->tensor;
    if (src.shape() != p.tensor.shape()) {
      throw ShapeError("checkpoint entry " + p.name + " has shape " + shape_str(src.shape()) + ", model expects " +
                       shape_str(p.tensor.shape()));
    }
    auto dst = p.tensor.mutable_values();
    std::copy(src.values().begin(), src.values().end(), dst.begin());
  }
}

}  // namespace panoswin
