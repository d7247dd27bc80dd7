#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "panoswin/tensor.hpp"

namespace panoswin {

/// Flat binary tensor archive shared by model checkpoints and raw tensor
/// dumps. Layout, all little-endian:
///
///   "PSWN" | version u32 | count u32
///   per entry: name_len u32 | name bytes (UTF-8) | rank u32 |
///              extents u64 x rank | f64 x prod(extents)
///
/// Entries whose name starts with "meta/" carry text (one character code
/// per f64) instead of weights.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_tensors(std::span<const Param> entries);
std::vector<Param> decode_tensors(std::span<const std::uint8_t> bytes);

void save_tensors(const std::filesystem::path& path, std::span<const Param> entries);
std::vector<Param> load_tensors(const std::filesystem::path& path);

Param text_entry(const std::string& key, const std::string& text);
std::optional<std::string> find_text(std::span<const Param> entries, const std::string& key);

/// Copies values by name into `params`. Every parameter must be present
/// with an identical shape; otherwise throws naming the first mismatch.
void assign_by_name(std::span<Param> params, std::span<const Param> loaded);

}  // namespace panoswin
