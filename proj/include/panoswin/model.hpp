#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "panoswin/blocks.hpp"

namespace panoswin {

using Stage = std::vector<BlockKind>;

/// Architecture string error; `position` is the 0-based character offset.
class ArchParseError : public std::invalid_argument {
 public:
  ArchParseError(const std::string& what, std::size_t position);
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

/// "[W, PSW, PA], PM, [(W,PSW)*2, W, PA]" -> stages with repeats expanded.
std::vector<Stage> parse_arch(const std::string& s);
/// Canonical, fully expanded form: "[W, PSW, PA], PM, [W, PSW]".
std::string format_arch(const std::vector<Stage>& stages);

std::size_t heads_for_dim(std::size_t dim);

struct ModelConfig {
  std::vector<Stage> stages;
  std::size_t embed_dim = 12;
  std::size_t num_classes = 10;
  std::size_t in_channels = 1;
  std::size_t input_h = 48;
  std::size_t input_w = 96;
  std::size_t patch_stride = 4;
  /// Requested window; each stage uses min(window, stage rows).
  std::size_t window = 6;
  Mode mode = Mode::kPano;
  BlockOptions block;
  std::uint64_t seed = 0;

  std::string arch() const { return format_arch(stages); }
  /// key=value lines; inverse of config_from_text.
  std::string to_text() const;
};

ModelConfig config_from_text(const std::string& text);
ModelConfig make_config(const std::string& arch, std::size_t embed_dim);

/// panoswint8, panoswint12, swint13, panoswint92, swint, panoswint.
ModelConfig preset_config(const std::string& alias);
std::vector<std::string> preset_names();

class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  /// images [B, c, H, W] -> logits [B, classes].
  Tensor forward(const Tensor& images) const;
  /// Final-stage tokens after the closing LayerNorm, [B, N, C].
  Tensor features(const Tensor& images) const;
  /// Pools features and applies the classifier.
  Tensor classify(const Tensor& features) const;

  /// Switches positional encoding, great-circle bias and pitch sampling
  /// together. Weights are untouched.
  void set_mode(Mode mode) { cfg_.mode = mode; }
  Mode mode() const { return cfg_.mode; }

  std::vector<Param> parameters() const;
  std::size_t parameter_count() const;
  const ModelConfig& config() const { return cfg_; }
  const std::vector<PatchGrid>& stage_grids() const { return grids_; }
  const std::vector<std::size_t>& stage_dims() const { return dims_; }
  const std::vector<std::vector<TransformerBlock>>& blocks() const { return blocks_; }

  /// Weights plus meta/config and any extra meta entries.
  void save(const std::filesystem::path& path, const std::map<std::string, std::string>& meta = {}) const;
  static Model load(const std::filesystem::path& path);

 private:
  ModelConfig cfg_;
  std::vector<PatchGrid> grids_;
  std::vector<std::size_t> dims_;
  PatchEmbed embed_;
  AbsPosEncoder abs_pos_;
  std::vector<std::vector<TransformerBlock>> blocks_;
  std::vector<PatchMerge> merges_;
  LayerNorm final_norm_;
  Linear head_;
};

void switch_mode(Model& model, Mode mode);

}  // namespace panoswin
