#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "panoswin/ops.hpp"
#include "panoswin/tensor.hpp"
#include "panoswin/windowing.hpp"

namespace panoswin {

/// pano: spherical features on. swin: pitch attention degenerates to plain
/// window attention, absolute embeddings and great-circle bias are off.
enum class Mode { kPano, kSwin };

const char* mode_name(Mode m);
Mode parse_mode(const std::string& s);

enum class BlockKind { kW, kSW, kPSW, kPA };

const char* block_kind_name(BlockKind k);

/// Seeded parameter initializer.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}
  /// U(-bound, bound), trainable.
  Tensor uniform(Shape shape, double bound);
  Tensor normal(Shape shape, double stddev);
  Tensor constant(Shape shape, double value);

 private:
  std::mt19937_64 rng_;
};

struct Linear {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out], undefined when absent

  static Linear make(Initializer& init, std::size_t in, std::size_t out, bool with_bias = true);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, std::vector<Param>& out) const;
};

struct LayerNorm {
  Tensor gamma, beta;

  static LayerNorm make(Initializer& init, std::size_t dim);
  Tensor operator()(const Tensor& x) const { return ops::layer_norm(x, gamma, beta); }
  void collect(const std::string& prefix, std::vector<Param>& out) const;
};

struct AttentionConfig {
  std::size_t dim = 0;
  std::size_t heads = 1;
  std::size_t m = 1;
  Mode mode = Mode::kPano;

  std::size_t head_dim() const { return dim / heads; }
};

/// Learnable relative-position tables, [heads, (2m-1)^2] each. alpha scales
/// the haversine separation, beta is the planar bias.
struct RelBiasTable {
  Tensor alpha, beta;

  static RelBiasTable make(Initializer& init, std::size_t heads, std::size_t m);
  void collect(const std::string& prefix, std::vector<Param>& out) const;
};

/// Constant per-block window geometry for the bias: for window w and pair
/// (i, j), the table slot from in-window offsets and the haversine term
/// between the query-side and key-side patch coordinates.
struct BiasGeometry {
  std::size_t windows = 0, m = 1, heads = 1;
  std::vector<std::size_t> rel_index;  // [windows, m^2, m^2] table slots
  Tensor haversine;                    // [windows, heads, m^4], constant

  static BiasGeometry make(std::size_t heads, const WindowLayout& layout, const std::vector<std::vector<LonLat>>& query_coords,
                           const std::vector<std::vector<LonLat>>& key_coords);
};

/// Haversine separation sin^2(dv/2) + cos v_i cos v_j sin^2(du/2).
double haversine(const LonLat& a, const LonLat& b);

/// [windows, heads, m^2, m^2]: alpha * haversine + beta, or beta alone in swin mode.
Tensor rel_bias(const RelBiasTable& table, const BiasGeometry& geo, Mode mode);

/// Two-layer MLP (x, y, z, u, v) -> d -> d with GELU in between.
struct AbsPosEncoder {
  Linear fc1, fc2;

  static AbsPosEncoder make(Initializer& init, std::size_t dim);
  void collect(const std::string& prefix, std::vector<Param>& out) const;
};

/// [patches, d]; all zeros in swin mode.
Tensor abs_pos_embed(const PatchGrid& grid, const AbsPosEncoder& enc, Mode mode);

/// Multi-head attention inside windows. q, k, v are [G, m^2, dim] with G a
/// multiple of the bias window count; bias is [windows, heads, m^2, m^2] or
/// undefined. Returns [G, m^2, dim] before the output projection.
struct AttentionOutput {
  Tensor out;
  Tensor probs;  // [G, heads, m^2, m^2]
};
AttentionOutput multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& bias, std::size_t heads);

/// Window self-attention weights shared by every attention flavor.
struct WindowAttention {
  AttentionConfig cfg;
  Linear qkv, proj;
  RelBiasTable table;

  static WindowAttention make(Initializer& init, const AttentionConfig& cfg);
  void collect(const std::string& prefix, std::vector<Param>& out) const;
};

/// Standard window attention: x [G, m^2, dim] -> [G, m^2, dim], bias added
/// before the softmax, output projection applied.
AttentionOutput w_msa(const Tensor& x, const WindowAttention& attn, const Tensor& bias);

/// Precomputed layout data for one windowed attention over a patch grid.
struct WindowPlan {
  WindowLayout layout;
  std::vector<std::size_t> gather, scatter;
  BiasGeometry geometry;
  Tensor mask;  // [windows, heads, m^2, m^2] or undefined

  static WindowPlan make(const WindowLayout& layout, const PatchGrid& grid, std::size_t heads, const std::vector<double>& mask = {});
};

/// Attention over tokens x [B, N, dim] using `plan`'s windows; output is in
/// the original patch order.
AttentionOutput windowed_attention(const Tensor& x, const WindowAttention& attn, const WindowPlan& plan, Mode mode);

/// Pano-style shifted window attention on tokens [B, N, dim].
AttentionOutput psw_msa(const Tensor& x, const WindowAttention& attn, const WindowPlan& psw_plan, Mode mode);

/// Precomputed sampling for pitch attention.
struct PitchPlan {
  WindowPlan original;      // plain windows: queries and values
  SampleTaps rotate_taps;   // I0 -> I1 on the patch grid
  SampleTaps window_taps;   // I1 -> sampled windows, [windows * m^2]
  BiasGeometry geometry;    // original vs sampled coordinates (I0 frame)
  std::vector<LonLat> sampled_coords_rotated;  // per sampled point, I1 frame

  static PitchPlan make(const PatchGrid& grid, std::size_t heads);
};

/// Pitch attention on tokens [B, N, dim]. Queries (and values, unless
/// value_from_key) come from the original windows, keys from windows sampled
/// in the pitch-rotated map. In swin mode keys come from the original windows.
AttentionOutput pitch_attention(const Tensor& x, const WindowAttention& attn, const PitchPlan& plan, Mode mode,
                                bool value_from_key = false);

/// Three 3x3 convolutions with GELU between them; circular in width.
struct PatchEmbed {
  std::size_t stride = 4;
  Tensor w1, b1, w2, b2, w3, b3;
  LayerNorm norm;

  static PatchEmbed make(Initializer& init, std::size_t in_ch, std::size_t dim, std::size_t stride);
  /// img [B, c, H, W] -> tokens [B, (H/stride) (W/stride), dim].
  Tensor operator()(const Tensor& img) const;
  void collect(const std::string& prefix, std::vector<Param>& out) const;
};

/// 2x2 neighbor concatenation, LayerNorm, then a bias-free 4C -> 2C linear.
struct PatchMerge {
  LayerNorm norm;
  Linear reduce;

  static PatchMerge make(Initializer& init, std::size_t dim);
  Tensor operator()(const Tensor& x, const PatchGrid& grid) const;
  void collect(const std::string& prefix, std::vector<Param>& out) const;
};

/// Rearranges tokens [B, R*C, d] into [B, R/2 * C/2, 4d] (Swin order).
Tensor merge_neighbors(const Tensor& x, const PatchGrid& grid);

struct BlockOptions {
  PswFold psw_fold = PswFold::kVerticalFlip;
  /// In swin mode, run PSW blocks as Swin shifted windows instead.
  bool swin_mode_uses_sw = false;
  /// Take pitch-attention values from the sampled window (ablation).
  bool pa_value_from_key = false;
  double mlp_ratio = 4.0;
};

/// Pre-norm transformer block: x + attn(LN(x)), then x + MLP(LN(x)).
class TransformerBlock {
 public:
  TransformerBlock(BlockKind kind, const PatchGrid& grid, std::size_t dim, std::size_t heads, Initializer& init,
                   const BlockOptions& opt);

  Tensor forward(const Tensor& x, Mode mode) const;
  /// Attention output with probabilities, for inspection.
  AttentionOutput attention(const Tensor& x, Mode mode) const;
  void collect(const std::string& prefix, std::vector<Param>& out) const;

  BlockKind kind() const { return kind_; }
  const PatchGrid& grid() const { return grid_; }
  const WindowAttention& attn() const { return attn_; }

 private:
  BlockKind kind_;
  PatchGrid grid_;
  BlockOptions opt_;
  LayerNorm norm1_, norm2_;
  WindowAttention attn_;
  Linear fc1_, fc2_;
  std::optional<WindowPlan> plan_;      // W, SW, PSW
  std::optional<WindowPlan> sw_plan_;   // PSW's swin-mode substitute
  std::optional<PitchPlan> pitch_;      // PA
};

}  // namespace panoswin
