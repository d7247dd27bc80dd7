#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "panoswin/tensor.hpp"

namespace panoswin {

/// Fixed sparse linear map from `in_size` source positions to
/// `out_size()` target positions, `taps` weighted sources per target.
///
/// Bilinear resampling compiles to this once per geometry; the weights are
/// constants, so gradients flow to the sampled values only.
struct SampleTaps {
  std::size_t in_size = 0;
  std::size_t taps = 4;
  std::vector<std::uint32_t> index;
  std::vector<double> weight;

  std::size_t out_size() const { return taps == 0 ? 0 : index.size() / taps; }
};

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  /// Wrap columns around instead of zero padding them (rows are always
  /// zero padded).
  bool circular_width = false;
};

namespace ops {

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

/// a + b where b's shape equals the trailing dims of a (b repeats over the
/// leading dims). The one sanctioned form of implicit repetition.
Tensor add_tiled(const Tensor& a, const Tensor& b);
/// Stacks `count` copies of a along a new leading axis.
Tensor tile(const Tensor& a, std::size_t count);

/// Batched a[..., M, K] @ b[..., K, N]; b may instead be a plain [K, N]
/// matrix shared by every batch. With transpose_b, b is [..., N, K].
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);
/// x[..., in] @ w[out, in]^T + bias[out].
Tensor linear(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias = std::nullopt);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor softmax_last(const Tensor& x);
/// Normalizes over the last axis, then applies per-channel gamma and beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
/// Exact (erf) GELU.
Tensor gelu(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& dims);
Tensor concat(std::span<const Tensor> xs, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Mean over one axis, which is removed from the shape.
Tensor mean_axis(const Tensor& x, std::size_t axis);

/// x[B, Cin, H, W] * w[Cout, Cin, k, k] (+ bias[Cout]).
Tensor conv2d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias, const Conv2dOptions& opt);

/// Selects entries along `axis` (rows of a token matrix, typically).
Tensor gather(const Tensor& x, std::size_t axis, std::span<const std::size_t> index);

/// Applies `taps` along `axis`: out[.., j, ..] = sum_t w[j,t] x[.., idx[j,t], ..].
Tensor resample(const Tensor& x, std::size_t axis, const SampleTaps& taps);

/// Mean softmax cross-entropy of logits[B, K] against class ids.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace ops
}  // namespace panoswin
