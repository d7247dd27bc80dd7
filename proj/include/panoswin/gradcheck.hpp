#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "panoswin/tensor.hpp"

namespace panoswin {

struct GradCheckOptions {
  double eps = 1e-5;
  double tolerance = 1e-4;
  /// Entries probed per input tensor; 0 probes all of them.
  std::size_t max_entries = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  std::string name;
  /// Worst, over inputs, of ||analytic - numeric|| / max(||analytic|| + ||numeric||, 1e-12).
  double max_rel_error = 0.0;
  std::size_t entries_checked = 0;
  bool passed = false;
};

/// Compares reverse-mode gradients of the scalar `loss` against central
/// differences on every tensor in `inputs`. `loss` must rebuild the graph on
/// each call; inputs are perturbed in place and restored.
GradCheckResult check_gradients(const std::string& name, const std::function<Tensor()>& loss, std::vector<Tensor> inputs,
                                const GradCheckOptions& opt = {});

}  // namespace panoswin

namespace panoswin {

/// A named entry of the built-in gradient suite.
struct GradCheckCase {
  std::string name;
  std::function<GradCheckResult(const GradCheckOptions&)> run;
};

/// Every differentiable op, the attention blocks, the KP loss and the full
/// PanoSwinT12 forward. The model case probes `model_entries` random
/// entries of each parameter tensor and 32x that many image pixels.
std::vector<GradCheckCase> gradcheck_suite(std::size_t model_entries = 6);

}  // namespace panoswin
