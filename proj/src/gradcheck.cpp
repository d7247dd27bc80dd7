#include "panoswin/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace panoswin {

GradCheckResult check_gradients(const std::string& name, const std::function<Tensor()>& loss, std::vector<Tensor> inputs,
                                const GradCheckOptions& opt) {
  for (Tensor& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor out = loss();
  out.backward();

  std::mt19937_64 rng(opt.seed);
  GradCheckResult res;
  res.name = name;
  for (Tensor& t : inputs) {
    const std::size_t n = t.size();
    std::vector<std::size_t> probe(n);
    std::iota(probe.begin(), probe.end(), std::size_t{0});
    if (opt.max_entries != 0 && n > opt.max_entries) {
      std::shuffle(probe.begin(), probe.end(), rng);
      probe.resize(opt.max_entries);
    }
    std::vector<double> analytic;
    analytic.reserve(probe.size());
    const auto g = t.grad();
    for (std::size_t i : probe) analytic.push_back(g.empty() ? 0.0 : g[i]);

    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    auto vals = t.mutable_values();
    for (std::size_t k = 0; k < probe.size(); ++k) {
      const std::size_t i = probe[k];
      const double saved = vals[i];
      double plus = 0.0, minus = 0.0;
      {
        NoGradGuard ng;
        vals[i] = saved + opt.eps;
        plus = loss().item();
        vals[i] = saved - opt.eps;
        minus = loss().item();
      }
      vals[i] = saved;
      const double numeric = (plus - minus) / (2.0 * opt.eps);
      diff2 += (analytic[k] - numeric) * (analytic[k] - numeric);
      a2 += analytic[k] * analytic[k];
      n2 += numeric * numeric;
    }
    const double denom = std::max(std::sqrt(a2) + std::sqrt(n2), 1e-12);
    res.max_rel_error = std::max(res.max_rel_error, std::sqrt(diff2) / denom);
    res.entries_checked += probe.size();
  }
  res.passed = res.max_rel_error < opt.tolerance;
  return res;
}

}  // namespace panoswin
