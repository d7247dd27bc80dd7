#include "panoswin/optim.hpp"

#include <cmath>

namespace panoswin {

void Adam::step(std::span<Param> params) {
  ++t_;
  const double c1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(t_));
  for (Param& p : params) {
    if (p.frozen || !p.tensor.has_grad()) continue;
    auto& st = state_[p.name];
    const std::size_t n = p.tensor.size();
    if (st.m.size() != n) {
      st.m.assign(n, 0.0);
      st.v.assign(n, 0.0);
    }
    auto w = p.tensor.mutable_values();
    const auto g = p.tensor.grad();
    for (std::size_t i = 0; i < n; ++i) {
      st.m[i] = hyper_.beta1 * st.m[i] + (1.0 - hyper_.beta1) * g[i];
      st.v[i] = hyper_.beta2 * st.v[i] + (1.0 - hyper_.beta2) * g[i] * g[i];
      const double mhat = st.m[i] / c1;
      const double vhat = st.v[i] / c2;
      w[i] -= hyper_.lr * mhat / (std::sqrt(vhat) + hyper_.eps);
    }
  }
}

void Adam::zero_grad(std::span<Param> params) const {
  for (Param& p : params) p.tensor.zero_grad();
}

}  // namespace panoswin
