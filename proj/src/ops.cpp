#include "panoswin/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace panoswin::ops {

using detail::Buffer;

namespace {

using detail::Node;
using Backward = std::function<void(Node&)>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using ConstVec = Eigen::Map<const Eigen::VectorXd>;
using MutVec = Eigen::Map<Eigen::VectorXd>;

Tensor make_result(Shape shape, Buffer data, std::vector<Tensor> inputs, Backward backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (const auto& t : inputs) node->inputs.push_back(t.node_ptr());
      node->backward = std::move(backward);
    }
  }
  return Tensor::wrap(std::move(node));
}

[[noreturn]] void shape_fail(const std::string& op, const Shape& a, const Shape& b, const std::string& why = "") {
  throw ShapeError(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b) + (why.empty() ? "" : " (" + why + ")"));
}

[[noreturn]] void shape_fail(const std::string& op, const Shape& a, const std::string& why) {
  throw ShapeError(op + ": bad shape " + shape_str(a) + " (" + why + ")");
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_fail(op, a.shape(), b.shape());
}

std::size_t prod(const Shape& s, std::size_t begin, std::size_t end) {
  std::size_t n = 1;
  for (std::size_t i = begin; i < end; ++i) n *= s[i];
  return n;
}

void check_axis(const char* op, const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) shape_fail(op, x.shape(), "axis " + std::to_string(axis) + " out of range");
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  Buffer out(a.size());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      for (std::size_t i = 0; i < self.grad.size(); ++i) in->grad[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  Buffer out(a.size());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    if (x.requires_grad) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) x.grad[i] += self.grad[i];
    }
    if (y.requires_grad) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) y.grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  Buffer out(a.size());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    if (x.requires_grad) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) x.grad[i] += self.grad[i] * y.data[i];
    }
    if (y.requires_grad) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) y.grad[i] += self.grad[i] * x.data[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  Buffer out(a.values().begin(), a.values().end());
  for (double& v : out) v *= s;
  return make_result(a.shape(), std::move(out), {a}, [s](Node& self) {
    Node& x = *self.inputs[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) x.grad[i] += s * self.grad[i];
  });
}

Tensor add_tiled(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (bs.size() > as.size() || !std::equal(bs.begin(), bs.end(), as.end() - static_cast<std::ptrdiff_t>(bs.size()))) {
    shape_fail("add_tiled", as, bs, "second shape must match the trailing dims of the first");
  }
  const std::size_t period = b.size();
  Buffer out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % period];
  return make_result(as, std::move(out), {a, b}, [period](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    if (x.requires_grad) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) x.grad[i] += self.grad[i];
    }
    if (y.requires_grad) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) y.grad[i % period] += self.grad[i];
    }
  });
}

Tensor tile(const Tensor& a, std::size_t count) {
  Shape shape{count};
  shape.insert(shape.end(), a.shape().begin(), a.shape().end());
  const std::size_t period = a.size();
  Buffer out(count * period);
  const auto av = a.values();
  for (std::size_t r = 0; r < count; ++r) std::copy(av.begin(), av.end(), out.begin() + static_cast<std::ptrdiff_t>(r * period));
  return make_result(std::move(shape), std::move(out), {a}, [period](Node& self) {
    Node& x = *self.inputs[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) x.grad[i % period] += self.grad[i];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) shape_fail("matmul", as, bs, "operands need rank >= 2");
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as.back();
  const bool shared = bs.size() == 2 && as.size() > 2;
  const std::size_t bk = transpose_b ? bs.back() : bs[bs.size() - 2];
  const std::size_t n = transpose_b ? bs[bs.size() - 2] : bs.back();
  if (bk != k) shape_fail("matmul", as, bs, "inner dimensions differ");
  if (!shared && (bs.size() != as.size() || !std::equal(as.begin(), as.end() - 2, bs.begin()))) {
    shape_fail("matmul", as, bs, "batch dimensions differ");
  }
  const std::size_t batch = prod(as, 0, as.size() - 2);

  Shape out_shape(as.begin(), as.end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);
  Buffer out(batch * m * n);

  const Eigen::Index M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
  if (shared) {
    // One tall product instead of `batch` small ones.
    const Eigen::Index rows = static_cast<Eigen::Index>(batch * m);
    ConstMap A(a.values().data(), rows, K);
    MutMap C(out.data(), rows, N);
    if (transpose_b) {
      C.noalias() = A * ConstMap(b.values().data(), N, K).transpose();
    } else {
      C.noalias() = A * ConstMap(b.values().data(), K, N);
    }
  } else {
    for (std::size_t l = 0; l < batch; ++l) {
      ConstMap A(a.values().data() + l * m * k, M, K);
      MutMap C(out.data() + l * m * n, M, N);
      if (transpose_b) {
        C.noalias() = A * ConstMap(b.values().data() + l * n * k, N, K).transpose();
      } else {
        C.noalias() = A * ConstMap(b.values().data() + l * k * n, K, N);
      }
    }
  }

  return make_result(std::move(out_shape), std::move(out), {a, b}, [=](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    const std::size_t steps = shared ? 1 : batch;
    const Eigen::Index rows = shared ? static_cast<Eigen::Index>(batch * m) : M;
    for (std::size_t l = 0; l < steps; ++l) {
      ConstMap dC(self.grad.data() + l * m * n, rows, N);
      const double* bptr = y.data.data() + (shared ? 0 : l * k * n);
      if (x.requires_grad) {
        MutMap dA(x.grad.data() + l * m * k, rows, K);
        if (transpose_b) {
          dA.noalias() += dC * ConstMap(bptr, N, K);
        } else {
          dA.noalias() += dC * ConstMap(bptr, K, N).transpose();
        }
      }
      if (y.requires_grad) {
        ConstMap A(x.data.data() + l * m * k, rows, K);
        double* gptr = y.grad.data() + (shared ? 0 : l * k * n);
        if (transpose_b) {
          MutMap(gptr, N, K).noalias() += dC.transpose() * A;
        } else {
          MutMap(gptr, K, N).noalias() += A.transpose() * dC;
        }
      }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias) {
  const Shape& xs = x.shape();
  if (w.rank() != 2 || xs.empty() || xs.back() != w.dim(1)) shape_fail("linear", xs, w.shape(), "expects x[..., in] and w[out, in]");
  const std::size_t in = w.dim(1), outf = w.dim(0);
  if (bias && (bias->rank() != 1 || bias->dim(0) != outf)) shape_fail("linear", w.shape(), bias->shape(), "bias must be [out]");
  const std::size_t rows = x.size() / in;
  Shape out_shape = xs;
  out_shape.back() = outf;
  Buffer out(rows * outf);
  const Eigen::Index R = static_cast<Eigen::Index>(rows), I = static_cast<Eigen::Index>(in), O = static_cast<Eigen::Index>(outf);
  MutMap Y(out.data(), R, O);
  Y.noalias() = ConstMap(x.values().data(), R, I) * ConstMap(w.values().data(), O, I).transpose();
  if (bias) Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias->values().data(), O);

  std::vector<Tensor> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  return make_result(std::move(out_shape), std::move(out), std::move(inputs), [R, I, O](Node& self) {
    Node& xn = *self.inputs[0];
    Node& wn = *self.inputs[1];
    ConstMap dY(self.grad.data(), R, O);
    if (xn.requires_grad) MutMap(xn.grad.data(), R, I).noalias() += dY * ConstMap(wn.data.data(), O, I);
    if (wn.requires_grad) MutMap(wn.grad.data(), O, I).noalias() += dY.transpose() * ConstMap(xn.data.data(), R, I);
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
      Eigen::Map<Eigen::RowVectorXd>(self.inputs[2]->grad.data(), O) += dY.colwise().sum();
    }
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  check_axis("softmax", x, axis);
  const Shape& s = x.shape();
  const std::size_t outer = prod(s, 0, axis), n = s[axis], inner = prod(s, axis + 1, s.size());
  Buffer out(x.size());
  const auto xv = x.values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, xv[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(xv[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= z;
    }
  }
  return make_result(s, std::move(out), {x}, [outer, n, inner](Node& self) {
    Node& xn = *self.inputs[0];
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * n * inner + i;
        double dotp = 0.0;
        for (std::size_t j = 0; j < n; ++j) dotp += self.grad[base + j * inner] * self.data[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t p = base + j * inner;
          xn.grad[p] += self.data[p] * (self.grad[p] - dotp);
        }
      }
    }
  });
}

Tensor softmax_last(const Tensor& x) { return softmax(x, x.rank() - 1); }

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() == 0) shape_fail("layer_norm", x.shape(), "empty shape");
  const std::size_t c = x.shape().back();
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) shape_fail("layer_norm", x.shape(), gamma.shape(), "gamma/beta must be [channels]");
  const std::size_t rows = x.size() / c;
  Buffer out(x.size()), xhat(x.size()), inv_std(rows);
  const auto xv = x.values(), g = gamma.values(), b = beta.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (row[j] - mu) * is;
      xhat[r * c + j] = h;
      out[r * c + j] = g[j] * h + b[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [rows, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       Node& xn = *self.inputs[0];
                       Node& gn = *self.inputs[1];
                       Node& bn = *self.inputs[2];
                       const double inv_c = 1.0 / static_cast<double>(c);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* dy = self.grad.data() + r * c;
                         const double* h = xhat.data() + r * c;
                         if (gn.requires_grad) {
                           for (std::size_t j = 0; j < c; ++j) gn.grad[j] += dy[j] * h[j];
                         }
                         if (bn.requires_grad) {
                           for (std::size_t j = 0; j < c; ++j) bn.grad[j] += dy[j];
                         }
                         if (xn.requires_grad) {
                           double m1 = 0.0, m2 = 0.0;
                           for (std::size_t j = 0; j < c; ++j) {
                             const double dh = dy[j] * gn.data[j];
                             m1 += dh;
                             m2 += dh * h[j];
                           }
                           m1 *= inv_c;
                           m2 *= inv_c;
                           for (std::size_t j = 0; j < c; ++j) {
                             const double dh = dy[j] * gn.data[j];
                             xn.grad[r * c + j] += inv_std[r] * (dh - m1 - h[j] * m2);
                           }
                         }
                       }
                     });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  Buffer out(x.size());
  Buffer cdf(x.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    cdf[i] = 0.5 * (1.0 + std::erf(xv[i] * inv_sqrt2));
    out[i] = xv[i] * cdf[i];
  }
  if (!grad_enabled() || !x.requires_grad()) cdf = {};
  return make_result(x.shape(), std::move(out), {x}, [cdf = std::move(cdf)](Node& self) {
    constexpr double inv_sqrt2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    Node& xn = *self.inputs[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double v = xn.data[i];
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
      xn.grad[i] += self.grad[i] * (cdf[i] + v * pdf);
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) shape_fail("reshape", x.shape(), shape, "element counts differ");
  Buffer out(x.values().begin(), x.values().end());
  return make_result(std::move(shape), std::move(out), {x}, [](Node& self) {
    Node& xn = *self.inputs[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) xn.grad[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& dims) {
  const Shape& s = x.shape();
  const std::size_t r = s.size();
  std::vector<bool> seen(r, false);
  bool ok = dims.size() == r;
  for (std::size_t d : dims) {
    if (!ok || d >= r || seen[d]) {
      ok = false;
      break;
    }
    seen[d] = true;
  }
  if (!ok) shape_fail("permute", s, "dims are not a permutation of the axes");

  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * s[i];
  Shape out_shape(r);
  std::vector<std::size_t> step(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = s[dims[i]];
    step[i] = in_stride[dims[i]];
  }

  const std::size_t n = x.size();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> counter(r, 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    src[i] = offset;
    for (std::size_t d = r; d-- > 0;) {
      if (++counter[d] < out_shape[d]) {
        offset += step[d];
        break;
      }
      offset -= step[d] * (out_shape[d] - 1);
      counter[d] = 0;
    }
  }
  Buffer out(n);
  const auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = xv[src[i]];
  return make_result(std::move(out_shape), std::move(out), {x}, [src = std::move(src)](Node& self) {
    Node& xn = *self.inputs[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) xn.grad[src[i]] += self.grad[i];
  });
}

Tensor concat(std::span<const Tensor> xs, std::size_t axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  check_axis("concat", xs[0], axis);
  const Shape& s0 = xs[0].shape();
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const Tensor& t : xs) {
    const Shape& s = t.shape();
    if (s.size() != s0.size()) shape_fail("concat", s0, s, "ranks differ");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != s0[d]) shape_fail("concat", s0, s, "non-concat dims differ");
    }
    out_shape[axis] += s[axis];
  }
  const std::size_t outer = prod(s0, 0, axis), inner = prod(s0, axis + 1, s0.size());
  const std::size_t out_row = out_shape[axis] * inner;
  Buffer out(numel(out_shape));
  std::vector<std::size_t> widths;
  std::size_t col = 0;
  for (const Tensor& t : xs) {
    const std::size_t w = t.dim(axis) * inner;
    const auto v = t.values();
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(v.data() + o * w, w, out.data() + o * out_row + col);
    widths.push_back(w);
    col += w;
  }
  std::vector<Tensor> inputs(xs.begin(), xs.end());
  return make_result(std::move(out_shape), std::move(out), std::move(inputs), [outer, out_row, widths = std::move(widths)](Node& self) {
    std::size_t c = 0;
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      Node& in = *self.inputs[k];
      const std::size_t w = widths[k];
      if (in.requires_grad) {
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t j = 0; j < w; ++j) in.grad[o * w + j] += self.grad[o * out_row + c + j];
        }
      }
      c += w;
    }
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  check_axis("slice", x, axis);
  const Shape& s = x.shape();
  if (begin > end || end > s[axis]) {
    shape_fail("slice", s, "range [" + std::to_string(begin) + ", " + std::to_string(end) + ") on axis " + std::to_string(axis));
  }
  const std::size_t outer = prod(s, 0, axis), inner = prod(s, axis + 1, s.size());
  const std::size_t in_row = s[axis] * inner, w = (end - begin) * inner, off = begin * inner;
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  Buffer out(outer * w);
  const auto v = x.values();
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(v.data() + o * in_row + off, w, out.data() + o * w);
  return make_result(std::move(out_shape), std::move(out), {x}, [outer, in_row, w, off](Node& self) {
    Node& xn = *self.inputs[0];
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < w; ++j) xn.grad[o * in_row + off + j] += self.grad[o * w + j];
    }
  });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return make_result({1}, {acc}, {x}, [](Node& self) {
    Node& xn = *self.inputs[0];
    for (double& g : xn.grad) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) shape_fail("mean", x.shape(), "no elements");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  check_axis("mean_axis", x, axis);
  const Shape& s = x.shape();
  const std::size_t outer = prod(s, 0, axis), n = s[axis], inner = prod(s, axis + 1, s.size());
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape = {1};
  Buffer out(outer * inner, 0.0);
  const auto v = x.values();
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < n; ++j) {
      const double* row = v.data() + (o * n + j) * inner;
      double* dst = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += row[i];
    }
  }
  for (double& d : out) d *= inv;
  return make_result(std::move(out_shape), std::move(out), {x}, [outer, n, inner, inv](Node& self) {
    Node& xn = *self.inputs[0];
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < n; ++j) {
        double* row = xn.grad.data() + (o * n + j) * inner;
        const double* g = self.grad.data() + o * inner;
        for (std::size_t i = 0; i < inner; ++i) row[i] += inv * g[i];
      }
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias, const Conv2dOptions& opt) {
  if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1)) shape_fail("conv2d", x.shape(), w.shape(), "expects x[B,Cin,H,W], w[Cout,Cin,kh,kw]");
  if (opt.stride == 0) shape_fail("conv2d", x.shape(), "stride must be positive");
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (bias && bias->shape() != Shape{cout}) shape_fail("conv2d", w.shape(), bias->shape(), "bias must be [Cout]");
  if (h + 2 * opt.padding < kh || wd + 2 * opt.padding < kw) shape_fail("conv2d", x.shape(), w.shape(), "kernel larger than padded input");
  const std::size_t ho = (h + 2 * opt.padding - kh) / opt.stride + 1;
  const std::size_t wo = (wd + 2 * opt.padding - kw) / opt.stride + 1;
  const std::size_t patch = cin * kh * kw, pix = ho * wo, in_plane = cin * h * wd;

  // Column table shared by every batch element: source offset within one
  // sample, or -1 for zero padding.
  std::vector<std::int64_t> src(patch * pix);
  for (std::size_t ci = 0; ci < cin; ++ci) {
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        const std::size_t row = (ci * kh + i) * kw + j;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::int64_t>(oy * opt.stride + i) - static_cast<std::int64_t>(opt.padding);
          for (std::size_t ox = 0; ox < wo; ++ox) {
            auto ix = static_cast<std::int64_t>(ox * opt.stride + j) - static_cast<std::int64_t>(opt.padding);
            std::int64_t s = -1;
            if (iy >= 0 && iy < static_cast<std::int64_t>(h)) {
              if (opt.circular_width) {
                const auto W = static_cast<std::int64_t>(wd);
                ix = ((ix % W) + W) % W;
              }
              if (ix >= 0 && ix < static_cast<std::int64_t>(wd)) {
                s = static_cast<std::int64_t>(ci * h * wd) + iy * static_cast<std::int64_t>(wd) + ix;
              }
            }
            src[row * pix + oy * wo + ox] = s;
          }
        }
      }
    }
  }

  // Columns are built one sample at a time so they stay in cache; backward
  // rebuilds them rather than keeping a batch-sized copy alive.
  const auto C = static_cast<Eigen::Index>(cout), P = static_cast<Eigen::Index>(patch), T = static_cast<Eigen::Index>(pix);
  auto build_cols = [=, &src](const double* xb, double* cols) {
    for (std::size_t r = 0; r < patch; ++r) {
      const std::int64_t* s = src.data() + r * pix;
      double* dst = cols + r * pix;
      for (std::size_t p = 0; p < pix; ++p) dst[p] = s[p] >= 0 ? xb[s[p]] : 0.0;
    }
  };
  Buffer cols(patch * pix);
  Buffer out(batch * cout * pix);
  const auto xv = x.values();
  const ConstMap W(w.values().data(), C, P);
  for (std::size_t b = 0; b < batch; ++b) {
    build_cols(xv.data() + b * in_plane, cols.data());
    MutMap Y(out.data() + b * cout * pix, C, T);
    Y.noalias() = W * ConstMap(cols.data(), P, T);
    if (bias) Y.colwise() += Eigen::Map<const Eigen::VectorXd>(bias->values().data(), C);
  }

  std::vector<Tensor> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  return make_result(
      {batch, cout, ho, wo}, std::move(out), std::move(inputs),
      [=, src = std::move(src)](Node& self) {
        Node& xn = *self.inputs[0];
        Node& wn = *self.inputs[1];
        Node* bn = self.inputs.size() > 2 ? self.inputs[2].get() : nullptr;
        Buffer cols(patch * pix), dcols(xn.requires_grad ? patch * pix : 0);
        auto rebuild = [&](const double* xb) {
          for (std::size_t r = 0; r < patch; ++r) {
            const std::int64_t* s = src.data() + r * pix;
            double* dst = cols.data() + r * pix;
            for (std::size_t p = 0; p < pix; ++p) dst[p] = s[p] >= 0 ? xb[s[p]] : 0.0;
          }
        };
        for (std::size_t b = 0; b < batch; ++b) {
          const ConstMap dY(self.grad.data() + b * cout * pix, C, T);
          if (wn.requires_grad) {
            rebuild(xn.data.data() + b * in_plane);
            MutMap(wn.grad.data(), C, P).noalias() += dY * ConstMap(cols.data(), P, T).transpose();
          }
          if (bn != nullptr && bn->requires_grad) MutVec(bn->grad.data(), C) += dY.rowwise().sum();
          if (xn.requires_grad) {
            MutMap(dcols.data(), P, T).noalias() = ConstMap(wn.data.data(), C, P).transpose() * dY;
            double* gx = xn.grad.data() + b * in_plane;
            for (std::size_t r = 0; r < patch; ++r) {
              const double* dc = dcols.data() + r * pix;
              const std::int64_t* s = src.data() + r * pix;
              for (std::size_t p = 0; p < pix; ++p) {
                if (s[p] >= 0) gx[s[p]] += dc[p];
              }
            }
          }
        }
      });
}

Tensor gather(const Tensor& x, std::size_t axis, std::span<const std::size_t> index) {
  check_axis("gather", x, axis);
  const Shape& s = x.shape();
  const std::size_t outer = prod(s, 0, axis), n = s[axis], inner = prod(s, axis + 1, s.size());
  for (std::size_t i : index) {
    if (i >= n) shape_fail("gather", s, "index " + std::to_string(i) + " out of range on axis " + std::to_string(axis));
  }
  const std::size_t k = index.size();
  Shape out_shape = s;
  out_shape[axis] = k;
  Buffer out(outer * k * inner);
  const auto v = x.values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < k; ++j) {
      std::copy_n(v.data() + (o * n + index[j]) * inner, inner, out.data() + (o * k + j) * inner);
    }
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_result(std::move(out_shape), std::move(out), {x}, [outer, n, inner, idx = std::move(idx)](Node& self) {
    Node& xn = *self.inputs[0];
    const std::size_t k = idx.size();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < k; ++j) {
        double* dst = xn.grad.data() + (o * n + idx[j]) * inner;
        const double* g = self.grad.data() + (o * k + j) * inner;
        for (std::size_t i = 0; i < inner; ++i) dst[i] += g[i];
      }
    }
  });
}

Tensor resample(const Tensor& x, std::size_t axis, const SampleTaps& taps) {
  check_axis("resample", x, axis);
  const Shape& s = x.shape();
  if (s[axis] != taps.in_size) {
    shape_fail("resample", s, "axis " + std::to_string(axis) + " has " + std::to_string(s[axis]) + " entries, taps expect " +
                                  std::to_string(taps.in_size));
  }
  if (taps.weight.size() != taps.index.size()) throw ShapeError("resample: tap index/weight lengths differ");
  const std::size_t outer = prod(s, 0, axis), n = s[axis], inner = prod(s, axis + 1, s.size());
  const std::size_t m = taps.out_size(), t = taps.taps;
  Shape out_shape = s;
  out_shape[axis] = m;
  Buffer out(outer * m * inner, 0.0);
  const auto v = x.values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < m; ++j) {
      double* dst = out.data() + (o * m + j) * inner;
      for (std::size_t q = 0; q < t; ++q) {
        const double wgt = taps.weight[j * t + q];
        if (wgt == 0.0) continue;
        const double* row = v.data() + (o * n + taps.index[j * t + q]) * inner;
        for (std::size_t i = 0; i < inner; ++i) dst[i] += wgt * row[i];
      }
    }
  }
  return make_result(std::move(out_shape), std::move(out), {x}, [outer, n, inner, m, t, taps](Node& self) {
    Node& xn = *self.inputs[0];
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < m; ++j) {
        const double* g = self.grad.data() + (o * m + j) * inner;
        for (std::size_t q = 0; q < t; ++q) {
          const double wgt = taps.weight[j * t + q];
          if (wgt == 0.0) continue;
          double* dst = xn.grad.data() + (o * n + taps.index[j * t + q]) * inner;
          for (std::size_t i = 0; i < inner; ++i) dst[i] += wgt * g[i];
        }
      }
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    shape_fail("cross_entropy", logits.shape(), Shape{labels.size()}, "expects logits[B, K] and B labels");
  }
  const std::size_t batch = logits.dim(0), k = logits.dim(1);
  Buffer prob(batch * k);
  std::vector<int> lab(labels.begin(), labels.end());
  double loss = 0.0;
  const auto v = logits.values();
  for (std::size_t b = 0; b < batch; ++b) {
    if (lab[b] < 0 || static_cast<std::size_t>(lab[b]) >= k) throw std::out_of_range("cross_entropy: label out of range");
    const double* row = v.data() + b * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < k; ++j) prob[b * k + j] = std::exp(row[j] - mx) / z;
    loss += -(row[lab[b]] - mx - std::log(z));
  }
  loss /= static_cast<double>(batch);
  return make_result({1}, {loss}, {logits}, [batch, k, prob = std::move(prob), lab = std::move(lab)](Node& self) {
    Node& xn = *self.inputs[0];
    const double g = self.grad[0] / static_cast<double>(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t j = 0; j < k; ++j) {
        const double onehot = static_cast<int>(j) == lab[b] ? 1.0 : 0.0;
        xn.grad[b * k + j] += g * (prob[b * k + j] - onehot);
      }
    }
  });
}

}  // namespace panoswin::ops
