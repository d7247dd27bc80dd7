#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "doctest.h"
#include "panoswin/gradcheck.hpp"
#include "panoswin/ops.hpp"

using namespace panoswin;

namespace {

Tensor randn(Shape shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = n(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

// Projects onto fixed random weights so every output entry matters.
Tensor probe(const Tensor& t, std::uint64_t seed = 99) { return ops::sum(ops::mul(t, randn(t.shape(), seed))); }

void expect_grad_ok(const std::string& name, const std::function<Tensor()>& f, std::vector<Tensor> inputs) {
  const GradCheckResult r = check_gradients(name, f, std::move(inputs));
  INFO(name << " rel error " << r.max_rel_error);
  CHECK(r.passed);
}

}  // namespace

TEST_CASE("basic values") {
  const Tensor s = ops::softmax_last(Tensor::from({2}, {0.0, 0.0}));
  CHECK(s.at(0) == 0.5);
  CHECK(s.at(1) == 0.5);

  const Tensor a = randn({3, 4}, 1);
  const Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor p = ops::matmul(eye, a);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(p.at(i) == a.at(i));
}

TEST_CASE("shape errors name the op and both shapes") {
  const Tensor a = Tensor::zeros({2, 3}), b = Tensor::zeros({3, 2});
  try {
    ops::add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[3, 2]") != std::string::npos);
  }
  CHECK_THROWS_AS(ops::matmul(a, a), ShapeError);
  CHECK_THROWS_AS(ops::reshape(a, {4}), ShapeError);
}

TEST_CASE("finite-difference gradients per op") {
  Tensor a = randn({2, 3, 2}, 1), b = randn({2, 3, 2}, 2);
  expect_grad_ok("add", [&] { return probe(ops::add(a, b)); }, {a, b});
  expect_grad_ok("sub", [&] { return probe(ops::sub(a, b)); }, {a, b});
  expect_grad_ok("mul", [&] { return probe(ops::mul(a, b)); }, {a, b});
  expect_grad_ok("scale", [&] { return probe(ops::scale(a, -1.7)); }, {a});

  Tensor tb = randn({3, 2}, 3);
  expect_grad_ok("add_tiled", [&] { return probe(ops::add_tiled(a, tb)); }, {a, tb});
  expect_grad_ok("tile", [&] { return probe(ops::tile(tb, 3)); }, {tb});

  Tensor m1 = randn({2, 3, 4}, 4), m2 = randn({2, 4, 2}, 5), shared = randn({4, 3}, 6), m2t = randn({2, 2, 4}, 7);
  expect_grad_ok("matmul", [&] { return probe(ops::matmul(m1, m2)); }, {m1, m2});
  expect_grad_ok("matmul_shared", [&] { return probe(ops::matmul(m1, shared)); }, {m1, shared});
  expect_grad_ok("matmul_tb", [&] { return probe(ops::matmul(m1, m2t, true)); }, {m1, m2t});

  Tensor x = randn({3, 4}, 8), w = randn({5, 4}, 9), bias = randn({5}, 10);
  expect_grad_ok("linear", [&] { return probe(ops::linear(x, w, bias)); }, {x, w, bias});

  Tensor sm = randn({2, 3, 4}, 11);
  expect_grad_ok("softmax_last", [&] { return probe(ops::softmax_last(sm)); }, {sm});
  expect_grad_ok("softmax_axis1", [&] { return probe(ops::softmax(sm, 1)); }, {sm});

  Tensor ln = randn({3, 5}, 12), gamma = randn({5}, 13), beta = randn({5}, 14);
  expect_grad_ok("layer_norm", [&] { return probe(ops::layer_norm(ln, gamma, beta)); }, {ln, gamma, beta});
  expect_grad_ok("gelu", [&] { return probe(ops::gelu(sm)); }, {sm});

  expect_grad_ok("reshape", [&] { return probe(ops::reshape(sm, {4, 6})); }, {sm});
  expect_grad_ok("permute", [&] { return probe(ops::permute(sm, {2, 0, 1})); }, {sm});
  expect_grad_ok("concat", [&] {
    const Tensor parts[] = {a, b};
    return probe(ops::concat(parts, 1));
  }, {a, b});
  expect_grad_ok("slice", [&] { return probe(ops::slice(sm, 2, 1, 3)); }, {sm});
  expect_grad_ok("sum", [&] { return ops::sum(ops::mul(sm, sm)); }, {sm});
  expect_grad_ok("mean", [&] { return ops::mean(ops::mul(sm, sm)); }, {sm});
  expect_grad_ok("mean_axis", [&] { return probe(ops::mean_axis(sm, 1)); }, {sm});

  const std::vector<std::size_t> idx{2, 0, 2, 1};
  expect_grad_ok("gather", [&] { return probe(ops::gather(sm, 2, idx)); }, {sm});

  SampleTaps taps;
  taps.in_size = 3;
  taps.taps = 2;
  taps.index = {0, 1, 2, 0, 1, 1};
  taps.weight = {0.25, 0.75, 0.5, 0.5, 1.0, 0.0};
  expect_grad_ok("resample", [&] { return probe(ops::resample(sm, 1, taps)); }, {sm});

  Tensor logits = randn({3, 4}, 15);
  const std::vector<int> labels{1, 3, 0};
  expect_grad_ok("cross_entropy", [&] { return ops::cross_entropy(logits, labels); }, {logits});
}

TEST_CASE("conv2d gradients and circular padding") {
  Tensor x = randn({2, 2, 4, 6}, 20), w = randn({3, 2, 3, 3}, 21), bias = randn({3}, 22);
  for (bool circ : {false, true}) {
    for (std::size_t stride : {std::size_t{1}, std::size_t{2}}) {
      Conv2dOptions opt{stride, 1, circ};
      expect_grad_ok("conv2d", [&] { return probe(ops::conv2d(x, w, bias, opt)); }, {x, w, bias});
    }
  }
  // Circular padding makes the conv commute with column rolls.
  Conv2dOptions opt{1, 1, true};
  const Tensor y = ops::conv2d(x, w, bias, opt);
  std::vector<std::size_t> roll(6);
  for (std::size_t k = 0; k < 6; ++k) roll[k] = (k + 1) % 6;
  const Tensor y2 = ops::conv2d(ops::gather(x, 3, roll), w, bias, opt);
  const Tensor y_rolled = ops::gather(y, 3, roll);
  for (std::size_t i = 0; i < y2.size(); ++i) CHECK(std::abs(y2.at(i) - y_rolled.at(i)) < 1e-12);
}

TEST_CASE("composite gradient: linear, gelu, layer_norm, softmax, sum") {
  Tensor x = randn({4, 6}, 30), w = randn({5, 6}, 31), bias = randn({5}, 32), gamma = randn({5}, 33), beta = randn({5}, 34);
  expect_grad_ok(
      "composite",
      [&] {
        Tensor h = ops::gelu(ops::linear(x, w, bias));
        h = ops::layer_norm(h, gamma, beta);
        return probe(ops::softmax_last(h));
      },
      {x, w, bias, gamma, beta});
}

TEST_CASE("backward accumulates through shared subgraphs") {
  Tensor x = Tensor::from({2}, {1.5, -2.0}, true);
  Tensor y = ops::add(ops::mul(x, x), x);
  ops::sum(y).backward();
  CHECK(x.grad()[0] == doctest::Approx(4.0));
  CHECK(x.grad()[1] == doctest::Approx(-3.0));
}

TEST_CASE("no-grad guard stops graph recording") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  NoGradGuard g;
  const Tensor y = ops::mul(x, x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("check_finite flags NaN") {
  const Tensor t = Tensor::from({2}, {1.0, std::nan("")});
  CHECK_THROWS(t.check_finite("test"));
}
