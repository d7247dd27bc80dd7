#include <random>

#include "panoswin/blocks.hpp"
#include "panoswin/equirect.hpp"
#include "panoswin/gradcheck.hpp"
#include "panoswin/model.hpp"
#include "panoswin/training.hpp"

namespace panoswin {

namespace {

Tensor randn(Shape shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = g(rng);
  return Tensor::from(std::move(shape), v);
}

// Scalar test function: sum of the elementwise product with fixed noise.
Tensor probe(const Tensor& t) { return ops::sum(ops::mul(t, randn(t.shape(), 99))); }

using Fn = std::function<Tensor()>;

GradCheckCase make_case(std::string name, std::function<std::pair<Fn, std::vector<Tensor>>()> setup) {
  return {name, [name, setup](const GradCheckOptions& opt) {
            auto [f, inputs] = setup();
            return check_gradients(name, f, std::move(inputs), opt);
          }};
}

GradCheckCase block_case(const std::string& name, BlockKind kind, Mode mode, bool value_from_key = false) {
  return make_case(name, [=]() -> std::pair<Fn, std::vector<Tensor>> {
    const PatchGrid grid{8, 16, 4};
    Initializer init(5);
    BlockOptions opt;
    opt.pa_value_from_key = value_from_key;
    auto block = std::make_shared<TransformerBlock>(kind, grid, 8, 2, init, opt);
    // Spread alpha so the haversine term matters.
    std::vector<Param> params;
    block->collect("b", params);
    std::mt19937_64 rng(6);
    std::normal_distribution<double> g(0.0, 1.0);
    for (Param& p : params) {
      if (p.name.ends_with(".alpha")) {
        for (double& x : p.tensor.mutable_values()) x = g(rng);
      }
    }
    const Tensor x = randn({1, grid.size(), 8}, 7);
    std::vector<Tensor> inputs{x};
    for (const Param& p : params) inputs.push_back(p.tensor);
    return {[block, x, mode] { return probe(block->forward(x, mode)); }, inputs};
  });
}

}  // namespace

std::vector<GradCheckCase> gradcheck_suite(std::size_t model_entries) {
  std::vector<GradCheckCase> s;
  auto unary = [&](const std::string& name, Shape shape, std::function<Tensor(const Tensor&)> op) {
    s.push_back(make_case(name, [=]() -> std::pair<Fn, std::vector<Tensor>> {
      const Tensor a = randn(shape, 1);
      return {[=] { return probe(op(a)); }, {a}};
    }));
  };
  auto binary = [&](const std::string& name, Shape sa, Shape sb, std::function<Tensor(const Tensor&, const Tensor&)> op) {
    s.push_back(make_case(name, [=]() -> std::pair<Fn, std::vector<Tensor>> {
      const Tensor a = randn(sa, 1), b = randn(sb, 2);
      return {[=] { return probe(op(a, b)); }, {a, b}};
    }));
  };

  binary("add", {3, 4}, {3, 4}, ops::add);
  binary("sub", {3, 4}, {3, 4}, ops::sub);
  binary("mul", {3, 4}, {3, 4}, ops::mul);
  unary("scale", {3, 4}, [](const Tensor& a) { return ops::scale(a, -1.7); });
  binary("add_tiled", {3, 2, 4}, {2, 4}, ops::add_tiled);
  unary("tile", {2, 3}, [](const Tensor& a) { return ops::tile(a, 3); });
  binary("matmul", {2, 3, 4}, {2, 4, 5}, [](const Tensor& a, const Tensor& b) { return ops::matmul(a, b); });
  binary("matmul_transposed", {2, 3, 4}, {2, 5, 4}, [](const Tensor& a, const Tensor& b) { return ops::matmul(a, b, true); });
  s.push_back(make_case("linear", []() -> std::pair<Fn, std::vector<Tensor>> {
    const Tensor x = randn({2, 3, 4}, 1), w = randn({5, 4}, 2), b = randn({5}, 3);
    return {[=] { return probe(ops::linear(x, w, b)); }, {x, w, b}};
  }));
  unary("softmax", {3, 4, 5}, [](const Tensor& a) { return ops::softmax(a, 1); });
  unary("softmax_last", {3, 6}, ops::softmax_last);
  s.push_back(make_case("layer_norm", []() -> std::pair<Fn, std::vector<Tensor>> {
    const Tensor x = randn({4, 6}, 1), g = randn({6}, 2), b = randn({6}, 3);
    return {[=] { return probe(ops::layer_norm(x, g, b)); }, {x, g, b}};
  }));
  unary("gelu", {3, 7}, ops::gelu);
  unary("reshape", {3, 4}, [](const Tensor& a) { return ops::reshape(a, {2, 6}); });
  unary("permute", {2, 3, 4}, [](const Tensor& a) { return ops::permute(a, {2, 0, 1}); });
  binary("concat", {2, 3}, {2, 2}, [](const Tensor& a, const Tensor& b) {
    const std::vector<Tensor> xs{a, b};
    return ops::concat(xs, 1);
  });
  unary("slice", {4, 5}, [](const Tensor& a) { return ops::slice(a, 1, 1, 4); });
  unary("sum", {3, 4}, [](const Tensor& a) { return ops::scale(ops::sum(ops::mul(a, a)), 0.5); });
  unary("mean", {3, 4}, [](const Tensor& a) { return ops::mean(ops::mul(a, a)); });
  unary("mean_axis", {2, 3, 4}, [](const Tensor& a) { return ops::mean_axis(a, 1); });
  unary("gather", {5, 3}, [](const Tensor& a) {
    const std::vector<std::size_t> idx{4, 0, 0, 2};
    return ops::gather(a, 0, idx);
  });
  for (bool circular : {false, true}) {
    s.push_back(make_case(circular ? "conv2d_circular" : "conv2d", [=]() -> std::pair<Fn, std::vector<Tensor>> {
      const Tensor x = randn({2, 2, 5, 8}, 1), w = randn({3, 2, 3, 3}, 2), b = randn({3}, 3);
      const Conv2dOptions opt{circular ? 2u : 1u, 1, circular};
      return {[=] { return probe(ops::conv2d(x, w, b, opt)); }, {x, w, b}};
    }));
  }
  s.push_back(make_case("resample", []() -> std::pair<Fn, std::vector<Tensor>> {
    const auto taps = std::make_shared<SampleTaps>(compile_grid(rotation_grid(6, 12, rotation_taking_pole_to({0.3, 0.4})), 6, 12));
    const Tensor x = randn({2, 72}, 1);
    return {[=] { return probe(ops::resample(x, 1, *taps)); }, {x}};
  }));
  s.push_back(make_case("cross_entropy", []() -> std::pair<Fn, std::vector<Tensor>> {
    const Tensor x = randn({4, 5}, 1);
    return {[=] {
              const std::vector<int> labels{0, 3, 4, 1};
              return ops::cross_entropy(x, labels);
            },
            {x}};
  }));
  s.push_back(make_case("kp_loss", []() -> std::pair<Fn, std::vector<Tensor>> {
    const PatchGrid grid{3, 6, 3};
    const Tensor a = randn({2, grid.size(), 4}, 1), b = randn({2, grid.size(), 4}, 2);
    return {[=] { return kp_loss(a, b, grid.centers()); }, {a, b}};
  }));

  s.push_back(block_case("block_w", BlockKind::kW, Mode::kPano));
  s.push_back(block_case("block_sw", BlockKind::kSW, Mode::kPano));
  s.push_back(block_case("block_psw", BlockKind::kPSW, Mode::kPano));
  s.push_back(block_case("block_psw_swin", BlockKind::kPSW, Mode::kSwin));
  s.push_back(block_case("block_pa", BlockKind::kPA, Mode::kPano));
  s.push_back(block_case("block_pa_value_from_key", BlockKind::kPA, Mode::kPano, true));

  s.push_back(make_case("patch_merge", []() -> std::pair<Fn, std::vector<Tensor>> {
    const PatchGrid grid{4, 8, 2};
    Initializer init(3);
    const auto merge = std::make_shared<PatchMerge>(PatchMerge::make(init, 3));
    const Tensor x = randn({2, grid.size(), 3}, 1);
    std::vector<Param> params;
    merge->collect("m", params);
    std::vector<Tensor> inputs{x};
    for (const Param& p : params) inputs.push_back(p.tensor);
    return {[=] { return probe((*merge)(x, grid)); }, inputs};
  }));
  s.push_back(make_case("abs_pos_embed", []() -> std::pair<Fn, std::vector<Tensor>> {
    Initializer init(4);
    const auto enc = std::make_shared<AbsPosEncoder>(AbsPosEncoder::make(init, 4));
    std::vector<Param> params;
    enc->collect("a", params);
    std::vector<Tensor> inputs;
    for (const Param& p : params) inputs.push_back(p.tensor);
    return {[=] { return probe(abs_pos_embed(PatchGrid{3, 6, 3}, *enc, Mode::kPano)); }, inputs};
  }));

  s.push_back({"panoswint12", [model_entries](const GradCheckOptions& opt) {
                 const Model model(preset_config("panoswint12"));
                 std::vector<Param> params = model.parameters();
                 std::mt19937_64 rng(8);
                 std::normal_distribution<double> g(0.0, 1.0);
                 for (Param& p : params) {
                   if (p.name.ends_with(".alpha")) {
                     for (double& x : p.tensor.mutable_values()) x = g(rng);
                   }
                 }
                 const Tensor x = randn({1, 1, 48, 96}, 9);
                 const Fn f = [&] { return probe(model.forward(x)); };
                 GradCheckOptions img = opt;
                 img.max_entries = 32 * model_entries;
                 GradCheckResult r = check_gradients("panoswint12", f, {x}, img);
                 std::vector<Tensor> ps;
                 for (const Param& p : params) ps.push_back(p.tensor);
                 GradCheckOptions sampled = opt;
                 sampled.max_entries = model_entries;
                 const GradCheckResult rp = check_gradients("panoswint12", f, ps, sampled);
                 r.max_rel_error = std::max(r.max_rel_error, rp.max_rel_error);
                 r.entries_checked += rp.entries_checked;
                 r.passed = r.passed && rp.passed;
                 return r;
               }});
  return s;
}

}  // namespace panoswin
