#include <cmath>
#include <random>

#include "doctest.h"
#include "panoswin/training.hpp"

using namespace panoswin;

namespace {

Tensor random_features(std::size_t b, std::size_t n, std::size_t c, std::uint64_t seed, bool grad = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(b * n * c);
  for (double& x : v) x = g(rng);
  return Tensor::from({b, n, c}, std::move(v), grad);
}

std::vector<double> param_values(const Model& m, const std::string& suffix) {
  std::vector<double> out;
  for (const Param& p : m.parameters()) {
    if (p.name.ends_with(suffix)) out.insert(out.end(), p.tensor.values().begin(), p.tensor.values().end());
  }
  return out;
}

std::vector<double> all_values(const Model& m) { return param_values(m, ""); }

TrainConfig tiny_config() {
  TrainConfig c;
  c.epochs_planar = 1;
  c.epochs_pano = 2;
  c.batch = 8;
  c.seed = 3;
  return c;
}

const Dataset& tiny_data() {
  static const Dataset d = make_split(SplitKind::kTrain, 16, 3);
  return d;
}

}  // namespace

TEST_CASE("KP weights") {
  const std::vector<LonLat> pts{{0, 0}, {kPi, 0}, {-kPi, 0.3}, {0.2, kHalfPi}, {-1.0, -kHalfPi}, {kHalfPi, kPi / 4}};
  const auto w = kp_weights(pts);
  CHECK(w[0] == 1.0);
  CHECK(w[1] == 0.0);
  CHECK(w[2] == 0.0);
  CHECK(w[3] == 0.0);
  CHECK(w[4] == 0.0);
  CHECK(w[5] == doctest::Approx(std::pow(std::cos(kPi / 4), 2) * std::pow(std::cos(kPi / 4), 2)).epsilon(1e-14));
  for (double x : kp_weights(pts, true)) CHECK(x == 1.0);
}

TEST_CASE("KP loss values") {
  const PatchGrid grid{6, 12, 6};
  const auto coords = grid.centers();
  const Tensor t = random_features(2, grid.size(), 5, 1);

  CHECK(kp_loss(t, t, coords).item() == 0.0);

  // Unit gap on every token: the weights cancel.
  std::vector<double> shifted(t.values().begin(), t.values().end());
  for (std::size_t i = 0; i < shifted.size(); i += 5) shifted[i] += 1.0;
  const Tensor s = Tensor::from(t.shape(), shifted);
  CHECK(kp_loss(s, t, coords).item() == doctest::Approx(1.0).epsilon(1e-14));

  // Uniform weights give the plain mean squared feature error.
  const Tensor r = random_features(2, grid.size(), 5, 2);
  double mse = 0;
  for (std::size_t i = 0; i < r.size(); ++i) mse += (r.at(i) - t.at(i)) * (r.at(i) - t.at(i));
  mse /= 2.0 * grid.size();
  CHECK(std::abs(kp_loss(r, t, coords, true).item() - mse) < 1e-12);

  // Weighted version by direct summation.
  const auto w = kp_weights(coords);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    den += w[i];
    for (std::size_t b = 0; b < 2; ++b) {
      for (std::size_t c = 0; c < 5; ++c) {
        const std::size_t k = (b * grid.size() + i) * 5 + c;
        num += w[i] * (r.at(k) - t.at(k)) * (r.at(k) - t.at(k));
      }
    }
  }
  CHECK(kp_loss(r, t, coords).item() == doctest::Approx(num / den / 2.0).epsilon(1e-12));
  CHECK(kp_loss(r, t, coords).item() >= 0.0);

  CHECK_THROWS_AS(kp_loss(r, random_features(2, grid.size(), 4, 3), coords), ShapeError);
  CHECK_THROWS_AS(kp_loss(r, t, PatchGrid{3, 6, 3}.centers()), ShapeError);
}

TEST_CASE("KP gradient vanishes where the weight does") {
  const std::vector<LonLat> pts{{0.1, 0.2}, {kPi, 0.0}, {0.5, -kHalfPi}, {-0.4, kHalfPi}, {-2.0, 0.4}};
  const Tensor s = random_features(3, pts.size(), 4, 5, true);
  const Tensor t = random_features(3, pts.size(), 4, 6);
  kp_loss(s, t, pts).backward();
  const auto g = s.grad();
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t i = 0; i < pts.size(); ++i) {
      for (std::size_t c = 0; c < 4; ++c) {
        const double x = g[(b * pts.size() + i) * 4 + c];
        if (i >= 1 && i <= 3) {
          CHECK(x == 0.0);
        } else {
          CHECK(x != 0.0);
        }
      }
    }
  }
}

TEST_CASE("identity adapter on matching models gives zero KP") {
  Model m(preset_config("panoswint12"));
  const Model copy = clone_model(m);
  CHECK(all_values(copy) == all_values(m));
  // Independent storage.
  Model scratch = clone_model(m);
  scratch.parameters().front().tensor.mutable_values()[0] += 1.0;
  CHECK(all_values(scratch) != all_values(m));
  CHECK(all_values(copy) == all_values(m));

  const Tensor x = tiny_data().batch_images({0, 1, 2});
  const Linear adapter = make_identity_adapter(m.stage_dims().back());
  const Tensor fs = m.features(x), ft = copy.features(x);
  CHECK(kp_loss(adapter(fs), ft, m.stage_grids().back().centers()).item() == 0.0);
}

TEST_CASE("config text round trip and errors") {
  TrainConfig c;
  c.arch = "[W, PSW], PM, [W]";
  c.embed_dim = 8;
  c.mode = Mode::kSwin;
  c.lr = 2.5e-4;
  c.kp = false;
  c.kp_uniform = true;
  c.freeze = BiasFreeze::kAlpha;
  c.test_split = SplitKind::kTestPolar;
  c.seed = 11;
  const TrainConfig back = parse_train_config(c.to_text());
  CHECK(back.to_text() == c.to_text());
  CHECK(back.lr == c.lr);
  CHECK(back.model_config().embed_dim == 8);
  CHECK(parse_train_config("# comment\narch = panoswint8\n").model_config().patch_stride == 2);

  CHECK_THROWS_WITH(parse_train_config("speed=3"), doctest::Contains("unknown key"));
  CHECK_THROWS_WITH(parse_train_config("kp=maybe"), doctest::Contains("on or off"));
  CHECK_THROWS_WITH(parse_train_config("a\n"), doctest::Contains("line 1"));
  CHECK_THROWS(parse_train_config("stage=third"));
  CHECK_THROWS(parse_train_config("batch=0"));
  CHECK(parse_bias_freeze("none") == BiasFreeze::kNone);
  CHECK_THROWS(parse_bias_freeze("gamma"));
}

TEST_CASE("normalizer and metrics rows") {
  const Tensor t = Tensor::from({4}, {1.0, 2.0, 3.0, 4.0});
  const Normalizer n = Normalizer::fit(t);
  CHECK(n.mean == 2.5);
  CHECK(n.stddev == doctest::Approx(std::sqrt(1.25)));
  const Tensor z = n.apply(t);
  CHECK(z.at(0) + z.at(3) == doctest::Approx(0.0));
  CHECK(Normalizer::fit(Tensor::from({2}, {3.0, 3.0})).stddev == 1.0);

  EpochMetrics m{4, "pano", 0.5, 0.25, 0.1, 0.2};
  CHECK(metrics_csv_header() == "epoch,stage,loss,kp_loss,train_err,test_err");
  CHECK(metrics_csv_row(m) == "4,pano,0.500000,0.250000,0.1000,0.2000");
}

TEST_CASE("two-stage run: frozen teacher, frozen beta, determinism") {
  TrainConfig planar_only = tiny_config();
  planar_only.stage = "planar";
  const TrainResult stage1 = run_two_stage(planar_only, tiny_data());
  CHECK(stage1.model.mode() == Mode::kSwin);
  CHECK_FALSE(stage1.teacher.has_value());

  const TrainConfig cfg = tiny_config();
  std::vector<std::string> rows;
  const TrainResult full = run_two_stage(cfg, tiny_data(), &tiny_data(), [&](const EpochMetrics& m) { rows.push_back(metrics_csv_row(m)); });
  REQUIRE(rows.size() == 3);
  CHECK(full.metrics[0].stage == "planar");
  CHECK(full.metrics[2].stage == "pano");
  CHECK(full.metrics[2].epoch == 2);
  CHECK(full.metrics[1].kp_loss > 0.0);
  // w_KP has decayed to zero in the last epoch.
  CHECK(full.metrics[2].kp_loss == 0.0);
  CHECK(full.model.mode() == Mode::kPano);

  REQUIRE(full.teacher.has_value());
  CHECK(full.teacher->mode() == Mode::kSwin);
  CHECK(all_values(*full.teacher) == all_values(stage1.model));
  CHECK(param_values(full.model, ".rel.beta") == param_values(stage1.model, ".rel.beta"));
  CHECK(param_values(full.model, ".rel.alpha") != param_values(stage1.model, ".rel.alpha"));
  CHECK(all_values(full.model) != all_values(stage1.model));

  const TrainResult again = run_two_stage(cfg, tiny_data());
  CHECK(all_values(again.model) == all_values(full.model));

  TrainConfig alpha = cfg;
  alpha.freeze = BiasFreeze::kAlpha;
  const TrainResult lit = run_two_stage(alpha, tiny_data());
  CHECK(param_values(lit.model, ".rel.alpha") == param_values(stage1.model, ".rel.alpha"));
  CHECK(param_values(lit.model, ".rel.beta") != param_values(stage1.model, ".rel.beta"));
}

TEST_CASE("without KP, stage 2 is plain fine-tuning") {
  TrainConfig cfg = tiny_config();
  cfg.kp = false;
  const TrainResult joint = run_two_stage(cfg, tiny_data());
  CHECK_FALSE(joint.teacher.has_value());
  for (const EpochMetrics& m : joint.metrics) CHECK(m.kp_loss == 0.0);

  TrainConfig planar_only = cfg;
  planar_only.stage = "planar";
  const TrainResult stage1 = run_two_stage(planar_only, tiny_data());
  TrainConfig tune = cfg;
  tune.stage = "pano";
  const TrainResult split = run_two_stage(tune, tiny_data(), nullptr, {}, &stage1.model);
  CHECK(all_values(split.model) == all_values(joint.model));

  // A fresh model in stage 2 alone has no teacher.
  TrainConfig fresh = tiny_config();
  fresh.stage = "pano";
  fresh.epochs_pano = 1;
  CHECK_FALSE(run_two_stage(fresh, tiny_data()).teacher.has_value());
}

TEST_CASE("evaluate counts errors") {
  const Model m(preset_config("panoswint12"));
  const Dataset& d = tiny_data();
  const double err = evaluate(m, Normalizer::fit(d.images), d, 5);
  CHECK(err >= 0.0);
  CHECK(err <= 1.0);
  CHECK(err * 16 == doctest::Approx(std::round(err * 16)));
}
