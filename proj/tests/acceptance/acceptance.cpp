// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails. `--only 1,2,7` restricts the run; `--runs DIR`
// keeps per-epoch CSVs of the training criteria; `--report FILE` appends
// the result lines to FILE.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "panoswin/equirect.hpp"
#include "panoswin/gradcheck.hpp"
#include "panoswin/model.hpp"
#include "panoswin/training.hpp"
#include "panoswin/windowing.hpp"

using namespace panoswin;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[2048];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ------------------------------------------------------------ 1 geometry

Outcome geometry() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> uu(-kPi, kPi), zz(-1.0, 1.0);
  auto draw = [&] { return LonLat{uu(rng), std::asin(zz(rng))}; };
  double dist = 0, lat = 0, mat = 0;
  for (int i = 0; i < 10000; ++i) {
    const LonLat p = draw(), q = draw(), p1 = draw();
    const LonLat rp = rotate_coord(p, p1), rq = rotate_coord(q, p1);
    dist = std::max(dist, std::abs(angular_distance(rp, rq) - angular_distance(p, q)));
    // The new latitude is the arc to p1 less a quarter turn.
    const double arc = std::acos(std::clamp(dot(sph(p), sph(p1)), -1.0, 1.0));
    const double half_chord = 0.5 * norm(Cart3{sph(p).x - sph(p1).x, sph(p).y - sph(p1).y, sph(p).z - sph(p1).z});
    const double arc_chord = 2.0 * std::asin(std::min(1.0, half_chord));
    lat = std::max(lat, std::abs(rp.v - ((arc < 0.1 || arc > kPi - 0.1 ? arc_chord : arc) - kHalfPi)));
    mat = std::max(mat, angular_distance(rp, apply_inverse(rotation_taking_pole_to(p1), p)));
  }
  const double t = seconds_since(t0);
  return {dist < 1e-8 && lat < 1e-9 && mat < 1e-8 && t < 5.0,
          fmt("10000 triples: distance %.1e (<1e-8), latitude %.1e (<1e-9), matrix %.1e (<1e-8), %.2f s (<5)", dist, lat, mat, t)};
}

// ------------------------------------------------------------ 2 PSW

using Grid = std::vector<std::vector<std::size_t>>;

// Simulates roll / fold / stack / roll on a labelled grid.
Grid psw_steps(std::size_t rows, std::size_t cols, std::size_t m) {
  Grid g(rows, std::vector<std::size_t>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) g[r][c] = r * cols + (c + m / 2) % cols;
  }
  Grid stacked;
  for (std::size_t r = rows; r-- > 0;) stacked.emplace_back(g[r].begin() + static_cast<long>(cols / 2), g[r].end());
  for (std::size_t r = 0; r < rows; ++r) stacked.emplace_back(g[r].begin(), g[r].begin() + static_cast<long>(cols / 2));
  Grid out(stacked.size());
  for (std::size_t r = 0; r < stacked.size(); ++r) out[r] = stacked[(r + m / 2) % stacked.size()];
  return out;
}

Outcome psw() {
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t mismatches = 0, pole_misses = 0, checked = 0;
  for (auto [rows, cols, m] : {std::array<std::size_t, 3>{8, 16, 4}, {12, 24, 6}}) {
    const WindowLayout lay = psw_layout({rows, cols, m});
    const Grid oracle = psw_steps(rows, cols, m);
    const std::size_t lc = oracle[0].size();
    // Bijectivity.
    std::vector<int> hits(rows * cols, 0);
    for (std::size_t p : lay.perm) {
      if (p < hits.size()) ++hits[p];
    }
    for (int h : hits) mismatches += h != 1;
    // Positions and windows.
    std::vector<std::size_t> window(rows * cols);
    for (std::size_t r = 0; r < oracle.size(); ++r) {
      for (std::size_t c = 0; c < lc; ++c) {
        mismatches += lay.perm[oracle[r][c]] != r * lc + c;
        window[oracle[r][c]] = (r / m) * (lc / m) + c / m;
        ++checked;
      }
    }
    for (std::size_t w = 0; w < lay.groups.size(); ++w) {
      for (std::size_t i : lay.groups[w]) mismatches += window[i] != w;
    }
    // Patches half a turn apart in the polar rows share a window.
    for (std::size_t r : {std::size_t{0}, rows - 1}) {
      for (std::size_t k = 0; k < cols; ++k) pole_misses += window[r * cols + k] != window[r * cols + (k + cols / 2) % cols];
    }
  }
  const double t = seconds_since(t0);
  return {mismatches == 0 && pole_misses == 0 && t < 1.0,
          fmt("8x16/4 and 12x24/6: %zu positions checked, %zu mismatches, %zu pole-adjacency misses, %.3f s (<1)", checked,
              mismatches, pole_misses, t)};
}

// ------------------------------------------------------------ 3 gradients

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  std::string worst_name, failed;
  std::size_t n = 0;
  for (const GradCheckCase& c : gradcheck_suite()) {
    const GradCheckResult r = c.run({});
    ++n;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = r.name;
    }
    if (!r.passed) failed += " " + r.name;
  }
  const double t = seconds_since(t0);
  return {failed.empty() && t < 60.0,
          fmt("%zu checks incl. panoswint12 forward, max rel error %.2e (%s, <1e-4), %.1f s (<60)%s", n, worst, worst_name.c_str(), t,
              failed.empty() ? "" : (" failed:" + failed).c_str())};
}

// ------------------------------------------------------------ 4 parameter counts

Outcome param_counts() {
  struct Row {
    const char* name;
    double target;
  };
  bool ok = true;
  std::string detail;
  for (const Row& r : {Row{"panoswint12", 66e3}, Row{"panoswint8", 191e3}, Row{"swint13", 67e3}}) {
    const std::size_t n = Model(preset_config(r.name)).parameter_count();
    const double dev = (static_cast<double>(n) - r.target) / r.target;
    ok = ok && std::abs(dev) <= 0.10;
    detail += fmt("%s%s %zu (%+.1f%% vs %.0fk)", detail.empty() ? "" : ", ", r.name, n, 100 * dev, r.target / 1e3);
  }
  return {ok, detail};
}

// ------------------------------------------------------------ 5, 6 training

struct RunResult {
  double uniform = 0, equator = 0, polar = 0, seconds = 0;
};

std::string runs_dir;

RunResult train_and_measure(Mode mode, std::uint64_t seed, bool uniform_too) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.mode = mode;
  cfg.psw_as_sw_in_swin = mode == Mode::kSwin;
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset train = make_split(SplitKind::kTrain, cfg.n_train, seed);
  std::ofstream csv;
  if (!runs_dir.empty()) {
    fs::create_directories(runs_dir);
    csv.open(fs::path(runs_dir) / fmt("%s_seed%llu.csv", mode_name(mode), static_cast<unsigned long long>(seed)));
    csv << metrics_csv_header() << '\n';
  }
  std::fprintf(stderr, "  training %s seed %llu\n", mode_name(mode), static_cast<unsigned long long>(seed));
  const TrainResult r = run_two_stage(cfg, train, nullptr, [&](const EpochMetrics& m) {
    if (csv) csv << metrics_csv_row(m) << '\n' << std::flush;
    std::fprintf(stderr, "    %s  %.0f s\n", metrics_csv_row(m).c_str(), seconds_since(t0));
  });
  RunResult out;
  out.seconds = seconds_since(t0);
  if (uniform_too) out.uniform = evaluate(r.model, r.norm, make_split(SplitKind::kTestUniform, 1000, seed));
  out.equator = evaluate(r.model, r.norm, make_split(SplitKind::kTestEquator, 1000, seed));
  out.polar = evaluate(r.model, r.norm, make_split(SplitKind::kTestPolar, 1000, seed));
  std::fprintf(stderr, "    uniform %.4f equator %.4f polar %.4f\n", out.uniform, out.equator, out.polar);
  return out;
}

std::vector<RunResult> pano_runs;

RunResult& pano_run(std::size_t i) {
  while (pano_runs.size() <= i) pano_runs.push_back(train_and_measure(Mode::kPano, pano_runs.size(), true));
  return pano_runs[i];
}

Outcome desk_training() {
  const RunResult& r = pano_run(0);
  return {r.uniform <= 0.15 && r.seconds < 7200.0,
          fmt("panoswint12, 5000 samples, 10+30 epochs, seed 0: uniform test error %.2f%% (<=15%%), %.0f s (<7200)", 100 * r.uniform,
              r.seconds)};
}

Outcome polar_gap() {
  double pano_gap = 0, swin_gap = 0;
  std::string per_seed;
  for (std::size_t s = 0; s < 3; ++s) {
    const RunResult& p = pano_run(s);
    const RunResult w = train_and_measure(Mode::kSwin, s, false);
    pano_gap += (p.polar - p.equator) / 3;
    swin_gap += (w.polar - w.equator) / 3;
    per_seed += fmt("; seed %zu pano %.3f/%.3f swin %.3f/%.3f", s, p.equator, p.polar, w.equator, w.polar);
  }
  return {pano_gap < swin_gap, fmt("mean polar-equator gap: pano %+.4f vs swin %+.4f%s", pano_gap, swin_gap, per_seed.c_str())};
}

// ------------------------------------------------------------ 7 mode switch

Outcome mode_switch() {
  Model m(preset_config("panoswint12"));
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g(0.0, 1.0);
  for (Param& p : m.parameters()) {
    if (p.name.ends_with(".alpha")) {
      for (double& x : p.tensor.mutable_values()) x = g(rng);
    }
  }
  std::vector<double> px(4 * 48 * 96);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& x : px) x = u(rng);
  const Tensor batch = Tensor::from({4, 1, 48, 96}, px);
  const Tensor a = m.forward(batch);
  switch_mode(m, Mode::kSwin);
  const Tensor s = m.forward(batch);
  switch_mode(m, Mode::kPano);
  const Tensor b = m.forward(batch);
  std::size_t differing = 0;
  double swin_diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    differing += a.at(i) != b.at(i);
    swin_diff = std::max(swin_diff, std::abs(a.at(i) - s.at(i)));
  }
  return {differing == 0, fmt("pano->swin->pano on a 4-image batch: %zu of %zu logits differ bitwise (swin mode itself differs by %.2e)",
                              differing, a.size(), swin_diff)};
}

// ------------------------------------------------------------ 8 KP mechanics

Outcome kp_mechanics() {
  const Model student(preset_config("panoswint12"));
  const Model teacher = clone_model(student);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> px(3 * 48 * 96);
  for (double& x : px) x = u(rng);
  const Tensor batch = Tensor::from({3, 1, 48, 96}, px);
  const Linear adapter = make_identity_adapter(student.stage_dims().back());
  const auto coords = student.stage_grids().back().centers();
  const Tensor fs = student.features(batch), ft = teacher.features(batch);
  const double zero = kp_loss(adapter(fs), ft, coords).item();

  // Perturbed student against the teacher, w = 1 versus a direct MSE.
  std::vector<double> shifted(fs.values().begin(), fs.values().end());
  std::normal_distribution<double> g(0.0, 0.3);
  for (double& x : shifted) x += g(rng);
  const Tensor s = Tensor::from(fs.shape(), shifted);
  const double kp = kp_loss(s, ft, coords, true).item();
  double mse = 0;
  for (std::size_t i = 0; i < s.size(); ++i) mse += (s.at(i) - ft.at(i)) * (s.at(i) - ft.at(i));
  mse /= static_cast<double>(fs.dim(0) * fs.dim(1));
  return {zero == 0.0 && std::abs(kp - mse) < 1e-12,
          fmt("identity adapter, student = teacher: L_KP = %.3g (== 0); w = 1: |L_KP - MSE| = %.2e (<1e-12)", zero, std::abs(kp - mse))};
}

// ------------------------------------------------------------ 9 bench

Outcome bench() {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> px(3 * 512 * 1024);
  for (double& x : px) x = u(rng);
  const EquirectMap map(Tensor::from({3, 512, 1024}, px));
  double best = 1e300;
  for (int i = 0; i < 3; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const EquirectMap out = rotate_map(map, LonLat{0.3 * kPi, -0.4 * kPi}, 1);
    best = std::min(best, seconds_since(t0));
  }
  const std::uint64_t flops = count_rotation_flops(512);
  const std::uint64_t expect = 2ull * 41 * 512 * 512;
  std::string printed;
#ifdef PANOSWIN_CLI
  if (FILE* p = popen(PANOSWIN_CLI " bench --height 512 --repeats 1", "r")) {
    char line[512];
    while (std::fgets(line, sizeof line, p)) {
      if (std::string(line).find("flop lower bound") != std::string::npos) printed = line;
    }
    pclose(p);
  }
#endif
  const bool printed_ok = printed.find("= " + std::to_string(expect)) != std::string::npos;
  if (!printed.empty() && printed.back() == '\n') printed.pop_back();
  return {best < 1.0 && flops == expect && printed_ok,
          fmt("rotate_map 512x1024x3 single-threaded %.3f s (<1); bound %llu (== 2*41*512^2 = %llu); CLI prints \"%s\"", best,
              static_cast<unsigned long long>(flops), static_cast<unsigned long long>(expect), printed.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  std::string report;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
    } else if (a == "--runs" && i + 1 < argc) {
      runs_dir = argv[++i];
    } else if (a == "--report" && i + 1 < argc) {
      report = argv[++i];
    } else {
      std::fprintf(stderr, "usage: %s [--only 1,2,...] [--runs DIR] [--report FILE]\n", argv[0]);
      return 2;
    }
  }
  tune_allocator();
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"geometry suite", geometry},         {"PSW correctness", psw},           {"gradient suite", gradients},
      {"parameter counts", param_counts},   {"desk-scale training", desk_training}, {"polar robustness direction", polar_gap},
      {"mode-switch identity", mode_switch}, {"KP mechanics", kp_mechanics},   {"bench report", bench}};
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    const std::string line = fmt("criterion %d %s: %s: ", id, o.pass ? "PASS" : "FAIL", criteria[i].first) + o.detail;
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    if (!report.empty()) std::ofstream(report, std::ios::app) << line << '\n';
  }
  return failures == 0 ? 0 : 1;
}
