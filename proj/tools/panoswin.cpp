// panoswin command-line tool. Exit codes: 0 success, 1 check failure,
// 2 usage or input error.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "panoswin/checkpoint.hpp"
#include "panoswin/dataset.hpp"
#include "panoswin/equirect.hpp"
#include "panoswin/gradcheck.hpp"
#include "panoswin/image_io.hpp"
#include "panoswin/model.hpp"
#include "panoswin/training.hpp"
#include "panoswin/windowing.hpp"

using namespace panoswin;
namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

struct CheckFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Angle option accepting "0.3pi" style values.
CLI::Option* add_angle(CLI::App* app, const std::string& name, double& target, const std::string& help) {
  return app
      ->add_option_function<std::string>(
          name,
          [&target](const std::string& s) {
            try {
              target = parse_angle(s);
            } catch (const std::invalid_argument& e) {
              throw CLI::ValidationError(e.what());
            }
          },
          help)
      ->default_str(std::to_string(target));
}

bool parse_on_off(const std::string& s) {
  if (s == "on") return true;
  if (s == "off") return false;
  throw CLI::ValidationError("expected on or off, got '" + s + "'");
}

void echo_config(const CLI::App& app) {
  std::istringstream in(app.config_to_str(true, false));
  std::string line;
  std::cout << "# " << app.get_name() << '\n';
  while (std::getline(in, line)) {
    if (!line.empty()) std::cout << "# " << line << '\n';
  }
}

void print_version() {
  std::cout << "panoswin " << kVersion << '\n';
  for (const std::string& name : preset_names()) {
    const ModelConfig c = preset_config(name);
    std::cout << name << ": " << c.arch() << " (dim " << c.embed_dim << ", " << c.input_h << "x" << c.input_w << ")\n";
  }
}

// ---------------------------------------------------------------- rotate

struct RotateArgs {
  std::string in, out;
  double lon = 0.0, lat = -kHalfPi;
  bool inverse = false;
  std::size_t threads = 1;
};

void cmd_rotate(const RotateArgs& a) {
  std::printf("# target (lon, lat) = (%.9f, %.9f) rad%s\n", a.lon, a.lat, a.inverse ? ", inverse" : "");
  const EquirectMap map = EquirectMap::from_image(read_pnm(a.in));
  Rotation3 m = rotation_taking_pole_to({a.lon, a.lat});
  if (a.inverse) m = m.transpose();
  const auto t0 = std::chrono::steady_clock::now();
  const EquirectMap out = rotate_map(map, m, a.threads);
  write_pnm(a.out, out.to_image());
  std::printf("rotated %zux%zu in %.3f s -> %s\n", map.h(), map.w(), seconds_since(t0), a.out.c_str());
}

// ---------------------------------------------------------------- project

struct ProjectArgs {
  std::string in, out;
  double lon = 0.0, lat = 0.0, fov = kSphFov;
  std::size_t height = kSphHeight, width = kSphWidth, supersample = 4;
};

void cmd_project(const ProjectArgs& a) {
  std::printf("# centre (lon, lat) = (%.9f, %.9f) rad, fov %.9f rad\n", a.lon, a.lat, a.fov);
  const Image img = read_pnm(a.in);
  const EquirectMap out = project_perspective_to_equirect(img, a.fov, {a.lon, a.lat}, a.height, a.width, a.supersample);
  write_pnm(a.out, out.to_image());
  std::printf("projected %zux%zu -> %zux%zu equirect %s\n", img.h, img.w, a.height, a.width, a.out.c_str());
}

// ---------------------------------------------------------------- psw-map

struct PswArgs {
  std::size_t rows = 8, cols = 16, window = 4;
  std::string fold = "vflip";
  std::string out;
};

void cmd_psw_map(const PswArgs& a) {
  const WindowLayout lay = psw_layout(PatchGrid{a.rows, a.cols, a.window}, a.fold == "rot180" ? PswFold::kRotate180 : PswFold::kVerticalFlip);
  std::vector<std::size_t> window_of(lay.perm.size());
  for (std::size_t w = 0; w < lay.groups.size(); ++w) {
    for (std::size_t i : lay.groups[w]) window_of[i] = w;
  }
  std::ofstream f(a.out);
  if (!f) throw std::runtime_error(a.out + ": cannot open for writing");
  f << "old_index,new_index,window_id\n";
  for (std::size_t i = 0; i < lay.perm.size(); ++i) f << i << ',' << lay.perm[i] << ',' << window_of[i] << '\n';
  std::printf("%zu patches, %zu windows of %zux%zu, layout %zux%zu -> %s\n", lay.perm.size(), lay.groups.size(), a.window,
              a.window, lay.layout_rows, lay.layout_cols, a.out.c_str());
}

// ---------------------------------------------------------------- gradcheck

struct GradArgs {
  std::vector<std::string> ops;
  double eps = 1e-5, tol = 1e-4;
  std::size_t model_entries = 6;
  std::uint64_t seed = 0;
  bool report_only = false, list = false;
};

void cmd_gradcheck(const GradArgs& a) {
  const auto suite = gradcheck_suite(a.model_entries);
  if (a.list) {
    for (const auto& c : suite) std::cout << c.name << '\n';
    return;
  }
  for (const std::string& op : a.ops) {
    if (std::none_of(suite.begin(), suite.end(), [&](const GradCheckCase& c) { return c.name == op; })) {
      throw std::invalid_argument("unknown op '" + op + "' (see --list)");
    }
  }
  GradCheckOptions opt;
  opt.eps = a.eps;
  opt.tolerance = a.tol;
  opt.seed = a.seed;
  std::vector<std::string> failed;
  double worst = 0.0;
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& c : suite) {
    if (!a.ops.empty() && std::find(a.ops.begin(), a.ops.end(), c.name) == a.ops.end()) continue;
    const GradCheckResult r = c.run(opt);
    worst = std::max(worst, r.max_rel_error);
    std::printf("%-26s max_rel_error %.3e  entries %6zu  %s\n", r.name.c_str(), r.max_rel_error, r.entries_checked,
                r.passed ? "ok" : "FAIL");
    if (!r.passed) failed.push_back(r.name);
  }
  std::printf("max relative error %.3e (tolerance %.1e, eps %.1e) in %.1f s\n", worst, a.tol, a.eps, seconds_since(t0));
  if (failed.empty()) return;
  std::string names;
  for (const auto& n : failed) names += (names.empty() ? "" : ", ") + n;
  if (a.report_only) {
    std::printf("over tolerance (reported only): %s\n", names.c_str());
    return;
  }
  throw CheckFailure("gradient check failed: " + names);
}

// ---------------------------------------------------------------- dataset

struct DatasetArgs {
  std::string kind = "train", out, mnist_dir;
  std::size_t n = 5000, threads = 1;
  std::uint64_t seed = 0;
};

SourceOptions source_options(const std::string& mnist_dir, std::size_t threads) {
  SourceOptions s;
  if (!mnist_dir.empty()) s.mnist_dir = mnist_dir;
  s.threads = threads;
  return s;
}

void cmd_dataset(const DatasetArgs& a) {
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset d = make_split(parse_split(a.kind), a.n, a.seed, source_options(a.mnist_dir, a.threads));
  save_dataset(d, a.out);
  std::printf("%zu %s samples from %s%s in %.1f s -> %s\n", d.size(), split_name(d.kind), d.origin.c_str(),
              d.with_replacement ? " (with replacement)" : "", seconds_since(t0), a.out.c_str());
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  TrainConfig cfg;
  std::string config_file, out = "run", init, train_data, test_data;
  std::string mode = "pano", kp = "on", test_split = "test_uniform", freeze = "beta";
};

Dataset load_or_make(const std::string& dir, SplitKind kind, std::size_t n, const TrainConfig& cfg) {
  if (!dir.empty()) return load_dataset(dir);
  return make_split(kind, n, cfg.seed, source_options(cfg.mnist_dir, cfg.threads));
}

void cmd_train(TrainArgs a, const CLI::App& sub) {
  TrainConfig cfg = a.cfg;
  if (!a.config_file.empty()) {
    std::ifstream f(a.config_file);
    if (!f) throw std::runtime_error(a.config_file + ": cannot open");
    std::stringstream ss;
    ss << f.rdbuf();
    cfg = parse_train_config(ss.str(), cfg);
  }
  // Command-line flags override the file.
  if (sub.count("--arch")) cfg.arch = a.cfg.arch;
  if (sub.count("--mode") || a.config_file.empty()) cfg.mode = parse_mode(a.mode);
  if (sub.count("--kp") || a.config_file.empty()) cfg.kp = parse_on_off(a.kp);
  if (sub.count("--test-split") || a.config_file.empty()) cfg.test_split = parse_split(a.test_split);
  if (sub.count("--freeze") || a.config_file.empty()) cfg.freeze = parse_bias_freeze(a.freeze);

  std::cout << "# resolved training config\n";
  std::istringstream echo(cfg.to_text());
  for (std::string line; std::getline(echo, line);) std::cout << "#   " << line << '\n';
  std::cout << "# seed " << cfg.seed << '\n';

  std::optional<Model> init;
  if (!a.init.empty()) init = Model::load(a.init);
  if (init && init->config().arch() != cfg.model_config().arch()) {
    throw std::runtime_error("architecture mismatch: checkpoint '" + a.init + "' has " + init->config().arch() +
                             ", training config has " + cfg.model_config().arch());
  }

  const auto t0 = std::chrono::steady_clock::now();
  const Dataset train = load_or_make(a.train_data, SplitKind::kTrain, cfg.n_train, cfg);
  const Dataset test = load_or_make(a.test_data, cfg.test_split, cfg.n_test, cfg);
  std::printf("# data: %zu train (%s), %zu %s, %.1f s\n", train.size(), train.origin.c_str(), test.size(), split_name(test.kind),
              seconds_since(t0));

  fs::create_directories(a.out);
  std::ofstream csv(fs::path(a.out) / "metrics.csv");
  csv << metrics_csv_header() << '\n';
  std::cout << metrics_csv_header() << ",seconds\n";
  const TrainResult r = run_two_stage(
      cfg, train, &test,
      [&](const EpochMetrics& m) {
        csv << metrics_csv_row(m) << '\n' << std::flush;
        std::cout << metrics_csv_row(m) << ',' << static_cast<long>(seconds_since(t0)) << '\n' << std::flush;
      },
      init ? &*init : nullptr);

  std::ostringstream mean, sd;
  mean.precision(17);
  sd.precision(17);
  mean << r.norm.mean;
  sd << r.norm.stddev;
  const fs::path ckpt = fs::path(a.out) / "model.ckpt";
  r.model.save(ckpt, {{"norm_mean", mean.str()}, {"norm_std", sd.str()}, {"train_config", cfg.to_text()}});
  std::ofstream(fs::path(a.out) / "config.txt") << cfg.to_text();
  std::printf("# final test error %.4f on %s, %.0f s total -> %s\n", r.metrics.empty() ? 0.0 : r.metrics.back().test_err,
              split_name(test.kind), seconds_since(t0), ckpt.c_str());
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint, arch, data, mnist_dir, mode;
  std::vector<std::string> splits{"test_uniform"};
  std::size_t n = 1000, batch = 48, threads = 1;
  std::uint64_t seed = 0;
};

void cmd_eval(const EvalArgs& a) {
  Model model = Model::load(a.checkpoint);
  if (!a.arch.empty()) {
    const auto presets = preset_names();
    const std::string want = std::find(presets.begin(), presets.end(), a.arch) != presets.end() ? preset_config(a.arch).arch()
                                                                                                : format_arch(parse_arch(a.arch));
    if (want != model.config().arch()) {
      throw std::runtime_error("architecture mismatch: checkpoint has " + model.config().arch() + ", requested " + want);
    }
  }
  if (!a.mode.empty()) model.set_mode(parse_mode(a.mode));
  const std::vector<Param> entries = load_tensors(a.checkpoint);
  Normalizer norm;
  if (auto m = find_text(entries, "meta/norm_mean")) norm.mean = std::stod(*m);
  if (auto s = find_text(entries, "meta/norm_std")) norm.stddev = std::stod(*s);
  std::printf("# checkpoint %s: %s, mode %s, normalizer %.6f/%.6f\n", a.checkpoint.c_str(), model.config().arch().c_str(),
              mode_name(model.mode()), norm.mean, norm.stddev);

  std::map<std::string, double> errors;
  for (const std::string& s : a.splits) {
    const Dataset d = a.data.empty() ? make_split(parse_split(s), a.n, a.seed, source_options(a.mnist_dir, a.threads))
                                     : load_dataset(a.data);
    const double err = evaluate(model, norm, d, a.batch);
    errors[split_name(d.kind)] = err;
    std::printf("%s error %.4f (%zu samples)\n", split_name(d.kind), err, d.size());
  }
  if (errors.count("test_equator") && errors.count("test_polar")) {
    std::printf("polar - equator gap %+.4f\n", errors["test_polar"] - errors["test_equator"]);
  }
}

// ---------------------------------------------------------------- bench

struct BenchArgs {
  std::size_t height = 512, repeats = 3, threads = 1;
  std::uint64_t seed = 0;
};

double best_of(std::size_t repeats, const std::function<void()>& f) {
  double best = 1e300;
  for (std::size_t i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    best = std::min(best, seconds_since(t0));
  }
  return best;
}

void cmd_bench(const BenchArgs& a) {
  const std::size_t h = a.height, w = 2 * h;
  std::mt19937_64 rng(a.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> px(3 * h * w);
  for (double& x : px) x = u(rng);
  const EquirectMap map(Tensor::from({3, h, w}, px));
  const LonLat p1{0.3 * kPi, -0.4 * kPi};
  const double t_rot = best_of(a.repeats, [&] { rotate_map(map, p1, a.threads); });
  const double t_rot1 = a.threads == 1 ? t_rot : best_of(a.repeats, [&] { rotate_map(map, p1, 1); });

  const Model model(preset_config("panoswint12"));
  std::vector<double> img(48 * 96);
  for (double& x : img) x = u(rng);
  const Tensor x = Tensor::from({1, 1, 48, 96}, img);
  const double t_fwd = best_of(a.repeats, [&] {
    NoGradGuard g;
    model.forward(x);
  });

  const std::uint64_t flops = count_rotation_flops(h);
  std::printf("rotate_map %zux%zu x3 channels, %zu thread(s): %.4f s (best of %zu)\n", h, w, a.threads, t_rot, a.repeats);
  if (a.threads != 1) std::printf("rotate_map single thread: %.4f s, speedup %.2fx\n", t_rot1, t_rot1 / t_rot);
  std::printf("rotation flop lower bound 2*K*H^2 = 2*%llu*%zu^2 = %llu\n", static_cast<unsigned long long>(kRotationFlopConstant), h,
              static_cast<unsigned long long>(flops));
  std::printf("rotation throughput %.2f GFLOP/s against the bound\n", static_cast<double>(flops) / t_rot / 1e9);
  std::printf("panoswint12 single-image forward 48x96: %.4f s (best of %zu)\n", t_fwd, a.repeats);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Panoramic Swin transformer toolkit"};
  app.require_subcommand(0, 1);
  app.option_defaults()->always_capture_default();
  bool version = false;
  app.add_flag("--version", version, "Print the version and the built-in architecture strings");

  RotateArgs rot;
  auto* rotate = app.add_subcommand("rotate", "Rotate an equirectangular image so the north pole moves to (lon, lat)");
  rotate->add_option("--in", rot.in, "Input PGM/PPM")->required();
  rotate->add_option("--out", rot.out, "Output PGM/PPM")->required();
  add_angle(rotate, "--lon", rot.lon, "Target longitude (radians or e.g. 0.3pi)");
  add_angle(rotate, "--lat", rot.lat, "Target latitude (radians or e.g. -0.4pi)");
  rotate->add_flag("--inverse", rot.inverse, "Apply the inverse rotation");
  rotate->add_option("--threads", rot.threads, "Worker threads")->check(CLI::PositiveNumber);

  ProjectArgs proj;
  auto* project = app.add_subcommand("project", "Place a planar image on the sphere (gnomonic) and render it equirectangular");
  project->add_option("--in", proj.in, "Input PGM/PPM")->required();
  project->add_option("--out", proj.out, "Output PGM/PPM")->required();
  add_angle(project, "--lon", proj.lon, "Centre longitude");
  add_angle(project, "--lat", proj.lat, "Centre latitude");
  add_angle(project, "--fov", proj.fov, "Field of view");
  project->add_option("--height", proj.height, "Output rows")->check(CLI::PositiveNumber);
  project->add_option("--width", proj.width, "Output columns")->check(CLI::PositiveNumber);
  project->add_option("--supersample", proj.supersample, "Supersampling factor")->check(CLI::PositiveNumber);

  PswArgs psw;
  auto* pswmap = app.add_subcommand("psw-map", "Dump the pano-style shifted window permutation as CSV");
  pswmap->add_option("--rows", psw.rows, "Patch rows")->check(CLI::PositiveNumber);
  pswmap->add_option("--cols", psw.cols, "Patch columns")->check(CLI::PositiveNumber);
  pswmap->add_option("--window", psw.window, "Window side")->check(CLI::PositiveNumber);
  pswmap->add_option("--fold", psw.fold, "How the right half is folded")->check(CLI::IsMember({"vflip", "rot180"}));
  pswmap->add_option("--out", psw.out, "CSV path")->required();

  GradArgs grad;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gradcheck->add_option("--op", grad.ops, "Restrict to these checks (repeatable)");
  gradcheck->add_option("--eps", grad.eps, "Central-difference step");
  gradcheck->add_option("--tol", grad.tol, "Pass threshold on relative error");
  gradcheck->add_option("--model-entries", grad.model_entries, "Entries probed per parameter tensor in the model check");
  gradcheck->add_option("--seed", grad.seed, "Seed for entry sampling");
  gradcheck->add_flag("--report-only", grad.report_only, "Report errors over tolerance without failing");
  gradcheck->add_flag("--list", grad.list, "List the available checks");

  DatasetArgs ds;
  auto* dataset = app.add_subcommand("dataset", "Synthesize a spherical digit split and write it to a directory");
  dataset->add_option("--kind", ds.kind, "Split")->check(CLI::IsMember({"train", "test_equator", "test_polar", "test_uniform"}));
  dataset->add_option("--n", ds.n, "Number of samples")->check(CLI::PositiveNumber);
  dataset->add_option("--seed", ds.seed, "Seed");
  dataset->add_option("--out", ds.out, "Output directory")->required();
  dataset->add_option("--mnist-dir", ds.mnist_dir, "Directory with MNIST IDX files (procedural digits otherwise)");
  dataset->add_option("--threads", ds.threads, "Worker threads")->check(CLI::PositiveNumber);

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Two-stage training; writes metrics.csv, config.txt and model.ckpt");
  train->add_option("--config", tr.config_file, "key=value training config; flags given explicitly override it");
  train->add_option("--arch", tr.cfg.arch, "Preset alias or architecture string");
  train->add_option("--dim", tr.cfg.embed_dim, "Embedding width for architecture strings");
  train->add_option("--mode", tr.mode, "Student mode in stage 2")->check(CLI::IsMember({"pano", "swin"}));
  train->add_option("--stage", tr.cfg.stage, "Which stages to run")->check(CLI::IsMember({"both", "planar", "pano"}));
  train->add_option("--epochs-planar", tr.cfg.epochs_planar, "Stage-1 epochs");
  train->add_option("--epochs-pano", tr.cfg.epochs_pano, "Stage-2 epochs");
  train->add_option("--lr", tr.cfg.lr, "Adam learning rate");
  train->add_option("--batch", tr.cfg.batch, "Batch size")->check(CLI::PositiveNumber);
  train->add_option("--seed", tr.cfg.seed, "Seed for data, init, shuffling and augmentation");
  train->add_option("--kp", tr.kp, "Knowledge-preserving loss")->check(CLI::IsMember({"on", "off"}));
  train->add_flag("--kp-uniform", tr.cfg.kp_uniform, "Use w_i = 1 in the KP loss");
  train->add_option("--freeze", tr.freeze, "Bias table frozen in stage 2")->check(CLI::IsMember({"beta", "alpha", "none"}));
  train->add_flag("!--no-augment", tr.cfg.augment, "Disable augmentation");
  train->add_option("--pano-rotate-prob", tr.cfg.pano_rotate_prob, "Probability of a random panoramic rotation");
  train->add_flag("--psw-as-sw-in-swin", tr.cfg.psw_as_sw_in_swin, "Run PSW blocks as Swin shifted windows in swin mode");
  train->add_option("--n-train", tr.cfg.n_train, "Training samples")->check(CLI::PositiveNumber);
  train->add_option("--n-test", tr.cfg.n_test, "Test samples")->check(CLI::PositiveNumber);
  train->add_option("--test-split", tr.test_split, "Split for per-epoch test error")
      ->check(CLI::IsMember({"test_equator", "test_polar", "test_uniform"}));
  train->add_option("--mnist-dir", tr.cfg.mnist_dir, "Directory with MNIST IDX files");
  train->add_option("--threads", tr.cfg.threads, "Threads for data synthesis")->check(CLI::PositiveNumber);
  train->add_option("--init", tr.init, "Start from this checkpoint (with --stage pano it is also the teacher)");
  train->add_option("--train-data", tr.train_data, "Use a dataset directory instead of synthesizing");
  train->add_option("--test-data", tr.test_data, "Use a dataset directory instead of synthesizing");
  train->add_option("--out", tr.out, "Output directory");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Classification error of a checkpoint on one or more splits");
  eval->add_option("--checkpoint", ev.checkpoint, "model.ckpt from train")->required();
  eval->add_option("--arch", ev.arch, "Expected architecture; a mismatch is an error");
  eval->add_option("--split", ev.splits, "Splits to evaluate (repeatable)")
      ->check(CLI::IsMember({"test_equator", "test_polar", "test_uniform", "train"}));
  eval->add_option("--n", ev.n, "Samples per split")->check(CLI::PositiveNumber);
  eval->add_option("--seed", ev.seed, "Seed for the synthesized splits");
  eval->add_option("--batch", ev.batch, "Batch size")->check(CLI::PositiveNumber);
  eval->add_option("--mode", ev.mode, "Override the checkpoint's mode")->check(CLI::IsMember({"pano", "swin"}));
  eval->add_option("--data", ev.data, "Evaluate a dataset directory instead");
  eval->add_option("--mnist-dir", ev.mnist_dir, "Directory with MNIST IDX files");
  eval->add_option("--threads", ev.threads, "Threads for data synthesis")->check(CLI::PositiveNumber);

  BenchArgs bn;
  auto* bench = app.add_subcommand("bench", "Time rotate_map and a PanoSwinT12 forward");
  bench->add_option("--height", bn.height, "Map rows (width is twice this)")->check(CLI::PositiveNumber);
  bench->add_option("--repeats", bn.repeats, "Timed repetitions")->check(CLI::PositiveNumber);
  bench->add_option("--threads", bn.threads, "rotate_map threads")->check(CLI::PositiveNumber);
  bench->add_option("--seed", bn.seed, "Seed for the random inputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (version) {
    print_version();
    return 0;
  }

  try {
    for (CLI::App* sub : app.get_subcommands()) echo_config(*sub);
    if (rotate->parsed()) cmd_rotate(rot);
    else if (project->parsed()) cmd_project(proj);
    else if (pswmap->parsed()) cmd_psw_map(psw);
    else if (gradcheck->parsed()) cmd_gradcheck(grad);
    else if (dataset->parsed()) cmd_dataset(ds);
    else if (train->parsed()) cmd_train(tr, *train);
    else if (eval->parsed()) cmd_eval(ev);
    else if (bench->parsed()) cmd_bench(bn);
    else {
      std::cerr << app.help();
      return 2;
    }
  } catch (const CheckFailure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
