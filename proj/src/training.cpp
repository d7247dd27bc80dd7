#include "panoswin/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "panoswin/augment.hpp"
#include "panoswin/optim.hpp"
#include "panoswin/random.hpp"

namespace panoswin {

namespace {

bool parse_switch(const std::string& key, const std::string& v) {
  if (v == "on" || v == "1" || v == "true") return true;
  if (v == "off" || v == "0" || v == "false") return false;
  throw std::invalid_argument("config key '" + key + "' expects on or off, got '" + v + "'");
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

bool is_preset(const std::string& arch) {
  std::string a = arch;
  for (char& c : a) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  const auto names = preset_names();
  return std::find(names.begin(), names.end(), a) != names.end();
}

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t k = logits.dim(1);
  std::size_t best = 0;
  for (std::size_t j = 1; j < k; ++j) {
    if (logits.at(row * k + j) > logits.at(row * k + best)) best = j;
  }
  return best;
}

Tensor augmented_batch(const Dataset& data, const std::vector<std::size_t>& idx, bool planar, bool pano, double rotate_prob,
                       std::uint64_t seed, std::size_t epoch) {
  const std::size_t plane = kSphHeight * kSphWidth;
  std::vector<double> out(idx.size() * plane);
  const auto src = data.images.values();
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const double* p = src.data() + idx[b] * plane;
    EquirectMap m(Tensor::from({1, kSphHeight, kSphWidth}, std::vector<double>(p, p + plane)));
    if (planar || pano) {
      std::mt19937_64 rng(derive_seed({seed, 11, epoch, idx[b]}));
      if (planar) m = augment_planar(m, rng);
      if (pano) m = augment_pano(m, rng, rotate_prob);
    }
    std::copy(m.data.values().begin(), m.data.values().end(), out.begin() + static_cast<long>(b * plane));
  }
  return Tensor::from({idx.size(), 1, kSphHeight, kSphWidth}, std::move(out));
}

}  // namespace

std::vector<double> kp_weights(const std::vector<LonLat>& coords, bool uniform) {
  std::vector<double> w(coords.size(), 1.0);
  if (uniform) return w;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    w[i] = 0.5 * (1.0 + std::cos(2.0 * coords[i].v)) * 0.5 * (1.0 + std::cos(coords[i].u));
  }
  return w;
}

Tensor kp_loss(const Tensor& student, const Tensor& teacher, const std::vector<LonLat>& coords, bool uniform) {
  if (student.shape() != teacher.shape() || student.rank() != 3 || student.dim(1) != coords.size()) {
    throw ShapeError("kp_loss: student " + shape_str(student.shape()) + " and teacher " + shape_str(teacher.shape()) +
                     " must both be [B, " + std::to_string(coords.size()) + ", C]");
  }
  const std::size_t b = student.dim(0), n = student.dim(1), c = student.dim(2);
  const std::vector<double> w = kp_weights(coords, uniform);
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  if (total <= 0.0) throw std::invalid_argument("kp_loss: weights sum to zero");
  std::vector<double> wt(n * c);
  for (std::size_t i = 0; i < n; ++i) std::fill_n(wt.begin() + static_cast<long>(i * c), c, w[i]);
  const Tensor diff = ops::sub(student, teacher);
  const Tensor weighted = ops::mul(ops::mul(diff, diff), ops::tile(Tensor::from({n, c}, std::move(wt)), b));
  return ops::scale(ops::sum(weighted), 1.0 / (static_cast<double>(b) * total));
}

Linear make_identity_adapter(std::size_t channels) {
  std::vector<double> eye(channels * channels, 0.0);
  for (std::size_t i = 0; i < channels; ++i) eye[i * channels + i] = 1.0;
  return {Tensor::from({channels, channels}, std::move(eye), true), Tensor::zeros({channels}, true)};
}

Model clone_model(const Model& m) {
  Model copy(m.config());
  copy.set_mode(m.mode());
  const std::vector<Param> src = m.parameters();
  std::vector<Param> dst = copy.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    std::copy(src[i].tensor.values().begin(), src[i].tensor.values().end(), dst[i].tensor.mutable_values().begin());
  }
  return copy;
}

const char* bias_freeze_name(BiasFreeze f) {
  switch (f) {
    case BiasFreeze::kBeta: return "beta";
    case BiasFreeze::kAlpha: return "alpha";
    case BiasFreeze::kNone: return "none";
  }
  return "?";
}

BiasFreeze parse_bias_freeze(const std::string& s) {
  for (BiasFreeze f : {BiasFreeze::kBeta, BiasFreeze::kAlpha, BiasFreeze::kNone}) {
    if (s == bias_freeze_name(f)) return f;
  }
  throw std::invalid_argument("unknown freeze '" + s + "' (expected beta, alpha or none)");
}

std::string TrainConfig::to_text() const {
  std::ostringstream o;
  o.precision(17);
  o << "arch=" << arch << '\n'
    << "embed_dim=" << embed_dim << '\n'
    << "mode=" << mode_name(mode) << '\n'
    << "stage=" << stage << '\n'
    << "epochs_planar=" << epochs_planar << '\n'
    << "epochs_pano=" << epochs_pano << '\n'
    << "lr=" << lr << '\n'
    << "batch=" << batch << '\n'
    << "seed=" << seed << '\n'
    << "kp=" << (kp ? "on" : "off") << '\n'
    << "kp_uniform=" << (kp_uniform ? "on" : "off") << '\n'
    << "freeze=" << bias_freeze_name(freeze) << '\n'
    << "augment=" << (augment ? "on" : "off") << '\n'
    << "pano_rotate_prob=" << pano_rotate_prob << '\n'
    << "psw_as_sw_in_swin=" << (psw_as_sw_in_swin ? "on" : "off") << '\n'
    << "n_train=" << n_train << '\n'
    << "n_test=" << n_test << '\n'
    << "test_split=" << split_name(test_split) << '\n'
    << "mnist_dir=" << mnist_dir << '\n'
    << "threads=" << threads << '\n';
  return o.str();
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig mc = is_preset(arch) ? preset_config(arch) : make_config(arch, embed_dim);
  mc.block.swin_mode_uses_sw = psw_as_sw_in_swin;
  mc.seed = seed;
  return mc;
}

TrainConfig parse_train_config(const std::string& text, TrainConfig cfg) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key=value");
    const std::string k = trim(line.substr(0, eq)), v = trim(line.substr(eq + 1));
    try {
      if (k == "arch") cfg.arch = v;
      else if (k == "embed_dim") cfg.embed_dim = std::stoull(v);
      else if (k == "mode") cfg.mode = parse_mode(v);
      else if (k == "stage") {
        if (v != "both" && v != "planar" && v != "pano") throw std::invalid_argument("stage must be both, planar or pano");
        cfg.stage = v;
      } else if (k == "epochs_planar") cfg.epochs_planar = std::stoull(v);
      else if (k == "epochs_pano") cfg.epochs_pano = std::stoull(v);
      else if (k == "lr") cfg.lr = std::stod(v);
      else if (k == "batch") cfg.batch = std::stoull(v);
      else if (k == "seed") cfg.seed = std::stoull(v);
      else if (k == "kp") cfg.kp = parse_switch(k, v);
      else if (k == "kp_uniform") cfg.kp_uniform = parse_switch(k, v);
      else if (k == "freeze") cfg.freeze = parse_bias_freeze(v);
      else if (k == "augment") cfg.augment = parse_switch(k, v);
      else if (k == "pano_rotate_prob") cfg.pano_rotate_prob = std::stod(v);
      else if (k == "psw_as_sw_in_swin") cfg.psw_as_sw_in_swin = parse_switch(k, v);
      else if (k == "n_train") cfg.n_train = std::stoull(v);
      else if (k == "n_test") cfg.n_test = std::stoull(v);
      else if (k == "test_split") cfg.test_split = parse_split(v);
      else if (k == "mnist_dir") cfg.mnist_dir = v;
      else if (k == "threads") cfg.threads = std::stoull(v);
      else throw std::invalid_argument("unknown key");
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + " (" + k + "): " + e.what());
    }
  }
  if (cfg.batch == 0) throw std::invalid_argument("config: batch must be positive");
  return cfg;
}

Normalizer Normalizer::fit(const Tensor& images) {
  const auto v = images.values();
  double mean = 0.0, sq = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  for (double x : v) sq += (x - mean) * (x - mean);
  const double sd = std::sqrt(sq / static_cast<double>(v.size()));
  return {mean, sd > 0.0 ? sd : 1.0};
}

Tensor Normalizer::apply(const Tensor& images) const {
  std::vector<double> v(images.values().begin(), images.values().end());
  for (double& x : v) x = (x - mean) / stddev;
  return Tensor::from(images.shape(), std::move(v));
}

std::string metrics_csv_header() { return "epoch,stage,loss,kp_loss,train_err,test_err"; }

std::string metrics_csv_row(const EpochMetrics& m) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu,%s,%.6f,%.6f,%.4f,%.4f", m.epoch, m.stage.c_str(), m.loss, m.kp_loss, m.train_err, m.test_err);
  return buf;
}

double evaluate(const Model& model, const Normalizer& norm, const Dataset& data, std::size_t batch) {
  NoGradGuard guard;
  std::size_t wrong = 0;
  for (std::size_t start = 0; start < data.size(); start += batch) {
    std::vector<std::size_t> idx(std::min(batch, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor logits = model.forward(norm.apply(data.batch_images(idx)));
    for (std::size_t b = 0; b < idx.size(); ++b) {
      if (static_cast<int>(argmax_row(logits, b)) != data.labels[idx[b]]) ++wrong;
    }
  }
  return static_cast<double>(wrong) / static_cast<double>(data.size());
}

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 32 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 * 1024 * 1024);
#endif
}

TrainResult run_two_stage(const TrainConfig& cfg, const Dataset& train, const Dataset* test, const EpochCallback& on_epoch,
                          const Model* init) {
  tune_allocator();
  const bool do_planar = cfg.stage == "both" || cfg.stage == "planar";
  const bool do_pano = cfg.stage == "both" || cfg.stage == "pano";
  TrainResult result{init != nullptr ? clone_model(*init) : Model(cfg.model_config()), std::nullopt, Normalizer::fit(train.images), {}};
  Model& model = result.model;
  std::size_t epoch = 0;

  struct Stage {
    const char* name;
    bool planar_aug;
    const Model* teacher;
    Linear* adapter;
  };
  auto run_epoch = [&](const Stage& st, std::vector<Param>& params, Adam& opt, double w_kp) {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(derive_seed({cfg.seed, 10, epoch}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const std::vector<LonLat> coords = model.stage_grids().back().centers();
    double loss_sum = 0.0, kp_sum = 0.0;
    std::size_t wrong = 0, steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<long>(start),
                                         order.begin() + static_cast<long>(std::min(order.size(), start + cfg.batch)));
      const Tensor x = result.norm.apply(
          augmented_batch(train, idx, cfg.augment && st.planar_aug, cfg.augment, cfg.pano_rotate_prob, cfg.seed, epoch));
      const std::vector<int> labels = train.batch_labels(idx);
      opt.zero_grad(params);
      const Tensor feats = model.features(x);
      const Tensor logits = model.classify(feats);
      Tensor total = ops::cross_entropy(logits, labels);
      loss_sum += total.item();
      if (st.teacher != nullptr && w_kp > 0.0) {
        Tensor target;
        {
          NoGradGuard guard;
          target = st.teacher->features(x);
        }
        const Tensor lk = kp_loss((*st.adapter)(feats), target, coords, cfg.kp_uniform);
        kp_sum += lk.item();
        total = ops::add(total, ops::scale(lk, w_kp));
      }
      total.check_finite("training loss");
      total.backward();
      opt.step(params);
      for (std::size_t b = 0; b < idx.size(); ++b) {
        if (static_cast<int>(argmax_row(logits, b)) != labels[b]) ++wrong;
      }
      ++steps;
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.stage = st.name;
    m.loss = loss_sum / static_cast<double>(steps);
    m.kp_loss = kp_sum / static_cast<double>(steps);
    m.train_err = static_cast<double>(wrong) / static_cast<double>(train.size());
    m.test_err = test != nullptr ? evaluate(model, result.norm, *test, cfg.batch) : std::numeric_limits<double>::quiet_NaN();
    result.metrics.push_back(m);
    if (on_epoch) on_epoch(m);
    ++epoch;
  };

  if (do_planar) {
    model.set_mode(Mode::kSwin);
    std::vector<Param> params = model.parameters();
    Adam opt({.lr = cfg.lr});
    for (std::size_t e = 0; e < cfg.epochs_planar; ++e) run_epoch({"planar", true, nullptr, nullptr}, params, opt, 0.0);
  }
  if (do_pano) {
    epoch = cfg.epochs_planar;
    // A fresh model has nothing worth preserving.
    const bool use_kp = cfg.kp && (do_planar || init != nullptr);
    if (use_kp) {
      result.teacher = clone_model(model);
      result.teacher->set_mode(Mode::kSwin);
    }
    model.set_mode(cfg.mode);
    std::vector<Param> params = model.parameters();
    for (Param& p : params) {
      if (cfg.freeze == BiasFreeze::kBeta && p.name.ends_with(".rel.beta")) p.frozen = true;
      if (cfg.freeze == BiasFreeze::kAlpha && p.name.ends_with(".rel.alpha")) p.frozen = true;
    }
    Linear adapter = make_identity_adapter(model.stage_dims().back());
    if (use_kp) adapter.collect("adapter", params);
    Adam opt({.lr = cfg.lr});
    const std::size_t n = cfg.epochs_pano;
    for (std::size_t e = 0; e < n; ++e) {
      const double w_kp = use_kp ? (n > 1 ? 1.0 - static_cast<double>(e) / static_cast<double>(n - 1) : 1.0) : 0.0;
      run_epoch({"pano", false, use_kp ? &*result.teacher : nullptr, &adapter}, params, opt, w_kp);
    }
  }
  return result;
}

}  // namespace panoswin
