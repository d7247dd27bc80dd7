#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "panoswin/blocks.hpp"
#include "panoswin/dataset.hpp"
#include "panoswin/model.hpp"

namespace panoswin {

/// Per-patch KP weights cos^2(v) cos^2(u/2), written as
/// (1 + cos 2v)/2 * (1 + cos u)/2 so they vanish exactly at the poles and
/// at u = +-pi. All ones with `uniform`.
std::vector<double> kp_weights(const std::vector<LonLat>& coords, bool uniform = false);

/// sum_i w_i ||s_i - t_i||^2 / sum_i w_i over the patches of [B, N, C]
/// features, averaged over the batch. `student` is already adapted.
Tensor kp_loss(const Tensor& student, const Tensor& teacher, const std::vector<LonLat>& coords, bool uniform = false);

/// 1x1 convolution over the final feature map, i.e. a per-token linear
/// layer, starting at the identity.
Linear make_identity_adapter(std::size_t channels);

/// Deep copy: same config, independent parameter storage.
Model clone_model(const Model& m);

enum class BiasFreeze { kBeta, kAlpha, kNone };
const char* bias_freeze_name(BiasFreeze f);
BiasFreeze parse_bias_freeze(const std::string& s);

struct TrainConfig {
  /// Preset alias or an architecture string.
  std::string arch = "panoswint12";
  std::size_t embed_dim = 12;  // used only with architecture strings
  /// pano: the usual two-stage run. swin: the student never leaves swin
  /// mode (the planar baseline).
  Mode mode = Mode::kPano;
  /// both, planar or pano.
  std::string stage = "both";
  std::size_t epochs_planar = 10;
  std::size_t epochs_pano = 30;
  double lr = 1e-3;
  std::size_t batch = 48;
  std::uint64_t seed = 0;
  bool kp = true;
  bool kp_uniform = false;
  BiasFreeze freeze = BiasFreeze::kBeta;
  bool augment = true;
  double pano_rotate_prob = 0.5;
  /// Run PSW blocks as Swin shifted windows whenever the model is in swin mode.
  bool psw_as_sw_in_swin = false;
  std::size_t n_train = 5000;
  std::size_t n_test = 1000;
  SplitKind test_split = SplitKind::kTestUniform;
  std::string mnist_dir;
  std::size_t threads = 1;

  std::string to_text() const;
  ModelConfig model_config() const;
};

/// Plain key=value lines; '#' starts a comment. Unknown keys are errors.
TrainConfig parse_train_config(const std::string& text, TrainConfig base = {});

struct Normalizer {
  double mean = 0.0;
  double stddev = 1.0;
  static Normalizer fit(const Tensor& images);
  Tensor apply(const Tensor& images) const;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  std::string stage;
  double loss = 0.0;
  double kp_loss = 0.0;
  double train_err = 0.0;
  double test_err = 0.0;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const EpochMetrics& m);

struct TrainResult {
  Model model;
  std::optional<Model> teacher;
  Normalizer norm;
  std::vector<EpochMetrics> metrics;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Stage 1 trains in swin mode with planar and panoramic augmentation on
/// cross-entropy. Stage 2 copies the result into a frozen teacher, switches
/// the student to the configured mode, freezes the chosen bias table and
/// optimizes cross-entropy + w_KP * L_KP with w_KP falling linearly from 1
/// to 0 over the stage-2 epochs.
///
/// `init` replaces the freshly built model; with stage = pano it plays the
/// part of the stage-1 result (and the teacher). Stage-2 epochs are numbered
/// from epochs_planar either way, so a split run matches a joint one.
TrainResult run_two_stage(const TrainConfig& cfg, const Dataset& train, const Dataset* test = nullptr,
                          const EpochCallback& on_epoch = {}, const Model* init = nullptr);

/// Classification error rate in [0, 1].
double evaluate(const Model& model, const Normalizer& norm, const Dataset& data, std::size_t batch = 48);

/// Keeps freed memory in the process between steps; large per-step
/// buffers otherwise round-trip through the kernel every time.
void tune_allocator();

}  // namespace panoswin
