#pragma once

// Corpus-level experiments shared by the command line and the acceptance
// run: variant ablation and the joint-angle versus joint-center comparison
// under rigid viewpoint changes.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kinact/act.hpp"
#include "kinact/biomech.hpp"
#include "kinact/camgeo.hpp"
#include "kinact/ik.hpp"
#include "kinact/metrics.hpp"
#include "kinact/synth.hpp"

namespace kinact::experiments {

/// Classifier size and training schedule applied to both heads.
struct Preset {
  std::size_t layers = 4;
  std::size_t model_dim = 24;
  std::size_t ffn_dim = 48;
  std::size_t mlp_dim = 256;
  act::TrainConfig train;
  /// Spacing of evaluated test frames.
  std::size_t test_stride = 1;

  /// Default classifier with the full 300-epoch schedule.
  static Preset standard();
  /// Default classifier, short schedule over strided windows.
  static Preset quick();

  nlohmann::json to_json() const;
};

act::ActConfig head_config(act::Head head, act::Variant variant, const Preset& preset);

struct HeadSplits {
  std::vector<act::FeatureSequence> train, val, test;
};

/// Joint-angle features of one head for every split of the corpus.
HeadSplits head_splits(const synth::Corpus& corpus, const biomech::BiomechModel& model, act::Head head);

/// Final-step predictions over the frames 0, stride, 2 stride, ... of every
/// sequence, concatenated.
metrics::HeadOutput predict_head(const act::ActConfig& cfg, const ad::ParameterSet& params,
                                 std::span<const act::FeatureSequence> seqs, std::size_t stride);

/// Frames per second of one full-window inference through both heads.
double head_pair_fps(const act::ActConfig& lower, const ad::ParameterSet& lower_params,
                     const act::ActConfig& upper, const ad::ParameterSet& upper_params);

// ---- ablation -------------------------------------------------------------------

struct AblationRun {
  act::Variant variant = act::Variant::kSar;
  std::uint64_t seed = 1;
  metrics::EvalReport report;
  double train_seconds = 0.0;
};

/// Medians over seeds.
struct AblationRow {
  act::Variant variant = act::Variant::kSar;
  double acc = 0.0;
  double mAP = 0.0;
  double f1 = 0.0;
  double binary_acc = 0.0;
  double fps = 0.0;
};

struct AblationOptions {
  std::vector<act::Variant> variants{act::Variant::kSar, act::Variant::kBaselineToken,
                                     act::Variant::kPerStepNoMask, act::Variant::kMaskedNoSmooth};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  Preset preset = Preset::quick();
  /// Called after every finished run.
  std::function<void(const AblationRun&)> progress;
};

struct AblationResult {
  std::vector<AblationRun> runs;
  std::vector<AblationRow> rows;
  double seconds = 0.0;

  const AblationRow& row(act::Variant variant) const;
  nlohmann::json to_json() const;
  /// Fixed-width text table, one row per variant.
  std::string table() const;
};

/// Trains both heads of every variant for every seed on the corpus train
/// split (validation split for checkpoint selection) and evaluates on test.
AblationResult run_ablation(const synth::Corpus& corpus, const biomech::BiomechModel& model,
                            const AblationOptions& options = {});

// ---- viewpoint transforms -------------------------------------------------------

/// Keypoint coordinates of every frame, 3 per keypoint, with the head's labels.
act::FeatureSequence jcp_features(std::span<const camgeo::JointCenters3D> centers,
                                  std::span<const int> labels);

/// Joint angles recovered frame by frame: joint centers, fallback markers,
/// streaming IK.
std::vector<biomech::JointAngleFrame> recover_angles(const biomech::BiomechModel& model,
                                                     std::span<const camgeo::JointCenters3D> centers,
                                                     const ik::IkConfig& config);

struct ViewpointCase {
  std::uint64_t transform_seed = 0;
  /// RMS over frames and joints of recovered angles against the untransformed recovery.
  double angle_rms = 0.0;
  double angle_acc = 0.0;
  double jcp_acc = 0.0;
};

struct ViewpointOptions {
  std::vector<std::uint64_t> transform_seeds{1, 2, 3, 4};
  Preset preset = Preset::quick();
  ik::IkConfig ik = [] {
    ik::IkConfig c;
    c.time_budget_ms = 0.0;
    return c;
  }();
};

struct ViewpointResult {
  /// Combined accuracy on the untransformed test split.
  double angle_acc = 0.0;
  double jcp_acc = 0.0;
  std::vector<ViewpointCase> cases;
  double seconds = 0.0;

  double worst_angle_rms() const;
  /// Largest accuracy loss over the transforms (fractions, not points).
  double worst_angle_drop() const;
  /// Smallest accuracy loss over the transforms.
  double least_jcp_drop() const;
  nlohmann::json to_json() const;
  std::string table() const;
};

/// Trains joint-angle and joint-center classifiers on the untransformed
/// train split, then scores both on rigidly transformed copies of the test
/// split's joint centers.
ViewpointResult run_viewpoint(const synth::Corpus& corpus, const biomech::BiomechModel& model,
                              const ViewpointOptions& options = {});

}  // namespace kinact::experiments
