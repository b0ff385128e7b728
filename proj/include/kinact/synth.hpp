#pragma once

// Synthetic labeled motion corpus: cue scripts, stylized joint-angle
// trajectories per action, keypoint rendering and corpus files.

#include <cstdint>
#include <filesystem>
#include <array>
#include <span>
#include <string>
#include <vector>

#include "kinact/act.hpp"
#include "kinact/biomech.hpp"
#include "kinact/camgeo.hpp"
#include "kinact/labels.hpp"

namespace kinact::synth {

struct Cue {
  double time = 0.0;
  int lower = label::kStanding;
  int upper = label::kIdle;
};

struct TrialScript {
  double duration = 180.0;
  double rate_hz = 10.0;
  /// Length of the blend after every cue except the first.
  double transition = 1.0;
  std::vector<Cue> cues;
  std::uint64_t seed = 1;

  /// Throws kInvalidArgument.
  void validate() const;
  std::size_t frame_count() const;
};

struct ScriptOptions {
  double duration = 180.0;
  double rate_hz = 10.0;
  double transition = 1.0;
  double min_gap = 5.0;
  double max_gap = 15.0;
};

/// Scripts for consecutive trials. Cued labels are drawn from shuffled bags
/// shared across the batch, so every steady label is cued equally often up to
/// one bag.
std::vector<TrialScript> make_scripts(std::size_t count, std::uint64_t seed,
                                      const ScriptOptions& options = {});
TrialScript make_script(std::uint64_t seed, const ScriptOptions& options = {});

/// Lower label recorded while blending from `from` into `to`, or `to` when no
/// transitory label applies.
int transition_label(int from, int to);

/// Upright pelvis facing +x at hip height.
biomech::BasePose standing_base();

struct MotionOptions {
  /// Frame rate of generate_motion; generate_trial uses the script's rate.
  double rate_hz = 10.0;
  /// Stationary standard deviation of the per-joint OU noise (rad).
  double noise_sigma = 0.02;
  /// OU relaxation time (s).
  double noise_tau = 1.0;
  /// Pelvis pose shared by every frame.
  biomech::BasePose base = standing_base();
};

/// Noise-free pose of a label pair at time t. `variation` in [-1, 1]^4
/// perturbs amplitudes and rates; zero gives the canonical motion.
/// Transitory lower labels blend their canonical endpoints over `span` seconds.
biomech::JointVector label_pose(int lower, int upper, double t, const Eigen::Vector4d& variation,
                                double span = 1.0);

/// Frames of one label pair; throws kInvalidArgument for an invalid pair.
std::vector<biomech::JointAngleFrame> generate_motion(int lower, int upper, double duration,
                                                      const biomech::BiomechModel& model,
                                                      std::uint64_t seed, const MotionOptions& options = {});

act::LabeledSequence generate_trial(const TrialScript& script, const biomech::BiomechModel& model,
                                    const MotionOptions& options = {});

struct RenderOptions {
  double pixel_noise = 0.0;
  std::uint64_t seed = 1;
};

/// One keypoint stream per camera, frame-aligned with `frames`.
std::vector<std::vector<camgeo::Keypoints2D>> render_keypoints(
    std::span<const biomech::JointAngleFrame> frames, const biomech::BiomechModel& model,
    std::span<const camgeo::CameraParams> cams, const RenderOptions& options = {});

/// Seed reserved for the identity transform.
inline constexpr std::uint64_t kIdentitySeed = 0;

/// Uniform random rotation with translation within +-1 m per axis.
Rigid rigid_for_seed(std::uint64_t seed);
std::vector<camgeo::JointCenters3D> random_rigid_transform(std::span<const camgeo::JointCenters3D> seq,
                                                           std::uint64_t seed);

struct Split {
  std::vector<std::size_t> train, val, test;
};

/// Whole-trial partition of indices 0..count-1. Counts are rounded from the
/// ratios with the remainder going to test. Throws kInvalidArgument when
/// ratios do not sum to 1 or a split would be empty.
Split split_corpus(std::size_t count, const std::array<double, 3>& ratios, std::uint64_t seed);

struct Trial {
  std::string file;
  std::uint64_t seed = 0;
  act::LabeledSequence sequence;
};

struct CorpusOptions {
  std::size_t trials = 10;
  std::uint64_t seed = 1;
  ScriptOptions script;
  MotionOptions motion;
  std::array<double, 3> ratios{0.7, 0.2, 0.1};
};

struct Corpus {
  std::uint64_t seed = 1;
  double rate_hz = 10.0;
  std::vector<Trial> trials;
  Split split;

  std::vector<const act::LabeledSequence*> subset(const std::vector<std::size_t>& indices) const;
};

Corpus generate_corpus(const biomech::BiomechModel& model, const CorpusOptions& options = {});

/// Writes one NDJSON file per trial plus manifest.json.
void write_corpus(const std::filesystem::path& dir, const Corpus& corpus);
/// Throws kIo / kParse / kShapeMismatch.
Corpus read_corpus(const std::filesystem::path& dir);

nlohmann::json labeled_frame_to_json(const biomech::JointAngleFrame& frame, int lower, int upper);

}  // namespace kinact::synth
