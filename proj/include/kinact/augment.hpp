#pragma once

// Marker augmentation: 26 joint centers -> 29 anatomical markers, either with
// a recurrent network (standard LSTM cells, pelvis-centred and normalized
// inputs) or with the model file's fixed affine fallback table.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "kinact/autodiff.hpp"
#include "kinact/biomech.hpp"
#include "kinact/camgeo.hpp"

namespace kinact::augment {

inline constexpr std::size_t kInputSize = 3 * camgeo::kNumKeypoints;
inline constexpr std::size_t kOutputSize = 3 * biomech::kNumMarkers;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// One LSTM layer. Gate blocks are stacked in the order input, forget,
/// cell candidate, output (rows [0,H), [H,2H), [2H,3H), [3H,4H)).
struct LstmLayer {
  RowMatrix w_ih;         // 4H x input
  RowMatrix w_hh;         // 4H x H
  Eigen::VectorXd bias;   // 4H
};

struct LstmWeights {
  std::size_t hidden = 96;
  std::vector<LstmLayer> layers;
  RowMatrix w_out;        // 87 x H
  Eigen::VectorXd b_out;  // 87
  Eigen::VectorXd in_mean = Eigen::VectorXd::Zero(kInputSize);
  Eigen::VectorXd in_std = Eigen::VectorXd::Ones(kInputSize);
  Eigen::VectorXd out_mean = Eigen::VectorXd::Zero(kOutputSize);
  Eigen::VectorXd out_std = Eigen::VectorXd::Ones(kOutputSize);

  /// Throws kShapeMismatch / kInvalidArgument on inconsistent shapes or
  /// non-positive standard deviations.
  void validate() const;

  static LstmWeights zeros(std::size_t hidden, std::size_t num_layers);
  /// Uniform(-1/sqrt(H), 1/sqrt(H)) initialization, forget-gate bias 1.
  static LstmWeights random(std::size_t hidden, std::size_t num_layers, std::uint64_t seed);
};

/// Stateful single-stream forward pass; state starts at zero.
class LstmStream {
 public:
  explicit LstmStream(const LstmWeights& weights);

  /// Requires all 26 joint centers valid (after gap filling).
  biomech::MarkerFrame push(const camgeo::JointCenters3D& jc);
  void reset();

 private:
  const LstmWeights* w_;
  std::vector<Eigen::VectorXd> h_;
  std::vector<Eigen::VectorXd> c_;
};

std::vector<biomech::MarkerFrame> lstm_forward(const LstmWeights& weights,
                                               std::span<const camgeo::JointCenters3D> seq);

/// Markers as the model's affine keypoint combinations. Throws kMissingInput
/// when a required joint center is invalid, kModelValidation when the model
/// has no fallback table.
biomech::MarkerFrame geometric_fallback(const biomech::BiomechModel& model,
                                        const camgeo::JointCenters3D& jc);

/// Joint centers of a model pose in the layout the triangulator produces.
camgeo::JointCenters3D joint_centers_from_pose(const biomech::BiomechModel& model,
                                               const biomech::JointVector& q,
                                               const biomech::BasePose& base, double timestamp = 0.0);

// ---- training --------------------------------------------------------------

struct AugmentSequence {
  std::vector<camgeo::JointCenters3D> inputs;
  std::vector<biomech::MarkerFrame> targets;
};

struct AugmentTrainConfig {
  std::size_t hidden = 96;
  std::size_t layers = 2;
  int epochs = 50;
  double learning_rate = 3e-3;
  /// Sequences are cut into chunks of this many frames, each starting from zero state.
  std::size_t chunk = 20;
  std::size_t batch = 16;
  /// Fraction of sequences (rounded, at least one when there are two or more)
  /// held out for best-epoch selection.
  double val_fraction = 0.2;
  std::uint64_t seed = 1;
};

struct AugmentTrainResult {
  LstmWeights weights;
  std::vector<double> train_loss;
  /// Validation RMS marker error (m) per epoch.
  std::vector<double> val_rms;
};

/// Mean squared error on normalized marker coordinates, Adam with a cosine
/// schedule; returns the best-validation weights. Zero epochs return the
/// initialization unchanged. Throws kEmptyInput / kShapeMismatch.
AugmentTrainResult train_augmenter(std::span<const AugmentSequence> corpus,
                                   const AugmentTrainConfig& config);

/// Exposes the trainable tensors under stable names ("l0.w_ih", ..., "out.w", "out.b").
ad::ParameterSet to_parameters(const LstmWeights& weights);
/// Copies trainable tensors back; normalization statistics come from `like`.
LstmWeights from_parameters(const ad::ParameterSet& params, const LstmWeights& like);

/// Differentiable forward over normalized inputs [B, T, 78] -> [B, T, 87].
ad::Var lstm_graph(ad::Graph& graph, ad::ParameterSet& params, std::size_t num_layers,
                   const ad::Tensor& inputs);

/// Normalized training tensors for one chunk batch (exposed for gradient checks).
struct ChunkBatch {
  ad::Tensor inputs;   // [B, T, 78]
  ad::Tensor targets;  // [B, T, 87]
};
ChunkBatch make_batch(const LstmWeights& stats, std::span<const AugmentSequence> corpus,
                      std::span<const std::pair<std::size_t, std::size_t>> chunks, std::size_t length);

// ---- weight file ("KALW1") ---------------------------------------------------

void save_weights(const std::filesystem::path& path, const LstmWeights& weights);
LstmWeights load_weights(const std::filesystem::path& path);

}  // namespace kinact::augment
