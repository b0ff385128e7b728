#pragma once

// Causal-masked Transformer action classifier over joint-angle windows, its
// losses, training loop and inference entry points.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "kinact/autodiff.hpp"
#include "kinact/biomech.hpp"

namespace kinact::act {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Variant {
  kSar,              // per-step outputs, causal mask, smoothing loss
  kBaselineToken,    // class token, one output per window, no mask
  kPerStepNoMask,    // per-step outputs and smoothing, full attention
  kMaskedNoSmooth,   // per-step outputs and mask, lambda forced to 0
};

std::string_view variant_name(Variant v);
/// Accepts the names returned by variant_name; throws kInvalidArgument.
Variant parse_variant(std::string_view name);

enum class Head { kLower, kUpper };

struct ActConfig {
  std::size_t window = 20;
  std::size_t input_dim = 12;
  std::size_t layers = 4;
  std::size_t heads = 1;
  std::size_t model_dim = 24;
  std::size_t ffn_dim = 48;
  std::size_t mlp_dim = 256;
  std::size_t classes = 7;
  /// Label id of class index 0.
  int first_label = 1;
  double lambda = 0.15;
  double tau = 4.0;
  Variant variant = Variant::kSar;

  bool masked() const { return variant == Variant::kSar || variant == Variant::kMaskedNoSmooth; }
  bool per_step() const { return variant != Variant::kBaselineToken; }
  /// Weight of the smoothing term actually used in training.
  double smoothing() const { return per_step() && variant != Variant::kMaskedNoSmooth ? lambda : 0.0; }
  /// Sequence length seen by the encoder (window plus the class token, if any).
  std::size_t tokens() const { return window + (per_step() ? 0 : 1); }

  /// Throws kInvalidArgument on any violated invariant.
  void validate() const;

  /// Default classifier for one head (12 inputs / 7 classes or 18 / 10).
  static ActConfig for_head(Head head, Variant variant = Variant::kSar);
  /// The larger published hyperparameters (d=64, FFN 256).
  static ActConfig full_scale(Head head, Variant variant = Variant::kSar);
};

nlohmann::json config_to_json(const ActConfig& cfg);
ActConfig config_from_json(const nlohmann::json& doc);

ad::ParameterSet init_parameters(const ActConfig& cfg, std::uint64_t seed);
/// Throws kShapeMismatch when names or shapes do not match the config.
void check_parameters(const ActConfig& cfg, const ad::ParameterSet& params);

/// Parameters bound as leaves of one graph.
struct BoundWeights {
  struct Layer {
    ad::Var wq, bq, wk, bk, wv, bv, wo, bo;
    ad::Var ln1_g, ln1_b;
    ad::Var ff1_w, ff1_b, ff2_w, ff2_b;
    ad::Var ln2_g, ln2_b;
  };
  ad::Var w_in, pos, token;
  std::vector<Layer> layers;
  ad::Var head1_w, head1_b, head2_w, head2_b;
};

/// Trainable binding (gradients flow into params).
BoundWeights bind(ad::Graph& graph, const ActConfig& cfg, ad::ParameterSet& params);
/// Read-only binding for a non-recording graph.
BoundWeights bind(ad::Graph& graph, const ActConfig& cfg, const ad::ParameterSet& params);

/// Lower-triangular T x T matrix of ones (1 where column <= row).
ad::Tensor causal_mask(std::size_t t);
/// 0 where the binary mask is 1, -inf elsewhere.
ad::Tensor additive_form(const ad::Tensor& binary_mask);

/// windows [B, N, D] -> [B, tokens, d]: shared projection plus positional table,
/// with the class token in front for the baseline variant.
ad::Var embed(const ActConfig& cfg, const BoundWeights& w, ad::Var windows);
/// softmax(Q K^T / sqrt(d_k) + mask) V for [B, T, d_k] operands; mask is binary or null.
ad::Var attention(ad::Var q, ad::Var k, ad::Var v, const ad::Tensor* mask);
/// Post-norm encoder stack over embedded windows.
ad::Var encode(const ActConfig& cfg, const BoundWeights& w, ad::Var windows);
/// Class probabilities: [B, N, C] per step, or [B, 1, C] for the class token.
ad::Var classify(const ActConfig& cfg, const BoundWeights& w, ad::Var windows);

inline constexpr double kProbabilityFloor = 1e-12;

/// Mean over steps of -log max(p_true, 1e-12); probs [B, T, C], classes B*T indices.
ad::Var loss_cls(ad::Var probs, std::span<const int> classes);
/// (1 / (B T C)) sum_{t>=1} min(|log y_t - log y_{t-1}|, tau)^2 with y_{t-1} detached.
ad::Var loss_tmse(ad::Var probs, double tau);
ad::Var loss_total(ad::Var probs, std::span<const int> classes, double lambda, double tau);

struct Prediction {
  ad::Tensor probs;         // [N, C] or [1, C]
  std::vector<int> labels;  // label ids per output row
  int final_label = 0;
  bool padded = false;
};

/// window [n, D] with 1 <= n <= N; shorter windows are left-padded with their
/// first row.
Prediction infer(const ActConfig& cfg, const ad::ParameterSet& params, const ad::Tensor& window);
/// Final-step probabilities [B, C] for full windows [B, N, D].
ad::Tensor infer_final(const ActConfig& cfg, const ad::ParameterSet& params, const ad::Tensor& windows);

// ---- sequences and training -------------------------------------------------

struct LabeledSequence {
  std::vector<biomech::JointAngleFrame> frames;
  std::vector<int> lower;
  std::vector<int> upper;

  /// Throws kShapeMismatch / kInvalidArgument.
  void validate() const;
};

/// Per-frame input features for one classifier with per-frame label ids.
struct FeatureSequence {
  RowMatrix features;  // T x D
  std::vector<int> labels;
};

/// Joint-angle subset of the head's mask with that head's labels.
FeatureSequence head_features(const LabeledSequence& seq, const biomech::BiomechModel& model, Head head);

/// Rows end-n+1 .. end, left-padded with row 0 -> [n, D].
ad::Tensor window_at(const FeatureSequence& seq, std::size_t end, std::size_t n);

struct TrainConfig {
  int epochs = 300;
  double learning_rate = 1e-3;
  std::size_t batch = 32;
  /// Spacing of training window end frames.
  std::size_t stride = 1;
  /// Spacing of validation frames.
  std::size_t eval_stride = 1;
  std::uint64_t seed = 1;
};

struct TrainHistory {
  std::vector<double> loss;
  std::vector<double> val_accuracy;
  int best_epoch = -1;
};

struct TrainResult {
  ad::ParameterSet params;
  TrainHistory history;
};

/// Adam with a cosine schedule over sliding windows; returns the weights of
/// the epoch with the best final-step validation accuracy (training accuracy
/// when no validation data is given). Throws kEmptyInput.
TrainResult train(const ActConfig& cfg, std::span<const FeatureSequence> train_set,
                  std::span<const FeatureSequence> val_set, const TrainConfig& tc);

struct SequencePrediction {
  std::vector<std::size_t> frames;  // evaluated frame indices
  std::vector<int> labels;          // final-step label id per evaluated frame
  RowMatrix probs;                  // final-step probabilities, one row per evaluated frame
};

/// Slides the window over frames 0, stride, 2 stride, ... (left-padded at the start).
SequencePrediction predict_sequence(const ActConfig& cfg, const ad::ParameterSet& params,
                                    const FeatureSequence& seq, std::size_t stride = 1);

/// Checkpoint plus "<path>.json" config sidecar.
void save_model(const std::filesystem::path& path, const ActConfig& cfg, const ad::ParameterSet& params);
struct LoadedModel {
  ActConfig config;
  ad::ParameterSet params;
};
LoadedModel load_model(const std::filesystem::path& path);

}  // namespace kinact::act
