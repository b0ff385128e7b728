#include "kinact/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "kinact/augment.hpp"
#include "kinact/error.hpp"

namespace kinact::experiments {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

std::vector<act::FeatureSequence> features_of(const synth::Corpus& corpus, const std::vector<std::size_t>& idx,
                                              const biomech::BiomechModel& model, act::Head head) {
  std::vector<act::FeatureSequence> out;
  for (const auto* seq : corpus.subset(idx)) out.push_back(act::head_features(*seq, model, head));
  return out;
}

metrics::EvalReport evaluate_pair(const act::ActConfig& lc, const ad::ParameterSet& lp,
                                  std::span<const act::FeatureSequence> lower_test, const act::ActConfig& uc,
                                  const ad::ParameterSet& up, std::span<const act::FeatureSequence> upper_test,
                                  std::size_t stride, double fps) {
  return metrics::evaluate(predict_head(lc, lp, lower_test, stride), predict_head(uc, up, upper_test, stride), fps);
}

/// Combined accuracy of two heads over the same frames.
double combined(const metrics::HeadOutput& lower, const metrics::HeadOutput& upper) {
  std::vector<metrics::LabelPair> pred, truth;
  for (std::size_t i = 0; i < lower.pred.size(); ++i) {
    pred.emplace_back(lower.pred[i], upper.pred[i]);
    truth.emplace_back(lower.truth[i], upper.truth[i]);
  }
  return metrics::combined_accuracy(pred, truth);
}

}  // namespace

Preset Preset::standard() {
  Preset p;
  p.train.epochs = 300;
  p.train.learning_rate = 1e-3;
  p.train.batch = 32;
  return p;
}

Preset Preset::quick() {
  Preset p;
  p.train.epochs = 12;
  p.train.learning_rate = 3e-3;
  p.train.batch = 32;
  p.train.stride = 4;
  p.train.eval_stride = 5;
  return p;
}

nlohmann::json Preset::to_json() const {
  return {{"layers", layers},
          {"model_dim", model_dim},
          {"ffn_dim", ffn_dim},
          {"mlp_dim", mlp_dim},
          {"epochs", train.epochs},
          {"learning_rate", train.learning_rate},
          {"batch", train.batch},
          {"stride", train.stride},
          {"eval_stride", train.eval_stride},
          {"test_stride", test_stride}};
}

act::ActConfig head_config(act::Head head, act::Variant variant, const Preset& preset) {
  act::ActConfig c = act::ActConfig::for_head(head, variant);
  c.layers = preset.layers;
  c.model_dim = preset.model_dim;
  c.ffn_dim = preset.ffn_dim;
  c.mlp_dim = preset.mlp_dim;
  c.validate();
  return c;
}

HeadSplits head_splits(const synth::Corpus& corpus, const biomech::BiomechModel& model, act::Head head) {
  return {features_of(corpus, corpus.split.train, model, head), features_of(corpus, corpus.split.val, model, head),
          features_of(corpus, corpus.split.test, model, head)};
}

metrics::HeadOutput predict_head(const act::ActConfig& cfg, const ad::ParameterSet& params,
                                 std::span<const act::FeatureSequence> seqs, std::size_t stride) {
  metrics::HeadOutput out;
  out.first_label = cfg.first_label;
  std::vector<act::SequencePrediction> parts;
  Eigen::Index rows = 0;
  for (const auto& s : seqs) {
    parts.push_back(act::predict_sequence(cfg, params, s, stride));
    rows += parts.back().probs.rows();
  }
  out.probs.resize(rows, static_cast<Eigen::Index>(cfg.classes));
  Eigen::Index at = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& p = parts[k];
    out.probs.middleRows(at, p.probs.rows()) = p.probs;
    at += p.probs.rows();
    out.pred.insert(out.pred.end(), p.labels.begin(), p.labels.end());
    for (std::size_t f : p.frames) out.truth.push_back(seqs[k].labels[f]);
  }
  return out;
}

double head_pair_fps(const act::ActConfig& lower, const ad::ParameterSet& lower_params,
                     const act::ActConfig& upper, const ad::ParameterSet& upper_params) {
  const ad::Tensor lw({lower.window, lower.input_dim}, 0.1);
  const ad::Tensor uw({upper.window, upper.input_dim}, 0.1);
  return metrics::fps_benchmark(
      [&] {
        act::infer(lower, lower_params, lw);
        act::infer(upper, upper_params, uw);
      },
      5, 50);
}

// ---- ablation -------------------------------------------------------------------

const AblationRow& AblationResult::row(act::Variant variant) const {
  for (const auto& r : rows) {
    if (r.variant == variant) return r;
  }
  fail(ErrorCode::kInvalidArgument, fmt::format("ablation: no row for {}", act::variant_name(variant)));
}

nlohmann::json AblationResult::to_json() const {
  nlohmann::json doc;
  doc["seconds"] = seconds;
  for (const auto& r : rows) {
    doc["rows"].push_back({{"variant", act::variant_name(r.variant)},
                           {"acc", r.acc},
                           {"mAP", r.mAP},
                           {"f1", r.f1},
                           {"binary_acc", r.binary_acc},
                           {"fps", r.fps}});
  }
  for (const auto& run : runs) {
    doc["runs"].push_back({{"variant", act::variant_name(run.variant)},
                           {"seed", run.seed},
                           {"train_seconds", run.train_seconds},
                           {"report", run.report.to_json()}});
  }
  return doc;
}

std::string AblationResult::table() const {
  std::ostringstream os;
  os << fmt::format("{:<18} {:>8} {:>8} {:>8} {:>10} {:>10}\n", "variant", "acc", "mAP", "F1", "binary", "FPS");
  for (const auto& r : rows) {
    os << fmt::format("{:<18} {:>8.4f} {:>8.4f} {:>8.4f} {:>10.4f} {:>10.1f}\n", act::variant_name(r.variant), r.acc,
                      r.mAP, r.f1, r.binary_acc, r.fps);
  }
  return os.str();
}

AblationResult run_ablation(const synth::Corpus& corpus, const biomech::BiomechModel& model,
                            const AblationOptions& options) {
  if (options.variants.empty() || options.seeds.empty()) {
    fail(ErrorCode::kInvalidArgument, "ablation: no variants or seeds");
  }
  const auto start = Clock::now();
  const HeadSplits lower = head_splits(corpus, model, act::Head::kLower);
  const HeadSplits upper = head_splits(corpus, model, act::Head::kUpper);

  AblationResult result;
  for (const act::Variant v : options.variants) {
    for (const std::uint64_t seed : options.seeds) {
      const auto t0 = Clock::now();
      const act::ActConfig lc = head_config(act::Head::kLower, v, options.preset);
      const act::ActConfig uc = head_config(act::Head::kUpper, v, options.preset);
      act::TrainConfig tc = options.preset.train;
      tc.seed = seed;
      const auto lr = act::train(lc, lower.train, lower.val, tc);
      tc.seed = seed + 1000;
      const auto ur = act::train(uc, upper.train, upper.val, tc);
      AblationRun run;
      run.variant = v;
      run.seed = seed;
      run.train_seconds = seconds_since(t0);
      const double fps = head_pair_fps(lc, lr.params, uc, ur.params);
      run.report = evaluate_pair(lc, lr.params, lower.test, uc, ur.params, upper.test, options.preset.test_stride, fps);
      spdlog::info("ablation {} seed {}: acc {:.4f} ({:.1f} s)", act::variant_name(v), seed, run.report.acc,
                   run.train_seconds);
      if (options.progress) options.progress(run);
      result.runs.push_back(std::move(run));
    }
  }
  for (const act::Variant v : options.variants) {
    std::vector<double> acc, map, f1, bin, fps;
    for (const auto& run : result.runs) {
      if (run.variant != v) continue;
      acc.push_back(run.report.acc);
      map.push_back(run.report.mAP);
      f1.push_back(run.report.f1_macro);
      bin.push_back(run.report.binary_acc);
      fps.push_back(run.report.fps);
    }
    result.rows.push_back({v, median(acc), median(map), median(f1), median(bin), median(fps)});
  }
  result.seconds = seconds_since(start);
  return result;
}

// ---- viewpoint transforms -------------------------------------------------------

act::FeatureSequence jcp_features(std::span<const camgeo::JointCenters3D> centers, std::span<const int> labels) {
  if (centers.size() != labels.size()) fail(ErrorCode::kShapeMismatch, "jcp_features: frame and label counts differ");
  act::FeatureSequence out;
  out.features.resize(static_cast<Eigen::Index>(centers.size()), static_cast<Eigen::Index>(3 * biomech::kNumKeypoints));
  for (std::size_t t = 0; t < centers.size(); ++t) {
    for (std::size_t k = 0; k < biomech::kNumKeypoints; ++k) {
      out.features.block<1, 3>(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(3 * k)) =
          centers[t].points[k].transpose();
    }
  }
  out.labels.assign(labels.begin(), labels.end());
  return out;
}

std::vector<biomech::JointAngleFrame> recover_angles(const biomech::BiomechModel& model,
                                                     std::span<const camgeo::JointCenters3D> centers,
                                                     const ik::IkConfig& config) {
  ik::IkSession session(model, config);
  std::vector<biomech::JointAngleFrame> out;
  out.reserve(centers.size());
  for (const auto& jc : centers) out.push_back(session.step(augment::geometric_fallback(model, jc)).frame);
  return out;
}

double ViewpointResult::worst_angle_rms() const {
  double w = 0.0;
  for (const auto& c : cases) w = std::max(w, c.angle_rms);
  return w;
}

double ViewpointResult::worst_angle_drop() const {
  double w = -1.0;
  for (const auto& c : cases) w = std::max(w, angle_acc - c.angle_acc);
  return w;
}

double ViewpointResult::least_jcp_drop() const {
  double w = 2.0;
  for (const auto& c : cases) w = std::min(w, jcp_acc - c.jcp_acc);
  return w;
}

nlohmann::json ViewpointResult::to_json() const {
  nlohmann::json doc{{"angle_acc", angle_acc}, {"jcp_acc", jcp_acc}, {"seconds", seconds}};
  for (const auto& c : cases) {
    doc["transforms"].push_back({{"seed", c.transform_seed},
                                 {"angle_rms", c.angle_rms},
                                 {"angle_acc", c.angle_acc},
                                 {"jcp_acc", c.jcp_acc}});
  }
  return doc;
}

std::string ViewpointResult::table() const {
  std::ostringstream os;
  os << fmt::format("{:<12} {:>12} {:>10} {:>10}\n", "transform", "angle RMS", "angles", "JCP");
  os << fmt::format("{:<12} {:>12} {:>10.4f} {:>10.4f}\n", "none", "-", angle_acc, jcp_acc);
  for (const auto& c : cases) {
    os << fmt::format("{:<12} {:>12.2e} {:>10.4f} {:>10.4f}\n", fmt::format("seed {}", c.transform_seed), c.angle_rms,
                      c.angle_acc, c.jcp_acc);
  }
  return os.str();
}

ViewpointResult run_viewpoint(const synth::Corpus& corpus, const biomech::BiomechModel& model,
                              const ViewpointOptions& options) {
  const auto start = Clock::now();
  const Preset& preset = options.preset;
  const std::size_t stride = preset.test_stride;

  // Joint centers of every trial from forward kinematics.
  auto centers_of = [&](const act::LabeledSequence& seq) {
    std::vector<camgeo::JointCenters3D> out;
    out.reserve(seq.frames.size());
    for (const auto& f : seq.frames) out.push_back(augment::joint_centers_from_pose(model, f.q, f.base, f.timestamp));
    return out;
  };
  struct HeadSet {
    std::vector<act::FeatureSequence> train, val;
  };
  // Both input kinds are built from the same joint centers; angle features go
  // through the marker and IK recovery that the test data also takes.
  HeadSet jcp_lower, jcp_upper, angle_lower, angle_upper;
  auto add_split = [&](const std::vector<std::size_t>& idx, bool train) {
    for (const auto* seq : corpus.subset(idx)) {
      const auto c = centers_of(*seq);
      act::LabeledSequence rec;
      rec.frames = recover_angles(model, c, options.ik);
      rec.lower = seq->lower;
      rec.upper = seq->upper;
      (train ? jcp_lower.train : jcp_lower.val).push_back(jcp_features(c, seq->lower));
      (train ? jcp_upper.train : jcp_upper.val).push_back(jcp_features(c, seq->upper));
      (train ? angle_lower.train : angle_lower.val).push_back(act::head_features(rec, model, act::Head::kLower));
      (train ? angle_upper.train : angle_upper.val).push_back(act::head_features(rec, model, act::Head::kUpper));
    }
  };
  add_split(corpus.split.train, true);
  add_split(corpus.split.val, false);
  spdlog::info("viewpoint: training angles recovered ({:.1f} s)", seconds_since(start));

  const act::ActConfig alc = head_config(act::Head::kLower, act::Variant::kSar, preset);
  const act::ActConfig auc = head_config(act::Head::kUpper, act::Variant::kSar, preset);
  act::ActConfig jlc = alc;
  act::ActConfig juc = auc;
  jlc.input_dim = juc.input_dim = 3 * biomech::kNumKeypoints;

  act::TrainConfig tc = preset.train;
  const auto al = act::train(alc, angle_lower.train, angle_lower.val, tc);
  const auto au = act::train(auc, angle_upper.train, angle_upper.val, tc);
  const auto jl = act::train(jlc, jcp_lower.train, jcp_lower.val, tc);
  const auto ju = act::train(juc, jcp_upper.train, jcp_upper.val, tc);
  spdlog::info("viewpoint: classifiers trained ({:.1f} s)", seconds_since(start));

  const auto test = corpus.subset(corpus.split.test);
  std::vector<std::vector<camgeo::JointCenters3D>> base_centers;
  for (const auto* seq : test) base_centers.push_back(centers_of(*seq));

  // Scores one set of test joint centers with both classifiers and returns the
  // recovered angles for the invariance check.
  auto score = [&](const std::vector<std::vector<camgeo::JointCenters3D>>& centers, double& angle_acc,
                   double& jcp_acc) {
    std::vector<std::vector<biomech::JointAngleFrame>> recovered;
    std::vector<act::FeatureSequence> al_seq, au_seq, jl_seq, ju_seq;
    for (std::size_t i = 0; i < test.size(); ++i) {
      act::LabeledSequence rec;
      rec.frames = recover_angles(model, centers[i], options.ik);
      rec.lower = test[i]->lower;
      rec.upper = test[i]->upper;
      al_seq.push_back(act::head_features(rec, model, act::Head::kLower));
      au_seq.push_back(act::head_features(rec, model, act::Head::kUpper));
      jl_seq.push_back(jcp_features(centers[i], rec.lower));
      ju_seq.push_back(jcp_features(centers[i], rec.upper));
      recovered.push_back(std::move(rec.frames));
    }
    angle_acc = combined(predict_head(alc, al.params, al_seq, stride), predict_head(auc, au.params, au_seq, stride));
    jcp_acc = combined(predict_head(jlc, jl.params, jl_seq, stride), predict_head(juc, ju.params, ju_seq, stride));
    return recovered;
  };

  ViewpointResult result;
  const auto base_angles = score(base_centers, result.angle_acc, result.jcp_acc);
  for (const std::uint64_t seed : options.transform_seeds) {
    std::vector<std::vector<camgeo::JointCenters3D>> moved;
    for (const auto& c : base_centers) moved.push_back(synth::random_rigid_transform(c, seed));
    ViewpointCase vc;
    vc.transform_seed = seed;
    const auto angles = score(moved, vc.angle_acc, vc.jcp_acc);
    double sq = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < angles.size(); ++i) {
      for (std::size_t f = 0; f < angles[i].size(); ++f) {
        sq += (angles[i][f].q - base_angles[i][f].q).squaredNorm();
        n += biomech::kNumDofs;
      }
    }
    vc.angle_rms = n ? std::sqrt(sq / static_cast<double>(n)) : 0.0;
    spdlog::info("viewpoint transform {}: angle RMS {:.2e}, angle acc {:.4f}, JCP acc {:.4f}", seed, vc.angle_rms,
                 vc.angle_acc, vc.jcp_acc);
    result.cases.push_back(vc);
  }
  result.seconds = seconds_since(start);
  return result;
}

}  // namespace kinact::experiments
