#include "kinact/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "kinact/error.hpp"
#include "kinact/ndjson.hpp"

namespace kinact::synth {

namespace {

using biomech::JointVector;
using std::numbers::pi;

// Joint order of the default model.
enum J : int {
  kLumbarFlex = 0,
  kLumbarBend,
  kLumbarRot,
  kThoracicExt,
  kRHipFlex,
  kRHipAdd,
  kRHipRot,
  kRKnee,
  kLHipFlex,
  kLHipAdd,
  kLHipRot,
  kLKnee,
  kRShFlex,
  kRShAbd,
  kRShRot,
  kRElbow,
  kRPron,
  kLShFlex,
  kLShAbd,
  kLShRot,
  kLElbow,
  kLPron,
};

constexpr int kArmOffset = kLShFlex - kRShFlex;

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double smoothstep(double s) {
  s = std::clamp(s, 0.0, 1.0);
  return s * s * (3.0 - 2.0 * s);
}

void check_pair(int lower, int upper) {
  if (!is_lower_label(lower) || !is_upper_label(upper))
    fail(ErrorCode::kInvalidArgument, fmt::format("invalid label pair ({}, {})", lower, upper));
}

struct Shape {
  double amp, rate, phase, posture;
};

Shape shape_of(const Eigen::Vector4d& v) {
  return {1.0 + 0.15 * v[0], 1.0 + 0.15 * v[1], pi * v[2], 1.0 + 0.08 * v[3]};
}

JointVector steady_lower(int lower, double t, const Shape& s) {
  JointVector q = JointVector::Zero();
  q[kLumbarFlex] = 0.02 * s.amp * std::sin(2.0 * pi * 0.2 * s.rate * t + s.phase);
  switch (lower) {
    case label::kStanding:
      break;
    case label::kWalking: {
      const double th = 2.0 * pi * s.rate * t + s.phase;
      q[kRHipFlex] = 0.1 + 0.35 * s.amp * std::sin(th);
      q[kLHipFlex] = 0.1 + 0.35 * s.amp * std::sin(th + pi);
      q[kRKnee] = 0.35 + 0.3 * s.amp * std::sin(th + 0.5 * pi);
      q[kLKnee] = 0.35 + 0.3 * s.amp * std::sin(th + 1.5 * pi);
      q[kLumbarRot] = 0.06 * s.amp * std::sin(th);
      break;
    }
    case label::kSitting:
      q[kLumbarFlex] += 0.15 * s.posture;
      q[kRHipFlex] = q[kLHipFlex] = 1.45 * s.posture;
      q[kRKnee] = q[kLKnee] = 1.5 * s.posture;
      break;
    case label::kSquatting:
      q[kLumbarFlex] += 0.45 * s.posture;
      q[kRHipFlex] = q[kLHipFlex] = 1.9 * s.posture;
      q[kRKnee] = q[kLKnee] = 2.1 * s.posture;
      q[kRHipAdd] = q[kLHipAdd] = -0.15;
      break;
    default:
      fail(ErrorCode::kInvalidArgument, fmt::format("{} is not a steady lower label", lower));
  }
  return q;
}

JointVector lower_pose(int lower, double t, const Shape& s, double span) {
  int from = 0, to = 0;
  switch (lower) {
    case label::kStandingUp: from = label::kSitting, to = label::kStanding; break;
    case label::kSittingDown: from = label::kStanding, to = label::kSitting; break;
    case label::kSquattingDown: from = label::kStanding, to = label::kSquatting; break;
    default: return steady_lower(lower, t, s);
  }
  const double w = smoothstep(t / span);
  return (1.0 - w) * steady_lower(from, t, s) + w * steady_lower(to, t, s);
}

// side 0 = right, 1 = left.
void picking_arm(JointVector& q, int side, double c, const Shape& s) {
  const int o = side * kArmOffset;
  q[kRShFlex + o] += 0.3 + 0.9 * s.amp * c;
  q[kRShAbd + o] += 0.1;
  q[kRElbow + o] += 0.9 - 0.5 * c;
  q[kRPron + o] += 0.5;
}

void beckoning_arm(JointVector& q, int side, double t, const Shape& s) {
  const int o = side * kArmOffset;
  q[kRShFlex + o] += 1.3 * s.posture;
  q[kRShAbd + o] += 0.3;
  q[kRElbow + o] += 0.9 + 0.5 * s.amp * std::sin(2.0 * pi * 1.2 * s.rate * t + s.phase);
  q[kRPron + o] += 1.2;
}

void background_pose(JointVector& q, const Shape& s) {
  // Static family picked by the phase: hands on hips, crossed arms, hands behind the back.
  const int variant = std::clamp(static_cast<int>((s.phase / pi + 1.0) * 1.5), 0, 2);
  for (int side = 0; side < 2; ++side) {
    const int o = side * kArmOffset;
    switch (variant) {
      case 0:
        q[kRShFlex + o] += -0.2;
        q[kRShAbd + o] += 0.9 * s.posture;
        q[kRShRot + o] += 0.6;
        q[kRElbow + o] += 1.7 * s.posture;
        break;
      case 1:
        q[kRShFlex + o] += 0.7 * s.posture;
        q[kRShAbd + o] += 0.1;
        q[kRShRot + o] += -1.0;
        q[kRElbow + o] += 1.9 * s.posture;
        break;
      default:
        q[kRShFlex + o] += -0.6 * s.posture;
        q[kRShRot + o] += 0.5;
        q[kRElbow + o] += 1.2 * s.posture;
        break;
    }
  }
}

void add_upper(JointVector& q, int upper, double t, const Shape& s) {
  const double c = 0.5 * (1.0 - std::cos(pi * s.rate * t + s.phase));  // 2 s reach cycle
  const double bob = 0.05 * s.amp * std::sin(2.0 * pi * 0.8 * s.rate * t + s.phase);
  switch (upper) {
    case label::kTwoArmsPicking:
      picking_arm(q, 0, c, s);
      picking_arm(q, 1, c, s);
      q[kLumbarFlex] += 0.35 * c;
      break;
    case label::kRightArmPicking:
      picking_arm(q, 0, c, s);
      q[kLumbarFlex] += 0.2 * c;
      q[kLumbarRot] += -0.25 * c;
      break;
    case label::kLeftArmPicking:
      picking_arm(q, 1, c, s);
      q[kLumbarFlex] += 0.2 * c;
      q[kLumbarRot] += 0.25 * c;
      break;
    case label::kIdle:
      break;
    case label::kTwoThumbsUp:
      for (int side = 0; side < 2; ++side) {
        const int o = side * kArmOffset;
        q[kRShFlex + o] += 0.5 * s.posture + bob;
        q[kRShRot + o] += 0.3;
        q[kRElbow + o] += 1.5 * s.posture;
        q[kRPron + o] += -1.0 * s.posture;
      }
      break;
    case label::kComeSignRight:
      beckoning_arm(q, 0, t, s);
      break;
    case label::kComeSignLeft:
      beckoning_arm(q, 1, t, s);
      break;
    case label::kComeSignTwoArms:
      beckoning_arm(q, 0, t, s);
      beckoning_arm(q, 1, t, s);
      break;
    case label::kStopSign:
      q[kRShFlex] += 1.45 * s.posture + bob;
      q[kRShRot] += 0.4;
      q[kRElbow] += 0.15;
      q[kRPron] += -0.2;
      break;
    case label::kBackground:
      background_pose(q, s);
      break;
    default:
      fail(ErrorCode::kInvalidArgument, fmt::format("{} is not an upper label", upper));
  }
}

Eigen::Vector4d draw_variation(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::Vector4d v;
  for (int i = 0; i < 4; ++i) v[i] = u(rng);
  return v;
}

/// Ornstein-Uhlenbeck process with exact discretization, started from its
/// stationary distribution.
class OuNoise {
 public:
  OuNoise(double sigma, double tau, double dt, std::uint64_t seed)
      : sigma_(sigma), a_(std::exp(-dt / tau)), rng_(seed) {
    for (auto& x : state_) x = sigma_ * normal_(rng_);
  }

  const JointVector& next() {
    const double b = sigma_ * std::sqrt(1.0 - a_ * a_);
    for (auto& x : state_) x = a_ * x + b * normal_(rng_);
    return state_;
  }

 private:
  double sigma_;
  double a_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  JointVector state_ = JointVector::Zero();
};

void check_motion_options(const MotionOptions& o, double rate) {
  if (!(rate > 0.0)) fail(ErrorCode::kInvalidArgument, "frame rate must be positive");
  if (!(o.noise_sigma >= 0.0) || !(o.noise_tau > 0.0))
    fail(ErrorCode::kInvalidArgument, "noise sigma must be >= 0 and tau > 0");
}

JointVector finish(const biomech::BiomechModel& model, const JointVector& q) {
  return q.cwiseMax(model.lower_limits()).cwiseMin(model.upper_limits());
}

}  // namespace

// ---- scripts ----------------------------------------------------------------

void TrialScript::validate() const {
  if (!(duration > 0.0) || !(rate_hz > 0.0) || !(transition >= 0.0))
    fail(ErrorCode::kInvalidArgument, "trial duration, rate and transition must be positive");
  if (cues.empty() || cues.front().time != 0.0)
    fail(ErrorCode::kInvalidArgument, "a script starts with a cue at time 0");
  for (std::size_t i = 0; i < cues.size(); ++i) {
    check_pair(cues[i].lower, cues[i].upper);
    if (is_lower_label(cues[i].lower) && cues[i].lower >= label::kStandingUp)
      fail(ErrorCode::kInvalidArgument, "transitory labels are not cued directly");
    if (cues[i].time >= duration) fail(ErrorCode::kInvalidArgument, "cue after the end of the trial");
    if (i > 0 && cues[i].time - cues[i - 1].time <= transition)
      fail(ErrorCode::kInvalidArgument, "cues must be further apart than the transition");
  }
}

std::size_t TrialScript::frame_count() const {
  return static_cast<std::size_t>(std::llround(duration * rate_hz));
}

std::vector<TrialScript> make_scripts(std::size_t count, std::uint64_t seed, const ScriptOptions& options) {
  if (!(options.min_gap > options.transition) || options.max_gap < options.min_gap)
    fail(ErrorCode::kInvalidArgument, "gap range must exceed the transition length");
  std::mt19937_64 rng(mix(seed));
  std::uniform_real_distribution<double> gap(options.min_gap, options.max_gap);
  std::vector<int> lower_bag, upper_bag;
  const auto draw = [&rng](std::vector<int>& bag, int first, int n) {
    if (bag.empty()) {
      bag.resize(static_cast<std::size_t>(n));
      std::iota(bag.begin(), bag.end(), first);
      std::shuffle(bag.begin(), bag.end(), rng);
    }
    const int v = bag.back();
    bag.pop_back();
    return v;
  };
  std::vector<TrialScript> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto& s = out[i];
    s.duration = options.duration;
    s.rate_hz = options.rate_hz;
    s.transition = options.transition;
    s.seed = mix(seed ^ mix(i + 1));
    for (double t = 0.0; t < options.duration; t += gap(rng))
      s.cues.push_back({t, draw(lower_bag, label::kStanding, 4), draw(upper_bag, kFirstUpperLabel, kNumUpperLabels)});
    s.validate();
  }
  return out;
}

TrialScript make_script(std::uint64_t seed, const ScriptOptions& options) {
  return make_scripts(1, seed, options).front();
}

int transition_label(int from, int to) {
  if (from == to) return to;
  if (to == label::kSitting) return label::kSittingDown;
  if (to == label::kSquatting) return label::kSquattingDown;
  if ((from == label::kSitting || from == label::kSquatting) &&
      (to == label::kStanding || to == label::kWalking))
    return label::kStandingUp;
  return to;
}

// ---- motions ----------------------------------------------------------------

biomech::BasePose standing_base() {
  biomech::BasePose base;
  base.translation = Vec3(0.0, 0.95, 0.0);
  return base;
}

JointVector label_pose(int lower, int upper, double t, const Eigen::Vector4d& variation, double span) {
  check_pair(lower, upper);
  if (!(span > 0.0)) fail(ErrorCode::kInvalidArgument, "blend span must be positive");
  const Shape s = shape_of(variation);
  JointVector q = lower_pose(lower, t, s, span);
  add_upper(q, upper, t, s);
  return q;
}

std::vector<biomech::JointAngleFrame> generate_motion(int lower, int upper, double duration,
                                                      const biomech::BiomechModel& model,
                                                      std::uint64_t seed, const MotionOptions& options) {
  check_pair(lower, upper);
  check_motion_options(options, options.rate_hz);
  if (!(duration > 0.0)) fail(ErrorCode::kInvalidArgument, "motion duration must be positive");
  std::mt19937_64 rng(mix(seed));
  const Eigen::Vector4d variation = draw_variation(rng);
  const double dt = 1.0 / options.rate_hz;
  OuNoise noise(options.noise_sigma, options.noise_tau, dt, mix(seed + 1));
  const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(duration * options.rate_hz)));
  std::vector<biomech::JointAngleFrame> frames(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * dt;
    frames[k].timestamp = t;
    frames[k].base = options.base;
    frames[k].q = finish(model, label_pose(lower, upper, t, variation, duration) + noise.next());
  }
  return frames;
}

act::LabeledSequence generate_trial(const TrialScript& script, const biomech::BiomechModel& model,
                                    const MotionOptions& options) {
  script.validate();
  check_motion_options(options, script.rate_hz);
  std::mt19937_64 rng(mix(script.seed));
  std::vector<Eigen::Vector4d> variation;
  for (std::size_t k = 0; k < script.cues.size(); ++k) variation.push_back(draw_variation(rng));
  const double dt = 1.0 / script.rate_hz;
  OuNoise noise(options.noise_sigma, options.noise_tau, dt, mix(script.seed + 1));

  act::LabeledSequence seq;
  const std::size_t n = script.frame_count();
  seq.frames.resize(n);
  seq.lower.resize(n);
  seq.upper.resize(n);
  std::size_t k = 0;
  for (std::size_t f = 0; f < n; ++f) {
    const double t = static_cast<double>(f) * dt;
    while (k + 1 < script.cues.size() && script.cues[k + 1].time <= t + 1e-9) ++k;
    const Cue& cue = script.cues[k];
    JointVector q = label_pose(cue.lower, cue.upper, t, variation[k]);
    int lower = cue.lower;
    if (k > 0 && t - cue.time < script.transition) {
      const Cue& prev = script.cues[k - 1];
      const double w = smoothstep((t - cue.time) / script.transition);
      q = (1.0 - w) * label_pose(prev.lower, prev.upper, t, variation[k - 1]) + w * q;
      lower = transition_label(prev.lower, cue.lower);
    }
    seq.frames[f].timestamp = t;
    seq.frames[f].base = options.base;
    seq.frames[f].q = finish(model, q + noise.next());
    seq.lower[f] = lower;
    seq.upper[f] = cue.upper;
  }
  return seq;
}

// ---- rendering and transforms ----------------------------------------------

std::vector<std::vector<camgeo::Keypoints2D>> render_keypoints(
    std::span<const biomech::JointAngleFrame> frames, const biomech::BiomechModel& model,
    std::span<const camgeo::CameraParams> cams, const RenderOptions& options) {
  if (!(options.pixel_noise >= 0.0)) fail(ErrorCode::kInvalidArgument, "pixel noise must be >= 0");
  for (const auto& cam : cams) camgeo::validate(cam);
  std::mt19937_64 rng(mix(options.seed));
  std::normal_distribution<double> normal(0.0, options.pixel_noise);
  std::vector<std::vector<camgeo::Keypoints2D>> out(cams.size());
  for (auto& stream : out) stream.resize(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const auto points = biomech::keypoint_positions(model, frames[f].q, frames[f].base);
    for (std::size_t c = 0; c < cams.size(); ++c) {
      auto& kp = out[c][f];
      kp.camera_id = cams[c].id;
      kp.timestamp = frames[f].timestamp;
      for (std::size_t j = 0; j < biomech::kNumKeypoints; ++j) {
        const Eigen::Vector2d uv = camgeo::project(cams[c], points[j]);
        kp.points[j].u = uv.x();
        kp.points[j].v = uv.y();
        if (options.pixel_noise > 0.0) {
          kp.points[j].u += normal(rng);
          kp.points[j].v += normal(rng);
        }
        kp.points[j].confidence = 1.0;
      }
    }
  }
  return out;
}

Rigid rigid_for_seed(std::uint64_t seed) {
  if (seed == kIdentitySeed) return Rigid::Identity();
  std::mt19937_64 rng(mix(seed));
  return random_rigid(rng, 1.0);
}

std::vector<camgeo::JointCenters3D> random_rigid_transform(std::span<const camgeo::JointCenters3D> seq,
                                                           std::uint64_t seed) {
  std::vector<camgeo::JointCenters3D> out(seq.begin(), seq.end());
  if (seed == kIdentitySeed) return out;
  const Rigid transform = rigid_for_seed(seed);
  for (auto& frame : out)
    for (auto& p : frame.points) p = transform * p;
  return out;
}

// ---- corpus -----------------------------------------------------------------

Split split_corpus(std::size_t count, const std::array<double, 3>& ratios, std::uint64_t seed) {
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(total - 1.0) > 1e-9 || *std::min_element(ratios.begin(), ratios.end()) < 0.0)
    fail(ErrorCode::kInvalidArgument, "split ratios must be non-negative and sum to 1");
  const auto n = static_cast<double>(count);
  const auto train = static_cast<std::size_t>(std::llround(ratios[0] * n));
  const auto val = static_cast<std::size_t>(std::llround(ratios[1] * n));
  if (train == 0 || val == 0 || train + val >= count)
    fail(ErrorCode::kInvalidArgument,
         fmt::format("{} trials are too few for a three-way split", count));
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix(seed));
  std::shuffle(order.begin(), order.end(), rng);
  Split split;
  split.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(train));
  split.val.assign(order.begin() + static_cast<std::ptrdiff_t>(train),
                   order.begin() + static_cast<std::ptrdiff_t>(train + val));
  split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(train + val), order.end());
  for (auto* part : {&split.train, &split.val, &split.test}) std::sort(part->begin(), part->end());
  return split;
}

std::vector<const act::LabeledSequence*> Corpus::subset(const std::vector<std::size_t>& indices) const {
  std::vector<const act::LabeledSequence*> out;
  for (std::size_t i : indices) out.push_back(&trials.at(i).sequence);
  return out;
}

Corpus generate_corpus(const biomech::BiomechModel& model, const CorpusOptions& options) {
  Corpus corpus;
  corpus.seed = options.seed;
  corpus.rate_hz = options.script.rate_hz;
  corpus.split = split_corpus(options.trials, options.ratios, options.seed);
  const auto scripts = make_scripts(options.trials, options.seed, options.script);
  for (std::size_t i = 0; i < scripts.size(); ++i) {
    Trial trial;
    trial.file = fmt::format("trial_{:03d}.ndjson", i);
    trial.seed = scripts[i].seed;
    trial.sequence = generate_trial(scripts[i], model, options.motion);
    corpus.trials.push_back(std::move(trial));
  }
  return corpus;
}

nlohmann::json labeled_frame_to_json(const biomech::JointAngleFrame& frame, int lower, int upper) {
  return {{"t", frame.timestamp},
          {"q", std::vector<double>(frame.q.data(), frame.q.data() + frame.q.size())},
          {"lo", lower},
          {"up", upper}};
}

void write_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIo, fmt::format("cannot create {}: {}", dir.string(), ec.message()));
  nlohmann::json manifest{{"format", "kinact-corpus"}, {"version", 1},
                          {"seed", corpus.seed},      {"rate_hz", corpus.rate_hz}};
  auto& trials = manifest["trials"];
  trials = nlohmann::json::array();
  for (std::size_t i = 0; i < corpus.trials.size(); ++i) {
    const auto& trial = corpus.trials[i];
    trial.sequence.validate();
    std::ofstream os(dir / trial.file);
    if (!os) fail(ErrorCode::kIo, fmt::format("cannot write {}", (dir / trial.file).string()));
    const auto& seq = trial.sequence;
    for (std::size_t f = 0; f < seq.frames.size(); ++f)
      write_ndjson_line(os, labeled_frame_to_json(seq.frames[f], seq.lower[f], seq.upper[f]));
    if (!os) fail(ErrorCode::kIo, fmt::format("write failed for {}", (dir / trial.file).string()));
    trials.push_back({{"file", trial.file}, {"seed", trial.seed}, {"frames", seq.frames.size()}});
  }
  manifest["split"] = {{"train", corpus.split.train}, {"val", corpus.split.val}, {"test", corpus.split.test}};
  write_json_file(dir / "manifest.json", manifest);
}

Corpus read_corpus(const std::filesystem::path& dir) {
  const auto manifest = read_json_file(dir / "manifest.json");
  Corpus corpus;
  try {
    if (manifest.at("format").get<std::string>() != "kinact-corpus")
      fail(ErrorCode::kParse, "not a corpus manifest");
    corpus.seed = manifest.at("seed").get<std::uint64_t>();
    corpus.rate_hz = manifest.at("rate_hz").get<double>();
    const auto& split = manifest.at("split");
    corpus.split.train = split.at("train").get<std::vector<std::size_t>>();
    corpus.split.val = split.at("val").get<std::vector<std::size_t>>();
    corpus.split.test = split.at("test").get<std::vector<std::size_t>>();
    for (const auto& entry : manifest.at("trials")) {
      Trial trial;
      trial.file = entry.at("file").get<std::string>();
      trial.seed = entry.at("seed").get<std::uint64_t>();
      for (const auto& record : read_ndjson(dir / trial.file)) {
        const auto q = record.at("q").get<std::vector<double>>();
        if (q.size() != biomech::kNumDofs)
          fail(ErrorCode::kShapeMismatch,
               fmt::format("{}: expected {} joint angles, got {}", trial.file, biomech::kNumDofs, q.size()));
        biomech::JointAngleFrame frame;
        frame.timestamp = record.at("t").get<double>();
        frame.q = Eigen::Map<const JointVector>(q.data());
        frame.base = standing_base();
        trial.sequence.frames.push_back(frame);
        trial.sequence.lower.push_back(record.at("lo").get<int>());
        trial.sequence.upper.push_back(record.at("up").get<int>());
      }
      if (trial.sequence.frames.size() != entry.at("frames").get<std::size_t>())
        fail(ErrorCode::kShapeMismatch, fmt::format("{}: frame count differs from manifest", trial.file));
      trial.sequence.validate();
      corpus.trials.push_back(std::move(trial));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, fmt::format("corpus manifest {}: {}", dir.string(), e.what()));
  }
  for (const auto* part : {&corpus.split.train, &corpus.split.val, &corpus.split.test})
    for (std::size_t i : *part)
      if (i >= corpus.trials.size()) fail(ErrorCode::kParse, "split index outside the trial list");
  return corpus;
}

}  // namespace kinact::synth
