// kinact: command-line entry point for the offline pipeline, training,
// evaluation, experiments and the live recognition loop.
//
// Exit codes: 0 success, 1 input error, 2 runtime failure.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "kinact/act.hpp"
#include "kinact/augment.hpp"
#include "kinact/biomech.hpp"
#include "kinact/camgeo.hpp"
#include "kinact/error.hpp"
#include "kinact/experiments.hpp"
#include "kinact/ik.hpp"
#include "kinact/log.hpp"
#include "kinact/metrics.hpp"
#include "kinact/ndjson.hpp"
#include "kinact/runtime.hpp"
#include "kinact/synth.hpp"

namespace fs = std::filesystem;
using namespace kinact;

namespace {

constexpr int kExitInput = 1;
constexpr int kExitRuntime = 2;

bool is_input_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::kParse:
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kShapeMismatch:
    case ErrorCode::kNotOrthonormal:
    case ErrorCode::kTimestampMismatch:
    case ErrorCode::kModelValidation:
    case ErrorCode::kMissingInput:
    case ErrorCode::kEmptyInput:
    case ErrorCode::kIo:
      return true;
    default:
      return false;
  }
}

/// Creates the parent directory of an output file up front.
void prepare_output(const fs::path& file) {
  if (file.empty()) return;
  const fs::path parent = file.parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  fs::create_directories(parent, ec);
  if (ec) fail(ErrorCode::kIo, fmt::format("cannot create {}: {}", parent.string(), ec.message()));
}

std::ofstream open_output(const fs::path& file) {
  prepare_output(file);
  std::ofstream os(file);
  if (!os) fail(ErrorCode::kIo, fmt::format("cannot write {}", file.string()));
  return os;
}

void write_json(const fs::path& file, const nlohmann::json& doc) {
  prepare_output(file);
  write_json_file(file, doc);
}

biomech::BiomechModel load_body(const std::string& path) {
  return path.empty() ? biomech::default_model() : biomech::load_model(path);
}

void require_corpus(const fs::path& dir) {
  if (!fs::is_regular_file(dir / "manifest.json"))
    fail(ErrorCode::kIo, fmt::format("{} has no manifest.json", dir.string()));
}

experiments::Preset pick_preset(const std::string& name) {
  if (name == "quick") return experiments::Preset::quick();
  if (name == "standard") return experiments::Preset::standard();
  fail(ErrorCode::kInvalidArgument, "preset must be quick or standard");
}

// ---- subcommand options ----------------------------------------------------------

struct TriangulateArgs {
  std::string calib, out;
  std::vector<std::string> views;
  double rate = 10.0;
  int max_gap = 3;
};

struct IkArgs {
  std::string input, out, model, augmenter;
  double time_budget = 15.0;
  int max_iterations = 10;
};

struct SynthArgs {
  std::string out, render_calib;
  std::size_t trials = 10;
  std::uint64_t seed = 1;
  double duration = 180.0;
  double rate = 10.0;
  double noise = 0.02;
  double pixel_noise = 0.0;
};

struct ArchArgs {
  std::size_t layers = 4, model_dim = 24, ffn_dim = 48, mlp_dim = 256;
};

struct TrainArgs {
  std::string corpus, out, head = "both", variant = "sar";
  ArchArgs arch;
  int epochs = 300;
  double lr = 1e-3;
  std::size_t batch = 32, stride = 1, eval_stride = 1;
  std::uint64_t seed = 1;
};

struct EvalArgs {
  std::string corpus, lower, upper, split = "test", out, csv;
  std::size_t stride = 1;
};

struct AblateArgs {
  std::string corpus, out, preset = "quick";
  std::vector<std::string> variants;
  std::size_t seeds = 3;
  std::uint64_t seed = 1;
  int epochs = 0;
};

struct TransformArgs {
  std::string corpus, out, preset = "quick";
  std::size_t transforms = 4;
  std::uint64_t seed = 1;
  int epochs = 0;
};

struct ServeArgs {
  std::string lower, upper, dest, input, log_out;
  double rate = 10.0;
  std::size_t buffer = 20;
  double threshold = 0.5;
};

struct PenArgs {
  std::uint16_t listen = 0;
  std::string host = "127.0.0.1", board_out;
  double idle_timeout = 5.0;
  std::size_t max_messages = 0;
  double speed = 0.02;
};

struct BenchArgs {
  std::string out, lower, upper;
  std::size_t frames = 200;
  std::uint64_t seed = 1;
};

// ---- subcommands ------------------------------------------------------------------

int run_triangulate(const TriangulateArgs& a) {
  const auto cams = camgeo::load_calibration(a.calib);
  if (a.views.size() != cams.size())
    fail(ErrorCode::kInvalidArgument,
         fmt::format("{} cameras in the calibration but {} keypoint streams", cams.size(), a.views.size()));
  std::vector<std::vector<camgeo::Keypoints2D>> streams;
  for (const auto& v : a.views) streams.push_back(camgeo::load_keypoint_stream(v));
  const std::size_t frames = streams.front().size();
  for (const auto& s : streams) {
    if (s.size() != frames) fail(ErrorCode::kShapeMismatch, "keypoint streams differ in length");
  }
  auto os = open_output(a.out);
  camgeo::FrameOptions opts;
  opts.rate_hz = a.rate;
  camgeo::GapFiller filler(a.max_gap);
  std::size_t incomplete = 0;
  for (std::size_t f = 0; f < frames; ++f) {
    std::vector<camgeo::Keypoints2D> views;
    for (const auto& s : streams) views.push_back(s[f]);
    auto jc = camgeo::triangulate_frame(cams, views, opts);
    if (a.max_gap > 0) jc = filler.push(std::move(jc));
    incomplete += jc.all_valid() ? 0 : 1;
    write_ndjson_line(os, camgeo::joint_centers_to_json(jc));
  }
  std::cout << fmt::format("{} frames triangulated, {} with missing joint centers\n", frames, incomplete);
  return 0;
}

int run_ik(const IkArgs& a) {
  const auto model = load_body(a.model);
  std::optional<augment::LstmWeights> lstm;
  if (!a.augmenter.empty()) lstm = augment::load_weights(a.augmenter);
  std::vector<camgeo::JointCenters3D> centers;
  for (const auto& rec : read_ndjson(a.input)) centers.push_back(camgeo::joint_centers_from_json(rec));
  if (centers.empty()) fail(ErrorCode::kEmptyInput, a.input + " has no frames");

  ik::IkConfig cfg;
  cfg.time_budget_ms = a.time_budget;
  cfg.max_iterations = a.max_iterations;
  cfg.validate();
  ik::IkSession session(model, cfg);
  std::optional<augment::LstmStream> stream;
  if (lstm) stream.emplace(*lstm);
  auto os = open_output(a.out);
  double worst = 0.0;
  for (const auto& jc : centers) {
    const auto markers = stream ? stream->push(jc) : augment::geometric_fallback(model, jc);
    const auto sol = session.step(markers);
    worst = std::max(worst, sol.residual_rms);
    auto frame = sol.frame;
    frame.timestamp = jc.timestamp;
    write_ndjson_line(os, biomech::joint_angle_frame_to_json(frame, sol.residual_rms));
  }
  std::cout << fmt::format("{} frames solved, worst marker RMS {:.4f} m\n", centers.size(), worst);
  return 0;
}

int run_synth(const SynthArgs& a) {
  std::vector<camgeo::CameraParams> cams;
  if (!a.render_calib.empty()) cams = camgeo::load_calibration(a.render_calib);
  const auto& model = biomech::default_model();
  synth::CorpusOptions opts;
  opts.trials = a.trials;
  opts.seed = a.seed;
  opts.script.duration = a.duration;
  opts.script.rate_hz = a.rate;
  opts.motion.rate_hz = a.rate;
  opts.motion.noise_sigma = a.noise;
  const auto corpus = synth::generate_corpus(model, opts);
  synth::write_corpus(a.out, corpus);
  if (!cams.empty()) {
    const fs::path dir = fs::path(a.out) / "keypoints";
    for (const auto& trial : corpus.trials) {
      synth::RenderOptions ro;
      ro.pixel_noise = a.pixel_noise;
      ro.seed = trial.seed;
      const auto streams = synth::render_keypoints(trial.sequence.frames, model, cams, ro);
      const std::string stem = fs::path(trial.file).stem().string();
      for (std::size_t c = 0; c < cams.size(); ++c) {
        auto os = open_output(dir / fmt::format("{}_{}.ndjson", stem, cams[c].id));
        for (const auto& kp : streams[c]) write_ndjson_line(os, camgeo::keypoints_to_json(kp));
      }
    }
  }
  std::cout << fmt::format("{} trials written to {} (train {}, val {}, test {})\n", corpus.trials.size(), a.out,
                           corpus.split.train.size(), corpus.split.val.size(), corpus.split.test.size());
  return 0;
}

nlohmann::json history_json(const act::TrainHistory& h, double seconds) {
  return {{"loss", h.loss}, {"val_accuracy", h.val_accuracy}, {"best_epoch", h.best_epoch}, {"seconds", seconds}};
}

int run_train(const TrainArgs& a) {
  require_corpus(a.corpus);
  if (a.head != "both" && a.head != "lower" && a.head != "upper")
    fail(ErrorCode::kInvalidArgument, "--head must be lower, upper or both");
  const act::Variant variant = act::parse_variant(a.variant);
  experiments::Preset preset;
  preset.layers = a.arch.layers;
  preset.model_dim = a.arch.model_dim;
  preset.ffn_dim = a.arch.ffn_dim;
  preset.mlp_dim = a.arch.mlp_dim;
  preset.train.epochs = a.epochs;
  preset.train.learning_rate = a.lr;
  preset.train.batch = a.batch;
  preset.train.stride = a.stride;
  preset.train.eval_stride = a.eval_stride;
  preset.train.seed = a.seed;
  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec) fail(ErrorCode::kIo, fmt::format("cannot create {}: {}", a.out, ec.message()));

  const auto corpus = synth::read_corpus(a.corpus);
  const auto& model = biomech::default_model();
  nlohmann::json history{{"variant", act::variant_name(variant)}, {"preset", preset.to_json()}};
  for (const act::Head head : {act::Head::kLower, act::Head::kUpper}) {
    const bool lower = head == act::Head::kLower;
    if ((lower && a.head == "upper") || (!lower && a.head == "lower")) continue;
    const std::string name = lower ? "lower" : "upper";
    const auto splits = experiments::head_splits(corpus, model, head);
    const auto cfg = experiments::head_config(head, variant, preset);
    act::TrainConfig tc = preset.train;
    tc.seed = lower ? a.seed : a.seed + 1000;
    const auto start = std::chrono::steady_clock::now();
    const auto res = act::train(cfg, splits.train, splits.val, tc);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const fs::path ckpt = fs::path(a.out) / (name + ".ckpt");
    act::save_model(ckpt, cfg, res.params);
    history[name] = history_json(res.history, secs);
    std::cout << fmt::format("{}: best epoch {} validation accuracy {:.4f} -> {}\n", name, res.history.best_epoch,
                             res.history.val_accuracy.at(static_cast<std::size_t>(res.history.best_epoch)),
                             ckpt.string());
  }
  write_json(fs::path(a.out) / "history.json", history);
  return 0;
}

int run_eval(const EvalArgs& a) {
  require_corpus(a.corpus);
  const auto lower = act::load_model(a.lower);
  const auto upper = act::load_model(a.upper);
  const auto corpus = synth::read_corpus(a.corpus);
  std::vector<std::size_t> idx;
  if (a.split == "train") idx = corpus.split.train;
  else if (a.split == "val") idx = corpus.split.val;
  else if (a.split == "test") idx = corpus.split.test;
  else if (a.split == "all") {
    for (std::size_t i = 0; i < corpus.trials.size(); ++i) idx.push_back(i);
  } else {
    fail(ErrorCode::kInvalidArgument, "--split must be train, val, test or all");
  }
  const auto& model = biomech::default_model();
  std::vector<act::FeatureSequence> lo, up;
  for (const auto* seq : corpus.subset(idx)) {
    lo.push_back(act::head_features(*seq, model, act::Head::kLower));
    up.push_back(act::head_features(*seq, model, act::Head::kUpper));
  }
  const double fps = experiments::head_pair_fps(lower.config, lower.params, upper.config, upper.params);
  const auto report = metrics::evaluate(experiments::predict_head(lower.config, lower.params, lo, a.stride),
                                        experiments::predict_head(upper.config, upper.params, up, a.stride), fps);
  std::cout << fmt::format("acc {:.4f}  mAP {:.4f}  F1 {:.4f}  binary acc {:.4f}  FPS {:.1f}\n", report.acc,
                           report.mAP, report.f1_macro, report.binary_acc, report.fps);
  if (!a.out.empty()) write_json(a.out, report.to_json());
  if (!a.csv.empty()) open_output(a.csv) << report.per_class_csv();
  return 0;
}

int run_ablate(const AblateArgs& a) {
  require_corpus(a.corpus);
  if (a.seeds == 0) fail(ErrorCode::kInvalidArgument, "--seeds must be positive");
  experiments::AblationOptions opts;
  opts.preset = pick_preset(a.preset);
  if (a.epochs > 0) opts.preset.train.epochs = a.epochs;
  opts.seeds.clear();
  for (std::size_t i = 0; i < a.seeds; ++i) opts.seeds.push_back(a.seed + i);
  if (!a.variants.empty()) {
    opts.variants.clear();
    for (const auto& v : a.variants) opts.variants.push_back(act::parse_variant(v));
  }
  if (!a.out.empty()) prepare_output(a.out);
  const auto corpus = synth::read_corpus(a.corpus);
  const auto result = experiments::run_ablation(corpus, biomech::default_model(), opts);
  std::cout << result.table() << fmt::format("{} runs in {:.1f} s\n", result.runs.size(), result.seconds);
  if (!a.out.empty()) {
    auto doc = result.to_json();
    doc["preset"] = opts.preset.to_json();
    write_json(a.out, doc);
  }
  return 0;
}

int run_transform(const TransformArgs& a) {
  require_corpus(a.corpus);
  if (a.transforms == 0) fail(ErrorCode::kInvalidArgument, "--transforms must be positive");
  experiments::ViewpointOptions opts;
  opts.preset = pick_preset(a.preset);
  if (a.epochs > 0) opts.preset.train.epochs = a.epochs;
  opts.preset.train.seed = a.seed;
  opts.transform_seeds.clear();
  // Seed 0 is reserved for the identity transform.
  for (std::size_t i = 0; i < a.transforms; ++i) opts.transform_seeds.push_back(a.seed + i + (a.seed == 0 ? 1 : 0));
  if (!a.out.empty()) prepare_output(a.out);
  const auto corpus = synth::read_corpus(a.corpus);
  const auto result = experiments::run_viewpoint(corpus, biomech::default_model(), opts);
  std::cout << result.table()
            << fmt::format("worst angle RMS {:.2e} rad, angle accuracy drop {:+.2f} pp, JCP accuracy drop {:+.2f} pp\n",
                           result.worst_angle_rms(), 100.0 * result.worst_angle_drop(), 100.0 * result.least_jcp_drop());
  if (!a.out.empty()) write_json(a.out, result.to_json());
  return 0;
}

int run_serve(const ServeArgs& a) {
  const auto endpoint = runtime::parse_endpoint(a.dest);
  auto lower = act::load_model(a.lower);
  auto upper = act::load_model(a.upper);
  std::vector<biomech::JointAngleFrame> frames;
  for (const auto& rec : read_ndjson(a.input)) frames.push_back(biomech::joint_angle_frame_from_json(rec));
  if (frames.empty()) fail(ErrorCode::kEmptyInput, a.input + " has no frames");
  std::optional<std::ofstream> log;
  if (!a.log_out.empty()) log = open_output(a.log_out);

  runtime::SessionOptions so;
  so.buffer_capacity = a.buffer;
  so.threshold = a.threshold;
  runtime::Session session(biomech::default_model(), {lower.config, std::move(lower.params)},
                           {upper.config, std::move(upper.params)}, so);
  runtime::UdpBroadcaster broadcaster(endpoint);
  runtime::RunOptions ro;
  ro.rate_hz = a.rate;
  ro.broadcaster = &broadcaster;
  const auto report = runtime::run_session(session, frames, ro);
  broadcaster.stop();
  if (log) {
    for (const auto& m : report.messages) *log << runtime::encode(m) << '\n';
  }
  std::cout << fmt::format("{} frames, step p50 {:.3f} ms p95 {:.3f} ms, sent {} failed {} dropped {}\n",
                           report.frames, report.step.p50_ms, report.step.p95_ms, broadcaster.sent(),
                           broadcaster.failed(), broadcaster.dropped());
  return 0;
}

int run_pen(const PenArgs& a) {
  prepare_output(a.board_out);
  runtime::UdpReceiver receiver(a.listen, a.host);
  spdlog::info("pen listening on {}:{}", a.host, receiver.port());
  runtime::PenOptions po;
  po.speed = a.speed;
  runtime::PenState state;
  nlohmann::json modes = nlohmann::json::array();
  std::size_t received = 0;
  const auto timeout = std::chrono::milliseconds(static_cast<std::int64_t>(a.idle_timeout * 1000.0));
  while (a.max_messages == 0 || received < a.max_messages) {
    const auto payload = receiver.receive(timeout);
    if (!payload) break;
    runtime::ActionMessage msg;
    try {
      msg = runtime::decode(*payload);
    } catch (const Error& e) {
      spdlog::warn("discarding datagram: {}", e.what());
      continue;
    }
    ++received;
    const auto before = state.mode;
    state = runtime::pen_transition(std::move(state), msg.confirmed_lower, msg.confirmed_upper, po);
    if (state.mode != before) modes.push_back({{"frame", msg.frame}, {"mode", runtime::pen_mode_name(state.mode)}});
  }
  auto doc = runtime::pen_trace_json(state);
  doc["modes"] = modes;
  doc["messages"] = received;
  write_json(a.board_out, doc);
  std::cout << fmt::format("{} messages, final mode {}, {} polylines -> {}\n", received,
                           runtime::pen_mode_name(state.mode), state.trace.size(), a.board_out);
  return 0;
}

int run_bench(const BenchArgs& a) {
  if (a.frames < 10) fail(ErrorCode::kInvalidArgument, "--frames must be at least 10");
  if (a.lower.empty() != a.upper.empty())
    fail(ErrorCode::kInvalidArgument, "give both --weights-lower and --weights-upper or neither");
  const auto& model = biomech::default_model();
  const auto cams = camgeo::load_calibration(fs::path(KINACT_DATA_DIR) / "stereo_rig.json");
  const auto motion = synth::generate_motion(label::kWalking, label::kRightArmPicking,
                                             static_cast<double>(a.frames) / 10.0, model, a.seed);
  const auto streams = synth::render_keypoints(motion, model, cams);

  runtime::HeadModel lower, upper;
  if (a.lower.empty()) {
    lower.config = act::ActConfig::for_head(act::Head::kLower);
    upper.config = act::ActConfig::for_head(act::Head::kUpper);
    lower.params = act::init_parameters(lower.config, a.seed);
    upper.params = act::init_parameters(upper.config, a.seed + 1);
  } else {
    auto l = act::load_model(a.lower);
    auto u = act::load_model(a.upper);
    lower = {l.config, std::move(l.params)};
    upper = {u.config, std::move(u.params)};
  }

  const std::size_t n = motion.size();
  std::vector<camgeo::JointCenters3D> centers(n);
  std::vector<biomech::MarkerFrame> markers(n);
  std::size_t i = 0;
  auto cycle = [&] { return i++ % n; };
  auto view = [&](std::size_t f) {
    std::vector<camgeo::Keypoints2D> v;
    for (const auto& s : streams) v.push_back(s[f]);
    return v;
  };
  for (std::size_t f = 0; f < n; ++f) {
    centers[f] = camgeo::triangulate_frame(cams, view(f));
    markers[f] = augment::geometric_fallback(model, centers[f]);
  }
  const int trials = static_cast<int>(a.frames);
  nlohmann::json doc;
  auto stage = [&](const std::string& name, const std::function<void()>& op) {
    i = 0;
    doc[name] = metrics::fps_benchmark(op, 5, trials);
    std::cout << fmt::format("{:<14} {:>12.1f} FPS\n", name, doc[name].get<double>());
  };
  stage("triangulate", [&] { (void)camgeo::triangulate_frame(cams, view(cycle())); });
  stage("augment", [&] { (void)augment::geometric_fallback(model, centers[cycle()]); });
  ik::IkConfig ikc;
  ikc.time_budget_ms = 0.0;
  ik::IkSession ik_session(model, ikc);
  stage("ik", [&] { (void)ik_session.step(markers[cycle()]); });
  stage("classifier", [&] {
    const ad::Tensor lw({lower.config.window, lower.config.input_dim}, 0.1);
    const ad::Tensor uw({upper.config.window, upper.config.input_dim}, 0.1);
    act::infer(lower.config, lower.params, lw);
    act::infer(upper.config, upper.params, uw);
  });
  runtime::Session session(model, lower.clone(), upper.clone());
  stage("session_step", [&] { (void)runtime::encode(session.step(motion[cycle()])); });
  if (!a.out.empty()) write_json(a.out, doc);
  return 0;
}

void add_arch(CLI::App* cmd, ArchArgs& arch) {
  cmd->add_option("--layers", arch.layers, "Encoder layers")->capture_default_str();
  cmd->add_option("--model-dim", arch.model_dim, "Model width")->capture_default_str();
  cmd->add_option("--ffn-dim", arch.ffn_dim, "Feed-forward width")->capture_default_str();
  cmd->add_option("--mlp-dim", arch.mlp_dim, "Classifier MLP width")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  init_logging();
  CLI::App app{"kinact: joint-angle action recognition pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "kinact 1.0");

  TriangulateArgs tri;
  auto* c_tri = app.add_subcommand("triangulate", "Per-camera keypoint streams to 3D joint centers");
  c_tri->add_option("--calib", tri.calib, "Camera calibration JSON")->required()->check(CLI::ExistingFile);
  c_tri->add_option("--views", tri.views, "Keypoint NDJSON per camera, in calibration order")
      ->required()
      ->check(CLI::ExistingFile);
  c_tri->add_option("--out", tri.out, "Joint-center NDJSON output")->required();
  c_tri->add_option("--rate", tri.rate, "Camera frame rate (Hz)")->capture_default_str();
  c_tri->add_option("--max-gap", tri.max_gap, "Forward-fill missing points for up to this many frames (0 = off)")
      ->capture_default_str();

  IkArgs ikargs;
  auto* c_ik = app.add_subcommand("ik", "Joint centers to joint angles (markers, then constrained IK)");
  c_ik->add_option("--input", ikargs.input, "Joint-center NDJSON")->required()->check(CLI::ExistingFile);
  c_ik->add_option("--out", ikargs.out, "Joint-angle NDJSON output")->required();
  c_ik->add_option("--model", ikargs.model, "Body model JSON (default: built-in)")->check(CLI::ExistingFile);
  c_ik->add_option("--augmenter", ikargs.augmenter, "LSTM marker augmenter weights (default: geometric fallback)")
      ->check(CLI::ExistingFile);
  c_ik->add_option("--time-budget", ikargs.time_budget, "Per-frame budget in ms (0 = unlimited)")
      ->capture_default_str();
  c_ik->add_option("--max-iterations", ikargs.max_iterations, "Gauss-Newton iterations per frame")
      ->capture_default_str();

  SynthArgs syn;
  auto* c_syn = app.add_subcommand("synth", "Generate a synthetic labeled corpus");
  c_syn->add_option("--out", syn.out, "Corpus directory")->required();
  c_syn->add_option("--trials", syn.trials, "Number of trials")->capture_default_str();
  c_syn->add_option("--seed", syn.seed, "Random seed")->capture_default_str();
  c_syn->add_option("--duration", syn.duration, "Trial length (s)")->capture_default_str();
  c_syn->add_option("--rate", syn.rate, "Frame rate (Hz)")->capture_default_str();
  c_syn->add_option("--noise", syn.noise, "Joint-angle noise standard deviation (rad)")->capture_default_str();
  c_syn->add_option("--render-calib", syn.render_calib, "Also render keypoint streams for these cameras")
      ->check(CLI::ExistingFile);
  c_syn->add_option("--pixel-noise", syn.pixel_noise, "Keypoint noise standard deviation (px)")
      ->capture_default_str();

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train the lower- and upper-limb classifiers");
  c_tr->add_option("--corpus", tr.corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  c_tr->add_option("--out", tr.out, "Output directory for checkpoints and history.json")->required();
  c_tr->add_option("--head", tr.head, "lower, upper or both")->capture_default_str();
  c_tr->add_option("--variant", tr.variant, "sar, baseline-token, per-step-no-mask or masked-no-smooth")
      ->capture_default_str();
  c_tr->add_option("--epochs", tr.epochs, "Training epochs")->capture_default_str();
  c_tr->add_option("--lr", tr.lr, "Peak learning rate")->capture_default_str();
  c_tr->add_option("--batch", tr.batch, "Batch size")->capture_default_str();
  c_tr->add_option("--stride", tr.stride, "Spacing of training windows (frames)")->capture_default_str();
  c_tr->add_option("--eval-stride", tr.eval_stride, "Spacing of validation frames")->capture_default_str();
  c_tr->add_option("--seed", tr.seed, "Random seed")->capture_default_str();
  add_arch(c_tr, tr.arch);

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "Score trained classifiers on a corpus split");
  c_ev->add_option("--corpus", ev.corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  c_ev->add_option("--weights-lower", ev.lower, "Lower-limb checkpoint")->required()->check(CLI::ExistingFile);
  c_ev->add_option("--weights-upper", ev.upper, "Upper-limb checkpoint")->required()->check(CLI::ExistingFile);
  c_ev->add_option("--split", ev.split, "train, val, test or all")->capture_default_str();
  c_ev->add_option("--stride", ev.stride, "Spacing of evaluated frames")->capture_default_str();
  c_ev->add_option("--out", ev.out, "Report JSON");
  c_ev->add_option("--csv", ev.csv, "Per-class CSV");

  AblateArgs ab;
  auto* c_ab = app.add_subcommand("ablate", "Train and compare the four classifier variants");
  c_ab->add_option("--corpus", ab.corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  c_ab->add_option("--seeds", ab.seeds, "Number of training seeds")->capture_default_str();
  c_ab->add_option("--seed", ab.seed, "First training seed")->capture_default_str();
  c_ab->add_option("--preset", ab.preset, "quick or standard")->capture_default_str();
  c_ab->add_option("--epochs", ab.epochs, "Override the preset's epoch count");
  c_ab->add_option("--variants", ab.variants, "Subset of variants (default: all four)")->delimiter(',');
  c_ab->add_option("--out", ab.out, "Result JSON");

  TransformArgs tf;
  auto* c_tf = app.add_subcommand("transform-jcp", "Joint-angle vs joint-center inputs under rigid viewpoint changes");
  c_tf->add_option("--corpus", tf.corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  c_tf->add_option("--transforms", tf.transforms, "Number of random rigid transforms")->capture_default_str();
  c_tf->add_option("--seed", tf.seed, "Training and first transform seed")->capture_default_str();
  c_tf->add_option("--preset", tf.preset, "quick or standard")->capture_default_str();
  c_tf->add_option("--epochs", tf.epochs, "Override the preset's epoch count");
  c_tf->add_option("--out", tf.out, "Result JSON");

  ServeArgs sv;
  auto* c_sv = app.add_subcommand("serve", "Replay joint angles through both classifiers and broadcast over UDP");
  c_sv->add_option("--weights-lower", sv.lower, "Lower-limb checkpoint")->required()->check(CLI::ExistingFile);
  c_sv->add_option("--weights-upper", sv.upper, "Upper-limb checkpoint")->required()->check(CLI::ExistingFile);
  c_sv->add_option("--dest", sv.dest, "Destination host:port")->required();
  c_sv->add_option("--input", sv.input, "Joint-angle NDJSON (IK output or corpus trial)")
      ->required()
      ->check(CLI::ExistingFile);
  c_sv->add_option("--rate", sv.rate, "Replay rate in Hz (0 = as fast as possible)")->capture_default_str();
  c_sv->add_option("--buffer", sv.buffer, "Confirmation buffer length (frames)")->capture_default_str();
  c_sv->add_option("--threshold", sv.threshold, "Confirmation vote fraction")->capture_default_str();
  c_sv->add_option("--log-out", sv.log_out, "Also write every message to this NDJSON file");

  PenArgs pn;
  auto* c_pn = app.add_subcommand("pen", "Virtual pen driven by broadcast action messages");
  c_pn->add_option("--listen", pn.listen, "UDP port to listen on")->required();
  c_pn->add_option("--host", pn.host, "Address to bind")->capture_default_str();
  c_pn->add_option("--board-out", pn.board_out, "Trace JSON output")->required();
  c_pn->add_option("--idle-timeout", pn.idle_timeout, "Stop after this many seconds without messages")
      ->capture_default_str();
  c_pn->add_option("--max-messages", pn.max_messages, "Stop after this many messages (0 = no limit)")
      ->capture_default_str();
  c_pn->add_option("--speed", pn.speed, "Board units per message")->capture_default_str();

  BenchArgs bn;
  auto* c_bn = app.add_subcommand("bench", "Throughput of every pipeline stage");
  c_bn->add_option("--frames", bn.frames, "Timed calls per stage")->capture_default_str();
  c_bn->add_option("--seed", bn.seed, "Random seed")->capture_default_str();
  c_bn->add_option("--weights-lower", bn.lower, "Lower-limb checkpoint (default: random weights)")
      ->check(CLI::ExistingFile);
  c_bn->add_option("--weights-upper", bn.upper, "Upper-limb checkpoint (default: random weights)")
      ->check(CLI::ExistingFile);
  c_bn->add_option("--out", bn.out, "Result JSON");

  if (argc > 1 && argv[1][0] != '-') {
    const std::string name = argv[1];
    const auto subs = app.get_subcommands([&](CLI::App* s) { return s->get_name() == name; });
    if (subs.empty()) {
      std::cerr << "kinact: unknown subcommand '" << name << "'\n\n" << app.help();
      return kExitInput;
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    if (rc == 0) return 0;
    std::cerr << app.help();
    return kExitInput;
  }

  try {
    if (c_tri->parsed()) return run_triangulate(tri);
    if (c_ik->parsed()) return run_ik(ikargs);
    if (c_syn->parsed()) return run_synth(syn);
    if (c_tr->parsed()) return run_train(tr);
    if (c_ev->parsed()) return run_eval(ev);
    if (c_ab->parsed()) return run_ablate(ab);
    if (c_tf->parsed()) return run_transform(tf);
    if (c_sv->parsed()) return run_serve(sv);
    if (c_pn->parsed()) return run_pen(pn);
    if (c_bn->parsed()) return run_bench(bn);
  } catch (const Error& e) {
    std::cerr << "kinact: " << to_string(e.code()) << ": " << e.what() << '\n';
    return is_input_error(e.code()) ? kExitInput : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "kinact: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitInput;
}
