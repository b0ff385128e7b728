#include "kinact/act.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

#include "kinact/error.hpp"
#include "kinact/labels.hpp"
#include "kinact/ndjson.hpp"

namespace kinact::act {

namespace {

constexpr std::array<std::pair<Variant, std::string_view>, 4> kVariantNames{{
    {Variant::kSar, "sar"},
    {Variant::kBaselineToken, "baseline-token"},
    {Variant::kPerStepNoMask, "per-step-no-mask"},
    {Variant::kMaskedNoSmooth, "masked-no-smooth"},
}};

std::string layer_prefix(std::size_t l) { return "l" + std::to_string(l) + "."; }

// Every parameter name with its shape, in checkpoint order.
std::vector<std::pair<std::string, ad::Shape>> parameter_layout(const ActConfig& c) {
  const std::size_t d = c.model_dim;
  std::vector<std::pair<std::string, ad::Shape>> out{
      {"embed.w", {c.input_dim, d}},
      {"embed.pos", {c.tokens(), d}},
  };
  if (!c.per_step()) out.push_back({"embed.token", {1, d}});
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = layer_prefix(l);
    for (const char* m : {"q", "k", "v", "o"}) {
      out.push_back({p + "w" + m, {d, d}});
      out.push_back({p + "b" + m, {d}});
    }
    out.push_back({p + "ln1.g", {d}});
    out.push_back({p + "ln1.b", {d}});
    out.push_back({p + "ff1.w", {d, c.ffn_dim}});
    out.push_back({p + "ff1.b", {c.ffn_dim}});
    out.push_back({p + "ff2.w", {c.ffn_dim, d}});
    out.push_back({p + "ff2.b", {d}});
    out.push_back({p + "ln2.g", {d}});
    out.push_back({p + "ln2.b", {d}});
  }
  out.push_back({"head.w1", {d, c.mlp_dim}});
  out.push_back({"head.b1", {c.mlp_dim}});
  out.push_back({"head.w2", {c.mlp_dim, c.classes}});
  out.push_back({"head.b2", {c.classes}});
  return out;
}

template <typename Params, typename Leaf>
BoundWeights bind_with(const ActConfig& c, Params& params, Leaf&& leaf) {
  check_parameters(c, params);
  BoundWeights w;
  w.w_in = leaf(params.get("embed.w"));
  w.pos = leaf(params.get("embed.pos"));
  if (!c.per_step()) w.token = leaf(params.get("embed.token"));
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = layer_prefix(l);
    auto g = [&](const char* name) { return leaf(params.get(p + name)); };
    w.layers.push_back({g("wq"), g("bq"), g("wk"), g("bk"), g("wv"), g("bv"), g("wo"), g("bo"),
                        g("ln1.g"), g("ln1.b"), g("ff1.w"), g("ff1.b"), g("ff2.w"), g("ff2.b"),
                        g("ln2.g"), g("ln2.b")});
  }
  w.head1_w = leaf(params.get("head.w1"));
  w.head1_b = leaf(params.get("head.b1"));
  w.head2_w = leaf(params.get("head.w2"));
  w.head2_b = leaf(params.get("head.b2"));
  return w;
}

ad::Var linear(ad::Var x, ad::Var w, ad::Var b) { return ad::add_bias(ad::matmul(x, w), b); }

}  // namespace

std::string_view variant_name(Variant v) {
  for (const auto& [value, name] : kVariantNames) {
    if (value == v) return name;
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  for (const auto& [value, n] : kVariantNames) {
    if (n == name) return value;
  }
  fail(ErrorCode::kInvalidArgument, "unknown variant '" + std::string(name) + "'");
}

void ActConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) fail(ErrorCode::kInvalidArgument, std::string("ActConfig: ") + what);
  };
  need(window >= 1, "window must be at least 1");
  need(input_dim >= 1, "input_dim must be positive");
  need(layers >= 1, "at least one layer");
  need(heads >= 1 && model_dim % heads == 0, "model_dim must be divisible by heads");
  need(model_dim >= 1 && ffn_dim >= 1 && mlp_dim >= 1, "layer widths must be positive");
  need(classes >= 2, "at least two classes");
  need(lambda >= 0.0 && std::isfinite(lambda), "lambda must be non-negative");
  need(tau > 0.0 && std::isfinite(tau), "tau must be positive");
}

ActConfig ActConfig::for_head(Head head, Variant variant) {
  ActConfig c;
  c.variant = variant;
  if (head == Head::kLower) {
    c.input_dim = biomech::kLowerMaskSize;
    c.classes = kNumLowerLabels;
    c.first_label = kFirstLowerLabel;
  } else {
    c.input_dim = biomech::kUpperMaskSize;
    c.classes = kNumUpperLabels;
    c.first_label = kFirstUpperLabel;
  }
  return c;
}

ActConfig ActConfig::full_scale(Head head, Variant variant) {
  ActConfig c = for_head(head, variant);
  c.model_dim = 64;
  c.ffn_dim = 256;
  c.mlp_dim = 256;
  return c;
}

nlohmann::json config_to_json(const ActConfig& c) {
  return {{"window", c.window},       {"input_dim", c.input_dim}, {"layers", c.layers},
          {"heads", c.heads},         {"model_dim", c.model_dim}, {"ffn_dim", c.ffn_dim},
          {"mlp_dim", c.mlp_dim},     {"classes", c.classes},     {"first_label", c.first_label},
          {"lambda", c.lambda},       {"tau", c.tau},             {"variant", variant_name(c.variant)}};
}

ActConfig config_from_json(const nlohmann::json& doc) {
  try {
    ActConfig c;
    c.window = doc.at("window").get<std::size_t>();
    c.input_dim = doc.at("input_dim").get<std::size_t>();
    c.layers = doc.at("layers").get<std::size_t>();
    c.heads = doc.at("heads").get<std::size_t>();
    c.model_dim = doc.at("model_dim").get<std::size_t>();
    c.ffn_dim = doc.at("ffn_dim").get<std::size_t>();
    c.mlp_dim = doc.at("mlp_dim").get<std::size_t>();
    c.classes = doc.at("classes").get<std::size_t>();
    c.first_label = doc.at("first_label").get<int>();
    c.lambda = doc.at("lambda").get<double>();
    c.tau = doc.at("tau").get<double>();
    c.variant = parse_variant(doc.at("variant").get<std::string>());
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, std::string("classifier config: ") + e.what());
  }
}

ad::ParameterSet init_parameters(const ActConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> small(0.0, 0.02);
  ad::ParameterSet params;
  for (auto& [name, shape] : parameter_layout(cfg)) {
    ad::Tensor t(shape);
    const bool gamma = name.ends_with(".g");
    if (gamma) {
      t.fill(1.0);
    } else if (name == "embed.pos" || name == "embed.token") {
      for (auto& v : t.values()) v = small(rng);
    } else if (shape.size() == 2) {
      // Glorot uniform.
      const double a = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
      std::uniform_real_distribution<double> u(-a, a);
      for (auto& v : t.values()) v = u(rng);
    }
    params.add(name, std::move(t));
  }
  return params;
}

void check_parameters(const ActConfig& cfg, const ad::ParameterSet& params) {
  const auto layout = parameter_layout(cfg);
  if (layout.size() != params.size()) {
    fail(ErrorCode::kShapeMismatch, "classifier expects " + std::to_string(layout.size()) + " tensors, got " +
                                        std::to_string(params.size()));
  }
  for (const auto& [name, shape] : layout) {
    if (!params.contains(name)) fail(ErrorCode::kShapeMismatch, "classifier parameter missing: " + name);
    if (params.get(name).value.shape() != shape) {
      fail(ErrorCode::kShapeMismatch, "classifier parameter " + name + " has shape " +
                                          ad::shape_string(params.get(name).value.shape()) + ", expected " +
                                          ad::shape_string(shape));
    }
  }
}

BoundWeights bind(ad::Graph& g, const ActConfig& cfg, ad::ParameterSet& params) {
  return bind_with(cfg, params, [&g](ad::Parameter& p) { return g.param(p); });
}

BoundWeights bind(ad::Graph& g, const ActConfig& cfg, const ad::ParameterSet& params) {
  return bind_with(cfg, params, [&g](const ad::Parameter& p) { return g.param(p); });
}

ad::Tensor causal_mask(std::size_t t) {
  if (t == 0) fail(ErrorCode::kInvalidArgument, "causal_mask: T must be at least 1");
  ad::Tensor m({t, t});
  for (std::size_t r = 0; r < t; ++r) {
    for (std::size_t c = 0; c <= r; ++c) m.at(r, c) = 1.0;
  }
  return m;
}

ad::Tensor additive_form(const ad::Tensor& binary) {
  ad::Tensor out(binary.shape());
  for (std::size_t i = 0; i < binary.size(); ++i) {
    out[i] = binary[i] != 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
  }
  return out;
}

ad::Var embed(const ActConfig& cfg, const BoundWeights& w, ad::Var windows) {
  const ad::Shape s = windows.shape();
  if (s.size() != 3 || s[1] != cfg.window || s[2] != cfg.input_dim) {
    fail(ErrorCode::kShapeMismatch, "embed: windows " + ad::shape_string(s) + " do not match [B, " +
                                        std::to_string(cfg.window) + ", " + std::to_string(cfg.input_dim) + "]");
  }
  ad::Var x = ad::matmul(windows, w.w_in);
  if (!cfg.per_step()) {
    ad::Graph& g = windows.graph();
    const ad::Var token = ad::embedding_add(g.constant(ad::Tensor({s[0], 1, cfg.model_dim})), w.token);
    const std::vector<ad::Var> parts{token, x};
    x = ad::concat(parts, 1);
  }
  return ad::embedding_add(x, w.pos);
}

ad::Var attention(ad::Var q, ad::Var k, ad::Var v, const ad::Tensor* mask) {
  const ad::Shape qs = q.shape();
  if (qs.size() != 3 || k.shape() != qs || v.shape().size() != 3 || v.shape()[1] != qs[1]) {
    fail(ErrorCode::kShapeMismatch, "attention: Q, K, V must be [B, T, d_k] with matching T");
  }
  ad::Var logits = ad::scale(ad::bmm(q, ad::transpose(k)), 1.0 / std::sqrt(static_cast<double>(qs[2])));
  if (mask) logits = ad::additive_mask(logits, additive_form(*mask));
  return ad::bmm(ad::softmax(logits), v);
}

ad::Var encode(const ActConfig& cfg, const BoundWeights& w, ad::Var windows) {
  ad::Var x = embed(cfg, w, windows);
  const std::size_t dk = cfg.model_dim / cfg.heads;
  const ad::Tensor mask = cfg.masked() ? causal_mask(cfg.tokens()) : ad::Tensor();
  for (const auto& layer : w.layers) {
    const ad::Var q = linear(x, layer.wq, layer.bq);
    const ad::Var k = linear(x, layer.wk, layer.bk);
    const ad::Var v = linear(x, layer.wv, layer.bv);
    ad::Var att;
    if (cfg.heads == 1) {
      att = attention(q, k, v, cfg.masked() ? &mask : nullptr);
    } else {
      std::vector<ad::Var> heads;
      for (std::size_t h = 0; h < cfg.heads; ++h) {
        heads.push_back(attention(ad::slice(q, 2, h * dk, dk), ad::slice(k, 2, h * dk, dk),
                                  ad::slice(v, 2, h * dk, dk), cfg.masked() ? &mask : nullptr));
      }
      att = ad::concat(heads, 2);
    }
    x = ad::layer_norm(ad::add(x, linear(att, layer.wo, layer.bo)), layer.ln1_g, layer.ln1_b);
    const ad::Var ff = linear(ad::gelu(linear(x, layer.ff1_w, layer.ff1_b)), layer.ff2_w, layer.ff2_b);
    x = ad::layer_norm(ad::add(x, ff), layer.ln2_g, layer.ln2_b);
  }
  return x;
}

ad::Var classify(const ActConfig& cfg, const BoundWeights& w, ad::Var windows) {
  ad::Var x = encode(cfg, w, windows);
  if (!cfg.per_step()) x = ad::slice(x, 1, 0, 1);
  const ad::Var hidden = ad::gelu(linear(x, w.head1_w, w.head1_b));
  return ad::softmax(linear(hidden, w.head2_w, w.head2_b));
}

ad::Var loss_cls(ad::Var probs, std::span<const int> classes) {
  const ad::Shape s = probs.shape();
  if (s.size() != 3 || classes.size() != s[0] * s[1]) {
    fail(ErrorCode::kShapeMismatch, "loss_cls: probs must be [B, T, C] with B*T labels");
  }
  for (int c : classes) {
    if (c < 0 || static_cast<std::size_t>(c) >= s[2]) fail(ErrorCode::kInvalidArgument, "loss_cls: label out of range");
  }
  const ad::Var logp = ad::log(ad::clamp_min(probs, kProbabilityFloor));
  const ad::Var picked = ad::pick(ad::reshape(logp, {s[0] * s[1], s[2]}), classes);
  return ad::scale(ad::mean(picked), -1.0);
}

ad::Var loss_tmse(ad::Var probs, double tau) {
  const ad::Shape s = probs.shape();
  if (s.size() != 3 || s[1] < 2) fail(ErrorCode::kShapeMismatch, "loss_tmse: probs must be [B, T>=2, C]");
  if (!(tau > 0.0)) fail(ErrorCode::kInvalidArgument, "loss_tmse: tau must be positive");
  const std::size_t t = s[1];
  const ad::Var logp = ad::log(ad::clamp_min(probs, kProbabilityFloor));
  const ad::Var prev = ad::detach(ad::slice(logp, 1, 0, t - 1));
  const ad::Var cur = ad::slice(logp, 1, 1, t - 1);
  const ad::Var delta = ad::clamp_max(ad::abs(ad::sub(cur, prev)), tau);
  return ad::scale(ad::sum(ad::square(delta)), 1.0 / static_cast<double>(s[0] * t * s[2]));
}

ad::Var loss_total(ad::Var probs, std::span<const int> classes, double lambda, double tau) {
  const ad::Var cls = loss_cls(probs, classes);
  if (lambda == 0.0) return cls;
  return ad::add(cls, ad::scale(loss_tmse(probs, tau), lambda));
}

namespace {

std::vector<int> argmax_labels(const ad::Tensor& probs, std::size_t classes, int first_label) {
  std::vector<int> out(probs.size() / classes);
  for (std::size_t r = 0; r < out.size(); ++r) {
    const double* row = probs.data() + r * classes;
    out[r] = first_label + static_cast<int>(std::max_element(row, row + classes) - row);
  }
  return out;
}

}  // namespace

Prediction infer(const ActConfig& cfg, const ad::ParameterSet& params, const ad::Tensor& window) {
  if (window.rank() != 2 || window.dim(1) != cfg.input_dim) {
    fail(ErrorCode::kShapeMismatch, "infer: window must be [n, " + std::to_string(cfg.input_dim) + "]");
  }
  const std::size_t n = window.dim(0);
  if (n == 0) fail(ErrorCode::kEmptyInput, "infer: empty window");
  if (n > cfg.window) fail(ErrorCode::kShapeMismatch, "infer: window longer than the configured length");
  ad::Tensor full({1, cfg.window, cfg.input_dim});
  const std::size_t pad = cfg.window - n;
  for (std::size_t r = 0; r < cfg.window; ++r) {
    const std::size_t src = r < pad ? 0 : r - pad;
    std::copy_n(window.data() + src * cfg.input_dim, cfg.input_dim, full.data() + r * cfg.input_dim);
  }
  ad::Graph g(false);
  const BoundWeights w = bind(g, cfg, params);
  const ad::Var probs = classify(cfg, w, g.constant(std::move(full)));
  Prediction p;
  p.probs = probs.value().reshaped({probs.shape()[1], cfg.classes});
  p.labels = argmax_labels(p.probs, cfg.classes, cfg.first_label);
  p.final_label = p.labels.back();
  p.padded = pad > 0;
  return p;
}

ad::Tensor infer_final(const ActConfig& cfg, const ad::ParameterSet& params, const ad::Tensor& windows) {
  ad::Graph g(false);
  const BoundWeights w = bind(g, cfg, params);
  const ad::Var probs = classify(cfg, w, g.constant(windows));
  const std::size_t b = probs.shape()[0];
  const std::size_t steps = probs.shape()[1];
  ad::Tensor out({b, cfg.classes});
  for (std::size_t i = 0; i < b; ++i) {
    std::copy_n(probs.value().data() + ((i + 1) * steps - 1) * cfg.classes, cfg.classes,
                out.data() + i * cfg.classes);
  }
  return out;
}

// ---- sequences and training ---------------------------------------------------

void LabeledSequence::validate() const {
  if (lower.size() != frames.size() || upper.size() != frames.size()) {
    fail(ErrorCode::kShapeMismatch, "labeled sequence: label and frame counts differ");
  }
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (!is_lower_label(lower[i]) || !is_upper_label(upper[i])) {
      fail(ErrorCode::kInvalidArgument, "labeled sequence: label out of range at frame " + std::to_string(i));
    }
  }
}

FeatureSequence head_features(const LabeledSequence& seq, const biomech::BiomechModel& model, Head head) {
  seq.validate();
  const auto& mask = head == Head::kLower ? model.lower_mask() : model.upper_mask();
  FeatureSequence out;
  out.features.resize(static_cast<Eigen::Index>(seq.frames.size()), static_cast<Eigen::Index>(mask.size()));
  for (std::size_t t = 0; t < seq.frames.size(); ++t) {
    for (std::size_t j = 0; j < mask.size(); ++j) {
      out.features(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)) = seq.frames[t].q[mask[j]];
    }
  }
  out.labels = head == Head::kLower ? seq.lower : seq.upper;
  return out;
}

ad::Tensor window_at(const FeatureSequence& seq, std::size_t end, std::size_t n) {
  const auto rows = static_cast<std::size_t>(seq.features.rows());
  const auto cols = static_cast<std::size_t>(seq.features.cols());
  if (end >= rows) fail(ErrorCode::kInvalidArgument, "window_at: end beyond sequence");
  ad::Tensor out({n, cols});
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t back = n - 1 - r;
    const std::size_t src = end >= back ? end - back : 0;
    std::copy_n(seq.features.data() + src * cols, cols, out.data() + r * cols);
  }
  return out;
}

namespace {

struct WindowRef {
  std::size_t seq;
  std::size_t end;
};

void check_sequences(const ActConfig& cfg, std::span<const FeatureSequence> set) {
  for (const auto& s : set) {
    if (s.features.rows() == 0) fail(ErrorCode::kEmptyInput, "classifier training: empty sequence");
    if (static_cast<std::size_t>(s.features.cols()) != cfg.input_dim ||
        s.labels.size() != static_cast<std::size_t>(s.features.rows())) {
      fail(ErrorCode::kShapeMismatch, "classifier training: feature width or label count mismatch");
    }
    for (int l : s.labels) {
      if (l < cfg.first_label || l >= cfg.first_label + static_cast<int>(cfg.classes)) {
        fail(ErrorCode::kInvalidArgument, "classifier training: label " + std::to_string(l) + " out of range");
      }
    }
  }
}

double final_step_accuracy(const ActConfig& cfg, const ad::ParameterSet& params,
                           std::span<const FeatureSequence> set, std::size_t stride) {
  std::size_t hits = 0;
  std::size_t total = 0;
  for (const auto& s : set) {
    const auto pred = predict_sequence(cfg, params, s, stride);
    for (std::size_t i = 0; i < pred.frames.size(); ++i) {
      hits += pred.labels[i] == s.labels[pred.frames[i]] ? 1 : 0;
      ++total;
    }
  }
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

}  // namespace

TrainResult train(const ActConfig& cfg, std::span<const FeatureSequence> train_set,
                  std::span<const FeatureSequence> val_set, const TrainConfig& tc) {
  cfg.validate();
  if (train_set.empty()) fail(ErrorCode::kEmptyInput, "classifier training: empty training set");
  if (tc.batch == 0 || tc.stride == 0 || tc.eval_stride == 0) {
    fail(ErrorCode::kInvalidArgument, "classifier training: batch and strides must be positive");
  }
  check_sequences(cfg, train_set);
  check_sequences(cfg, val_set);

  std::vector<WindowRef> windows;
  for (std::size_t s = 0; s < train_set.size(); ++s) {
    const auto rows = static_cast<std::size_t>(train_set[s].features.rows());
    for (std::size_t end = 0; end < rows; end += tc.stride) windows.push_back({s, end});
  }

  TrainResult result;
  result.params = init_parameters(cfg, tc.seed);
  std::mt19937_64 rng(tc.seed ^ 0x9e3779b97f4a7c15ULL);
  ad::AdamState adam;
  const std::int64_t steps_per_epoch = static_cast<std::int64_t>((windows.size() + tc.batch - 1) / tc.batch);
  const std::int64_t total = steps_per_epoch * std::max(tc.epochs, 0);
  std::int64_t step = 0;
  const std::size_t n = cfg.window;
  const std::size_t dim = cfg.input_dim;
  const std::span<const FeatureSequence> selection = val_set.empty() ? train_set : val_set;

  ad::ParameterSet best = result.params.clone();
  double best_acc = -1.0;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::shuffle(windows.begin(), windows.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < windows.size(); start += tc.batch) {
      const std::size_t b = std::min(tc.batch, windows.size() - start);
      ad::Tensor x({b, n, dim});
      std::vector<int> classes;
      classes.reserve(b * n);
      for (std::size_t i = 0; i < b; ++i) {
        const auto& ref = windows[start + i];
        const auto& seq = train_set[ref.seq];
        const ad::Tensor win = window_at(seq, ref.end, n);
        std::copy_n(win.data(), n * dim, x.data() + i * n * dim);
        if (cfg.per_step()) {
          for (std::size_t r = 0; r < n; ++r) {
            const std::size_t back = n - 1 - r;
            const std::size_t src = ref.end >= back ? ref.end - back : 0;
            classes.push_back(seq.labels[src] - cfg.first_label);
          }
        } else {
          classes.push_back(seq.labels[ref.end] - cfg.first_label);
        }
      }
      ad::Graph g;
      const BoundWeights w = bind(g, cfg, result.params);
      const ad::Var probs = classify(cfg, w, g.constant(std::move(x)));
      const ad::Var loss = loss_total(probs, classes, cfg.smoothing(), cfg.tau);
      result.params.zero_grad();
      g.backward(loss);
      ad::adam_step(result.params, adam, ad::cosine_lr(step++, total, tc.learning_rate));
      loss_sum += loss.value()[0] * static_cast<double>(b);
    }
    result.history.loss.push_back(loss_sum / static_cast<double>(windows.size()));
    const double acc = final_step_accuracy(cfg, result.params, selection, tc.eval_stride);
    result.history.val_accuracy.push_back(acc);
    if (acc > best_acc) {
      best_acc = acc;
      best = result.params.clone();
      result.history.best_epoch = epoch;
    }
    spdlog::debug("{} epoch {} loss {:.5f} accuracy {:.4f}", variant_name(cfg.variant), epoch,
                  result.history.loss.back(), acc);
  }
  result.params = std::move(best);
  return result;
}

SequencePrediction predict_sequence(const ActConfig& cfg, const ad::ParameterSet& params,
                                    const FeatureSequence& seq, std::size_t stride) {
  if (stride == 0) fail(ErrorCode::kInvalidArgument, "predict_sequence: stride must be positive");
  if (static_cast<std::size_t>(seq.features.cols()) != cfg.input_dim) {
    fail(ErrorCode::kShapeMismatch, "predict_sequence: feature width mismatch");
  }
  SequencePrediction out;
  const auto rows = static_cast<std::size_t>(seq.features.rows());
  for (std::size_t t = 0; t < rows; t += stride) out.frames.push_back(t);
  out.labels.resize(out.frames.size());
  out.probs.resize(static_cast<Eigen::Index>(out.frames.size()), static_cast<Eigen::Index>(cfg.classes));
  constexpr std::size_t kChunk = 64;
  const std::size_t n = cfg.window;
  const std::size_t dim = cfg.input_dim;
  for (std::size_t start = 0; start < out.frames.size(); start += kChunk) {
    const std::size_t b = std::min(kChunk, out.frames.size() - start);
    ad::Tensor x({b, n, dim});
    for (std::size_t i = 0; i < b; ++i) {
      const ad::Tensor win = window_at(seq, out.frames[start + i], n);
      std::copy_n(win.data(), n * dim, x.data() + i * n * dim);
    }
    const ad::Tensor probs = infer_final(cfg, params, x);
    for (std::size_t i = 0; i < b; ++i) {
      const double* row = probs.data() + i * cfg.classes;
      std::copy_n(row, cfg.classes, out.probs.data() + (start + i) * cfg.classes);
      out.labels[start + i] = cfg.first_label + static_cast<int>(std::max_element(row, row + cfg.classes) - row);
    }
  }
  return out;
}

void save_model(const std::filesystem::path& path, const ActConfig& cfg, const ad::ParameterSet& params) {
  check_parameters(cfg, params);
  ad::save_checkpoint(path, params);
  write_json_file(std::filesystem::path(path.string() + ".json"), config_to_json(cfg));
}

LoadedModel load_model(const std::filesystem::path& path) {
  LoadedModel m;
  m.config = config_from_json(read_json_file(std::filesystem::path(path.string() + ".json")));
  m.params = init_parameters(m.config, 0);
  ad::load_checkpoint(path, m.params);
  return m;
}

}  // namespace kinact::act
