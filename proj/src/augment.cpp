#include "kinact/augment.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "kinact/error.hpp"
#include "kinact/log.hpp"

namespace kinact::augment {

using biomech::MarkerFrame;
using camgeo::JointCenters3D;
using camgeo::kPelvisKeypoint;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void require_shape(bool ok, const std::string& what) {
  if (!ok) fail(ErrorCode::kShapeMismatch, "LstmWeights: " + what);
}

Eigen::VectorXd centered_input(const JointCenters3D& jc) {
  for (std::size_t k = 0; k < camgeo::kNumKeypoints; ++k) {
    if (!jc.valid[k]) {
      fail(ErrorCode::kMissingInput, "augmenter input: joint center " + std::to_string(k) + " missing");
    }
  }
  Eigen::VectorXd x(kInputSize);
  const Vec3 pelvis = jc.points[kPelvisKeypoint];
  for (std::size_t k = 0; k < camgeo::kNumKeypoints; ++k) {
    x.segment<3>(static_cast<Eigen::Index>(3 * k)) = jc.points[k] - pelvis;
  }
  return x;
}

Eigen::VectorXd centered_target(const MarkerFrame& m, const Vec3& pelvis) {
  Eigen::VectorXd y(kOutputSize);
  for (std::size_t i = 0; i < biomech::kNumMarkers; ++i) {
    y.segment<3>(static_cast<Eigen::Index>(3 * i)) = m.markers[i] - pelvis;
  }
  return y;
}

}  // namespace

void LstmWeights::validate() const {
  require_shape(hidden > 0, "hidden size must be positive");
  require_shape(!layers.empty(), "at least one layer required");
  const auto h = static_cast<Eigen::Index>(hidden);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto in = static_cast<Eigen::Index>(l == 0 ? kInputSize : hidden);
    const auto& layer = layers[l];
    require_shape(layer.w_ih.rows() == 4 * h && layer.w_ih.cols() == in,
                  "layer " + std::to_string(l) + " input weights must be 4H x input");
    require_shape(layer.w_hh.rows() == 4 * h && layer.w_hh.cols() == h,
                  "layer " + std::to_string(l) + " recurrent weights must be 4H x H");
    require_shape(layer.bias.size() == 4 * h, "layer " + std::to_string(l) + " bias must be 4H");
  }
  require_shape(w_out.rows() == static_cast<Eigen::Index>(kOutputSize) && w_out.cols() == h,
                "output projection must be 87 x H");
  require_shape(b_out.size() == static_cast<Eigen::Index>(kOutputSize), "output bias must be 87");
  require_shape(in_mean.size() == static_cast<Eigen::Index>(kInputSize) &&
                    in_std.size() == static_cast<Eigen::Index>(kInputSize),
                "input statistics must have 78 entries");
  require_shape(out_mean.size() == static_cast<Eigen::Index>(kOutputSize) &&
                    out_std.size() == static_cast<Eigen::Index>(kOutputSize),
                "output statistics must have 87 entries");
  if (!(in_std.array() > 0.0).all() || !(out_std.array() > 0.0).all()) {
    fail(ErrorCode::kInvalidArgument, "LstmWeights: normalization std entries must be positive");
  }
}

LstmWeights LstmWeights::zeros(std::size_t hidden, std::size_t num_layers) {
  LstmWeights w;
  w.hidden = hidden;
  const auto h = static_cast<Eigen::Index>(hidden);
  for (std::size_t l = 0; l < num_layers; ++l) {
    const auto in = static_cast<Eigen::Index>(l == 0 ? kInputSize : hidden);
    w.layers.push_back({RowMatrix::Zero(4 * h, in), RowMatrix::Zero(4 * h, h), Eigen::VectorXd::Zero(4 * h)});
  }
  w.w_out = RowMatrix::Zero(static_cast<Eigen::Index>(kOutputSize), h);
  w.b_out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(kOutputSize));
  return w;
}

LstmWeights LstmWeights::random(std::size_t hidden, std::size_t num_layers, std::uint64_t seed) {
  LstmWeights w = zeros(hidden, num_layers);
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  std::uniform_real_distribution<double> u(-bound, bound);
  auto fill = [&](auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  };
  const auto h = static_cast<Eigen::Index>(hidden);
  for (auto& layer : w.layers) {
    fill(layer.w_ih);
    fill(layer.w_hh);
    layer.bias.segment(h, h).setOnes();
  }
  fill(w.w_out);
  return w;
}

LstmStream::LstmStream(const LstmWeights& weights) : w_(&weights) {
  weights.validate();
  reset();
}

void LstmStream::reset() {
  h_.assign(w_->layers.size(), Eigen::VectorXd::Zero(static_cast<Eigen::Index>(w_->hidden)));
  c_ = h_;
}

MarkerFrame LstmStream::push(const JointCenters3D& jc) {
  const auto h = static_cast<Eigen::Index>(w_->hidden);
  Eigen::VectorXd x = (centered_input(jc) - w_->in_mean).cwiseQuotient(w_->in_std);
  for (std::size_t l = 0; l < w_->layers.size(); ++l) {
    const LstmLayer& layer = w_->layers[l];
    const Eigen::VectorXd z = layer.w_ih * x + layer.w_hh * h_[l] + layer.bias;
    Eigen::VectorXd& c = c_[l];
    for (Eigen::Index k = 0; k < h; ++k) {
      const double i = sigmoid(z[k]);
      const double f = sigmoid(z[h + k]);
      const double g = std::tanh(z[2 * h + k]);
      const double o = sigmoid(z[3 * h + k]);
      c[k] = f * c[k] + i * g;
      h_[l][k] = o * std::tanh(c[k]);
    }
    x = h_[l];
  }
  const Eigen::VectorXd y = (w_->w_out * x + w_->b_out).cwiseProduct(w_->out_std) + w_->out_mean;
  MarkerFrame out;
  out.timestamp = jc.timestamp;
  const Vec3 pelvis = jc.points[kPelvisKeypoint];
  for (std::size_t i = 0; i < biomech::kNumMarkers; ++i) {
    out.markers[i] = y.segment<3>(static_cast<Eigen::Index>(3 * i)) + pelvis;
  }
  return out;
}

std::vector<MarkerFrame> lstm_forward(const LstmWeights& weights, std::span<const JointCenters3D> seq) {
  if (seq.empty()) fail(ErrorCode::kEmptyInput, "lstm_forward: empty sequence");
  LstmStream stream(weights);
  std::vector<MarkerFrame> out;
  out.reserve(seq.size());
  for (const auto& jc : seq) out.push_back(stream.push(jc));
  return out;
}

MarkerFrame geometric_fallback(const biomech::BiomechModel& model, const JointCenters3D& jc) {
  if (model.fallback().empty()) {
    fail(ErrorCode::kModelValidation, "geometric_fallback: model has no fallback table");
  }
  MarkerFrame out;
  out.timestamp = jc.timestamp;
  for (const auto& entry : model.fallback()) {
    Vec3 p = Vec3::Zero();
    for (const auto& [k, w] : entry.weights) {
      if (!jc.valid[static_cast<std::size_t>(k)]) {
        fail(ErrorCode::kMissingInput, "geometric_fallback: joint center " + model.keypoints()[k].name +
                                           " required by marker " + model.markers()[entry.marker].name +
                                           " is missing");
      }
      p += w * jc.points[static_cast<std::size_t>(k)];
    }
    out.markers[static_cast<std::size_t>(entry.marker)] = p;
  }
  return out;
}

JointCenters3D joint_centers_from_pose(const biomech::BiomechModel& model, const biomech::JointVector& q,
                                       const biomech::BasePose& base, double timestamp) {
  JointCenters3D jc;
  jc.timestamp = timestamp;
  jc.points = biomech::keypoint_positions(model, q, base);
  jc.valid.fill(true);
  return jc;
}

// ---- training --------------------------------------------------------------

ad::ParameterSet to_parameters(const LstmWeights& w) {
  ad::ParameterSet params;
  auto tensor = [](const auto& m, ad::Shape shape) {
    return ad::Tensor(std::move(shape), std::vector<double>(m.data(), m.data() + m.size()));
  };
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const auto& layer = w.layers[l];
    const std::string p = "l" + std::to_string(l) + ".";
    params.add(p + "w_ih", tensor(layer.w_ih, {static_cast<std::size_t>(layer.w_ih.rows()),
                                                static_cast<std::size_t>(layer.w_ih.cols())}));
    params.add(p + "w_hh", tensor(layer.w_hh, {static_cast<std::size_t>(layer.w_hh.rows()),
                                                static_cast<std::size_t>(layer.w_hh.cols())}));
    params.add(p + "b", tensor(layer.bias, {static_cast<std::size_t>(layer.bias.size())}));
  }
  params.add("out.w", tensor(w.w_out, {kOutputSize, w.hidden}));
  params.add("out.b", tensor(w.b_out, {kOutputSize}));
  return params;
}

LstmWeights from_parameters(const ad::ParameterSet& params, const LstmWeights& like) {
  LstmWeights w = like;
  auto copy = [&](const std::string& name, auto& m) {
    const auto& t = params.get(name).value;
    if (t.size() != static_cast<std::size_t>(m.size())) {
      fail(ErrorCode::kShapeMismatch, "from_parameters: size mismatch for " + name);
    }
    std::copy(t.data(), t.data() + t.size(), m.data());
  };
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const std::string p = "l" + std::to_string(l) + ".";
    copy(p + "w_ih", w.layers[l].w_ih);
    copy(p + "w_hh", w.layers[l].w_hh);
    copy(p + "b", w.layers[l].bias);
  }
  copy("out.w", w.w_out);
  copy("out.b", w.b_out);
  return w;
}

ad::Var lstm_graph(ad::Graph& g, ad::ParameterSet& params, std::size_t num_layers, const ad::Tensor& inputs) {
  if (inputs.rank() != 3 || inputs.dim(2) != kInputSize) {
    fail(ErrorCode::kShapeMismatch, "lstm_graph: inputs must be [B, T, 78]");
  }
  const std::size_t batch = inputs.dim(0);
  const std::size_t steps = inputs.dim(1);
  const std::size_t hidden = params.get("l0.w_hh").value.dim(1);
  const ad::Var x_all = g.constant(inputs);

  struct LayerVars {
    ad::Var w_ih_t, w_hh_t, b;
  };
  std::vector<LayerVars> layers;
  for (std::size_t l = 0; l < num_layers; ++l) {
    const std::string p = "l" + std::to_string(l) + ".";
    layers.push_back({ad::transpose(g.param(params.get(p + "w_ih"))),
                      ad::transpose(g.param(params.get(p + "w_hh"))), g.param(params.get(p + "b"))});
  }
  const ad::Var w_out_t = ad::transpose(g.param(params.get("out.w")));
  const ad::Var b_out = g.param(params.get("out.b"));

  std::vector<ad::Var> h(num_layers, g.constant(ad::Tensor({batch, hidden})));
  std::vector<ad::Var> c = h;
  std::vector<ad::Var> outputs;
  outputs.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    ad::Var x = ad::reshape(ad::slice(x_all, 1, t, 1), {batch, kInputSize});
    for (std::size_t l = 0; l < num_layers; ++l) {
      const ad::Var z = ad::add_bias(
          ad::add(ad::matmul(x, layers[l].w_ih_t), ad::matmul(h[l], layers[l].w_hh_t)), layers[l].b);
      const ad::Var i = ad::sigmoid(ad::slice(z, 1, 0, hidden));
      const ad::Var f = ad::sigmoid(ad::slice(z, 1, hidden, hidden));
      const ad::Var gg = ad::tanh(ad::slice(z, 1, 2 * hidden, hidden));
      const ad::Var o = ad::sigmoid(ad::slice(z, 1, 3 * hidden, hidden));
      c[l] = ad::add(ad::mul(f, c[l]), ad::mul(i, gg));
      h[l] = ad::mul(o, ad::tanh(c[l]));
      x = h[l];
    }
    const ad::Var y = ad::add_bias(ad::matmul(x, w_out_t), b_out);
    outputs.push_back(ad::reshape(y, {batch, 1, kOutputSize}));
  }
  return ad::concat(outputs, 1);
}

ChunkBatch make_batch(const LstmWeights& stats, std::span<const AugmentSequence> corpus,
                      std::span<const std::pair<std::size_t, std::size_t>> chunks, std::size_t length) {
  ChunkBatch b{ad::Tensor({chunks.size(), length, kInputSize}),
               ad::Tensor({chunks.size(), length, kOutputSize})};
  for (std::size_t n = 0; n < chunks.size(); ++n) {
    const auto& seq = corpus[chunks[n].first];
    for (std::size_t t = 0; t < length; ++t) {
      const auto& jc = seq.inputs[chunks[n].second + t];
      const Eigen::VectorXd x = (centered_input(jc) - stats.in_mean).cwiseQuotient(stats.in_std);
      const Eigen::VectorXd y =
          (centered_target(seq.targets[chunks[n].second + t], jc.points[kPelvisKeypoint]) - stats.out_mean)
              .cwiseQuotient(stats.out_std);
      std::copy(x.data(), x.data() + x.size(), b.inputs.data() + (n * length + t) * kInputSize);
      std::copy(y.data(), y.data() + y.size(), b.targets.data() + (n * length + t) * kOutputSize);
    }
  }
  return b;
}

namespace {

void fit_statistics(LstmWeights& w, std::span<const AugmentSequence> corpus,
                    std::span<const std::size_t> indices) {
  Eigen::VectorXd sx = Eigen::VectorXd::Zero(kInputSize), sxx = sx;
  Eigen::VectorXd sy = Eigen::VectorXd::Zero(kOutputSize), syy = sy;
  double n = 0.0;
  for (std::size_t idx : indices) {
    const auto& seq = corpus[idx];
    for (std::size_t t = 0; t < seq.inputs.size(); ++t) {
      const Eigen::VectorXd x = centered_input(seq.inputs[t]);
      const Eigen::VectorXd y = centered_target(seq.targets[t], seq.inputs[t].points[kPelvisKeypoint]);
      sx += x;
      sxx += x.cwiseAbs2();
      sy += y;
      syy += y.cwiseAbs2();
      n += 1.0;
    }
  }
  auto finish = [n](const Eigen::VectorXd& s, const Eigen::VectorXd& ss, Eigen::VectorXd& mean,
                    Eigen::VectorXd& std) {
    mean = s / n;
    std = (ss / n - mean.cwiseAbs2()).cwiseMax(0.0).cwiseSqrt();
    for (Eigen::Index i = 0; i < std.size(); ++i) {
      if (std[i] < 1e-9) std[i] = 1.0;
    }
  };
  finish(sx, sxx, w.in_mean, w.in_std);
  finish(sy, syy, w.out_mean, w.out_std);
}

double validation_rms(const LstmWeights& w, std::span<const AugmentSequence> corpus,
                      std::span<const std::size_t> indices) {
  double sq = 0.0;
  double count = 0.0;
  for (std::size_t idx : indices) {
    const auto pred = lstm_forward(w, corpus[idx].inputs);
    for (std::size_t t = 0; t < pred.size(); ++t) {
      for (std::size_t i = 0; i < biomech::kNumMarkers; ++i) {
        sq += (pred[t].markers[i] - corpus[idx].targets[t].markers[i]).squaredNorm();
        count += 1.0;
      }
    }
  }
  return std::sqrt(sq / count);
}

}  // namespace

AugmentTrainResult train_augmenter(std::span<const AugmentSequence> corpus, const AugmentTrainConfig& cfg) {
  if (corpus.empty()) fail(ErrorCode::kEmptyInput, "train_augmenter: empty corpus");
  std::size_t min_len = std::numeric_limits<std::size_t>::max();
  for (const auto& seq : corpus) {
    if (seq.inputs.size() != seq.targets.size()) {
      fail(ErrorCode::kShapeMismatch, "train_augmenter: paired sequence lengths differ");
    }
    if (seq.inputs.empty()) fail(ErrorCode::kEmptyInput, "train_augmenter: empty sequence");
    min_len = std::min(min_len, seq.inputs.size());
  }
  if (cfg.hidden == 0 || cfg.layers == 0 || cfg.batch == 0 || cfg.chunk == 0) {
    fail(ErrorCode::kInvalidArgument, "train_augmenter: sizes must be positive");
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_val = 0;
  if (corpus.size() >= 2) {
    n_val = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::lround(cfg.val_fraction * static_cast<double>(corpus.size()))), 1,
        corpus.size() - 1);
  }
  const std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  const std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  const std::vector<std::size_t>& selection = val.empty() ? train : val;

  AugmentTrainResult result;
  LstmWeights w = LstmWeights::random(cfg.hidden, cfg.layers, cfg.seed);
  fit_statistics(w, corpus, train);
  result.weights = w;
  if (cfg.epochs <= 0) return result;

  const std::size_t length = std::min(cfg.chunk, min_len);
  std::vector<std::pair<std::size_t, std::size_t>> chunks;
  for (std::size_t idx : train) {
    for (std::size_t s = 0; s + length <= corpus[idx].inputs.size(); s += length) chunks.emplace_back(idx, s);
  }
  const std::int64_t steps_per_epoch =
      static_cast<std::int64_t>((chunks.size() + cfg.batch - 1) / cfg.batch);
  const std::int64_t total = steps_per_epoch * cfg.epochs;

  ad::ParameterSet params = to_parameters(w);
  ad::AdamState adam;
  double best = std::numeric_limits<double>::infinity();
  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(chunks.begin(), chunks.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < chunks.size(); start += cfg.batch) {
      const std::size_t end = std::min(chunks.size(), start + cfg.batch);
      const auto batch = make_batch(
          w, corpus, std::span(chunks).subspan(start, end - start), length);
      ad::Graph g;
      const ad::Var pred = lstm_graph(g, params, cfg.layers, batch.inputs);
      const ad::Var loss = ad::mean(ad::square(ad::sub(pred, g.constant(batch.targets))));
      params.zero_grad();
      g.backward(loss);
      ad::adam_step(params, adam, ad::cosine_lr(step++, total, cfg.learning_rate));
      loss_sum += loss.value()[0] * static_cast<double>(end - start);
    }
    result.train_loss.push_back(loss_sum / static_cast<double>(chunks.size()));
    const LstmWeights current = from_parameters(params, w);
    const double rms = validation_rms(current, corpus, selection);
    result.val_rms.push_back(rms);
    if (rms < best) {
      best = rms;
      result.weights = current;
    }
    spdlog::debug("augmenter epoch {} loss {:.6g} val rms {:.6g} m", epoch, result.train_loss.back(), rms);
  }
  return result;
}

// ---- weight file -------------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little, "weight files are little-endian");

constexpr char kMagic[5] = {'K', 'A', 'L', 'W', '1'};

void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

template <typename M>
void write_f32(std::ostream& os, const M& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const float f = static_cast<float>(m.data()[i]);
    os.write(reinterpret_cast<const char*>(&f), 4);
  }
}

std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  if (!is) fail(ErrorCode::kParse, "weight file truncated");
  return v;
}

template <typename M>
void read_f32(std::istream& is, M& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    float f = 0.0f;
    is.read(reinterpret_cast<char*>(&f), 4);
    if (!is) fail(ErrorCode::kParse, "weight file truncated");
    m.data()[i] = static_cast<double>(f);
  }
}

}  // namespace

void save_weights(const std::filesystem::path& path, const LstmWeights& w) {
  w.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::kIo, "cannot write " + path.string());
  os.write(kMagic, sizeof kMagic);
  write_u32(os, static_cast<std::uint32_t>(kInputSize));
  write_u32(os, static_cast<std::uint32_t>(w.hidden));
  write_u32(os, static_cast<std::uint32_t>(w.layers.size()));
  write_u32(os, static_cast<std::uint32_t>(kOutputSize));
  write_f32(os, w.in_mean);
  write_f32(os, w.in_std);
  write_f32(os, w.out_mean);
  write_f32(os, w.out_std);
  for (const auto& layer : w.layers) {
    write_f32(os, layer.w_ih);
    write_f32(os, layer.w_hh);
    write_f32(os, layer.bias);
  }
  write_f32(os, w.w_out);
  write_f32(os, w.b_out);
  if (!os) fail(ErrorCode::kIo, "failed writing " + path.string());
}

LstmWeights load_weights(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::kIo, "cannot open " + path.string());
  char magic[5] = {};
  is.read(magic, sizeof magic);
  if (!is || !std::equal(magic, magic + 5, kMagic)) fail(ErrorCode::kParse, path.string() + ": not a KALW1 file");
  const std::uint32_t input = read_u32(is);
  const std::uint32_t hidden = read_u32(is);
  const std::uint32_t layers = read_u32(is);
  const std::uint32_t output = read_u32(is);
  if (input != kInputSize || output != kOutputSize) {
    fail(ErrorCode::kShapeMismatch, path.string() + ": expected 78 inputs and 87 outputs");
  }
  if (hidden == 0 || layers == 0 || hidden > 65536 || layers > 64) {
    fail(ErrorCode::kParse, path.string() + ": implausible dimensions");
  }
  LstmWeights w = LstmWeights::zeros(hidden, layers);
  read_f32(is, w.in_mean);
  read_f32(is, w.in_std);
  read_f32(is, w.out_mean);
  read_f32(is, w.out_std);
  for (auto& layer : w.layers) {
    read_f32(is, layer.w_ih);
    read_f32(is, layer.w_hh);
    read_f32(is, layer.bias);
  }
  read_f32(is, w.w_out);
  read_f32(is, w.b_out);
  w.validate();
  return w;
}

}  // namespace kinact::augment
