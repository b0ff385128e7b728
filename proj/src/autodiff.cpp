#include "kinact/autodiff.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "kinact/error.hpp"

namespace kinact::ad {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (data_.size() != shape_size(shape_)) {
    fail(ErrorCode::kShapeMismatch, "tensor data length does not match shape " +
                                        shape_string(shape_));
  }
}

Eigen::Map<RowMatrix> Tensor::matrix() {
  const auto cols = static_cast<Eigen::Index>(shape_.empty() ? 1 : shape_.back());
  return {data_.data(), static_cast<Eigen::Index>(data_.size()) / cols, cols};
}

Eigen::Map<const RowMatrix> Tensor::matrix() const {
  const auto cols = static_cast<Eigen::Index>(shape_.empty() ? 1 : shape_.back());
  return {data_.data(), static_cast<Eigen::Index>(data_.size()) / cols, cols};
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    fail(ErrorCode::kShapeMismatch,
         "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

// ---- ParameterSet ----------------------------------------------------------

Parameter& ParameterSet::add(std::string name, Tensor init) {
  if (contains(name)) fail(ErrorCode::kInvalidArgument, "duplicate parameter " + name);
  auto p = std::make_unique<Parameter>();
  p->name = std::move(name);
  p->grad = Tensor(init.shape());
  p->value = std::move(init);
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterSet::get(std::string_view name) {
  for (auto& p : params_) {
    if (p->name == name) return *p;
  }
  fail(ErrorCode::kInvalidArgument, "unknown parameter " + std::string(name));
}

const Parameter& ParameterSet::get(std::string_view name) const {
  return const_cast<ParameterSet*>(this)->get(name);
}

bool ParameterSet::contains(std::string_view name) const {
  return std::any_of(params_.begin(), params_.end(),
                     [&](const auto& p) { return p->name == name; });
}

std::size_t ParameterSet::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p->grad.fill(0.0);
}

ParameterSet ParameterSet::clone() const {
  ParameterSet out;
  for (const auto& p : params_) out.add(p->name, p->value);
  return out;
}

// ---- Graph -------------------------------------------------------------------

const Tensor& Var::value() const { return graph_->value(id_); }
const Shape& Var::shape() const { return graph_->value(id_).shape(); }
const Tensor& Var::grad() const { return graph_->grad(id_); }

Var Graph::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

Var Graph::variable(Tensor value) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = record_;
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

Var Graph::param(Parameter& parameter) {
  Node node;
  node.param = &parameter;
  node.requires_grad = record_;
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

Var Graph::param(const Parameter& parameter) {
  if (record_) fail(ErrorCode::kInvalidArgument, "read-only parameter in a recording graph");
  Node node;
  // Never written through: gradients are only accumulated while recording.
  node.param = const_cast<Parameter*>(&parameter);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

const Tensor& Graph::value(std::size_t id) const {
  const Node& node = nodes_[id];
  return node.param ? node.param->value : node.value;
}

const Tensor& Graph::grad(std::size_t id) const {
  const Node& node = nodes_[id];
  if (node.param) return node.param->grad;
  return node.grad.empty() && node.value.size() != 0 ? empty_ : node.grad;
}

Tensor& Graph::grad_ref(std::size_t id) {
  Node& node = nodes_[id];
  if (node.param) return node.param->grad;
  if (node.grad.size() != node.value.size() || node.grad.shape() != node.value.shape()) {
    node.grad = Tensor(node.value.shape());
  }
  return node.grad;
}

Var Graph::push(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  if (record_) {
    for (auto in : inputs) node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
    if (node.requires_grad) {
      node.inputs = std::move(inputs);
      node.backward = std::move(backward);
    }
  }
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

void Graph::backward(Var output) {
  if (!record_) fail(ErrorCode::kInvalidArgument, "backward on a non-recording graph");
  if (value(output.id()).size() != 1) {
    fail(ErrorCode::kShapeMismatch, "backward needs a scalar output, got " +
                                        shape_string(value(output.id()).shape()));
  }
  grad_ref(output.id())[0] += 1.0;
  for (std::size_t i = output.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || !node.backward) continue;
    if (node.grad.size() == 0) continue;
    node.backward(*this, i);
  }
}

// ---- ops -------------------------------------------------------------------

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorCode::kShapeMismatch, what);
}

Graph& graph_of(Var a, Var b) {
  require(&a.graph() == &b.graph(), "operands belong to different graphs");
  return a.graph();
}

// Adds `delta` into the gradient of input k of node `self` when it needs one.
template <typename F>
void accumulate(Graph& g, std::size_t self, std::size_t k, F&& fn) {
  const std::size_t in = g.input(self, k);
  if (!g.requires_grad(in)) return;
  fn(g.grad_ref(in));
}

template <typename Fwd, typename Bwd>
Var unary(Var a, Fwd fwd, Bwd bwd) {
  Graph& g = a.graph();
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  return g.push(std::move(out), {a.id()}, [bwd](Graph& g, std::size_t self) {
    accumulate(g, self, 0, [&](Tensor& gx) {
      const Tensor& x = g.value(g.input(self, 0));
      const Tensor& y = g.value(self);
      const Tensor& gy = g.grad(self);
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] += gy[i] * bwd(x[i], y[i]);
    });
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& x = a.value();
  const Tensor& w = b.value();
  require(x.rank() >= 2 && w.rank() == 2 && x.shape().back() == w.dim(0),
          "matmul: incompatible shapes " + shape_string(x.shape()) + " x " +
              shape_string(w.shape()));
  Shape out_shape = x.shape();
  out_shape.back() = w.dim(1);
  Tensor out(out_shape);
  out.matrix().noalias() = x.matrix() * w.matrix();
  return g.push(std::move(out), {a.id(), b.id()}, [](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    accumulate(g, self, 0, [&](Tensor& gx) {
      gx.matrix().noalias() += gy.matrix() * g.value(g.input(self, 1)).matrix().transpose();
    });
    accumulate(g, self, 1, [&](Tensor& gw) {
      gw.matrix().noalias() += g.value(g.input(self, 0)).matrix().transpose() * gy.matrix();
    });
  });
}

namespace {

using ConstMat = Eigen::Map<const RowMatrix>;
using MutMat = Eigen::Map<RowMatrix>;

ConstMat block(const Tensor& t, std::size_t b) {
  const auto rows = static_cast<Eigen::Index>(t.dim(1));
  const auto cols = static_cast<Eigen::Index>(t.dim(2));
  return {t.data() + b * t.dim(1) * t.dim(2), rows, cols};
}

MutMat block(Tensor& t, std::size_t b) {
  const auto rows = static_cast<Eigen::Index>(t.dim(1));
  const auto cols = static_cast<Eigen::Index>(t.dim(2));
  return {t.data() + b * t.dim(1) * t.dim(2), rows, cols};
}

}  // namespace

Var bmm(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require(x.rank() == 3 && y.rank() == 3 && x.dim(0) == y.dim(0) && x.dim(2) == y.dim(1),
          "bmm: incompatible shapes " + shape_string(x.shape()) + " x " +
              shape_string(y.shape()));
  Tensor out({x.dim(0), x.dim(1), y.dim(2)});
  for (std::size_t i = 0; i < x.dim(0); ++i) block(out, i).noalias() = block(x, i) * block(y, i);
  return g.push(std::move(out), {a.id(), b.id()}, [](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    const Tensor& x = g.value(g.input(self, 0));
    const Tensor& y = g.value(g.input(self, 1));
    accumulate(g, self, 0, [&](Tensor& gx) {
      for (std::size_t i = 0; i < x.dim(0); ++i)
        block(gx, i).noalias() += block(gy, i) * block(y, i).transpose();
    });
    accumulate(g, self, 1, [&](Tensor& gw) {
      for (std::size_t i = 0; i < x.dim(0); ++i)
        block(gw, i).noalias() += block(x, i).transpose() * block(gy, i);
    });
  });
}

Var transpose(Var a) {
  Graph& g = a.graph();
  const Tensor& x = a.value();
  require(x.rank() == 2 || x.rank() == 3, "transpose: rank must be 2 or 3");
  const std::size_t batch = x.rank() == 3 ? x.dim(0) : 1;
  const std::size_t rows = x.dim(x.rank() - 2);
  const std::size_t cols = x.dim(x.rank() - 1);
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  Tensor out(shape);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        out[b * rows * cols + c * rows + r] = x[b * rows * cols + r * cols + c];
  return g.push(std::move(out), {a.id()}, [batch, rows, cols](Graph& g, std::size_t self) {
    accumulate(g, self, 0, [&](Tensor& gx) {
      const Tensor& gy = g.grad(self);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c)
            gx[b * rows * cols + r * cols + c] += gy[b * rows * cols + c * rows + r];
    });
  });
}

Var reshape(Var a, Shape shape) {
  Graph& g = a.graph();
  Tensor out = a.value().reshaped(std::move(shape));
  return g.push(std::move(out), {a.id()}, [](Graph& g, std::size_t self) {
    accumulate(g, self, 0, [&](Tensor& gx) {
      const Tensor& gy = g.grad(self);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
    });
  });
}

namespace {

template <typename Fwd>
Var binary_same_shape(Var a, Var b, const char* name, Fwd fwd, double sign_b, bool product) {
  Graph& g = graph_of(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require(x.shape() == y.shape(), std::string(name) + ": shape mismatch " +
                                      shape_string(x.shape()) + " vs " + shape_string(y.shape()));
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i], y[i]);
  return g.push(std::move(out), {a.id(), b.id()},
                [sign_b, product](Graph& g, std::size_t self) {
                  const Tensor& gy = g.grad(self);
                  const Tensor& x = g.value(g.input(self, 0));
                  const Tensor& y = g.value(g.input(self, 1));
                  accumulate(g, self, 0, [&](Tensor& gx) {
                    if (product) {
                      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * y[i];
                    } else {
                      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
                    }
                  });
                  accumulate(g, self, 1, [&](Tensor& gb) {
                    if (product) {
                      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * x[i];
                    } else {
                      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += sign_b * gy[i];
                    }
                  });
                });
}

}  // namespace

Var add(Var a, Var b) {
  return binary_same_shape(a, b, "add", [](double x, double y) { return x + y; }, 1.0, false);
}

Var sub(Var a, Var b) {
  return binary_same_shape(a, b, "sub", [](double x, double y) { return x - y; }, -1.0, false);
}

Var mul(Var a, Var b) {
  return binary_same_shape(a, b, "mul", [](double x, double y) { return x * y; }, 1.0, true);
}

Var scale(Var a, double factor) {
  return unary(a, [factor](double x) { return factor * x; },
               [factor](double, double) { return factor; });
}

Var add_bias(Var a, Var bias) {
  Graph& g = graph_of(a, bias);
  const Tensor& x = a.value();
  const Tensor& b = bias.value();
  require(x.rank() >= 1 && b.size() == x.shape().back(),
          "add_bias: bias length must equal last axis of " + shape_string(x.shape()));
  Tensor out = x;
  out.matrix().rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
  return g.push(std::move(out), {a.id(), bias.id()}, [](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    accumulate(g, self, 0, [&](Tensor& gx) { gx.matrix() += gy.matrix(); });
    accumulate(g, self, 1, [&](Tensor& gb) {
      Eigen::Map<Eigen::RowVectorXd>(gb.data(), static_cast<Eigen::Index>(gb.size())) +=
          gy.matrix().colwise().sum();
    });
  });
}

Var embedding_add(Var a, Var table) {
  Graph& g = graph_of(a, table);
  const Tensor& x = a.value();
  const Tensor& t = table.value();
  require(x.rank() == 3 && t.rank() == 2 && x.dim(1) == t.dim(0) && x.dim(2) == t.dim(1),
          "embedding_add: expected [B,N,d] + [N,d], got " + shape_string(x.shape()) + " + " +
              shape_string(t.shape()));
  Tensor out = x;
  const std::size_t block_size = t.size();
  for (std::size_t b = 0; b < x.dim(0); ++b)
    for (std::size_t i = 0; i < block_size; ++i) out[b * block_size + i] += t[i];
  return g.push(std::move(out), {a.id(), table.id()}, [block_size](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    accumulate(g, self, 0, [&](Tensor& gx) {
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
    });
    accumulate(g, self, 1, [&](Tensor& gt) {
      for (std::size_t i = 0; i < gy.size(); ++i) gt[i % block_size] += gy[i];
    });
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Graph& g = graph_of(x, gamma);
  const Tensor& in = x.value();
  const std::size_t width = in.shape().back();
  require(gamma.value().size() == width && beta.value().size() == width,
          "layer_norm: affine parameters must match the last axis");
  const std::size_t rows = in.size() / width;
  Tensor out(in.shape());
  // Normalized activations and inverse std are kept for the backward pass.
  auto xhat = std::make_shared<std::vector<double>>(in.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const Tensor& ga = gamma.value();
  const Tensor& be = beta.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * width;
    double mu = 0.0;
    for (std::size_t c = 0; c < width; ++c) mu += row[c];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t c = 0; c < width; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(width);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < width; ++c) {
      const double h = (row[c] - mu) * is;
      (*xhat)[r * width + c] = h;
      out[r * width + c] = h * ga[c] + be[c];
    }
  }
  return g.push(std::move(out), {x.id(), gamma.id(), beta.id()},
                [xhat, inv_std, rows, width](Graph& g, std::size_t self) {
                  const Tensor& gy = g.grad(self);
                  const Tensor& ga = g.value(g.input(self, 1));
                  accumulate(g, self, 1, [&](Tensor& gg) {
                    for (std::size_t i = 0; i < gy.size(); ++i) gg[i % width] += gy[i] * (*xhat)[i];
                  });
                  accumulate(g, self, 2, [&](Tensor& gb) {
                    for (std::size_t i = 0; i < gy.size(); ++i) gb[i % width] += gy[i];
                  });
                  accumulate(g, self, 0, [&](Tensor& gx) {
                    const double n = static_cast<double>(width);
                    for (std::size_t r = 0; r < rows; ++r) {
                      double sum_d = 0.0;
                      double sum_dx = 0.0;
                      for (std::size_t c = 0; c < width; ++c) {
                        const double d = gy[r * width + c] * ga[c];
                        sum_d += d;
                        sum_dx += d * (*xhat)[r * width + c];
                      }
                      for (std::size_t c = 0; c < width; ++c) {
                        const double d = gy[r * width + c] * ga[c];
                        gx[r * width + c] += (*inv_std)[r] / n *
                                             (n * d - sum_d - (*xhat)[r * width + c] * sum_dx);
                      }
                    }
                  });
                });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var gelu(Var a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) {
        return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
      });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; },
               [](double x, double) { return 2.0 * x; });
}

Var abs(Var a) {
  return unary(a, [](double x) { return std::abs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var clamp_max(Var a, double cap) {
  return unary(a, [cap](double x) { return x < cap ? x : cap; },
               [cap](double x, double) { return x < cap ? 1.0 : 0.0; });
}

Var clamp_min(Var a, double floor) {
  return unary(a, [floor](double x) { return x > floor ? x : floor; },
               [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

Var softmax(Var a) {
  Graph& g = a.graph();
  const Tensor& x = a.value();
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.size() / width;
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data() + r * width;
    double* y = out.data() + r * width;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < width; ++c) mx = std::max(mx, in[c]);
    double total = 0.0;
    for (std::size_t c = 0; c < width; ++c) {
      y[c] = in[c] == -std::numeric_limits<double>::infinity() ? 0.0 : std::exp(in[c] - mx);
      total += y[c];
    }
    for (std::size_t c = 0; c < width; ++c) y[c] /= total;
  }
  return g.push(std::move(out), {a.id()}, [rows, width](Graph& g, std::size_t self) {
    accumulate(g, self, 0, [&](Tensor& gx) {
      const Tensor& y = g.value(self);
      const Tensor& gy = g.grad(self);
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < width; ++c) dot += y[r * width + c] * gy[r * width + c];
        for (std::size_t c = 0; c < width; ++c) {
          const std::size_t i = r * width + c;
          gx[i] += y[i] * (gy[i] - dot);
        }
      }
    });
  });
}

Var log_softmax(Var a) {
  Graph& g = a.graph();
  const Tensor& x = a.value();
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.size() / width;
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data() + r * width;
    double* y = out.data() + r * width;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < width; ++c) mx = std::max(mx, in[c]);
    double total = 0.0;
    for (std::size_t c = 0; c < width; ++c) total += std::exp(in[c] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t c = 0; c < width; ++c) y[c] = in[c] - lse;
  }
  return g.push(std::move(out), {a.id()}, [rows, width](Graph& g, std::size_t self) {
    accumulate(g, self, 0, [&](Tensor& gx) {
      const Tensor& y = g.value(self);
      const Tensor& gy = g.grad(self);
      for (std::size_t r = 0; r < rows; ++r) {
        double total = 0.0;
        for (std::size_t c = 0; c < width; ++c) total += gy[r * width + c];
        for (std::size_t c = 0; c < width; ++c) {
          const std::size_t i = r * width + c;
          gx[i] += gy[i] - std::exp(y[i]) * total;
        }
      }
    });
  });
}

Var additive_mask(Var logits, const Tensor& mask) {
  Graph& g = logits.graph();
  const Tensor& x = logits.value();
  require(mask.rank() == 2 && x.rank() >= 2 && x.dim(x.rank() - 1) == mask.dim(1) &&
              x.dim(x.rank() - 2) == mask.dim(0),
          "additive_mask: mask " + shape_string(mask.shape()) + " does not fit " +
              shape_string(x.shape()));
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += mask[i % mask.size()];
  return g.push(std::move(out), {logits.id()}, [](Graph& g, std::size_t self) {
    accumulate(g, self, 0, [&](Tensor& gx) {
      const Tensor& gy = g.grad(self);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
    });
  });
}

Var sum(Var a) {
  Graph& g = a.graph();
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  return g.push(Tensor::scalar(total), {a.id()}, [](Graph& g, std::size_t self) {
    accumulate(g, self, 0, [&](Tensor& gx) {
      const double gy = g.grad(self)[0];
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy;
    });
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var slice(Var a, std::size_t axis, std::size_t start, std::size_t length) {
  Graph& g = a.graph();
  const Tensor& x = a.value();
  require(axis < x.rank() && start + length <= x.dim(axis) && length > 0,
          "slice: out of range on " + shape_string(x.shape()));
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t full = x.dim(axis);
  Shape shape = x.shape();
  shape[axis] = length;
  Tensor out(shape);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.data() + (o * full + start) * inner, length * inner,
                out.data() + o * length * inner);
  return g.push(std::move(out), {a.id()},
                [outer, inner, full, start, length](Graph& g, std::size_t self) {
                  accumulate(g, self, 0, [&](Tensor& gx) {
                    const Tensor& gy = g.grad(self);
                    for (std::size_t o = 0; o < outer; ++o)
                      for (std::size_t i = 0; i < length * inner; ++i)
                        gx[(o * full + start) * inner + i] += gy[o * length * inner + i];
                  });
                });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  require(!parts.empty(), "concat: no inputs");
  Graph& g = parts[0].graph();
  const Shape& first = parts[0].shape();
  require(axis < first.size(), "concat: axis out of range");
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  std::vector<std::size_t> lengths;
  std::vector<std::size_t> ids;
  std::size_t total = 0;
  for (const Var& p : parts) {
    Shape s = p.shape();
    require(&p.graph() == &g && s.size() == first.size(), "concat: incompatible inputs");
    for (std::size_t i = 0; i < s.size(); ++i)
      require(i == axis || s[i] == first[i], "concat: shapes differ off the concat axis");
    lengths.push_back(s[axis]);
    ids.push_back(p.id());
    total += s[axis];
  }
  Shape shape = first;
  shape[axis] = total;
  Tensor out(shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& x = parts[k].value();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(x.data() + o * lengths[k] * inner, lengths[k] * inner,
                  out.data() + (o * total + offset) * inner);
    offset += lengths[k];
  }
  return g.push(std::move(out), ids, [outer, inner, lengths, total](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < lengths.size(); ++k) {
      accumulate(g, self, k, [&](Tensor& gx) {
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < lengths[k] * inner; ++i)
            gx[o * lengths[k] * inner + i] += gy[(o * total + offset) * inner + i];
      });
      offset += lengths[k];
    }
  });
}

Var detach(Var a) { return a.graph().constant(a.value()); }

Var pick(Var a, std::span<const int> index) {
  Graph& g = a.graph();
  const Tensor& x = a.value();
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.size() / width;
  require(index.size() == rows, "pick: need one index per row");
  Tensor out({rows});
  std::vector<std::size_t> flat(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    require(index[r] >= 0 && static_cast<std::size_t>(index[r]) < width, "pick: index out of range");
    flat[r] = r * width + static_cast<std::size_t>(index[r]);
    out[r] = x[flat[r]];
  }
  return g.push(std::move(out), {a.id()}, [flat = std::move(flat)](Graph& g, std::size_t self) {
    accumulate(g, self, 0, [&](Tensor& gx) {
      const Tensor& gy = g.grad(self);
      for (std::size_t r = 0; r < flat.size(); ++r) gx[flat[r]] += gy[r];
    });
  });
}

// ---- optimization ----------------------------------------------------------

void adam_step(ParameterSet& params, AdamState& state, double lr, const AdamOptions& options) {
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto& p : params) {
      state.m.emplace_back(p->value.shape());
      state.v.emplace_back(p->value.shape());
    }
    state.step = 0;
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(options.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(options.beta2, static_cast<double>(state.step));
  std::size_t k = 0;
  for (auto& p : params) {
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    if (m.shape() != p->value.shape()) {
      fail(ErrorCode::kShapeMismatch, "adam_step: state shape differs for " + p->name);
    }
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      m[i] = options.beta1 * m[i] + (1.0 - options.beta1) * g;
      v[i] = options.beta2 * v[i] + (1.0 - options.beta2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p->value[i] -= lr * mhat / (std::sqrt(vhat) + options.eps);
    }
    ++k;
  }
}

double cosine_lr(std::int64_t step, std::int64_t total, double lr0) {
  if (total <= 0) return lr0;
  const double s = std::clamp(static_cast<double>(step), 0.0, static_cast<double>(total));
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * s / static_cast<double>(total)));
}

// ---- checkpoints -----------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[5] = {'K', 'A', 'D', 'C', '1'};

template <typename T>
void write_pod(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) fail(ErrorCode::kParse, "checkpoint truncated");
  return value;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::kIo, "cannot write " + path.string());
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(p->value.rank()));
    for (auto d : p->value.shape()) write_pod<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(p->value.data()),
             static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!os) fail(ErrorCode::kIo, "failed writing " + path.string());
}

std::vector<std::pair<std::string, Tensor>> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::kIo, "cannot open " + path.string());
  char magic[5];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    fail(ErrorCode::kParse, path.string() + ": not a KADC1 checkpoint");
  }
  const auto count = read_pod<std::uint32_t>(is);
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = read_pod<std::uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto rank = read_pod<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(read_pod<std::uint64_t>(is));
    std::vector<double> data(shape_size(shape));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!is) fail(ErrorCode::kParse, "checkpoint truncated in " + name);
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

void load_checkpoint(const std::filesystem::path& path, ParameterSet& params) {
  auto entries = read_checkpoint(path);
  for (auto& p : params) {
    auto it = std::find_if(entries.begin(), entries.end(),
                           [&](const auto& e) { return e.first == p->name; });
    if (it == entries.end()) fail(ErrorCode::kParse, "checkpoint lacks parameter " + p->name);
    if (it->second.shape() != p->value.shape()) {
      fail(ErrorCode::kShapeMismatch, "checkpoint shape mismatch for " + p->name);
    }
    p->value = std::move(it->second);
  }
}

}  // namespace kinact::ad
