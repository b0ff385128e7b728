#pragma once

// Dense row-major tensors and a tape-based reverse-mode differentiator.
//
// A Graph records every operation applied to Vars in creation order, so the
// tape is topologically sorted by construction. Parameters live outside the
// graph in a ParameterSet; binding one into a graph creates a leaf whose
// gradient accumulates straight into Parameter::grad.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace kinact::ad {

using Shape = std::vector<std::size_t>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
/// SIMD-aligned storage keeps kernel paths, and hence results, independent of heap addresses.
using Storage = std::vector<double, Eigen::aligned_allocator<double>>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value) { return Tensor({1}, {value}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Element access for rank-2 tensors.
  double& at(std::size_t row, std::size_t col) { return data_[row * shape_.back() + col]; }
  double at(std::size_t row, std::size_t col) const { return data_[row * shape_.back() + col]; }

  /// Rank-n tensor viewed as a (size / last) x last row-major matrix.
  Eigen::Map<RowMatrix> matrix();
  Eigen::Map<const RowMatrix> matrix() const;

  Tensor reshaped(Shape shape) const;
  void fill(double value);

 private:
  Shape shape_;
  Storage data_;
};

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

/// Owns named trainable tensors. Insertion order is stable and defines the
/// checkpoint order.
class ParameterSet {
 public:
  Parameter& add(std::string name, Tensor init);
  Parameter& get(std::string_view name);
  const Parameter& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const noexcept { return params_.size(); }
  /// Total number of scalar parameters.
  std::size_t count() const;
  void zero_grad();

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  ParameterSet clone() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

class Graph;

class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const;
  /// Gradient after Graph::backward; empty when no gradient reached this node.
  const Tensor& grad() const;

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  /// With record = false no backward closures are kept (inference mode).
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  /// Differentiable leaf that is not a parameter (used by gradient checks).
  Var variable(Tensor value);
  Var param(Parameter& parameter);
  /// Read-only leaf; only valid in a non-recording graph.
  Var param(const Parameter& parameter);

  /// Reverse accumulation from a scalar output with seed 1.
  void backward(Var output);

  std::size_t size() const noexcept { return nodes_.size(); }
  bool recording() const noexcept { return record_; }

  // Op-implementation interface.
  Var push(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);
  const Tensor& value(std::size_t id) const;
  const Tensor& grad(std::size_t id) const;
  Tensor& grad_ref(std::size_t id);
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t input(std::size_t id, std::size_t k) const { return nodes_[id].inputs[k]; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    Parameter* param = nullptr;
  };

  bool record_;
  std::vector<Node> nodes_;
  Tensor empty_;
};

// ---- ops -----------------------------------------------------------------

/// [..., M, K] x [K, N] -> [..., M, N]; leading axes are flattened into rows.
Var matmul(Var a, Var b);
/// Batched [B, M, K] x [B, K, N] -> [B, M, N].
Var bmm(Var a, Var b);
/// Swaps the last two axes.
Var transpose(Var a);
Var reshape(Var a, Shape shape);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// Adds a vector of length `last` to every row.
Var add_bias(Var a, Var bias);
/// Adds a [N, d] table to every [N, d] slice of a [B, N, d] tensor.
Var embedding_add(Var a, Var table);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var relu(Var a);
Var gelu(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var log(Var a);
Var square(Var a);
Var abs(Var a);
/// min(x, cap); derivative is 1 where x < cap and 0 where x >= cap.
Var clamp_max(Var a, double cap);
/// max(x, floor); derivative is 1 where x > floor and 0 where x <= floor.
Var clamp_min(Var a, double floor);
/// Softmax over the last axis with max subtraction; -inf logits map to 0.
Var softmax(Var a);
/// Log-softmax over the last axis via log-sum-exp; logits must be finite.
Var log_softmax(Var a);
/// Adds a [T, T] mask of 0 / -inf to every trailing [T, T] block.
Var additive_mask(Var logits, const Tensor& mask);
Var sum(Var a);
Var mean(Var a);
Var slice(Var a, std::size_t axis, std::size_t start, std::size_t length);
Var concat(std::span<const Var> parts, std::size_t axis);
Var detach(Var a);
/// Rank-2 view [R, C]: out[r] = a[r, index[r]].
Var pick(Var a, std::span<const int> index);

// ---- optimization --------------------------------------------------------

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update of every parameter from its .grad.
void adam_step(ParameterSet& params, AdamState& state, double lr,
               const AdamOptions& options = {});

/// lr0 * (1 + cos(pi * step / total)) / 2.
double cosine_lr(std::int64_t step, std::int64_t total, double lr0);

// ---- checkpoints ("KADC1") -----------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params);
/// Overwrites values of existing parameters by name; shapes must agree and
/// every parameter of `params` must be present in the file.
void load_checkpoint(const std::filesystem::path& path, ParameterSet& params);
std::vector<std::pair<std::string, Tensor>> read_checkpoint(const std::filesystem::path& path);

}  // namespace kinact::ad
