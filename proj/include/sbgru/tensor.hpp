#pragma once

// Dense float64 tensors with reverse-mode differentiation.
//
// A Tensor is a shared handle to a graph node. Operations on tensors that
// require gradients record a node holding its operands and a backward rule;
// `backward(loss)` linearizes the graph reachable from the loss into a Tape
// (operands before users) and runs the rules in reverse. Leaf gradients
// accumulate across calls until `zero_grad()`.
//
// Shapes are row-major. Most ops work on rank-1 or rank-2 tensors; recurrent
// code steps through time one [batch × feature] matrix at a time.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sbgru {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node;
using BackwardFn = std::function<void(const Node& self)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something flows in
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;

  bool is_leaf() const { return parents.empty(); }
  /// Gradient buffer, zero-initialised on first use.
  std::vector<double>& grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const { return value().size(); }
  /// Rows of a matrix; a rank-1 tensor counts as one row.
  std::size_t rows() const;
  std::size_t cols() const;

  const std::vector<double>& value() const;
  std::span<const double> data() const { return value(); }
  /// Writable storage. Only legal on leaves; used by optimizers and loaders.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const { return value()[i]; }
  double at(std::size_t r, std::size_t c) const { return value()[r * cols() + c]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  bool all_finite() const;

  /// Same values, new leaf with no history.
  Tensor detach() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<Node> node_;
};

/// Build a result tensor. History (parents + backward rule) is kept only when
/// grad mode is on and at least one parent requires a gradient.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents, BackwardFn backward);

/// Accumulate `g` into a parent's gradient if that parent takes one.
void accumulate_grad(Node& parent, std::span<const double> g);

// ---- grad mode ------------------------------------------------------------

bool grad_enabled();

/// Disables history recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// ---- tape -------------------------------------------------------------------

class Tape {
 public:
  /// Topologically ordered nodes reachable from `loss`; operands first.
  static Tape record(const Tensor& loss);

  std::span<Node* const> nodes() const { return nodes_; }
  /// Seed d(loss)/d(loss) = 1 and run every backward rule once, last to first.
  void backward();

 private:
  std::vector<Node*> nodes_;
  std::shared_ptr<Node> root_;
};

/// loss must be a single-element tensor.
void backward(const Tensor& loss);

// ---- operations ---------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
/// 1 - a
Tensor one_minus(const Tensor& a);
/// [m×n] + [n] broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& row);
/// Row i of the result is `a` row i where mask[i] != 0, else `b` row i.
Tensor blend_rows(std::span<const std::uint8_t> mask, const Tensor& a, const Tensor& b);

Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor softplus(const Tensor& a);
/// log σ(a), stable for large |a|.
Tensor log_sigmoid(const Tensor& a);
Tensor pow(const Tensor& a, double p);
Tensor reciprocal(const Tensor& a);
/// Values clipped to [lo, hi]; gradient zero where clipped.
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor concat_cols(const Tensor& a, const Tensor& b);
/// Columns [begin, begin+count) of a matrix.
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
/// Running sum along a rank-1 tensor.
Tensor cumsum(const Tensor& a);

Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Rows of `table` selected by `ids`, giving [ids.size() × cols].
Tensor embed_lookup(const Tensor& table, std::span<const std::size_t> ids);
/// Σ_i weight[i] · a[i, index[i]] as a scalar. Used for masked token NLL.
Tensor gather_sum(const Tensor& a, std::span<const std::size_t> index, std::span<const double> weight);

}  // namespace sbgru
