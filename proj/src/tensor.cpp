#include "sbgru/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "sbgru/errors.hpp"
#include "sbgru/kernels.hpp"

namespace sbgru {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "×" : "") << shape[i];
  os << ']';
  return os.str();
}

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

// ---- Tensor -------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  const std::size_t n = sbgru::numel(shape);
  return from(std::move(shape), std::vector<double>(n, v), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (sbgru::numel(shape) != values.size())
    throw ShapeError("tensor shape " + shape_str(shape) + " does not hold " + std::to_string(values.size()) +
                     " values");
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({}, {v}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::rows() const {
  const auto& s = shape();
  return s.size() >= 2 ? s[0] : 1;
}

std::size_t Tensor::cols() const {
  const auto& s = shape();
  if (s.empty()) return 1;
  return s.size() >= 2 ? s[1] : s[0];
}

const std::vector<double>& Tensor::value() const { return node_->value; }

std::span<double> Tensor::mutable_data() {
  if (!node_->is_leaf()) throw ContractError("mutable_data() on a non-leaf tensor");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return value()[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!node_->is_leaf()) throw ContractError("set_requires_grad() on a non-leaf tensor");
  node_->requires_grad = on;
}

bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::span<const double> Tensor::grad() const { return node_->grad_buffer(); }

void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

bool Tensor::all_finite() const {
  return std::all_of(value().begin(), value().end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::detach() const { return from(shape(), value(), false); }

// ---- grad mode ------------------------------------------------------------------

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents, BackwardFn backward) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (g_grad_enabled) {
    const bool any = std::any_of(parents.begin(), parents.end(), [](const Tensor& p) { return p.requires_grad(); });
    if (any) {
      n->requires_grad = true;
      n->parents.reserve(parents.size());
      for (auto& p : parents) n->parents.push_back(p.node_ptr());
      n->backward = std::move(backward);
    }
  }
  return Tensor(std::move(n));
}

void accumulate_grad(Node& parent, std::span<const double> g) {
  if (!parent.requires_grad) return;
  auto& buf = parent.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

// ---- tape -------------------------------------------------------------------------

Tape Tape::record(const Tensor& loss) {
  Tape tape;
  tape.root_ = loss.node_ptr();
  if (!loss.requires_grad()) return tape;
  std::unordered_set<Node*> seen;
  // Iterative post-order DFS: a node is emitted after all of its parents.
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      tape.nodes_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

void Tape::backward() {
  if (nodes_.empty()) return;
  for (Node* n : nodes_)
    if (!n->is_leaf()) n->grad.clear();
  nodes_.back()->grad_buffer()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) throw ContractError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
  Tape::record(loss).backward();
}

// ---- operations -----------------------------------------------------------------------

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_matrix(const Tensor& a, const char* op) {
  if (a.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}

// Unary elementwise op with derivative expressed through input x and output y.
template <class F, class D>
Tensor unary(const Tensor& a, F f, D dfdx) {
  std::vector<double> out(a.numel());
  const auto& x = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return make_result(a.shape(), std::move(out), {a}, [dfdx](const Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(p.value[i], self.value[i]);
  });
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dimensions disagree " + shape_str(a.shape()) + " · " + shape_str(b.shape()));
  const kernels::GemmDims d{a.rows(), a.cols(), b.cols()};
  std::vector<double> out(d.m * d.n);
  kernels::omp::matmul(d, a.data(), b.data(), out, false);
  return make_result({d.m, d.n}, std::move(out), {a, b}, [d](const Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad)  // dA = dC · Bᵀ
      kernels::omp::matmul_nt({d.m, d.n, d.k}, self.grad, pb.value, pa.grad_buffer(), true);
    if (pb.requires_grad)  // dB = Aᵀ · dC
      kernels::omp::matmul_tn({d.k, d.m, d.n}, pa.value, self.grad, pb.grad_buffer(), true);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return make_result(a.shape(), std::move(out), {a, b}, [](const Node& self) {
    accumulate_grad(*self.parents[0], self.grad);
    accumulate_grad(*self.parents[1], self.grad);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  return make_result(a.shape(), std::move(out), {a, b}, [](const Node& self) {
    accumulate_grad(*self.parents[0], self.grad);
    Node& pb = *self.parents[1];
    if (!pb.requires_grad) return;
    auto& g = pb.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return make_result(a.shape(), std::move(out), {a, b}, [](const Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor one_minus(const Tensor& a) {
  return unary(a, [](double x) { return 1.0 - x; }, [](double, double) { return -1.0; });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require_matrix(a, "add_row");
  if (row.numel() != a.cols())
    throw ShapeError("add_row: row " + shape_str(row.shape()) + " does not match " + shape_str(a.shape()));
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(a.value());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += row.at(j);
  return make_result(a.shape(), std::move(out), {a, row}, [m, n](const Node& self) {
    accumulate_grad(*self.parents[0], self.grad);
    Node& pr = *self.parents[1];
    if (!pr.requires_grad) return;
    auto& g = pr.grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
  });
}

Tensor blend_rows(std::span<const std::uint8_t> mask, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "blend_rows");
  require_matrix(a, "blend_rows");
  const std::size_t m = a.rows(), n = a.cols();
  if (mask.size() != m) throw ShapeError("blend_rows: mask length does not match row count");
  std::vector<std::uint8_t> keep(mask.begin(), mask.end());
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const auto& src = keep[i] ? a.value() : b.value();
    std::copy_n(src.begin() + i * n, n, out.begin() + i * n);
  }
  return make_result(a.shape(), std::move(out), {a, b}, [keep = std::move(keep), n](const Node& self) {
    for (int side = 0; side < 2; ++side) {
      Node& p = *self.parents[side];
      if (!p.requires_grad) continue;
      auto& g = p.grad_buffer();
      for (std::size_t i = 0; i < keep.size(); ++i) {
        if ((keep[i] != 0) != (side == 0)) continue;
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i * n + j];
      }
    }
  });
}

Tensor sigmoid(const Tensor& a) {
  return unary(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor log(const Tensor& a) {
  for (double v : a.value())
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor softplus(const Tensor& a) {
  return unary(a, stable_softplus, [](double x, double) { return stable_sigmoid(x); });
}

Tensor log_sigmoid(const Tensor& a) {
  return unary(a, [](double x) { return -stable_softplus(-x); }, [](double x, double) { return stable_sigmoid(-x); });
}

Tensor pow(const Tensor& a, double p) {
  const bool integral = std::floor(p) == p;
  for (double v : a.value()) {
    if (v < 0.0 && !integral) throw DomainError("pow: negative base with non-integer exponent");
    if (v == 0.0 && p < 0.0) throw DomainError("pow: zero base with negative exponent");
  }
  return unary(a, [p](double x) { return std::pow(x, p); },
               [p](double x, double) { return p == 0.0 ? 0.0 : p * std::pow(x, p - 1.0); });
}

Tensor reciprocal(const Tensor& a) {
  for (double v : a.value())
    if (v == 0.0) throw DomainError("reciprocal of zero");
  return unary(a, [](double x) { return 1.0 / x; }, [](double, double y) { return -y * y; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return (x < lo || x > hi) ? 0.0 : 1.0; });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_matrix(a, "concat_cols");
  require_matrix(b, "concat_cols");
  if (a.rows() != b.rows())
    throw ShapeError("concat_cols: row counts differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t m = a.rows(), na = a.cols(), nb = b.cols(), n = na + nb;
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(a.value().begin() + i * na, na, out.begin() + i * n);
    std::copy_n(b.value().begin() + i * nb, nb, out.begin() + i * n + na);
  }
  return make_result({m, n}, std::move(out), {a, b}, [m, na, nb, n](const Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < na; ++j) g[i * na + j] += self.grad[i * n + j];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < nb; ++j) g[i * nb + j] += self.grad[i * n + na + j];
    }
  });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  require_matrix(a, "slice_cols");
  if (begin + count > a.cols()) throw ShapeError("slice_cols: range exceeds " + shape_str(a.shape()));
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(a.value().begin() + i * n + begin, count, out.begin() + i * count);
  return make_result({m, count}, std::move(out), {a}, [m, n, begin, count](const Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j) g[i * n + begin + j] += self.grad[i * count + j];
  });
}

Tensor cumsum(const Tensor& a) {
  if (a.rank() != 1) throw ShapeError("cumsum: expected a vector, got " + shape_str(a.shape()));
  std::vector<double> out(a.numel());
  double run = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = run += a.at(i);
  return make_result(a.shape(), std::move(out), {a}, [](const Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    double run = 0.0;
    for (std::size_t i = g.size(); i-- > 0;) g[i] += run += self.grad[i];
  });
}

Tensor softmax_rows(const Tensor& a) {
  require_matrix(a, "softmax_rows");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = a.value().data() + i * n;
    double* y = out.data() + i * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += y[j] = std::exp(x[j] - mx);
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  return make_result(a.shape(), std::move(out), {a}, [m, n](const Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = self.value.data() + i * n;
      const double* gy = self.grad.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += gy[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += y[j] * (gy[j] - dot);
    }
  });
}

Tensor log_softmax_rows(const Tensor& a) {
  require_matrix(a, "log_softmax_rows");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = a.value().data() + i * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(x[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[j] - lse;
  }
  return make_result(a.shape(), std::move(out), {a}, [m, n](const Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < m; ++i) {
      const double* ly = self.value.data() + i * n;
      const double* gy = self.grad.data() + i * n;
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) total += gy[j];
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += gy[j] - std::exp(ly[j]) * total;
    }
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.value()) s += v;
  return make_result({}, {s}, {a}, [](const Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ContractError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor embed_lookup(const Tensor& table, std::span<const std::size_t> ids) {
  require_matrix(table, "embed_lookup");
  const std::size_t v = table.rows(), d = table.cols();
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  std::vector<double> out(idx.size() * d);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= v)
      throw ShapeError("embed_lookup: index " + std::to_string(idx[i]) + " outside table of " + std::to_string(v));
    std::copy_n(table.value().begin() + idx[i] * d, d, out.begin() + i * d);
  }
  const std::size_t rows = idx.size();
  return make_result({rows, d}, std::move(out), {table}, [idx = std::move(idx), d](const Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) g[idx[i] * d + j] += self.grad[i * d + j];
  });
}

Tensor gather_sum(const Tensor& a, std::span<const std::size_t> index, std::span<const double> weight) {
  require_matrix(a, "gather_sum");
  const std::size_t m = a.rows(), n = a.cols();
  if (index.size() != m || weight.size() != m) throw ShapeError("gather_sum: index/weight length must equal rows");
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> w(weight.begin(), weight.end());
  double s = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (idx[i] >= n) throw ShapeError("gather_sum: index " + std::to_string(idx[i]) + " outside row");
    if (w[i] != 0.0) s += w[i] * a.at(i, idx[i]);
  }
  return make_result({}, {s}, {a}, [idx = std::move(idx), w = std::move(w), n](const Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) g[i * n + idx[i]] += w[i] * self.grad[0];
  });
}

}  // namespace sbgru
