#pragma once

// Dense tensors of rank <= 2 with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared node. Operations build a DAG of
// nodes while gradient recording is enabled and at least one input requires a
// gradient; backward() walks the DAG in reverse topological order and then
// releases every interior node so the next forward pass starts clean.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <utility>
#include <variant>
#include <vector>

#include "impress/error.hpp"
#include "impress/random.hpp"

namespace impress {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace detail {

inline thread_local bool grad_enabled = true;

/// Rank <= 2 shapes are stored as a (rows, cols) matrix. A rank-1 shape [n]
/// is a row of length n so that trailing-dimension broadcasting lines up.
inline std::pair<Eigen::Index, Eigen::Index> storage_dims(const Shape& shape) {
  switch (shape.size()) {
    case 0: return {1, 1};
    case 1: return {1, static_cast<Eigen::Index>(shape[0])};
    case 2: return {static_cast<Eigen::Index>(shape[0]), static_cast<Eigen::Index>(shape[1])};
    default: fail(ErrorKind::InvalidShape, "rank " + std::to_string(shape.size()) + " tensors are not supported");
  }
}

inline void validate_shape(const Shape& shape) {
  if (shape.size() > 2) fail(ErrorKind::InvalidShape, "rank > 2 in " + shape_string(shape));
  for (std::size_t d : shape) {
    if (d == 0) fail(ErrorKind::InvalidShape, "zero dimension in " + shape_string(shape));
  }
}

template <typename Scalar>
struct Node {
  Shape shape;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }

  void accumulate(const Matrix<Scalar>& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

}  // namespace detail

/// Disables gradient recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

struct Zeros {};
struct Constant {
  double value;
};
struct Uniform {
  double low;
  double high;
  std::uint64_t seed;
};
struct Normal {
  double mean;
  double stddev;
  std::uint64_t seed;
};
using Init = std::variant<Zeros, Constant, Uniform, Normal>;

template <typename Scalar>
class Tensor {
 public:
  using Node = detail::Node<Scalar>;
  using MatrixType = Matrix<Scalar>;

  Tensor() = default;

  /// Wraps a matrix. Column vectors and scalars keep their 2-D shape.
  static Tensor from_matrix(MatrixType value, bool requires_grad = false) {
    Shape shape{static_cast<std::size_t>(value.rows()), static_cast<std::size_t>(value.cols())};
    return from_matrix(std::move(shape), std::move(value), requires_grad);
  }

  static Tensor from_matrix(Shape shape, MatrixType value, bool requires_grad = false) {
    detail::validate_shape(shape);
    auto [r, c] = detail::storage_dims(shape);
    if (value.rows() != r || value.cols() != c) {
      fail(ErrorKind::InvalidShape, "buffer does not match shape " + shape_string(shape));
    }
    if (!value.allFinite()) fail(ErrorKind::NonFinite, "non-finite value in tensor data");
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor scalar(Scalar v, bool requires_grad = false) {
    MatrixType m(1, 1);
    m(0, 0) = v;
    return from_matrix(Shape{}, std::move(m), requires_grad);
  }

  static Tensor create(const Shape& shape, const Init& init, bool requires_grad = false) {
    detail::validate_shape(shape);
    auto [r, c] = detail::storage_dims(shape);
    MatrixType m(r, c);
    std::visit(
        [&m](const auto& init) {
          using T = std::decay_t<decltype(init)>;
          if constexpr (std::is_same_v<T, Zeros>) {
            m.setZero();
          } else if constexpr (std::is_same_v<T, Constant>) {
            m.setConstant(static_cast<Scalar>(init.value));
          } else if constexpr (std::is_same_v<T, Uniform>) {
            Rng rng(init.seed);
            for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(rng.uniform(init.low, init.high));
          } else {
            if (init.stddev < 0.0) fail(ErrorKind::InvalidShape, "normal initializer needs stddev >= 0");
            Rng rng(init.seed);
            for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(rng.normal(init.mean, init.stddev));
          }
        },
        init);
    return from_matrix(shape, std::move(m), requires_grad);
  }

  static Tensor zeros(const Shape& shape, bool requires_grad = false) { return create(shape, Zeros{}, requires_grad); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  Eigen::Index numel() const { return node_->value.size(); }
  const MatrixType& value() const { return node_->value; }
  Scalar item() const {
    if (numel() != 1) fail(ErrorKind::InvalidShape, "item() on tensor of shape " + shape_string(shape()));
    return node_->value(0, 0);
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  bool has_grad() const { return node_->grad.size() != 0; }
  const MatrixType& grad() const { return node_->grad; }
  void zero_grad() { node_->grad.resize(0, 0); }

  /// In-place write access for optimizers and checkpoint loading.
  MatrixType& mutable_value() { return node_->value; }

  /// Same values, no history.
  Tensor detach() const { return from_matrix(shape(), value(), false); }

  const std::shared_ptr<Node>& node() const { return node_; }

  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

namespace detail {

template <typename Scalar>
bool recording(std::initializer_list<const Tensor<Scalar>*> inputs) {
  if (!grad_enabled) return false;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

/// Builds the output node. When `record` is false the backward closure is
/// dropped so no history is retained.
template <typename Scalar>
Tensor<Scalar> make_result(Shape shape, Matrix<Scalar> value, std::vector<std::shared_ptr<Node<Scalar>>> parents,
                           std::function<void(Node<Scalar>&)> backward, bool record, const char* op) {
  if (!value.allFinite()) fail(ErrorKind::NonFinite, std::string("non-finite output from ") + op);
  auto node = std::make_shared<Node<Scalar>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (record) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Tensor<Scalar>(std::move(node));
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      fail(ErrorKind::ShapeMismatch, "cannot broadcast " + shape_string(a) + " with " + shape_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

template <typename Scalar>
Matrix<Scalar> expand(const Matrix<Scalar>& m, Eigen::Index rows, Eigen::Index cols) {
  if (m.rows() == rows && m.cols() == cols) return m;
  return m.replicate(rows / m.rows(), cols / m.cols());
}

/// Sums a broadcast gradient back down to the operand's storage dims.
template <typename Scalar>
Matrix<Scalar> reduce_to(const Matrix<Scalar>& g, Eigen::Index rows, Eigen::Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  Matrix<Scalar> out = g;
  if (rows == 1 && out.rows() != 1) out = out.colwise().sum().eval();
  if (cols == 1 && out.cols() != 1) out = out.rowwise().sum().eval();
  return out;
}

template <typename Scalar, typename Forward, typename Derivative>
Tensor<Scalar> unary(const Tensor<Scalar>& x, Forward forward, Derivative derivative, const char* op) {
  Matrix<Scalar> out = x.value().unaryExpr(forward);
  const bool record = recording<Scalar>({&x});
  std::function<void(Node<Scalar>&)> back;
  if (record) {
    back = [derivative](Node<Scalar>& self) {
      auto& in = *self.parents[0];
      if (!in.requires_grad) return;
      Matrix<Scalar> local = in.value.binaryExpr(self.value, derivative);
      in.accumulate(self.grad.cwiseProduct(local));
    };
  }
  return make_result<Scalar>(x.shape(), std::move(out), {x.node()}, std::move(back), record, op);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise maps

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  return detail::unary(
      x, [](Scalar v) { return v > Scalar(0) ? v : Scalar(0); },
      [](Scalar in, Scalar) { return in > Scalar(0) ? Scalar(1) : Scalar(0); }, "relu");
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
  return detail::unary(
      x,
      [](Scalar v) {
        if (v >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-v));
        const Scalar e = std::exp(v);
        return e / (Scalar(1) + e);
      },
      [](Scalar, Scalar out) { return out * (Scalar(1) - out); }, "sigmoid");
}

template <typename Scalar>
Tensor<Scalar> tanh(const Tensor<Scalar>& x) {
  return detail::unary(
      x, [](Scalar v) { return std::tanh(v); }, [](Scalar, Scalar out) { return Scalar(1) - out * out; }, "tanh");
}

template <typename Scalar>
Tensor<Scalar> exp(const Tensor<Scalar>& x) {
  return detail::unary(
      x, [](Scalar v) { return std::exp(v); }, [](Scalar, Scalar out) { return out; }, "exp");
}

template <typename Scalar>
Tensor<Scalar> log(const Tensor<Scalar>& x) {
  return detail::unary(
      x, [](Scalar v) { return std::log(v); }, [](Scalar in, Scalar) { return Scalar(1) / in; }, "log");
}

template <typename Scalar>
Tensor<Scalar> square(const Tensor<Scalar>& x) {
  return detail::unary(
      x, [](Scalar v) { return v * v; }, [](Scalar in, Scalar) { return Scalar(2) * in; }, "square");
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, double c) {
  const Scalar k = static_cast<Scalar>(c);
  return detail::unary(
      x, [k](Scalar v) { return k * v; }, [k](Scalar, Scalar) { return k; }, "scale");
}

template <typename Scalar>
Tensor<Scalar> neg(const Tensor<Scalar>& x) {
  return scale(x, -1.0);
}

template <typename Scalar>
Tensor<Scalar> add_scalar(const Tensor<Scalar>& x, double c) {
  const Scalar k = static_cast<Scalar>(c);
  return detail::unary(
      x, [k](Scalar v) { return v + k; }, [](Scalar, Scalar) { return Scalar(1); }, "add_scalar");
}

/// Clamps into [lo, hi]; the gradient is zero where the clamp is active.
template <typename Scalar>
Tensor<Scalar> clamp(const Tensor<Scalar>& x, double lo, double hi) {
  const Scalar l = static_cast<Scalar>(lo);
  const Scalar h = static_cast<Scalar>(hi);
  return detail::unary(
      x, [l, h](Scalar v) { return std::clamp(v, l, h); },
      [l, h](Scalar in, Scalar) { return (in >= l && in <= h) ? Scalar(1) : Scalar(0); }, "clamp");
}

namespace detail {

enum class BinaryKind { Add, Sub, Mul };

template <typename Scalar>
Tensor<Scalar> binary(const Tensor<Scalar>& a, const Tensor<Scalar>& b, BinaryKind kind, const char* op) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  auto [rows, cols] = storage_dims(out_shape);
  const Matrix<Scalar> ea = expand(a.value(), rows, cols);
  const Matrix<Scalar> eb = expand(b.value(), rows, cols);
  Matrix<Scalar> out;
  switch (kind) {
    case BinaryKind::Add: out = ea + eb; break;
    case BinaryKind::Sub: out = ea - eb; break;
    case BinaryKind::Mul: out = ea.cwiseProduct(eb); break;
  }
  const bool record = recording<Scalar>({&a, &b});
  std::function<void(Node<Scalar>&)> back;
  if (record) {
    back = [kind](Node<Scalar>& self) {
      auto& na = *self.parents[0];
      auto& nb = *self.parents[1];
      const Eigen::Index rows = self.value.rows();
      const Eigen::Index cols = self.value.cols();
      if (na.requires_grad) {
        Matrix<Scalar> g = self.grad;
        if (kind == BinaryKind::Mul) g = g.cwiseProduct(expand(nb.value, rows, cols));
        na.accumulate(reduce_to(g, na.value.rows(), na.value.cols()));
      }
      if (nb.requires_grad) {
        Matrix<Scalar> g = self.grad;
        if (kind == BinaryKind::Sub) g = -g;
        if (kind == BinaryKind::Mul) g = g.cwiseProduct(expand(na.value, rows, cols));
        nb.accumulate(reduce_to(g, nb.value.rows(), nb.value.cols()));
      }
    };
  }
  return make_result<Scalar>(std::move(out_shape), std::move(out), {a.node(), b.node()}, std::move(back), record, op);
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return detail::binary(a, b, detail::BinaryKind::Add, "add");
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return detail::binary(a, b, detail::BinaryKind::Sub, "sub");
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return detail::binary(a, b, detail::BinaryKind::Mul, "mul");
}

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return add(a, b);
}
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return sub(a, b);
}
template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return mul(a, b);
}

// ---------------------------------------------------------------------------
// Linear algebra and reductions

namespace detail {

inline void require_rank2(const Shape& s, const char* op) {
  if (s.size() != 2) fail(ErrorKind::InvalidShape, std::string(op) + " needs a rank-2 tensor, got " + shape_string(s));
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_rank2(a.shape(), "matmul");
  detail::require_rank2(b.shape(), "matmul");
  if (a.cols() != b.rows()) {
    fail(ErrorKind::ShapeMismatch, "matmul " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Matrix<Scalar> out(a.rows(), b.cols());
  out.noalias() = a.value() * b.value();
  const bool record = detail::recording<Scalar>({&a, &b});
  std::function<void(detail::Node<Scalar>&)> back;
  if (record) {
    back = [](detail::Node<Scalar>& self) {
      auto& na = *self.parents[0];
      auto& nb = *self.parents[1];
      if (na.requires_grad) {
        Matrix<Scalar> g(na.value.rows(), na.value.cols());
        g.noalias() = self.grad * nb.value.transpose();
        na.accumulate(g);
      }
      if (nb.requires_grad) {
        Matrix<Scalar> g(nb.value.rows(), nb.value.cols());
        g.noalias() = na.value.transpose() * self.grad;
        nb.accumulate(g);
      }
    };
  }
  Shape shape{static_cast<std::size_t>(a.rows()), static_cast<std::size_t>(b.cols())};
  return detail::make_result<Scalar>(std::move(shape), std::move(out), {a.node(), b.node()}, std::move(back), record,
                                     "matmul");
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& x) {
  detail::require_rank2(x.shape(), "transpose");
  Matrix<Scalar> out = x.value().transpose();
  const bool record = detail::recording<Scalar>({&x});
  std::function<void(detail::Node<Scalar>&)> back;
  if (record) {
    back = [](detail::Node<Scalar>& self) {
      auto& in = *self.parents[0];
      if (in.requires_grad) in.accumulate(self.grad.transpose());
    };
  }
  Shape shape{x.shape()[1], x.shape()[0]};
  return detail::make_result<Scalar>(std::move(shape), std::move(out), {x.node()}, std::move(back), record,
                                     "transpose");
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  Matrix<Scalar> out(1, 1);
  out(0, 0) = x.value().sum();
  const bool record = detail::recording<Scalar>({&x});
  std::function<void(detail::Node<Scalar>&)> back;
  if (record) {
    back = [](detail::Node<Scalar>& self) {
      auto& in = *self.parents[0];
      if (in.requires_grad) {
        in.accumulate(Matrix<Scalar>::Constant(in.value.rows(), in.value.cols(), self.grad(0, 0)));
      }
    };
  }
  return detail::make_result<Scalar>(Shape{}, std::move(out), {x.node()}, std::move(back), record, "sum");
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

/// Row-wise softmax with max subtraction.
template <typename Scalar>
Tensor<Scalar> softmax_rows(const Tensor<Scalar>& x) {
  detail::require_rank2(x.shape(), "softmax_rows");
  Matrix<Scalar> out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar m = x.value().row(i).maxCoeff();
    out.row(i) = (x.value().row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  const bool record = detail::recording<Scalar>({&x});
  std::function<void(detail::Node<Scalar>&)> back;
  if (record) {
    back = [](detail::Node<Scalar>& self) {
      auto& in = *self.parents[0];
      if (!in.requires_grad) return;
      const Matrix<Scalar>& y = self.value;
      Matrix<Scalar> g = y.cwiseProduct(self.grad);
      const Vector<Scalar> dots = g.rowwise().sum();
      g -= (y.array().colwise() * dots.array()).matrix();
      in.accumulate(g);
    };
  }
  return detail::make_result<Scalar>(x.shape(), std::move(out), {x.node()}, std::move(back), record, "softmax_rows");
}

/// Selects rows by index (repeats allowed); the gradient scatter-adds back.
template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& x, const std::vector<std::size_t>& index) {
  detail::require_rank2(x.shape(), "gather_rows");
  if (index.empty()) fail(ErrorKind::InvalidShape, "gather_rows with no indices");
  Matrix<Scalar> out(static_cast<Eigen::Index>(index.size()), x.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= static_cast<std::size_t>(x.rows())) {
      fail(ErrorKind::RangeError, "row " + std::to_string(index[i]) + " out of range");
    }
    out.row(static_cast<Eigen::Index>(i)) = x.value().row(static_cast<Eigen::Index>(index[i]));
  }
  const bool record = detail::recording<Scalar>({&x});
  std::function<void(detail::Node<Scalar>&)> back;
  if (record) {
    back = [index](detail::Node<Scalar>& self) {
      auto& in = *self.parents[0];
      if (!in.requires_grad) return;
      Matrix<Scalar> g = Matrix<Scalar>::Zero(in.value.rows(), in.value.cols());
      for (std::size_t i = 0; i < index.size(); ++i) {
        g.row(static_cast<Eigen::Index>(index[i])) += self.grad.row(static_cast<Eigen::Index>(i));
      }
      in.accumulate(g);
    };
  }
  Shape shape{index.size(), static_cast<std::size_t>(x.cols())};
  return detail::make_result<Scalar>(std::move(shape), std::move(out), {x.node()}, std::move(back), record,
                                     "gather_rows");
}

/// Mean of pos_weight * y * softplus(-x) + (1 - y) * softplus(x) over all
/// entries: binary cross-entropy on logits with the positive class reweighted.
template <typename Scalar>
Tensor<Scalar> bce_with_logits(const Tensor<Scalar>& logits, const Matrix<Scalar>& target, double pos_weight) {
  if (logits.rows() != target.rows() || logits.cols() != target.cols()) {
    fail(ErrorKind::ShapeMismatch, "bce target shape differs from logits");
  }
  const Scalar w = static_cast<Scalar>(pos_weight);
  const auto softplus = [](Scalar v) { return v > Scalar(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); };
  const Matrix<Scalar>& x = logits.value();
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(x.size());
  Scalar total = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const Scalar y = target.data()[i];
    const Scalar v = x.data()[i];
    total += w * y * softplus(-v) + (Scalar(1) - y) * softplus(v);
  }
  Matrix<Scalar> out(1, 1);
  out(0, 0) = total * inv_n;
  const bool record = detail::recording<Scalar>({&logits});
  std::function<void(detail::Node<Scalar>&)> back;
  if (record) {
    back = [target, w, inv_n](detail::Node<Scalar>& self) {
      auto& in = *self.parents[0];
      if (!in.requires_grad) return;
      Matrix<Scalar> g(in.value.rows(), in.value.cols());
      for (Eigen::Index i = 0; i < g.size(); ++i) {
        const Scalar v = in.value.data()[i];
        const Scalar y = target.data()[i];
        const Scalar s = v >= Scalar(0) ? Scalar(1) / (Scalar(1) + std::exp(-v)) : std::exp(v) / (Scalar(1) + std::exp(v));
        // d/dv [w y softplus(-v) + (1-y) softplus(v)] = -w y (1-s) + (1-y) s
        g.data()[i] = (-w * y * (Scalar(1) - s) + (Scalar(1) - y) * s) * inv_n * self.grad(0, 0);
      }
      in.accumulate(g);
    };
  }
  return detail::make_result<Scalar>(Shape{}, std::move(out), {logits.node()}, std::move(back), record,
                                     "bce_with_logits");
}

// ---------------------------------------------------------------------------
// Backward pass

/// Accumulates d(loss)/d(leaf) into every reachable leaf that requires a
/// gradient, then frees the interior of the graph.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  if (loss.numel() != 1) fail(ErrorKind::InvalidShape, "backward needs a scalar loss, got " + shape_string(loss.shape()));
  using NodePtr = std::shared_ptr<detail::Node<Scalar>>;
  std::vector<NodePtr> order;
  std::unordered_set<const detail::Node<Scalar>*> visited;
  std::vector<std::pair<NodePtr, std::size_t>> stack{{loss.node(), 0}};
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodePtr parent = node->parents[next++];
      if (parent->requires_grad && visited.insert(parent.get()).second) stack.emplace_back(std::move(parent), 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  if (!loss.requires_grad()) return;
  loss.node()->accumulate(Matrix<Scalar>::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node<Scalar>& node = **it;
    if (node.backward && node.grad.size() != 0) node.backward(node);
  }
  for (auto& node : order) {
    if (!node->is_leaf()) {
      node->parents.clear();
      node->backward = nullptr;
      node->grad.resize(0, 0);
    }
  }
}

// ---------------------------------------------------------------------------
// Adam

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename Scalar>
class AdamState {
 public:
  AdamState(const std::vector<Tensor<Scalar>>& params, AdamOptions options = {}) : options_(options) {
    if (!(options.learning_rate > 0.0)) fail(ErrorKind::ParamError, "learning rate must be positive");
    if (!(options.beta1 > 0.0 && options.beta1 < 1.0 && options.beta2 > 0.0 && options.beta2 < 1.0)) {
      fail(ErrorKind::ParamError, "Adam betas must lie in (0,1)");
    }
    for (const auto& p : params) {
      first_.push_back(Matrix<Scalar>::Zero(p.rows(), p.cols()));
      second_.push_back(Matrix<Scalar>::Zero(p.rows(), p.cols()));
    }
  }

  std::uint64_t step_count() const { return step_; }
  const AdamOptions& options() const { return options_; }
  const std::vector<Matrix<Scalar>>& first_moments() const { return first_; }
  const std::vector<Matrix<Scalar>>& second_moments() const { return second_; }

  /// Bias-corrected Adam update of every parameter, then clears the grads.
  void step(std::vector<Tensor<Scalar>>& params) {
    if (params.size() != first_.size()) fail(ErrorKind::ShapeMismatch, "parameter list changed size");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!params[i].has_grad()) fail(ErrorKind::MissingGradient, "parameter " + std::to_string(i) + " has no gradient");
      if (params[i].rows() != first_[i].rows() || params[i].cols() != first_[i].cols()) {
        fail(ErrorKind::ShapeMismatch, "parameter " + std::to_string(i) + " changed shape");
      }
    }
    ++step_;
    const double t = static_cast<double>(step_);
    const Scalar b1 = static_cast<Scalar>(options_.beta1);
    const Scalar b2 = static_cast<Scalar>(options_.beta2);
    const Scalar c1 = static_cast<Scalar>(1.0 - std::pow(options_.beta1, t));
    const Scalar c2 = static_cast<Scalar>(1.0 - std::pow(options_.beta2, t));
    const Scalar lr = static_cast<Scalar>(options_.learning_rate);
    const Scalar eps = static_cast<Scalar>(options_.epsilon);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Matrix<Scalar>& g = params[i].grad();
      first_[i] = b1 * first_[i] + (Scalar(1) - b1) * g;
      second_[i] = b2 * second_[i] + (Scalar(1) - b2) * g.cwiseProduct(g);
      auto& value = params[i].mutable_value();
      value.array() -= lr * (first_[i].array() / c1) / ((second_[i].array() / c2).sqrt() + eps);
      if (!value.allFinite()) fail(ErrorKind::NonFinite, "Adam produced a non-finite parameter");
      params[i].zero_grad();
    }
  }

 private:
  AdamOptions options_;
  std::vector<Matrix<Scalar>> first_;
  std::vector<Matrix<Scalar>> second_;
  std::uint64_t step_ = 0;
};

template <typename Scalar>
void adam_step(std::vector<Tensor<Scalar>>& params, AdamState<Scalar>& state) {
  state.step(params);
}

/// Glorot-uniform weight matrix drawn from a seeded stream.
template <typename Scalar>
Tensor<Scalar> glorot(std::size_t fan_in, std::size_t fan_out, std::uint64_t seed) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return Tensor<Scalar>::create({fan_in, fan_out}, Uniform{-limit, limit, seed}, true);
}

}  // namespace impress
