#pragma once

// Reverse-mode differentiation over whole matrices. Nodes are appended in
// evaluation order, so node ids are already a topological order and backward
// simply walks them from the output down to zero.

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "caformer/numerics/matrix.hpp"

namespace caformer {

enum class CostCategory { kEmbedding, kAttention, kMlp, kCme, kHead, kOther };

/// Multiply-accumulate tally keyed by (layer, category). Layer 0 is used for
/// everything outside the backbone blocks.
class MacCounter {
 public:
  void add(std::uint64_t macs) { buckets_[{layer_, category_}] += macs; }

  std::uint64_t get(int layer, CostCategory category) const {
    const auto it = buckets_.find({layer, category});
    return it == buckets_.end() ? 0 : it->second;
  }

  std::uint64_t total() const {
    std::uint64_t sum = 0;
    for (const auto& [key, macs] : buckets_) sum += macs;
    return sum;
  }

  std::uint64_t total(CostCategory category) const {
    std::uint64_t sum = 0;
    for (const auto& [key, macs] : buckets_)
      if (key.second == category) sum += macs;
    return sum;
  }

  int layer() const { return layer_; }
  CostCategory category() const { return category_; }
  void set_scope(int layer, CostCategory category) {
    layer_ = layer;
    category_ = category;
  }

 private:
  std::map<std::pair<int, CostCategory>, std::uint64_t> buckets_;
  int layer_ = 0;
  CostCategory category_ = CostCategory::kOther;
};

template <typename Scalar>
class BasicTape;

/// Handle to a tape node. Cheap to copy; valid while its tape lives.
template <typename Scalar>
class BasicVar {
 public:
  BasicVar() = default;
  BasicVar(BasicTape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix<Scalar>& value() const { return tape_->value(id_); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  std::size_t id() const { return id_; }
  BasicTape<Scalar>& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  BasicTape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Scalar>
class BasicTape {
 public:
  using Mat = Matrix<Scalar>;
  using Var = BasicVar<Scalar>;
  using BackwardFn = std::function<void(BasicTape&, const Mat& grad)>;

  BasicTape() = default;
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;
  BasicTape(BasicTape&&) = default;
  BasicTape& operator=(BasicTape&&) = default;

  /// A differentiable input.
  Var leaf(Mat value, std::string name = {}) {
    require_finite(value, "leaf");
    nodes_.push_back(Node{std::move(value), true, true, {}, std::move(name)});
    return Var(this, nodes_.size() - 1);
  }

  Var constant(Mat value) {
    require_finite(value, "constant");
    nodes_.push_back(Node{std::move(value), false, false, {}, {}});
    return Var(this, nodes_.size() - 1);
  }

  /// Appends an interior node. `backward` receives d(loss)/d(node) and must
  /// route contributions to its inputs through accumulate().
  Var record(Mat value, std::initializer_list<Var> inputs, BackwardFn backward,
             const char* op) {
    require_finite(value, op);
    bool needs_grad = false;
    for (const Var& v : inputs) {
      if (&v.tape() != this) throw UsageError(std::string(op) + ": operands on different tapes");
      needs_grad = needs_grad || nodes_[v.id()].requires_grad;
    }
    return push_interior(std::move(value), needs_grad, std::move(backward));
  }

  Var record(Mat value, const std::vector<Var>& inputs, BackwardFn backward, const char* op) {
    require_finite(value, op);
    bool needs_grad = false;
    for (const Var& v : inputs) {
      if (&v.tape() != this) throw UsageError(std::string(op) + ": operands on different tapes");
      needs_grad = needs_grad || nodes_[v.id()].requires_grad;
    }
    return push_interior(std::move(value), needs_grad, std::move(backward));
  }

  const Mat& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  void accumulate(const Var& v, const Mat& contribution) {
    Node& node = nodes_[v.id()];
    if (!node.requires_grad) return;
    if (grads_.size() < nodes_.size()) grads_.resize(nodes_.size());
    Mat& g = grads_[v.id()];
    if (g.size() == 0) {
      g = contribution;
    } else {
      g += contribution;
    }
  }

  /// Runs reverse accumulation from a 1x1 node. Previous gradients are reset.
  void backward(const Var& output) {
    if (output.rows() != 1 || output.cols() != 1) {
      throw UsageError("backward: output must be scalar, got " + shape_string(output.value()));
    }
    grads_.assign(nodes_.size(), Mat());
    visit_order_.clear();
    grads_[output.id()] = Mat::Ones(1, 1);
    for (std::size_t id = output.id() + 1; id-- > 0;) {
      Node& node = nodes_[id];
      if (!node.requires_grad || grads_[id].size() == 0) continue;
      visit_order_.push_back(id);
      if (node.backward) {
        const Mat g = grads_[id];
        node.backward(*this, g);
      }
    }
  }

  /// d(output)/d(v) from the last backward(); zeros when v did not contribute.
  Mat grad(const Var& v) const {
    if (v.id() < grads_.size() && grads_[v.id()].size() != 0) return grads_[v.id()];
    return Mat::Zero(v.rows(), v.cols());
  }

  /// Node ids in the order the last backward() processed them.
  const std::vector<std::size_t>& visit_order() const { return visit_order_; }

  MacCounter& macs() { return macs_; }
  const MacCounter& macs() const { return macs_; }

 private:
  struct Node {
    Mat value;
    bool requires_grad;
    bool is_leaf;
    BackwardFn backward;
    std::string name;
  };

  Var push_interior(Mat value, bool needs_grad, BackwardFn backward) {
    nodes_.push_back(
        Node{std::move(value), needs_grad, false, needs_grad ? std::move(backward) : BackwardFn{}, {}});
    return Var(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;
  std::vector<Mat> grads_;
  std::vector<std::size_t> visit_order_;
  MacCounter macs_;
};

using Tape = BasicTape<double>;
using Var = BasicVar<double>;

/// Attributes matmul MACs recorded while alive to (layer, category).
template <typename Scalar>
class CostScope {
 public:
  CostScope(BasicTape<Scalar>& tape, int layer, CostCategory category)
      : counter_(tape.macs()), prev_layer_(counter_.layer()), prev_category_(counter_.category()) {
    counter_.set_scope(layer, category);
  }
  ~CostScope() { counter_.set_scope(prev_layer_, prev_category_); }
  CostScope(const CostScope&) = delete;
  CostScope& operator=(const CostScope&) = delete;

 private:
  MacCounter& counter_;
  int prev_layer_;
  CostCategory prev_category_;
};

// ---------------------------------------------------------------------------
// Differentiable operations.

template <typename S>
BasicVar<S> matmul(const BasicVar<S>& a, const BasicVar<S>& b) {
  Matrix<S> out = matmul(a.value(), b.value());
  a.tape().macs().add(static_cast<std::uint64_t>(a.rows() * a.cols() * b.cols()));
  return a.tape().record(
      std::move(out), {a, b},
      [a, b](BasicTape<S>& t, const Matrix<S>& g) {
        if (t.requires_grad(a.id())) t.accumulate(a, (g * b.value().transpose()).eval());
        if (t.requires_grad(b.id())) t.accumulate(b, (a.value().transpose() * g).eval());
      },
      "matmul");
}

/// a · bᵀ without materialising the transpose.
template <typename S>
BasicVar<S> matmul_nt(const BasicVar<S>& a, const BasicVar<S>& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: cannot multiply " + shape_string(a.value()) + " by transpose of " +
                         shape_string(b.value()));
  }
  Matrix<S> out = a.value() * b.value().transpose();
  a.tape().macs().add(static_cast<std::uint64_t>(a.rows() * a.cols() * b.rows()));
  return a.tape().record(
      std::move(out), {a, b},
      [a, b](BasicTape<S>& t, const Matrix<S>& g) {
        if (t.requires_grad(a.id())) t.accumulate(a, (g * b.value()).eval());
        if (t.requires_grad(b.id())) t.accumulate(b, (g.transpose() * a.value()).eval());
      },
      "matmul_nt");
}

template <typename S>
BasicVar<S> add(const BasicVar<S>& a, const BasicVar<S>& b) {
  require_same_shape(a.value(), b.value(), "add");
  return a.tape().record(
      (a.value() + b.value()).eval(), {a, b},
      [a, b](BasicTape<S>& t, const Matrix<S>& g) {
        t.accumulate(a, g);
        t.accumulate(b, g);
      },
      "add");
}

template <typename S>
BasicVar<S> sub(const BasicVar<S>& a, const BasicVar<S>& b) {
  require_same_shape(a.value(), b.value(), "sub");
  return a.tape().record(
      (a.value() - b.value()).eval(), {a, b},
      [a, b](BasicTape<S>& t, const Matrix<S>& g) {
        t.accumulate(a, g);
        t.accumulate(b, (-g).eval());
      },
      "sub");
}

template <typename S>
BasicVar<S> scale(const BasicVar<S>& a, S factor) {
  return a.tape().record(
      (a.value() * factor).eval(), {a},
      [a, factor](BasicTape<S>& t, const Matrix<S>& g) { t.accumulate(a, (g * factor).eval()); },
      "scale");
}

/// Adds a 1×cols row vector to every row.
template <typename S>
BasicVar<S> add_bias(const BasicVar<S>& a, const BasicVar<S>& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols()) {
    throw DimensionError("add_bias: bias " + shape_string(bias.value()) + " for " +
                         shape_string(a.value()));
  }
  Matrix<S> out = a.value().rowwise() + bias.value().row(0);
  return a.tape().record(
      std::move(out), {a, bias},
      [a, bias](BasicTape<S>& t, const Matrix<S>& g) {
        t.accumulate(a, g);
        t.accumulate(bias, Matrix<S>(g.colwise().sum()));
      },
      "add_bias");
}

template <typename S>
BasicVar<S> softmax_rows(const BasicVar<S>& a) {
  Matrix<S> y = softmax_rows(a.value());
  return a.tape().record(
      y, {a},
      [a, y](BasicTape<S>& t, const Matrix<S>& g) {
        const auto dot = (g.array() * y.array()).rowwise().sum().eval();
        Matrix<S> ga = (y.array() * (g.array().colwise() - dot)).matrix();
        t.accumulate(a, ga);
      },
      "softmax_rows");
}

template <typename S>
BasicVar<S> layernorm(const BasicVar<S>& a, const BasicVar<S>& gain, const BasicVar<S>& bias,
                      S eps = S(kLayerNormEps)) {
  Matrix<S> xhat, istd;
  Matrix<S> out = layernorm(a.value(), gain.value(), bias.value(), eps, &xhat, &istd);
  return a.tape().record(
      std::move(out), {a, gain, bias},
      [a, gain, bias, xhat, istd](BasicTape<S>& t, const Matrix<S>& g) {
        if (t.requires_grad(gain.id()))
          t.accumulate(gain, Matrix<S>((g.array() * xhat.array()).colwise().sum()));
        if (t.requires_grad(bias.id())) t.accumulate(bias, Matrix<S>(g.colwise().sum()));
        if (!t.requires_grad(a.id())) return;
        const Index n = g.cols();
        Matrix<S> gx = g.array().rowwise() * gain.value().row(0).array();
        Matrix<S> ga(g.rows(), n);
        for (Index r = 0; r < g.rows(); ++r) {
          const S mean_g = gx.row(r).sum() / S(n);
          const S mean_gx = gx.row(r).dot(xhat.row(r)) / S(n);
          ga.row(r) = istd(r, 0) *
                      (gx.row(r).array() - mean_g - xhat.row(r).array() * mean_gx).matrix();
        }
        t.accumulate(a, ga);
      },
      "layernorm");
}

template <typename S>
BasicVar<S> gelu(const BasicVar<S>& a) {
  Matrix<S> out = a.value().unaryExpr([](S x) { return gelu(x); });
  return a.tape().record(
      std::move(out), {a},
      [a](BasicTape<S>& t, const Matrix<S>& g) {
        Matrix<S> d = a.value().unaryExpr([](S x) { return gelu_derivative(x); });
        t.accumulate(a, (g.array() * d.array()).matrix().eval());
      },
      "gelu");
}

template <typename S>
BasicVar<S> sigmoid(const BasicVar<S>& a) {
  Matrix<S> y = a.value().unaryExpr([](S x) { return sigmoid(x); });
  return a.tape().record(
      y, {a},
      [a, y](BasicTape<S>& t, const Matrix<S>& g) {
        t.accumulate(a, (g.array() * y.array() * (S(1) - y.array())).matrix().eval());
      },
      "sigmoid");
}

/// Sub-block copy; the gradient is scattered back into a zero matrix.
template <typename S>
BasicVar<S> block(const BasicVar<S>& a, Index row, Index col, Index rows, Index cols) {
  if (row < 0 || col < 0 || rows < 0 || cols < 0 || row + rows > a.rows() ||
      col + cols > a.cols()) {
    throw DimensionError("block: window out of range for " + shape_string(a.value()));
  }
  Matrix<S> out = a.value().block(row, col, rows, cols);
  return a.tape().record(
      std::move(out), {a},
      [a, row, col, rows, cols](BasicTape<S>& t, const Matrix<S>& g) {
        Matrix<S> ga = Matrix<S>::Zero(a.rows(), a.cols());
        ga.block(row, col, rows, cols) = g;
        t.accumulate(a, ga);
      },
      "block");
}

template <typename S>
BasicVar<S> vstack(const std::vector<BasicVar<S>>& parts) {
  if (parts.empty()) throw UsageError("vstack: no operands");
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != parts.front().cols())
      throw DimensionError("vstack: column mismatch " + shape_string(parts.front().value()) +
                           " vs " + shape_string(p.value()));
    rows += p.rows();
  }
  Matrix<S> out(rows, parts.front().cols());
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return parts.front().tape().record(
      std::move(out), parts,
      [parts](BasicTape<S>& t, const Matrix<S>& g) {
        Index offset = 0;
        for (const auto& p : parts) {
          t.accumulate(p, Matrix<S>(g.middleRows(offset, p.rows())));
          offset += p.rows();
        }
      },
      "vstack");
}

template <typename S>
BasicVar<S> hstack(const std::vector<BasicVar<S>>& parts) {
  if (parts.empty()) throw UsageError("hstack: no operands");
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != parts.front().rows())
      throw DimensionError("hstack: row mismatch " + shape_string(parts.front().value()) +
                           " vs " + shape_string(p.value()));
    cols += p.cols();
  }
  Matrix<S> out(parts.front().rows(), cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return parts.front().tape().record(
      std::move(out), parts,
      [parts](BasicTape<S>& t, const Matrix<S>& g) {
        Index offset = 0;
        for (const auto& p : parts) {
          t.accumulate(p, Matrix<S>(g.middleCols(offset, p.cols())));
          offset += p.cols();
        }
      },
      "hstack");
}

/// Selects rows by index, in the given order.
template <typename S>
BasicVar<S> gather_rows(const BasicVar<S>& a, const std::vector<Index>& rows) {
  Matrix<S> out(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows())
      throw DimensionError("gather_rows: row " + std::to_string(rows[i]) + " outside " +
                           shape_string(a.value()));
    out.row(static_cast<Index>(i)) = a.value().row(rows[i]);
  }
  return a.tape().record(
      std::move(out), {a},
      [a, rows](BasicTape<S>& t, const Matrix<S>& g) {
        Matrix<S> ga = Matrix<S>::Zero(a.rows(), a.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) ga.row(rows[i]) += g.row(static_cast<Index>(i));
        t.accumulate(a, ga);
      },
      "gather_rows");
}

/// Places row i of `a` at row rows[i] of a zero matrix with `total` rows.
template <typename S>
BasicVar<S> scatter_rows(const BasicVar<S>& a, const std::vector<Index>& rows, Index total) {
  if (static_cast<Index>(rows.size()) != a.rows())
    throw DimensionError("scatter_rows: " + std::to_string(rows.size()) + " targets for " +
                         shape_string(a.value()));
  Matrix<S> out = Matrix<S>::Zero(total, a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= total)
      throw DimensionError("scatter_rows: target row " + std::to_string(rows[i]) + " outside " +
                           std::to_string(total));
    out.row(rows[i]) = a.value().row(static_cast<Index>(i));
  }
  return a.tape().record(
      std::move(out), {a},
      [a, rows](BasicTape<S>& t, const Matrix<S>& g) {
        Matrix<S> ga(a.rows(), a.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) ga.row(static_cast<Index>(i)) = g.row(rows[i]);
        t.accumulate(a, ga);
      },
      "scatter_rows");
}

template <typename S>
BasicVar<S> sum(const BasicVar<S>& a) {
  Matrix<S> out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape().record(
      std::move(out), {a},
      [a](BasicTape<S>& t, const Matrix<S>& g) {
        t.accumulate(a, Matrix<S>::Constant(a.rows(), a.cols(), g(0, 0)));
      },
      "sum");
}

template <typename S>
BasicVar<S> mean(const BasicVar<S>& a) {
  if (a.value().size() == 0) throw UsageError("mean: empty input");
  const S n = S(a.value().size());
  Matrix<S> out(1, 1);
  out(0, 0) = a.value().sum() / n;
  return a.tape().record(
      std::move(out), {a},
      [a, n](BasicTape<S>& t, const Matrix<S>& g) {
        t.accumulate(a, Matrix<S>::Constant(a.rows(), a.cols(), g(0, 0) / n));
      },
      "mean");
}

/// Σ a ⊙ w for a constant weight matrix w.
template <typename S>
BasicVar<S> weighted_sum(const BasicVar<S>& a, const Matrix<S>& weights) {
  require_same_shape(a.value(), weights, "weighted_sum");
  Matrix<S> out(1, 1);
  out(0, 0) = (a.value().array() * weights.array()).sum();
  return a.tape().record(
      std::move(out), {a},
      [a, weights](BasicTape<S>& t, const Matrix<S>& g) { t.accumulate(a, (weights * g(0, 0)).eval()); },
      "weighted_sum");
}

}  // namespace caformer
