#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace oscar {

/// Rank-2 shape. Vectors are 1 x n rows, scalars are 1 x 1.
struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, const Shape& a, const Shape& b);
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

/// Dense row-major matrix with an optional reverse-mode tape.
///
/// Tensors share their node: copying a Tensor aliases the same storage, which
/// is how parameters are held both by a store and by the graphs built on them.
/// A tape is recorded only when at least one input requires a gradient, so
/// inference on frozen parameters builds no graph.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
  static Tensor filled(std::size_t rows, std::size_t cols, double value);
  static Tensor from(std::size_t rows, std::size_t cols, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor row(std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rows() const { return node_->shape.rows; }
  std::size_t cols() const { return node_->shape.cols; }
  std::size_t size() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }
  double at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }
  double item() const;
  std::vector<double> row_values(std::size_t r) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad();
  /// Allocates (if needed) and zero-fills the gradient store.
  void zero_grad();
  void clear_grad() { node_->grad.clear(); }

  /// Runs reverse-mode accumulation from this 1 x 1 tensor.
  void backward() const;

  /// Copy of the values with no tape history.
  Tensor detach() const;
  const char* op_name() const { return node_->op; }

  // Internal construction used by the op set.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// While alive, ops on this thread record no tape (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

// ---- op set -----------------------------------------------------------------
// Every op checks shapes (ShapeError names both shapes) and rejects non-finite
// outputs with NumericError.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// Elementwise sum. `b` may also be a 1 x n row broadcast over the rows of `a`,
/// or a 1 x 1 scalar.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// Elementwise (Hadamard) product of equal shapes.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// Multiplies row i of `a` (m x n) by `s(i, 0)` where `s` is m x 1.
Tensor row_scale(const Tensor& a, const Tensor& s);

Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
/// Row gather; used both for embedding lookup and for picking marker positions.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices);
inline Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> ids) {
  return gather_rows(table, ids);
}

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);

/// axis 1 normalizes each row, axis 0 each column.
Tensor softmax(const Tensor& a, int axis = 1);
Tensor log_softmax(const Tensor& a);  // along rows
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor sum(const Tensor& a);
Tensor mean_rows(const Tensor& a);  // m x n -> 1 x n

/// Mean negative log-likelihood over the rows whose target is >= 0. Rows with a
/// negative target are masked out. Throws if no row is labelled.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);
inline Tensor cross_entropy(const Tensor& logits, int target) {
  const int t[1] = {target};
  return cross_entropy(logits, std::span<const int>(t, 1));
}
/// Summed negative log-likelihood over labelled rows (the sequence-loss form).
Tensor cross_entropy_sum(const Tensor& logits, std::span<const int> targets);

struct AttentionMask {
  std::vector<bool> key_valid;  // empty = all keys valid
  bool causal = false;
};

/// Scaled dot-product attention split over `n_heads` column blocks. Q is
/// tq x d, K and V are tk x d. Projections are the caller's concern.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::size_t n_heads, const AttentionMask& mask = {});

}  // namespace oscar
