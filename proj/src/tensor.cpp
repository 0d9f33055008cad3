#include "oscar/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

namespace oscar {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;

MapC view(const Node& n) { return MapC(n.data.data(), n.shape.rows, n.shape.cols); }
MapC grad_view(const Node& n) { return MapC(n.grad.data(), n.shape.rows, n.shape.cols); }
Map grad_map(Node& n) {
  n.ensure_grad();
  return Map(n.grad.data(), n.shape.rows, n.shape.cols);
}

// Builds the output node; parents and a backward closure are only kept when
// some parent is on the tape.
NodePtr make_node(const char* op, Shape shape, std::vector<double> data,
                  std::vector<NodePtr> parents) {
  for (double v : data) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite output in ") + op);
  }
  auto out = std::make_shared<Node>();
  out->shape = shape;
  out->data = std::move(data);
  out->op = op;
  out->requires_grad = grad_enabled() &&
      std::any_of(parents.begin(), parents.end(), [](const NodePtr& p) { return p->requires_grad; });
  if (out->requires_grad) out->parents = std::move(parents);
  return out;
}

Tensor finish(NodePtr out, std::function<void(Node&)> backward) {
  if (out->requires_grad) out->backward = std::move(backward);
  return Tensor(std::move(out));
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError(op, a.shape(), b.shape());
}

}  // namespace

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::string Shape::str() const {
  return "[" + std::to_string(rows) + ", " + std::to_string(cols) + "]";
}

ShapeError::ShapeError(const std::string& op, const Shape& a, const Shape& b)
    : std::invalid_argument(op + ": incompatible shapes " + a.str() + " and " + b.str()) {}

// ---- Tensor -------------------------------------------------------------------

Tensor Tensor::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
  return from(rows, cols, std::vector<double>(rows * cols, 0.0), requires_grad);
}

Tensor Tensor::filled(std::size_t rows, std::size_t cols, double value) {
  return from(rows, cols, std::vector<double>(rows * cols, value));
}

Tensor Tensor::from(std::size_t rows, std::size_t cols, std::vector<double> values,
                    bool requires_grad) {
  if (values.size() != rows * cols) {
    throw ShapeError("Tensor::from: " + std::to_string(values.size()) + " values for shape " +
                     Shape{rows, cols}.str());
  }
  auto n = std::make_shared<Node>();
  n->shape = {rows, cols};
  n->data = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::row(std::vector<double> values, bool requires_grad) {
  const auto n = values.size();
  return from(1, n, std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from(1, 1, {value}, requires_grad);
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item", shape(), Shape{1, 1});
  return node_->data[0];
}

std::vector<double> Tensor::row_values(std::size_t r) const {
  auto begin = node_->data.begin() + static_cast<std::ptrdiff_t>(r * cols());
  return {begin, begin + static_cast<std::ptrdiff_t>(cols())};
}

std::span<double> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  node_->grad.assign(node_->data.size(), 0.0);
}

Tensor Tensor::detach() const { return from(rows(), cols(), node_->data); }

void Tensor::backward() const {
  if (size() != 1) throw ShapeError("backward from non-scalar", shape(), Shape{1, 1});
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

// ---- linear algebra -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul", a.shape(), b.shape());
  std::vector<double> out(a.rows() * b.cols());
  Map(out.data(), a.rows(), b.cols()).noalias() = view(*a.node()) * view(*b.node());
  auto pa = a.node(), pb = b.node();
  return finish(make_node("matmul", {a.rows(), b.cols()}, std::move(out), {pa, pb}),
                [pa, pb](Node& self) {
                  auto g = grad_view(self);
                  if (pa->requires_grad) grad_map(*pa).noalias() += g * view(*pb).transpose();
                  if (pb->requires_grad) grad_map(*pb).noalias() += view(*pa).transpose() * g;
                });
}

Tensor transpose(const Tensor& a) {
  std::vector<double> out(a.size());
  Map(out.data(), a.cols(), a.rows()) = view(*a.node()).transpose();
  auto pa = a.node();
  return finish(make_node("transpose", {a.cols(), a.rows()}, std::move(out), {pa}),
                [pa](Node& self) { grad_map(*pa) += grad_view(self).transpose(); });
}

// ---- elementwise -------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  const bool same = a.shape() == b.shape();
  const bool row_bcast = !same && b.rows() == 1 && b.cols() == a.cols();
  const bool scalar_bcast = !same && !row_bcast && b.size() == 1;
  if (!same && !row_bcast && !scalar_bcast) throw ShapeError("add", a.shape(), b.shape());

  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  const std::size_t n = a.cols();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] += same ? bd[i] : row_bcast ? bd[i % n] : bd[0];
  }
  auto pa = a.node(), pb = b.node();
  return finish(make_node("add", a.shape(), std::move(out), {pa, pb}),
                [pa, pb, same, row_bcast, n](Node& self) {
                  if (pa->requires_grad) grad_map(*pa) += grad_view(self);
                  if (!pb->requires_grad) return;
                  pb->ensure_grad();
                  for (std::size_t i = 0; i < self.grad.size(); ++i) {
                    pb->grad[same ? i : row_bcast ? i % n : 0] += self.grad[i];
                  }
                });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  return add(a, scale(b, -1.0));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto pa = a.node(), pb = b.node();
  return finish(make_node("mul", a.shape(), std::move(out), {pa, pb}), [pa, pb](Node& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * pb->data[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i] * pa->data[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= factor;
  auto pa = a.node();
  return finish(make_node("scale", a.shape(), std::move(out), {pa}), [pa, factor](Node& self) {
    grad_map(*pa) += factor * grad_view(self);
  });
}

Tensor row_scale(const Tensor& a, const Tensor& s) {
  if (s.rows() != a.rows() || s.cols() != 1) throw ShapeError("row_scale", a.shape(), s.shape());
  const std::size_t n = a.cols();
  std::vector<double> out(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s.data()[i / n];
  auto pa = a.node(), ps = s.node();
  return finish(make_node("row_scale", a.shape(), std::move(out), {pa, ps}),
                [pa, ps, n](Node& self) {
                  if (pa->requires_grad) {
                    pa->ensure_grad();
                    for (std::size_t i = 0; i < self.grad.size(); ++i) {
                      pa->grad[i] += self.grad[i] * ps->data[i / n];
                    }
                  }
                  if (ps->requires_grad) {
                    ps->ensure_grad();
                    for (std::size_t i = 0; i < self.grad.size(); ++i) {
                      ps->grad[i / n] += self.grad[i] * pa->data[i];
                    }
                  }
                });
}

// ---- structural -----------------------------------------------------------------

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows", parts[0].shape(), p.shape());
    rows += p.rows();
    parents.push_back(p.node());
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return finish(make_node("concat_rows", {rows, cols}, std::move(out), parents),
                [parents](Node& self) {
                  std::size_t offset = 0;
                  for (const auto& p : parents) {
                    if (p->requires_grad) {
                      p->ensure_grad();
                      for (std::size_t i = 0; i < p->data.size(); ++i) {
                        p->grad[i] += self.grad[offset + i];
                      }
                    }
                    offset += p->data.size();
                  }
                });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols", parts[0].shape(), p.shape());
    cols += p.cols();
    parents.push_back(p.node());
  }
  std::vector<double> out(rows * cols);
  std::size_t c0 = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(p.data().begin() + static_cast<std::ptrdiff_t>(r * p.cols()), p.cols(),
                  out.begin() + static_cast<std::ptrdiff_t>(r * cols + c0));
    }
    c0 += p.cols();
  }
  return finish(make_node("concat_cols", {rows, cols}, std::move(out), parents),
                [parents, rows, cols](Node& self) {
                  std::size_t c0 = 0;
                  for (const auto& p : parents) {
                    const std::size_t pc = p->shape.cols;
                    if (p->requires_grad) {
                      p->ensure_grad();
                      for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t c = 0; c < pc; ++c) {
                          p->grad[r * pc + c] += self.grad[r * cols + c0 + c];
                        }
                      }
                    }
                    c0 += pc;
                  }
                });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.rows()) {
    throw ShapeError("slice_rows", a.shape(), Shape{begin + count, a.cols()});
  }
  const std::size_t n = a.cols();
  std::vector<double> out(a.data().begin() + static_cast<std::ptrdiff_t>(begin * n),
                          a.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * n));
  auto pa = a.node();
  return finish(make_node("slice_rows", {count, n}, std::move(out), {pa}),
                [pa, begin, n](Node& self) {
                  pa->ensure_grad();
                  for (std::size_t i = 0; i < self.grad.size(); ++i) {
                    pa->grad[begin * n + i] += self.grad[i];
                  }
                });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.cols()) {
    throw ShapeError("slice_cols", a.shape(), Shape{a.rows(), begin + count});
  }
  const std::size_t rows = a.rows(), n = a.cols();
  std::vector<double> out(rows * count);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < count; ++c) out[r * count + c] = a.data()[r * n + begin + c];
  }
  auto pa = a.node();
  return finish(make_node("slice_cols", {rows, count}, std::move(out), {pa}),
                [pa, begin, count, rows, n](Node& self) {
                  pa->ensure_grad();
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < count; ++c) {
                      pa->grad[r * n + begin + c] += self.grad[r * count + c];
                    }
                  }
                });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices) {
  const std::size_t n = table.cols();
  std::vector<double> out;
  out.reserve(indices.size() * n);
  for (std::size_t idx : indices) {
    if (idx >= table.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(idx) + " out of range for " +
                       table.shape().str());
    }
    auto row = table.data().subspan(idx * n, n);
    out.insert(out.end(), row.begin(), row.end());
  }
  auto pt = table.node();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return finish(make_node("gather_rows", {idx.size(), n}, std::move(out), {pt}),
                [pt, idx, n](Node& self) {
                  pt->ensure_grad();
                  for (std::size_t r = 0; r < idx.size(); ++r) {
                    for (std::size_t c = 0; c < n; ++c) pt->grad[idx[r] * n + c] += self.grad[r * n + c];
                  }
                });
}

// ---- activations -----------------------------------------------------------------

namespace {

// Elementwise op whose derivative is expressed through input x and output y.
template <typename F, typename D>
Tensor unary(const char* name, const Tensor& a, F f, D dfdx) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a.data()[i]);
  auto pa = a.node();
  return finish(make_node(name, a.shape(), std::move(out), {pa}), [pa, dfdx](Node& self) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      pa->grad[i] += self.grad[i] * dfdx(pa->data[i], self.data[i]);
    }
  });
}

}  // namespace

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

// ---- normalizations ---------------------------------------------------------------

Tensor softmax(const Tensor& a, int axis) {
  if (axis != 0 && axis != 1) throw ShapeError("softmax: axis must be 0 or 1");
  if (axis == 0) return transpose(softmax(transpose(a), 1));
  const std::size_t rows = a.rows(), n = a.cols();
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * n;
    double* y = out.data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0;
    for (std::size_t c = 0; c < n; ++c) z += (y[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < n; ++c) y[c] /= z;
  }
  auto pa = a.node();
  return finish(make_node("softmax", a.shape(), std::move(out), {pa}), [pa, rows, n](Node& self) {
    pa->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.data.data() + r * n;
      const double* g = self.grad.data() + r * n;
      double dot = 0;
      for (std::size_t c = 0; c < n; ++c) dot += g[c] * y[c];
      for (std::size_t c = 0; c < n; ++c) pa->grad[r * n + c] += y[c] * (g[c] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& a) {
  const std::size_t rows = a.rows(), n = a.cols();
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0;
    for (std::size_t c = 0; c < n; ++c) z += std::exp(x[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = x[c] - lse;
  }
  auto pa = a.node();
  return finish(make_node("log_softmax", a.shape(), std::move(out), {pa}),
                [pa, rows, n](Node& self) {
                  pa->ensure_grad();
                  for (std::size_t r = 0; r < rows; ++r) {
                    double gsum = 0;
                    for (std::size_t c = 0; c < n; ++c) gsum += self.grad[r * n + c];
                    for (std::size_t c = 0; c < n; ++c) {
                      pa->grad[r * n + c] +=
                          self.grad[r * n + c] - std::exp(self.data[r * n + c]) * gsum;
                    }
                  }
                });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t rows = x.rows(), n = x.cols();
  if (gain.shape() != Shape{1, n}) throw ShapeError("layer_norm gain", x.shape(), gain.shape());
  if (bias.shape() != Shape{1, n}) throw ShapeError("layer_norm bias", x.shape(), bias.shape());
  std::vector<double> xhat(x.size()), inv_std(rows), out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * n;
    double mean = 0;
    for (std::size_t c = 0; c < n; ++c) mean += xr[c];
    mean /= static_cast<double>(n);
    double var = 0;
    for (std::size_t c = 0; c < n; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat[r * n + c] = (xr[c] - mean) * inv_std[r];
      out[r * n + c] = xhat[r * n + c] * gain.data()[c] + bias.data()[c];
    }
  }
  auto px = x.node(), pg = gain.node(), pb = bias.node();
  return finish(
      make_node("layer_norm", x.shape(), std::move(out), {px, pg, pb}),
      [px, pg, pb, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, n](Node& self) {
        if (pg->requires_grad) pg->ensure_grad();
        if (pb->requires_grad) pb->ensure_grad();
        if (px->requires_grad) px->ensure_grad();
        std::vector<double> dxhat(n);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* g = self.grad.data() + r * n;
          double sum_d = 0, sum_dx = 0;
          for (std::size_t c = 0; c < n; ++c) {
            if (pg->requires_grad) pg->grad[c] += g[c] * xhat[r * n + c];
            if (pb->requires_grad) pb->grad[c] += g[c];
            dxhat[c] = g[c] * pg->data[c];
            sum_d += dxhat[c];
            sum_dx += dxhat[c] * xhat[r * n + c];
          }
          if (!px->requires_grad) continue;
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t c = 0; c < n; ++c) {
            px->grad[r * n + c] +=
                inv_std[r] * (dxhat[c] - inv_n * sum_d - xhat[r * n + c] * inv_n * sum_dx);
          }
        }
      });
}

// ---- reductions and losses -----------------------------------------------------------

Tensor sum(const Tensor& a) {
  double s = 0;
  for (double v : a.data()) s += v;
  auto pa = a.node();
  return finish(make_node("sum", {1, 1}, {s}, {pa}), [pa](Node& self) {
    pa->ensure_grad();
    for (double& g : pa->grad) g += self.grad[0];
  });
}

Tensor mean_rows(const Tensor& a) {
  if (a.rows() == 0) throw ShapeError("mean_rows of empty tensor", a.shape(), Shape{1, a.cols()});
  const std::size_t rows = a.rows(), n = a.cols();
  std::vector<double> out(n, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[c] += a.data()[r * n + c];
  }
  for (double& v : out) v /= static_cast<double>(rows);
  auto pa = a.node();
  return finish(make_node("mean_rows", {1, n}, std::move(out), {pa}), [pa, rows, n](Node& self) {
    pa->ensure_grad();
    const double inv = 1.0 / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < n; ++c) pa->grad[r * n + c] += self.grad[c] * inv;
    }
  });
}

namespace {

Tensor nll(const Tensor& logits, std::span<const int> targets, bool mean, const char* name) {
  if (targets.size() != logits.rows()) {
    throw ShapeError(name, logits.shape(), Shape{targets.size(), 1});
  }
  const Tensor logp = log_softmax(logits);
  const std::size_t n = logits.cols();
  std::size_t labelled = 0;
  double total = 0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] < 0) continue;
    if (static_cast<std::size_t>(targets[r]) >= n) {
      throw ShapeError(std::string(name) + ": class " + std::to_string(targets[r]) +
                       " out of range for " + logits.shape().str());
    }
    total -= logp.data()[r * n + static_cast<std::size_t>(targets[r])];
    ++labelled;
  }
  if (labelled == 0) throw ShapeError(std::string(name) + ": no labelled rows");
  const double factor = mean ? 1.0 / static_cast<double>(labelled) : 1.0;
  auto pl = logp.node();
  std::vector<int> t(targets.begin(), targets.end());
  return finish(make_node(name, {1, 1}, {total * factor}, {pl}),
                [pl, t = std::move(t), n, factor](Node& self) {
                  pl->ensure_grad();
                  for (std::size_t r = 0; r < t.size(); ++r) {
                    if (t[r] >= 0) pl->grad[r * n + static_cast<std::size_t>(t[r])] -= self.grad[0] * factor;
                  }
                });
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  return nll(logits, targets, true, "cross_entropy");
}

Tensor cross_entropy_sum(const Tensor& logits, std::span<const int> targets) {
  return nll(logits, targets, false, "cross_entropy_sum");
}

// ---- attention ---------------------------------------------------------------------

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::size_t n_heads, const AttentionMask& mask) {
  if (q.cols() != k.cols()) throw ShapeError("attention Q/K", q.shape(), k.shape());
  if (k.shape() != v.shape()) throw ShapeError("attention K/V", k.shape(), v.shape());
  if (n_heads == 0 || q.cols() % n_heads != 0) {
    throw ShapeError("attention: width " + std::to_string(q.cols()) + " not divisible by " +
                     std::to_string(n_heads) + " heads");
  }
  const std::size_t tq = q.rows(), tk = k.rows(), dh = q.cols() / n_heads;
  if (!mask.key_valid.empty() && mask.key_valid.size() != tk) {
    throw ShapeError("attention mask", Shape{1, mask.key_valid.size()}, k.shape());
  }

  Tensor bias;
  const bool masked = !mask.key_valid.empty() || mask.causal;
  if (masked) {
    // Large finite negative keeps outputs finite and gives exact zeros after exp.
    constexpr double kBlocked = -1e30;
    std::vector<double> b(tq * tk, 0.0);
    for (std::size_t i = 0; i < tq; ++i) {
      for (std::size_t j = 0; j < tk; ++j) {
        const bool key_ok = mask.key_valid.empty() || mask.key_valid[j];
        const bool order_ok = !mask.causal || j <= i;
        if (!key_ok || !order_ok) b[i * tk + j] = kBlocked;
      }
    }
    bias = Tensor::from(tq, tk, std::move(b));
  }

  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const Tensor qh = n_heads == 1 ? q : slice_cols(q, h * dh, dh);
    const Tensor kh = n_heads == 1 ? k : slice_cols(k, h * dh, dh);
    const Tensor vh = n_heads == 1 ? v : slice_cols(v, h * dh, dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    if (masked) scores = add(scores, bias);
    heads.push_back(matmul(softmax(scores, 1), vh));
  }
  return n_heads == 1 ? heads[0] : concat_cols(heads);
}

}  // namespace oscar
