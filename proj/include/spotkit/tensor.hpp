#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "spotkit/errors.hpp"

namespace spotkit {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass touches it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }

  // Accumulation buffer for this node's gradient, allocated on demand.
  std::vector<double>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

inline thread_local bool grad_mode_enabled = true;

}  // namespace detail

// Disables graph recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_enabled) { detail::grad_mode_enabled = false; }
  ~NoGradGuard() { detail::grad_mode_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_mode() { return detail::grad_mode_enabled; }

/// Dense row-major array of doubles with optional reverse-mode gradient.
///
/// A Tensor is a cheap handle; copies share the same storage and graph node.
/// Use clone() or detach() for an independent copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (numel(shape) != values.size()) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = numel(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const std::size_t n = numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return from({}, {value}, requires_grad);
  }

  template <class Rng>
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = dist(rng);
    return from(std::move(shape), std::move(v), requires_grad);
  }

  template <class Rng>
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = dist(rng);
    return from(std::move(shape), std::move(v), requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->data.size(); }
  std::size_t rows() const { return rank() == 2 ? dim(0) : 1; }
  std::size_t cols() const { return rank() == 0 ? 1 : node_->shape.back(); }

  std::span<const double> data() const { return node_->data; }
  // Writes bypass the graph; only use on leaves outside a recorded pass.
  std::span<double> mutable_data() { return node_->data; }
  const std::vector<double>& values() const { return node_->data; }

  double item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }
  double operator[](std::size_t i) const { return node_->data[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return node_->grad.size() == node_->data.size() && !node_->data.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  // New leaf with copied data and no history.
  Tensor detach() const { return from(shape(), node_->data, false); }
  Tensor clone(bool requires_grad) const { return from(shape(), node_->data, requires_grad); }

  ConstMatMap mat() const {
    return ConstMatMap(node_->data.data(), static_cast<Eigen::Index>(rows()),
                       static_cast<Eigen::Index>(cols()));
  }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool track = false;
  if (grad_mode_enabled) {
    for (const auto& t : inputs) track = track || (t.defined() && t.requires_grad());
  }
  if (track) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const auto& t : inputs) node->parents.push_back(t.node_ptr());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

// Gradient sink for parent i, or nullptr when it does not need one.
inline double* sink(Node& self, std::size_t i) {
  auto& p = self.parents[i];
  if (!p || !p->requires_grad) return nullptr;
  return p->grad_buffer().data();
}

inline const Node& parent(const Node& self, std::size_t i) { return *self.parents[i]; }

inline void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

inline MatMap map(std::vector<double>& v, std::size_t r, std::size_t c) {
  return MatMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
inline MatMap map(double* p, std::size_t r, std::size_t c) {
  return MatMap(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
inline ConstMatMap cmap(const std::vector<double>& v, std::size_t r, std::size_t c) {
  return ConstMatMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
inline ConstMatMap cmap(const double* p, std::size_t r, std::size_t c) {
  return ConstMatMap(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

// Views a tensor as [outer, n, inner] around `axis`.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <class F>
Tensor unary(const Tensor& x, F&& f_and_df) {
  std::vector<double> out(x.size());
  const auto& in = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f_and_df(in[i]).first;
  return make_result(x.shape(), std::move(out), {x}, [f_and_df](Node& self) {
    double* g = sink(self, 0);
    if (!g) return;
    const auto& in = parent(self, 0).data;
    for (std::size_t i = 0; i < in.size(); ++i) g[i] += self.grad[i] * f_and_df(in[i]).second;
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (double* g = detail::sink(self, k)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    if (double* g = detail::sink(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = detail::sink(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const auto& av = detail::parent(self, 0).data;
    const auto& bv = detail::parent(self, 1).data;
    if (double* g = detail::sink(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (double* g = detail::sink(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

inline Tensor scale(const Tensor& x, double s) {
  return detail::unary(x, [s](double v) { return std::pair{v * s, s}; });
}

inline Tensor add_scalar(const Tensor& x, double s) {
  return detail::unary(x, [s](double v) { return std::pair{v + s, 1.0}; });
}

inline Tensor exp(const Tensor& x) {
  return detail::unary(x, [](double v) {
    const double e = std::exp(v);
    return std::pair{e, e};
  });
}

inline Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw NumericError("log of non-positive value");
  }
  return detail::unary(x, [](double v) { return std::pair{std::log(v), 1.0 / v}; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(x, [](double v) {
    const double s = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    return std::pair{s, s * (1.0 - s)};
  });
}

// Exact (erf-based) GELU.
inline Tensor gelu(const Tensor& x) {
  return detail::unary(x, [](double v) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt_2pi = 0.39894228040143267794;
    const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
    return std::pair{v * cdf, cdf + v * inv_sqrt_2pi * std::exp(-0.5 * v * v)};
  });
}

// Gradient is passed through only strictly inside the interval.
inline Tensor clamp(const Tensor& x, double lo, double hi) {
  return detail::unary(x, [lo, hi](double v) {
    if (v < lo) return std::pair{lo, 0.0};
    if (v > hi) return std::pair{hi, 0.0};
    return std::pair{v, 1.0};
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  detail::map(out, m, n).noalias() = a.mat() * b.mat();
  return detail::make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto dc = detail::cmap(self.grad, m, n);
    if (double* g = detail::sink(self, 0)) {
      detail::map(g, m, k).noalias() += dc * detail::cmap(detail::parent(self, 1).data, k, n).transpose();
    }
    if (double* g = detail::sink(self, 1)) {
      detail::map(g, k, n).noalias() += detail::cmap(detail::parent(self, 0).data, m, k).transpose() * dc;
    }
  });
}

// a * b^T for a [m x k], b [n x k].
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail::require_rank2(a, "matmul_nt");
  detail::require_rank2(b, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw ShapeError("matmul_nt: inner dimensions differ " + shape_str(a.shape()) + " * " +
                     shape_str(b.shape()) + "^T");
  }
  std::vector<double> out(m * n);
  detail::map(out, m, n).noalias() = a.mat() * b.mat().transpose();
  return detail::make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto dc = detail::cmap(self.grad, m, n);
    if (double* g = detail::sink(self, 0)) {
      detail::map(g, m, k).noalias() += dc * detail::cmap(detail::parent(self, 1).data, n, k);
    }
    if (double* g = detail::sink(self, 1)) {
      detail::map(g, n, k).noalias() += dc.transpose() * detail::cmap(detail::parent(self, 0).data, m, k);
    }
  });
}

/// x W + b with x [N x in], W [in x out], b [out] (b may be undefined).
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  detail::require_rank2(x, "linear");
  detail::require_rank2(w, "linear");
  const std::size_t n = x.dim(0), in = x.dim(1), out_dim = w.dim(1);
  if (w.dim(0) != in) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  }
  if (b.defined() && b.size() != out_dim) {
    throw ShapeError("linear: bias " + shape_str(b.shape()) + " vs weight " + shape_str(w.shape()));
  }
  std::vector<double> out(n * out_dim);
  auto y = detail::map(out, n, out_dim);
  y.noalias() = x.mat() * w.mat();
  if (b.defined()) {
    Eigen::Map<const Eigen::RowVectorXd> bias(b.data().data(), static_cast<Eigen::Index>(out_dim));
    y.rowwise() += bias;
  }
  return detail::make_result(
      {n, out_dim}, std::move(out), {x, w, b}, [n, in, out_dim](detail::Node& self) {
        auto dy = detail::cmap(self.grad, n, out_dim);
        if (double* g = detail::sink(self, 0)) {
          detail::map(g, n, in).noalias() += dy * detail::cmap(detail::parent(self, 1).data, in, out_dim).transpose();
        }
        if (double* g = detail::sink(self, 1)) {
          detail::map(g, in, out_dim).noalias() += detail::cmap(detail::parent(self, 0).data, n, in).transpose() * dy;
        }
        if (self.parents[2]) {
          if (double* g = detail::sink(self, 2)) {
            // Plain loop: Eigen's vectorised column sum depends on buffer alignment.
            for (std::size_t r = 0; r < n; ++r)
              for (std::size_t c = 0; c < out_dim; ++c) g[c] += self.grad[r * out_dim + c];
          }
        }
      });
}

inline Tensor transpose(const Tensor& x) {
  detail::require_rank2(x, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(r * c);
  detail::map(out, c, r) = x.mat().transpose();
  return detail::make_result({c, r}, std::move(out), {x}, [r, c](detail::Node& self) {
    if (double* g = detail::sink(self, 0)) detail::map(g, r, c) += detail::cmap(self.grad, c, r).transpose();
  });
}

// x [N x D] + row [D] broadcast over rows.
inline Tensor add_row(const Tensor& x, const Tensor& row) {
  detail::require_rank2(x, "add_row");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (row.size() != d) throw ShapeError("add_row: row " + shape_str(row.shape()) + " vs " + shape_str(x.shape()));
  std::vector<double> out(x.values());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] += row[j];
  return detail::make_result(x.shape(), std::move(out), {x, row}, [n, d](detail::Node& self) {
    if (double* g = detail::sink(self, 0)) {
      for (std::size_t i = 0; i < n * d; ++i) g[i] += self.grad[i];
    }
    if (double* g = detail::sink(self, 1)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[i * d + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization and softmax

/// Layer normalization over the last dimension with learned scale and shift.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
  const std::size_t d = x.cols();
  const std::size_t n = x.size() / d;
  if (gamma.size() != d || beta.size() != d) {
    throw ShapeError("layer_norm: affine parameters do not match width " + std::to_string(d));
  }
  std::vector<double> out(x.size());
  std::vector<double> rstd(n);
  const auto& xv = x.values();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = xv.data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = (row[j] - mu) * rstd[i] * gamma[j] + beta[j];
  }
  return detail::make_result(x.shape(), std::move(out), {x, gamma, beta},
                             [n, d, rstd = std::move(rstd)](detail::Node& self) {
    const auto& xv = detail::parent(self, 0).data;
    const auto& gv = detail::parent(self, 1).data;
    double* gx = detail::sink(self, 0);
    double* gg = detail::sink(self, 1);
    double* gb = detail::sink(self, 2);
    std::vector<double> xhat(d), dxhat(d);
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = xv.data() + i * d;
      const double* dy = self.grad.data() + i * d;
      double mu = 0.0;
      for (std::size_t j = 0; j < d; ++j) mu += row[j];
      mu /= static_cast<double>(d);
      double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        xhat[j] = (row[j] - mu) * rstd[i];
        dxhat[j] = dy[j] * gv[j];
        mean_dxhat += dxhat[j];
        mean_dxhat_xhat += dxhat[j] * xhat[j];
        if (gg) gg[j] += dy[j] * xhat[j];
        if (gb) gb[j] += dy[j];
      }
      mean_dxhat /= static_cast<double>(d);
      mean_dxhat_xhat /= static_cast<double>(d);
      if (gx) {
        for (std::size_t j = 0; j < d; ++j) {
          gx[i * d + j] += rstd[i] * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
        }
      }
    }
  });
}

/// Softmax of x / temperature over the last dimension (max-subtracted).
inline Tensor softmax_lastdim(const Tensor& x, double temperature = 1.0) {
  if (!(temperature > 0.0)) throw ParameterError("softmax temperature must be positive");
  const std::size_t d = x.cols();
  const std::size_t n = d ? x.size() / d : 0;
  std::vector<double> out(x.size());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = xv.data() + i * d;
    double* o = out.data() + i * d;
    const double mx = *std::max_element(row, row + d);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += (o[j] = std::exp((row[j] - mx) / temperature));
    for (std::size_t j = 0; j < d; ++j) o[j] /= z;
  }
  return detail::make_result(x.shape(), std::move(out), {x}, [n, d, temperature](detail::Node& self) {
    double* g = detail::sink(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < n; ++i) {
      const double* y = self.data.data() + i * d;
      const double* dy = self.grad.data() + i * d;
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < d; ++j) g[i * d + j] += y[j] * (dy[j] - dot) / temperature;
    }
  });
}

/// log(softmax(x / temperature)) over the last dimension.
inline Tensor log_softmax_lastdim(const Tensor& x, double temperature = 1.0) {
  if (!(temperature > 0.0)) throw ParameterError("softmax temperature must be positive");
  const std::size_t d = x.cols();
  const std::size_t n = d ? x.size() / d : 0;
  std::vector<double> out(x.size());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = xv.data() + i * d;
    double* o = out.data() + i * d;
    const double mx = *std::max_element(row, row + d);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += std::exp((row[j] - mx) / temperature);
    const double lse = std::log(z);
    for (std::size_t j = 0; j < d; ++j) o[j] = (row[j] - mx) / temperature - lse;
  }
  return detail::make_result(x.shape(), std::move(out), {x}, [n, d, temperature](detail::Node& self) {
    double* g = detail::sink(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < n; ++i) {
      const double* y = self.data.data() + i * d;
      const double* dy = self.grad.data() + i * d;
      double total = 0.0;
      for (std::size_t j = 0; j < d; ++j) total += dy[j];
      for (std::size_t j = 0; j < d; ++j) g[i * d + j] += (dy[j] - std::exp(y[j]) * total) / temperature;
    }
  });
}

/// Scales every slice along `axis` to unit Euclidean norm.
inline Tensor l2_normalize(const Tensor& x, std::size_t axis) {
  const auto s = detail::split_axis(x.shape(), axis);
  std::vector<double> out(x.size());
  std::vector<double> norms(s.outer * s.inner);
  const auto& xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      double sq = 0.0;
      for (std::size_t k = 0; k < s.n; ++k) {
        const double v = xv[(o * s.n + k) * s.inner + in];
        sq += v * v;
      }
      const double nrm = std::sqrt(sq);
      if (!(nrm > 0.0)) throw NumericError("l2_normalize: zero-norm slice");
      norms[o * s.inner + in] = nrm;
      for (std::size_t k = 0; k < s.n; ++k) {
        const std::size_t idx = (o * s.n + k) * s.inner + in;
        out[idx] = xv[idx] / nrm;
      }
    }
  }
  return detail::make_result(x.shape(), std::move(out), {x}, [s, norms = std::move(norms)](detail::Node& self) {
    double* g = detail::sink(self, 0);
    if (!g) return;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        double dot = 0.0;
        for (std::size_t k = 0; k < s.n; ++k) {
          const std::size_t idx = (o * s.n + k) * s.inner + in;
          dot += self.data[idx] * self.grad[idx];
        }
        const double nrm = norms[o * s.inner + in];
        for (std::size_t k = 0; k < s.n; ++k) {
          const std::size_t idx = (o * s.n + k) * s.inner + in;
          g[idx] += (self.grad[idx] - self.data[idx] * dot) / nrm;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return detail::make_result({}, {total}, {x}, [](detail::Node& self) {
    if (double* g = detail::sink(self, 0)) {
      const std::size_t n = detail::parent(self, 0).data.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

inline Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

// Sum over the last dimension, keeping it with size 1.
inline Tensor sum_lastdim(const Tensor& x) {
  const std::size_t d = x.cols();
  const std::size_t n = x.size() / d;
  Shape shape = x.shape();
  shape.back() = 1;
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i] += x[i * d + j];
  return detail::make_result(std::move(shape), std::move(out), {x}, [n, d](detail::Node& self) {
    if (double* g = detail::sink(self, 0)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) g[i * d + j] += self.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  return detail::make_result(std::move(shape), x.values(), {x}, [](detail::Node& self) {
    if (double* g = detail::sink(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  Shape shape = parts.front().shape();
  if (axis >= shape.size()) throw ShapeError("concat: axis out of range");
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = shape;
    if (a.size() != b.size()) throw ShapeError("concat: rank mismatch");
    a[axis] = b[axis] = 0;
    if (a != b) throw ShapeError("concat: incompatible " + shape_str(p.shape()) + " vs " + shape_str(shape));
    total += p.dim(axis);
  }
  shape[axis] = total;
  const auto s = detail::split_axis(shape, axis);
  std::vector<double> out(numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t w = p.dim(axis) * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(p.values().data() + o * w, w, out.data() + (o * s.n + off) * s.inner);
    }
    off += p.dim(axis);
  }
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.dim(axis));
  return detail::make_result(std::move(shape), std::move(out), parts,
                             [s, offsets, widths](detail::Node& self) {
    for (std::size_t k = 0; k < widths.size(); ++k) {
      double* g = detail::sink(self, k);
      if (!g) continue;
      const std::size_t w = widths[k] * s.inner;
      for (std::size_t o = 0; o < s.outer; ++o) {
        const double* src = self.grad.data() + (o * s.n + offsets[k]) * s.inner;
        for (std::size_t i = 0; i < w; ++i) g[o * w + i] += src[i];
      }
    }
  });
}

/// Elements [begin, end) along `axis`.
inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto s = detail::split_axis(x.shape(), axis);
  if (begin > end || end > s.n) throw ShapeError("slice: range out of bounds");
  Shape shape = x.shape();
  shape[axis] = end - begin;
  const std::size_t w = (end - begin) * s.inner;
  std::vector<double> out(s.outer * w);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(x.values().data() + (o * s.n + begin) * s.inner, w, out.data() + o * w);
  }
  return detail::make_result(std::move(shape), std::move(out), {x}, [s, begin, w](detail::Node& self) {
    double* g = detail::sink(self, 0);
    if (!g) return;
    for (std::size_t o = 0; o < s.outer; ++o) {
      double* dst = g + (o * s.n + begin) * s.inner;
      for (std::size_t i = 0; i < w; ++i) dst[i] += self.grad[o * w + i];
    }
  });
}

// Rows of a matrix picked by index; repeated indices accumulate gradient.
inline Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& indices) {
  detail::require_rank2(x, "gather_rows");
  const std::size_t d = x.dim(1);
  std::vector<double> out(indices.size() * d);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= x.dim(0)) throw ShapeError("gather_rows: index out of range");
    std::copy_n(x.values().data() + indices[i] * d, d, out.data() + i * d);
  }
  return detail::make_result({indices.size(), d}, std::move(out), {x}, [indices, d](detail::Node& self) {
    double* g = detail::sink(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < indices.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) g[indices[i] * d + j] += self.grad[i * d + j];
  });
}

// Copy of x [N x D] with the listed rows replaced by `row` [D].
inline Tensor replace_rows(const Tensor& x, const std::vector<std::size_t>& indices, const Tensor& row) {
  detail::require_rank2(x, "replace_rows");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (row.size() != d) throw ShapeError("replace_rows: row width mismatch");
  std::vector<char> replaced(n, 0);
  std::vector<double> out(x.values());
  for (std::size_t idx : indices) {
    if (idx >= n) throw ShapeError("replace_rows: index out of range");
    replaced[idx] = 1;
    std::copy_n(row.data().data(), d, out.data() + idx * d);
  }
  return detail::make_result(x.shape(), std::move(out), {x, row}, [replaced, n, d](detail::Node& self) {
    double* gx = detail::sink(self, 0);
    double* gr = detail::sink(self, 1);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        const double gv = self.grad[i * d + j];
        if (replaced[i]) {
          if (gr) gr[j] += gv;
        } else if (gx) {
          gx[i * d + j] += gv;
        }
      }
    }
  });
}

// x [G*L x D] plus table [L x D] repeated for each of the G groups.
inline Tensor add_group_broadcast(const Tensor& x, const Tensor& table) {
  detail::require_rank2(x, "add_group_broadcast");
  detail::require_rank2(table, "add_group_broadcast");
  const std::size_t l = table.dim(0), d = table.dim(1);
  if (x.dim(1) != d || l == 0 || x.dim(0) % l != 0) {
    throw ShapeError("add_group_broadcast: " + shape_str(x.shape()) + " vs table " + shape_str(table.shape()));
  }
  const std::size_t groups = x.dim(0) / l;
  std::vector<double> out(x.values());
  for (std::size_t gi = 0; gi < groups; ++gi)
    for (std::size_t i = 0; i < l * d; ++i) out[gi * l * d + i] += table[i];
  return detail::make_result(x.shape(), std::move(out), {x, table}, [groups, l, d](detail::Node& self) {
    if (double* g = detail::sink(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = detail::sink(self, 1)) {
      for (std::size_t gi = 0; gi < groups; ++gi)
        for (std::size_t i = 0; i < l * d; ++i) g[i] += self.grad[gi * l * d + i];
    }
  });
}

// Inserts `token` [D] at the front of each of the G groups of x [G*L x D].
inline Tensor prepend_token(const Tensor& x, const Tensor& token, std::size_t groups) {
  detail::require_rank2(x, "prepend_token");
  const std::size_t d = x.dim(1);
  if (groups == 0 || x.dim(0) % groups != 0 || token.size() != d) {
    throw ShapeError("prepend_token: bad grouping of " + shape_str(x.shape()));
  }
  const std::size_t l = x.dim(0) / groups;
  std::vector<double> out(groups * (l + 1) * d);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    double* dst = out.data() + gi * (l + 1) * d;
    std::copy_n(token.data().data(), d, dst);
    std::copy_n(x.values().data() + gi * l * d, l * d, dst + d);
  }
  return detail::make_result({groups * (l + 1), d}, std::move(out), {x, token}, [groups, l, d](detail::Node& self) {
    double* gx = detail::sink(self, 0);
    double* gt = detail::sink(self, 1);
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const double* src = self.grad.data() + gi * (l + 1) * d;
      if (gt)
        for (std::size_t j = 0; j < d; ++j) gt[j] += src[j];
      if (gx)
        for (std::size_t i = 0; i < l * d; ++i) gx[gi * l * d + i] += src[d + i];
    }
  });
}

/// Multi-head scaled dot-product self-attention.
///
/// `qkv` is [G*L x 3D] laid out as [queries | keys | values] per row; tokens
/// attend only within their own group of L rows. Returns [G*L x D].
inline Tensor self_attention(const Tensor& qkv, std::size_t groups, std::size_t heads) {
  detail::require_rank2(qkv, "self_attention");
  if (groups == 0 || qkv.dim(0) % groups != 0 || qkv.dim(1) % 3 != 0) {
    throw ShapeError("self_attention: bad input " + shape_str(qkv.shape()));
  }
  const std::size_t l = qkv.dim(0) / groups;
  const std::size_t d = qkv.dim(1) / 3;
  if (heads == 0 || d % heads != 0) throw ShapeError("self_attention: width not divisible by heads");
  const std::size_t dh = d / heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));
  using Strided = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
  using StridedMut = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
  const auto L = static_cast<Eigen::Index>(l), DH = static_cast<Eigen::Index>(dh);
  const Eigen::OuterStride<> in_stride(static_cast<Eigen::Index>(3 * d));
  const Eigen::OuterStride<> out_stride(static_cast<Eigen::Index>(d));

  std::vector<double> out(groups * l * d);
  // Attention weights kept for the backward pass: [G, H, L, L].
  std::vector<double> probs(groups * heads * l * l);
  const double* src = qkv.values().data();
  for (std::size_t gi = 0; gi < groups; ++gi) {
    for (std::size_t h = 0; h < heads; ++h) {
      const double* base = src + gi * l * 3 * d + h * dh;
      Strided q(base, L, DH, in_stride), k(base + d, L, DH, in_stride), v(base + 2 * d, L, DH, in_stride);
      MatMap p(probs.data() + (gi * heads + h) * l * l, L, L);
      p.noalias() = (q * k.transpose()) * scale_factor;
      // Plain loops: Eigen's vectorised reductions depend on buffer alignment.
      for (Eigen::Index r = 0; r < L; ++r) {
        double* row = p.data() + r * L;
        double mx = row[0], total = 0.0;
        for (Eigen::Index c = 1; c < L; ++c) mx = std::max(mx, row[c]);
        for (Eigen::Index c = 0; c < L; ++c) total += row[c] = std::exp(row[c] - mx);
        for (Eigen::Index c = 0; c < L; ++c) row[c] /= total;
      }
      StridedMut o(out.data() + gi * l * d + h * dh, L, DH, out_stride);
      o.noalias() = p * v;
    }
  }
  return detail::make_result(
      {groups * l, d}, std::move(out), {qkv},
      [groups, heads, l, d, dh, scale_factor, probs = std::move(probs)](detail::Node& self) {
        double* g = detail::sink(self, 0);
        if (!g) return;
        const auto L = static_cast<Eigen::Index>(l), DH = static_cast<Eigen::Index>(dh);
        const Eigen::OuterStride<> in_stride(static_cast<Eigen::Index>(3 * d));
        const Eigen::OuterStride<> out_stride(static_cast<Eigen::Index>(d));
        const double* src = detail::parent(self, 0).data.data();
        RowMat dp(L, L);
        for (std::size_t gi = 0; gi < groups; ++gi) {
          for (std::size_t h = 0; h < heads; ++h) {
            const double* base = src + gi * l * 3 * d + h * dh;
            Strided q(base, L, DH, in_stride), k(base + d, L, DH, in_stride), v(base + 2 * d, L, DH, in_stride);
            double* gbase = g + gi * l * 3 * d + h * dh;
            StridedMut gq(gbase, L, DH, in_stride), gk(gbase + d, L, DH, in_stride), gv(gbase + 2 * d, L, DH, in_stride);
            ConstMatMap p(probs.data() + (gi * heads + h) * l * l, L, L);
            Strided dout(self.grad.data() + gi * l * d + h * dh, L, DH, out_stride);
            gv.noalias() += p.transpose() * dout;
            dp.noalias() = dout * v.transpose();
            for (Eigen::Index r = 0; r < L; ++r) {
              const double* pr = p.data() + r * L;
              double* dr = dp.data() + r * L;
              double dot = 0.0;
              for (Eigen::Index c = 0; c < L; ++c) dot += dr[c] * pr[c];
              for (Eigen::Index c = 0; c < L; ++c) dr[c] = pr[c] * (dr[c] - dot);
            }
            gq.noalias() += (dp * k) * scale_factor;
            gk.noalias() += (dp.transpose() * q) * scale_factor;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Backward pass

/// Reverse-mode sweep from a scalar. Leaf gradients accumulate across calls;
/// intermediate gradients are recomputed each time.
inline void backward(const Tensor& loss) {
  if (loss.size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) throw StateError("backward: loss is not connected to any trainable tensor");
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p && p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (detail::Node* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->data.size(), 0.0);
  }
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!(*it)->is_leaf()) (*it)->backward_fn(**it);
  }
  // Release intermediate buffers; leaves keep theirs.
  for (detail::Node* n : order) {
    if (!n->is_leaf()) std::vector<double>().swap(n->grad);
  }
}

}  // namespace spotkit
