// SPDX-License-Identifier: Apache-2.0
#include "opal/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>
#include <utility>

#include "opal/error.hpp"

namespace opal::ad {

namespace {

thread_local bool g_grad_enabled = true;

Var make_result(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (auto& in : inputs) node->inputs.push_back(in.node());
      node->backward = std::move(fn);
    }
  }
  return Var(std::move(node));
}

inline bool wants(const Node& self, std::size_t i) { return self.inputs[i]->requires_grad; }
inline Matrix& grad_of(Node& self, std::size_t i) { return self.inputs[i]->grad_buffer(); }
inline const Matrix& value_of(const Node& self, std::size_t i) { return self.inputs[i]->value; }

void same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ContractViolation(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) +
                            "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                            "x" + std::to_string(b.cols()) + ")");
  }
}

template <typename Forward, typename Derivative>
Var unary(const Var& a, Forward f, Derivative df) {
  Matrix out = a.value().unaryExpr(f);
  return make_result(std::move(out), {a}, [df](Node& self) {
    if (!wants(self, 0)) return;
    const Matrix& x = value_of(self, 0);
    grad_of(self, 0).array() +=
        self.grad.array() * x.binaryExpr(self.value, df).array();
  });
}

}  // namespace

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Var Var::scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return Var(std::move(m));
}

void Var::zero_grad() {
  if (node_ && node_->grad.size() > 0) node_->grad.setZero();
}

double Var::item() const {
  require(rows() == 1 && cols() == 1, "Var::item on non-scalar");
  return node_->value(0, 0);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& root) {
  require(root.defined(), "backward on undefined Var");
  require(root.rows() == 1 && root.cols() == 1, "backward requires a scalar root");
  if (!root.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer().array() += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->grad.size() > 0) node->backward(*node);
  }
}

Var constant(Matrix value) { return Var(std::move(value), false); }

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw ContractViolation("matmul: inner dimensions differ (" + std::to_string(a.cols()) +
                            " vs " + std::to_string(b.rows()) + ")");
  }
  Matrix out = a.value() * b.value();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (wants(self, 0)) grad_of(self, 0).noalias() += self.grad * value_of(self, 1).transpose();
    if (wants(self, 1)) grad_of(self, 1).noalias() += value_of(self, 0).transpose() * self.grad;
  });
}

Var add(const Var& a, const Var& b) {
  same_shape(a, b, "add");
  return make_result(a.value() + b.value(), {a, b}, [](Node& self) {
    if (wants(self, 0)) grad_of(self, 0) += self.grad;
    if (wants(self, 1)) grad_of(self, 1) += self.grad;
  });
}

Var sub(const Var& a, const Var& b) {
  same_shape(a, b, "sub");
  return make_result(a.value() - b.value(), {a, b}, [](Node& self) {
    if (wants(self, 0)) grad_of(self, 0) += self.grad;
    if (wants(self, 1)) grad_of(self, 1) -= self.grad;
  });
}

Var mul(const Var& a, const Var& b) {
  same_shape(a, b, "mul");
  Matrix out = a.value().cwiseProduct(b.value());
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (wants(self, 0)) grad_of(self, 0) += self.grad.cwiseProduct(value_of(self, 1));
    if (wants(self, 1)) grad_of(self, 1) += self.grad.cwiseProduct(value_of(self, 0));
  });
}

Var div(const Var& a, const Var& b) {
  same_shape(a, b, "div");
  Matrix out = a.value().cwiseQuotient(b.value());
  return make_result(std::move(out), {a, b}, [](Node& self) {
    const Matrix& bv = value_of(self, 1);
    if (wants(self, 0)) grad_of(self, 0) += self.grad.cwiseQuotient(bv);
    if (wants(self, 1)) {
      grad_of(self, 1).array() -= self.grad.array() * self.value.array() / bv.array();
    }
  });
}

Var add_row(const Var& a, const Var& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: row must be 1 x cols(a)");
  Matrix out = a.value().rowwise() + row.value().row(0);
  return make_result(std::move(out), {a, row}, [](Node& self) {
    if (wants(self, 0)) grad_of(self, 0) += self.grad;
    if (wants(self, 1)) grad_of(self, 1) += self.grad.colwise().sum();
  });
}

Var mul_row(const Var& a, const Var& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "mul_row: row must be 1 x cols(a)");
  Matrix out = a.value().array().rowwise() * row.value().row(0).array();
  return make_result(std::move(out), {a, row}, [](Node& self) {
    const Matrix& av = value_of(self, 0);
    const Matrix& rv = value_of(self, 1);
    if (wants(self, 0)) grad_of(self, 0).array() += self.grad.array().rowwise() * rv.row(0).array();
    if (wants(self, 1)) grad_of(self, 1) += self.grad.cwiseProduct(av).colwise().sum();
  });
}

Var scale(const Var& a, double s) {
  return make_result(a.value() * s, {a}, [s](Node& self) {
    if (wants(self, 0)) grad_of(self, 0) += self.grad * s;
  });
}

Var add_scalar(const Var& a, double s) {
  Matrix out = a.value().array() + s;
  return make_result(std::move(out), {a}, [](Node& self) {
    if (wants(self, 0)) grad_of(self, 0) += self.grad;
  });
}

Var relu(const Var& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(const Var& a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(const Var& a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sqrt(const Var& a) {
  return unary(
      a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Var clamp(const Var& a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var minimum(const Var& a, const Var& b) {
  same_shape(a, b, "minimum");
  Matrix out = a.value().cwiseMin(b.value());
  return make_result(std::move(out), {a, b}, [](Node& self) {
    const Matrix& av = value_of(self, 0);
    const Matrix& bv = value_of(self, 1);
    const auto pick_a = (av.array() <= bv.array()).cast<double>();
    if (wants(self, 0)) grad_of(self, 0).array() += self.grad.array() * pick_a;
    if (wants(self, 1)) grad_of(self, 1).array() += self.grad.array() * (1.0 - pick_a);
  });
}

Var maximum(const Var& a, const Var& b) {
  same_shape(a, b, "maximum");
  Matrix out = a.value().cwiseMax(b.value());
  return make_result(std::move(out), {a, b}, [](Node& self) {
    const Matrix& av = value_of(self, 0);
    const Matrix& bv = value_of(self, 1);
    const auto pick_a = (av.array() >= bv.array()).cast<double>();
    if (wants(self, 0)) grad_of(self, 0).array() += self.grad.array() * pick_a;
    if (wants(self, 1)) grad_of(self, 1).array() += self.grad.array() * (1.0 - pick_a);
  });
}

Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return make_result(std::move(out), {a}, [](Node& self) {
    if (wants(self, 0)) grad_of(self, 0).array() += self.grad(0, 0);
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  require(n > 0, "mean of empty matrix");
  return scale(sum(a), 1.0 / n);
}

Var sum_rows(const Var& a) {
  Matrix out = a.value().colwise().sum();
  return make_result(std::move(out), {a}, [](Node& self) {
    if (wants(self, 0)) grad_of(self, 0).rowwise() += self.grad.row(0);
  });
}

Var mean_rows(const Var& a) {
  require(a.rows() > 0, "mean_rows of empty matrix");
  return scale(sum_rows(a), 1.0 / static_cast<double>(a.rows()));
}

Var sum_cols(const Var& a) {
  Matrix out = a.value().rowwise().sum();
  return make_result(std::move(out), {a}, [](Node& self) {
    if (wants(self, 0)) grad_of(self, 0).colwise() += self.grad.col(0);
  });
}

Var transpose(const Var& a) {
  Matrix out = a.value().transpose();
  return make_result(std::move(out), {a}, [](Node& self) {
    if (wants(self, 0)) grad_of(self, 0) += self.grad.transpose();
  });
}

Var reshape(const Var& a, Index rows, Index cols) {
  require(rows * cols == a.value().size(), "reshape: element count mismatch");
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  const Index r0 = a.rows();
  const Index c0 = a.cols();
  return make_result(std::move(out), {a}, [r0, c0](Node& self) {
    if (wants(self, 0)) grad_of(self, 0) += Eigen::Map<const Matrix>(self.grad.data(), r0, c0);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols of nothing");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    require(p.rows() == rows, "concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return make_result(std::move(out), parts, [](Node& self) {
    Index offset = 0;
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      const Index c = self.inputs[i]->value.cols();
      if (wants(self, i)) grad_of(self, i) += self.grad.middleCols(offset, c);
      offset += c;
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows of nothing");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    require(p.cols() == cols, "concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return make_result(std::move(out), parts, [](Node& self) {
    Index offset = 0;
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      const Index r = self.inputs[i]->value.rows();
      if (wants(self, i)) grad_of(self, i) += self.grad.middleRows(offset, r);
      offset += r;
    }
  });
}

Var slice_rows(const Var& a, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows out of range");
  Matrix out = a.value().middleRows(start, count);
  return make_result(std::move(out), {a}, [start, count](Node& self) {
    if (wants(self, 0)) grad_of(self, 0).middleRows(start, count) += self.grad;
  });
}

Var slice_cols(const Var& a, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols out of range");
  Matrix out = a.value().middleCols(start, count);
  return make_result(std::move(out), {a}, [start, count](Node& self) {
    if (wants(self, 0)) grad_of(self, 0).middleCols(start, count) += self.grad;
  });
}

Var gather_rows(const Var& a, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < a.rows(), "gather_rows index out of range");
    out.row(static_cast<Index>(i)) = a.value().row(rows[i]);
  }
  return make_result(std::move(out), {a}, [rows](Node& self) {
    if (!wants(self, 0)) return;
    Matrix& g = grad_of(self, 0);
    for (std::size_t i = 0; i < rows.size(); ++i) g.row(rows[i]) += self.grad.row(static_cast<Index>(i));
  });
}

Var scatter_rows(const Var& a, const std::vector<Index>& rows, Index total_rows) {
  require(static_cast<Index>(rows.size()) == a.rows(), "scatter_rows: one index per row");
  Matrix out = Matrix::Zero(total_rows, a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < total_rows, "scatter_rows index out of range");
    out.row(rows[i]) = a.value().row(static_cast<Index>(i));
  }
  return make_result(std::move(out), {a}, [rows](Node& self) {
    if (!wants(self, 0)) return;
    Matrix& g = grad_of(self, 0);
    for (std::size_t i = 0; i < rows.size(); ++i) g.row(static_cast<Index>(i)) += self.grad.row(rows[i]);
  });
}

Var replicate_rows(const Var& row, Index count) {
  require(row.rows() == 1, "replicate_rows expects a row vector");
  Matrix out = row.value().replicate(count, 1);
  return make_result(std::move(out), {row}, [](Node& self) {
    if (wants(self, 0)) grad_of(self, 0) += self.grad.colwise().sum();
  });
}

Var pairwise_diff(const Var& v) {
  require(v.cols() == 1, "pairwise_diff expects a column vector");
  const Index p = v.rows();
  Matrix out(p, p);
  for (Index m = 0; m < p; ++m)
    for (Index n = 0; n < p; ++n) out(m, n) = v.value()(m, 0) - v.value()(n, 0);
  return make_result(std::move(out), {v}, [](Node& self) {
    if (!wants(self, 0)) return;
    grad_of(self, 0).col(0) += self.grad.rowwise().sum() - self.grad.colwise().sum().transpose();
  });
}

Var softmax_channels(const Var& a, Index channels) {
  require(channels > 0 && a.cols() % channels == 0, "softmax_channels: cols not divisible");
  const Index plane = a.cols() / channels;
  Matrix out(a.rows(), a.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    const double* x = a.value().row(r).data();
    double* y = out.row(r).data();
    for (Index s = 0; s < plane; ++s) {
      double mx = x[s];
      for (Index c = 1; c < channels; ++c) mx = std::max(mx, x[c * plane + s]);
      double z = 0.0;
      for (Index c = 0; c < channels; ++c) {
        y[c * plane + s] = std::exp(x[c * plane + s] - mx);
        z += y[c * plane + s];
      }
      for (Index c = 0; c < channels; ++c) y[c * plane + s] /= z;
    }
  }
  return make_result(std::move(out), {a}, [channels, plane](Node& self) {
    if (!wants(self, 0)) return;
    Matrix& g = grad_of(self, 0);
    for (Index r = 0; r < self.value.rows(); ++r) {
      const double* y = self.value.row(r).data();
      const double* dy = self.grad.row(r).data();
      double* dx = g.row(r).data();
      for (Index s = 0; s < plane; ++s) {
        double dot = 0.0;
        for (Index c = 0; c < channels; ++c) dot += dy[c * plane + s] * y[c * plane + s];
        for (Index c = 0; c < channels; ++c) {
          dx[c * plane + s] += y[c * plane + s] * (dy[c * plane + s] - dot);
        }
      }
    }
  });
}

Var log_softmax_channels(const Var& a, Index channels) {
  require(channels > 0 && a.cols() % channels == 0, "log_softmax_channels: cols not divisible");
  const Index plane = a.cols() / channels;
  Matrix out(a.rows(), a.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    const double* x = a.value().row(r).data();
    double* y = out.row(r).data();
    for (Index s = 0; s < plane; ++s) {
      double mx = x[s];
      for (Index c = 1; c < channels; ++c) mx = std::max(mx, x[c * plane + s]);
      double z = 0.0;
      for (Index c = 0; c < channels; ++c) z += std::exp(x[c * plane + s] - mx);
      const double lse = mx + std::log(z);
      for (Index c = 0; c < channels; ++c) y[c * plane + s] = x[c * plane + s] - lse;
    }
  }
  return make_result(std::move(out), {a}, [channels, plane](Node& self) {
    if (!wants(self, 0)) return;
    Matrix& g = grad_of(self, 0);
    for (Index r = 0; r < self.value.rows(); ++r) {
      const double* y = self.value.row(r).data();
      const double* dy = self.grad.row(r).data();
      double* dx = g.row(r).data();
      for (Index s = 0; s < plane; ++s) {
        double total = 0.0;
        for (Index c = 0; c < channels; ++c) total += dy[c * plane + s];
        for (Index c = 0; c < channels; ++c) {
          dx[c * plane + s] += dy[c * plane + s] - std::exp(y[c * plane + s]) * total;
        }
      }
    }
  });
}

namespace detail {

void im2col(const double* image, int channels, int height, int width, int kernel, int stride,
            int pad, int out_h, int out_w, double* columns) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        double* dst = columns + static_cast<std::ptrdiff_t>((c * kernel + ky) * kernel + kx) * plane;
        const double* src = image + static_cast<std::ptrdiff_t>(c) * height * width;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) {
            std::fill(dst + oy * out_w, dst + (oy + 1) * out_w, 0.0);
            continue;
          }
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[oy * out_w + ox] = (ix >= 0 && ix < width) ? src[iy * width + ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* columns, int channels, int height, int width, int kernel, int stride,
            int pad, int out_h, int out_w, double* image) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const double* src =
            columns + static_cast<std::ptrdiff_t>((c * kernel + ky) * kernel + kx) * plane;
        double* dst = image + static_cast<std::ptrdiff_t>(c) * height * width;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < width) dst[iy * width + ix] += src[oy * out_w + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

Var conv2d(const Var& x, const Var& weight, const Var& bias, const ConvGeometry& g) {
  const int ho = g.conv_out_height();
  const int wo = g.conv_out_width();
  const Index patch = static_cast<Index>(g.in_channels) * g.kernel * g.kernel;
  const Index plane = static_cast<Index>(ho) * wo;
  require(ho > 0 && wo > 0, "conv2d: empty output");
  require(x.cols() == static_cast<Index>(g.in_channels) * g.in_height * g.in_width,
          "conv2d: input columns do not match geometry");
  require(weight.rows() == g.out_channels && weight.cols() == patch,
          "conv2d: weight must be Cout x (Cin*k*k)");
  require(bias.rows() == 1 && bias.cols() == g.out_channels, "conv2d: bias must be 1 x Cout");

  const Index n = x.rows();
  Matrix out(n, g.out_channels * plane);
  Matrix columns(patch, plane);
  for (Index i = 0; i < n; ++i) {
    detail::im2col(x.value().row(i).data(), g.in_channels, g.in_height, g.in_width, g.kernel,
                   g.stride, g.pad, ho, wo, columns.data());
    Eigen::Map<Matrix> o(out.row(i).data(), g.out_channels, plane);
    o.noalias() = weight.value() * columns;
    o.colwise() += bias.value().row(0).transpose();
  }
  return make_result(std::move(out), {x, weight, bias}, [g, ho, wo, patch, plane](Node& self) {
    const Matrix& xv = value_of(self, 0);
    const Matrix& wv = value_of(self, 1);
    Matrix cols(patch, plane);
    Matrix dcols(patch, plane);
    for (Index i = 0; i < self.value.rows(); ++i) {
      Eigen::Map<const Matrix> dout(self.grad.row(i).data(), g.out_channels, plane);
      if (wants(self, 1)) {
        detail::im2col(xv.row(i).data(), g.in_channels, g.in_height, g.in_width, g.kernel,
                       g.stride, g.pad, ho, wo, cols.data());
        grad_of(self, 1).noalias() += dout * cols.transpose();
      }
      if (wants(self, 2)) grad_of(self, 2).row(0) += dout.rowwise().sum().transpose();
      if (wants(self, 0)) {
        dcols.noalias() = wv.transpose() * dout;
        detail::col2im(dcols.data(), g.in_channels, g.in_height, g.in_width, g.kernel, g.stride,
                       g.pad, ho, wo, grad_of(self, 0).row(i).data());
      }
    }
  });
}

Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, const ConvGeometry& g) {
  const int ho = g.transposed_out_height();
  const int wo = g.transposed_out_width();
  const Index in_plane = static_cast<Index>(g.in_height) * g.in_width;
  const Index patch = static_cast<Index>(g.out_channels) * g.kernel * g.kernel;
  require(ho > 0 && wo > 0, "conv_transpose2d: empty output");
  require(x.cols() == g.in_channels * in_plane, "conv_transpose2d: input columns do not match");
  require(weight.rows() == patch && weight.cols() == g.in_channels,
          "conv_transpose2d: weight must be (Cout*k*k) x Cin");
  require(bias.rows() == 1 && bias.cols() == g.out_channels,
          "conv_transpose2d: bias must be 1 x Cout");

  const Index n = x.rows();
  const Index out_plane = static_cast<Index>(ho) * wo;
  Matrix out = Matrix::Zero(n, g.out_channels * out_plane);
  Matrix columns(patch, in_plane);
  for (Index i = 0; i < n; ++i) {
    Eigen::Map<const Matrix> xi(x.value().row(i).data(), g.in_channels, in_plane);
    columns.noalias() = weight.value() * xi;
    // The adjoint convolution maps (Cout, ho, wo) -> (Cin, in_h, in_w).
    detail::col2im(columns.data(), g.out_channels, ho, wo, g.kernel, g.stride, g.pad, g.in_height,
                   g.in_width, out.row(i).data());
    Eigen::Map<Matrix> o(out.row(i).data(), g.out_channels, out_plane);
    o.colwise() += bias.value().row(0).transpose();
  }
  return make_result(std::move(out), {x, weight, bias},
                     [g, ho, wo, in_plane, patch, out_plane](Node& self) {
    const Matrix& xv = value_of(self, 0);
    const Matrix& wv = value_of(self, 1);
    Matrix dcols(patch, in_plane);
    for (Index i = 0; i < self.value.rows(); ++i) {
      detail::im2col(self.grad.row(i).data(), g.out_channels, ho, wo, g.kernel, g.stride, g.pad,
                     g.in_height, g.in_width, dcols.data());
      if (wants(self, 1)) {
        Eigen::Map<const Matrix> xi(xv.row(i).data(), g.in_channels, in_plane);
        grad_of(self, 1).noalias() += dcols * xi.transpose();
      }
      if (wants(self, 2)) {
        Eigen::Map<const Matrix> dout(self.grad.row(i).data(), g.out_channels, out_plane);
        grad_of(self, 2).row(0) += dout.rowwise().sum().transpose();
      }
      if (wants(self, 0)) {
        Eigen::Map<Matrix> dx(grad_of(self, 0).row(i).data(), g.in_channels, in_plane);
        dx.noalias() += wv.transpose() * dcols;
      }
    }
  });
}

}  // namespace opal::ad
