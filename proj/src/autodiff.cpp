#include "fedaml/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Core>

#include "fedaml/error.hpp"

namespace fedaml {

const Tensor& Var::value() const { return tape_->value(*this); }

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, true, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, false, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  bool needs = false;
  for (const Var& in : inputs) {
    if (in.tape() != this) throw UsageError("op mixes values from different tapes");
    needs = needs || nodes_[in.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Tensor{}, needs, needs ? std::move(fn) : nullptr});
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(Var v) {
  Node& n = nodes_[v.id()];
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

const Tensor& Tape::grad(Var v) { return grad_buffer(v); }

void Tape::accumulate(Var v, const Tensor& g) {
  if (!nodes_[v.id()].requires_grad) return;
  Tensor& buf = grad_buffer(v);
  auto dst = buf.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw UsageError("backward: loss belongs to another tape");
  if (value(loss).size() != 1) {
    throw UsageError("backward: loss must be a scalar, got shape " + value(loss).shape_string());
  }
  for (Node& n : nodes_) n.grad = Tensor{};
  grad_buffer(loss)[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad);
  }
}

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw UsageError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                   b.shape_string());
}

void require_matrix(const char* op, const Tensor& a) {
  if (a.rank() != 2) throw UsageError(std::string(op) + ": expected matrix, got " + a.shape_string());
}

template <typename F>
Var unary(Var a, Tensor out, F local_grad) {
  Tape& t = *a.tape();
  Var inputs[] = {a};
  return t.record(std::move(out), inputs, [a, local_grad](Tape& tape, const Tensor& g) {
    Tensor& ga = tape.grad_buffer(a);
    const Tensor& x = tape.value(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * local_grad(x[i], i);
  });
}

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMajor> view(const Tensor& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

// C[m x n] += op(A) * op(B).
void gemm(const Tensor& a, bool ta, const Tensor& b, bool tb, Tensor& c) {
  Eigen::Map<RowMajor> out(c.data().data(), static_cast<Eigen::Index>(c.rows()),
                           static_cast<Eigen::Index>(c.cols()));
  const auto x = view(a);
  const auto y = view(b);
  if (!ta && !tb) out.noalias() += x * y;
  else if (ta && !tb) out.noalias() += x.transpose() * y;
  else if (!ta && tb) out.noalias() += x * y.transpose();
  else out.noalias() += x.transpose() * y.transpose();
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_matrix("matmul", x);
  require_matrix("matmul", y);
  if (x.cols() != y.rows()) shape_error("matmul", x, y);
  Tensor out = Tensor::matrix(x.rows(), y.cols());
  gemm(x, false, y, false, out);
  Var inputs[] = {a, b};
  return a.tape()->record(std::move(out), inputs, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) gemm(g, false, t.value(b), true, t.grad_buffer(a));
    if (t.requires_grad(b)) gemm(t.value(a), true, g, false, t.grad_buffer(b));
  });
}

Var spmm(const SparseOperand& a, Var x) {
  if (!a) throw UsageError("spmm: null sparse operand");
  const Tensor& xv = x.value();
  require_matrix("spmm", xv);
  if (a->cols != xv.rows()) {
    throw UsageError("spmm: incompatible shapes [" + std::to_string(a->rows) + "x" +
                     std::to_string(a->cols) + "] and " + xv.shape_string());
  }
  Tensor out = a->multiply(xv);
  Var inputs[] = {x};
  auto at = std::make_shared<const CsrMatrix>(a->transpose());
  return x.tape()->record(std::move(out), inputs, [x, at](Tape& t, const Tensor& g) {
    Tensor gx = at->multiply(g);
    t.accumulate(x, gx);
  });
}

Var add(Var a, Var b) {
  if (!a.value().same_shape(b.value())) shape_error("add", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  Var inputs[] = {a, b};
  return a.tape()->record(std::move(out), inputs, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  if (!a.value().same_shape(b.value())) shape_error("sub", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  Var inputs[] = {a, b};
  return a.tape()->record(std::move(out), inputs, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  if (!a.value().same_shape(b.value())) shape_error("mul", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  Var inputs[] = {a, b};
  return a.tape()->record(std::move(out), inputs, [a, b](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(a);
    const Tensor& y = t.value(b);
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
    }
  });
}

Var div(Var a, Var b) {
  if (!a.value().same_shape(b.value())) shape_error("div", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= b.value()[i];
  Var inputs[] = {a, b};
  return a.tape()->record(std::move(out), inputs, [a, b](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(a);
    const Tensor& y = t.value(b);
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / y[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * x[i] / (y[i] * y[i]);
    }
  });
}

Var add_row(Var a, Var row) {
  const Tensor& x = a.value();
  const Tensor& r = row.value();
  require_matrix("add_row", x);
  require_matrix("add_row", r);
  if (r.rows() != 1 || r.cols() != x.cols()) shape_error("add_row", x, r);
  Tensor out = x;
  const std::size_t n = x.cols();
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) += r[j];
  Var inputs[] = {a, row};
  return a.tape()->record(std::move(out), inputs, [a, row, n](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    if (t.requires_grad(row)) {
      Tensor& gr = t.grad_buffer(row);
      const std::size_t m = g.rows();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gr[j] += g(i, j);
    }
  });
}

Var scale(Var a, double c) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= c;
  return unary(a, std::move(out), [c](double, std::size_t) { return c; });
}

Var add_scalar(Var a, double c) {
  Tensor out = a.value();
  for (double& v : out.data()) v += c;
  return unary(a, std::move(out), [](double, std::size_t) { return 1.0; });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw UsageError("concat: no inputs");
  const std::size_t rows = parts[0].value().rows();
  std::vector<std::size_t> offsets;
  std::size_t cols = 0;
  for (const Var& p : parts) {
    require_matrix("concat", p.value());
    if (p.value().rows() != rows) shape_error("concat", parts[0].value(), p.value());
    offsets.push_back(cols);
    cols += p.value().cols();
  }
  Tensor out = Tensor::matrix(rows, cols);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& p = parts[k].value();
    for (std::size_t i = 0; i < rows; ++i)
      std::copy_n(p.row_span(i).data(), p.cols(), &out(i, offsets[k]));
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return parts[0].tape()->record(
      std::move(out), ins, [ins, offsets](Tape& t, const Tensor& g) {
        for (std::size_t k = 0; k < ins.size(); ++k) {
          if (!t.requires_grad(ins[k])) continue;
          Tensor& gp = t.grad_buffer(ins[k]);
          const std::size_t c = gp.cols();
          for (std::size_t i = 0; i < gp.rows(); ++i)
            for (std::size_t j = 0; j < c; ++j) gp(i, j) += g(i, offsets[k] + j);
        }
      });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  const Tensor& x = a.value();
  require_matrix("gather_rows", x);
  const std::size_t n = x.cols();
  Tensor out = Tensor::matrix(rows.size(), n);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows()) {
      throw UsageError("gather_rows: index " + std::to_string(rows[i]) + " out of range for " +
                       x.shape_string());
    }
    std::copy_n(x.row_span(rows[i]).data(), n, &out(i, 0));
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  Var inputs[] = {a};
  return a.tape()->record(std::move(out), inputs, [a, idx, n](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) ga(idx[i], j) += g(i, j);
  });
}

Var relu(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return unary(a, std::move(out), [](double x, std::size_t) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  Tensor s = out;
  return unary(a, std::move(out), [s](double, std::size_t i) { return s[i] * (1.0 - s[i]); });
}

Var log(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = std::log(v);
  return unary(a, std::move(out), [](double x, std::size_t) { return 1.0 / x; });
}

Var pow(Var a, double exponent) {
  Tensor out = a.value();
  for (double& v : out.data()) v = std::pow(v, exponent);
  return unary(a, std::move(out), [exponent](double x, std::size_t) {
    if (exponent == 0.0) return 0.0;
    return exponent * std::pow(x, exponent - 1.0);
  });
}

Var clamp(Var a, double lo, double hi) {
  Tensor out = a.value();
  for (double& v : out.data()) v = std::clamp(v, lo, hi);
  return unary(a, std::move(out),
               [lo, hi](double x, std::size_t) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  Var inputs[] = {a};
  return a.tape()->record(Tensor::scalar(s), inputs, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (double& v : ga.data()) v += g[0];
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw UsageError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var trace(Var a) {
  const Tensor& x = a.value();
  require_matrix("trace", x);
  if (x.rows() != x.cols()) throw UsageError("trace: non-square " + x.shape_string());
  double s = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) s += x(i, i);
  Var inputs[] = {a};
  return a.tape()->record(Tensor::scalar(s), inputs, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < ga.rows(); ++i) ga(i, i) += g[0];
  });
}

Var transpose(Var a) {
  const Tensor& x = a.value();
  require_matrix("transpose", x);
  Tensor out = Tensor::matrix(x.cols(), x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(j, i) = x(i, j);
  Var inputs[] = {a};
  return a.tape()->record(std::move(out), inputs, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < ga.rows(); ++i)
      for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) += g(j, i);
  });
}

Var frobenius_norm_sq(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v * v;
  Var inputs[] = {a};
  return a.tape()->record(Tensor::scalar(s), inputs, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    const Tensor& x = t.value(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += 2.0 * x[i] * g[0];
  });
}

Var row_normalize(Var a) {
  const Tensor& x = a.value();
  require_matrix("row_normalize", x);
  Tensor out = x;
  std::vector<double> sums(x.rows(), 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (double v : x.row_span(i)) sums[i] += v;
    if (sums[i] == 0.0) throw NumericalError("row_normalize: row " + std::to_string(i) + " sums to zero");
    for (double& v : out.row_span(i)) v /= sums[i];
  }
  Tensor y = out;
  Var inputs[] = {a};
  return a.tape()->record(std::move(out), inputs, [a, sums, y](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    const std::size_t n = y.cols();
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < n; ++j) ga(i, j) += (g(i, j) - dot) / sums[i];
    }
  });
}

Var softmax(Var a) {
  const Tensor& x = a.value();
  require_matrix("softmax", x);
  Tensor out = x;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto row = out.row_span(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double& v : row) z += (v = std::exp(v - mx));
    for (double& v : row) v /= z;
  }
  Tensor y = out;
  Var inputs[] = {a};
  return a.tape()->record(std::move(out), inputs, [a, y](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    const std::size_t n = y.cols();
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < n; ++j) ga(i, j) += y(i, j) * (g(i, j) - dot);
    }
  });
}

}  // namespace fedaml
