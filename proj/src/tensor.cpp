#include "cbae/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "cbae/error.hpp"
#include "kernels.hpp"

namespace cbae {

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

std::size_t extent_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

void require_rank_at_most_2(const Tensor& t, const char* op) {
  require_defined(t, op);
  if (t.rank() > 2) {
    throw ShapeError(std::string(op) + ": expected a vector or matrix, got " +
                     to_string(t.shape()));
  }
}

bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  return std::any_of(ts.begin(), ts.end(), [](const Tensor* t) { return t->requires_grad(); });
}

// Output tensor that tracks gradients when the tape records and any input does.
Tensor make_output(Tape& tape, Shape shape, std::vector<double> values, bool inputs_need_grad) {
  return Tensor(std::move(shape), std::move(values), tape.recording() && inputs_need_grad);
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.empty()) throw ShapeError("tensor: empty shape");
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("tensor: zero extent in shape " + to_string(shape));
  }
  if (extent_product(shape) != values.size()) {
    throw ShapeError("tensor: shape " + to_string(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  }
  impl_ = std::make_shared<Storage>();
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = extent_product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows,
                      bool requires_grad) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("tensor: ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const {
  require_defined(*this, "shape");
  return impl_->shape;
}

std::size_t Tensor::size() const { return defined() ? impl_->values.size() : 0; }

std::size_t Tensor::rows() const { return rank() == 1 ? 1 : size() / cols(); }

std::size_t Tensor::cols() const { return shape().back(); }

std::span<const double> Tensor::values() const {
  require_defined(*this, "values");
  return impl_->values;
}

std::span<double> Tensor::mutable_values() {
  require_defined(*this, "values");
  return impl_->values;
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item: tensor of shape " + to_string(shape()) +
                                       " is not a scalar");
  return impl_->values[0];
}

bool Tensor::requires_grad() const { return defined() && impl_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  require_defined(*this, "set_requires_grad");
  impl_->requires_grad = on;
}

bool Tensor::has_grad() const { return defined() && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  require_defined(*this, "grad");
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() const {
  require_defined(*this, "grad");
  if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (has_grad()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  require_defined(*this, "clone");
  Tensor copy(impl_->shape, impl_->values, impl_->requires_grad);
  copy.impl_->grad = impl_->grad;
  return copy;
}

Tensor Tensor::detach() const {
  require_defined(*this, "detach");
  return Tensor(impl_->shape, impl_->values, false);
}

// ---------------------------------------------------------------------------
// Tape

void Tape::record(std::vector<Tensor> inputs, Tensor output, std::function<void()> backward_fn) {
  if (!recording()) return;
  records_.push_back({std::move(inputs), std::move(output), std::move(backward_fn)});
}

void Tape::backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + to_string(loss.shape()));
  }
  if (backward_done_) {
    throw ContractError("backward: already run on this tape; call clear() before re-running");
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss does not depend on any tensor requiring grad");
  }
  // Fresh gradient buffers for every intermediate result, then seed dL/dL.
  for (auto& r : records_) {
    r.output.mutable_grad();
    r.output.zero_grad();
  }
  Tensor seed = loss;
  seed.mutable_grad()[0] = 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->backward_fn();
  backward_done_ = true;
}

void Tape::clear() {
  for (auto& r : records_) {
    for (auto& in : r.inputs) in.zero_grad();
    r.output.zero_grad();
  }
  records_.clear();
  backward_done_ = false;
}

// ---------------------------------------------------------------------------
// Ops

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: cannot multiply " + to_string(a.shape()) + " by " +
                     to_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> c(m * n, 0.0);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) kernels::axpy(av[i * k + p], bv + p * n, &c[i * n], n);
  }
  Tensor out = make_output(tape, {m, n}, std::move(c), any_requires_grad({&a, &b}));
  if (out.requires_grad()) {
    tape.record({a, b}, out, [a, b, out, m, k, n]() mutable {
      const double* g = out.grad().data();
      if (a.requires_grad()) {
        double* ga = a.mutable_grad().data();
        const double* bv = b.values().data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += kernels::dot(g + i * n, bv + p * n, n);
      }
      if (b.requires_grad()) {
        double* gb = b.mutable_grad().data();
        const double* av = a.values().data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) kernels::axpy(av[i * k + p], g + i * n, gb + p * n, n);
      }
    });
  }
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> c(a.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = a[i] + b[i];
  Tensor out = make_output(tape, a.shape(), std::move(c), any_requires_grad({&a, &b}));
  if (out.requires_grad()) {
    tape.record({a, b}, out, [a, b, out]() mutable {
      const auto g = out.grad();
      for (const Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto gt = t->mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
      }
    });
  }
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> c(a.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = a[i] * b[i];
  Tensor out = make_output(tape, a.shape(), std::move(c), any_requires_grad({&a, &b}));
  if (out.requires_grad()) {
    tape.record({a, b}, out, [a, b, out]() mutable {
      const auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
      }
    });
  }
  return out;
}

Tensor add_row(Tape& tape, const Tensor& x, const Tensor& bias) {
  require_rank_at_most_2(x, "add_row");
  require_defined(bias, "add_row");
  if (bias.size() != x.cols()) {
    throw ShapeError("add_row: bias " + to_string(bias.shape()) + " does not match columns of " +
                     to_string(x.shape()));
  }
  const std::size_t rows = x.rows(), cols = x.cols();
  std::vector<double> y(x.values().begin(), x.values().end());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] += bias[c];
  Tensor out = make_output(tape, x.shape(), std::move(y), any_requires_grad({&x, &bias}));
  if (out.requires_grad()) {
    tape.record({x, bias}, out, [x, bias, out, rows, cols]() mutable {
      const auto g = out.grad();
      if (x.requires_grad()) {
        auto gx = x.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto gb = bias.mutable_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
      }
    });
  }
  return out;
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank_at_most_2(x, "linear");
  require_defined(weight, "linear");
  require_defined(bias, "linear");
  if (weight.rank() != 2 || weight.shape()[1] != x.cols() || bias.size() != weight.shape()[0]) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " incompatible with weight " +
                     to_string(weight.shape()) + " and bias " + to_string(bias.shape()));
  }
  const std::size_t rows = x.rows(), in = x.cols(), outs = weight.shape()[0];
  std::vector<double> y(rows * outs);
  const double* xv = x.values().data();
  const double* wv = weight.values().data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < outs; ++o)
      y[r * outs + o] = kernels::dot(xv + r * in, wv + o * in, in) + bias[o];
  Shape shape = x.rank() == 1 ? Shape{outs} : Shape{rows, outs};
  Tensor out = make_output(tape, std::move(shape), std::move(y),
                           any_requires_grad({&x, &weight, &bias}));
  if (out.requires_grad()) {
    tape.record({x, weight, bias}, out, [x, weight, bias, out, rows, in, outs]() mutable {
      const double* g = out.grad().data();
      if (x.requires_grad()) {
        double* gx = x.mutable_grad().data();
        const double* wv = weight.values().data();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t o = 0; o < outs; ++o)
            kernels::axpy(g[r * outs + o], wv + o * in, gx + r * in, in);
      }
      if (weight.requires_grad()) {
        double* gw = weight.mutable_grad().data();
        const double* xv = x.values().data();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t o = 0; o < outs; ++o)
            kernels::axpy(g[r * outs + o], xv + r * in, gw + o * in, in);
      }
      if (bias.requires_grad()) {
        auto gb = bias.mutable_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t o = 0; o < outs; ++o) gb[o] += g[r * outs + o];
      }
    });
  }
  return out;
}

Tensor scale(Tape& tape, const Tensor& x, double factor) {
  require_defined(x, "scale");
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = factor * x[i];
  Tensor out = make_output(tape, x.shape(), std::move(y), x.requires_grad());
  if (out.requires_grad()) {
    tape.record({x}, out, [x, out, factor]() mutable {
      const auto g = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
    });
  }
  return out;
}

Tensor relu(Tape& tape, const Tensor& x) {
  require_defined(x, "relu");
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  Tensor out = make_output(tape, x.shape(), std::move(y), x.requires_grad());
  if (out.requires_grad()) {
    tape.record({x}, out, [x, out]() mutable {
      const auto g = out.grad();
      auto gx = x.mutable_grad();
      // Subgradient at 0 is 0.
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] > 0.0) gx[i] += g[i];
    });
  }
  return out;
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  require_defined(x, "sigmoid");
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double v = x[i];
    if (v >= 0.0) {
      y[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      y[i] = e / (1.0 + e);
    }
  }
  Tensor out = make_output(tape, x.shape(), std::move(y), x.requires_grad());
  if (out.requires_grad()) {
    tape.record({x}, out, [x, out]() mutable {
      const auto g = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * out[i] * (1.0 - out[i]);
    });
  }
  return out;
}

Tensor softmax(Tape& tape, const Tensor& logits) {
  require_rank_at_most_2(logits, "softmax");
  const std::size_t rows = logits.rows(), n = logits.cols();
  std::vector<double> y(logits.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* l = logits.values().data() + r * n;
    double* p = y.data() + r * n;
    const double m = *std::max_element(l, l + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (p[j] = std::exp(l[j] - m));
    for (std::size_t j = 0; j < n; ++j) p[j] /= z;
  }
  Tensor out = make_output(tape, logits.shape(), std::move(y), logits.requires_grad());
  if (out.requires_grad()) {
    tape.record({logits}, out, [logits, out, rows, n]() mutable {
      const double* g = out.grad().data();
      const double* p = out.values().data();
      double* gl = logits.mutable_grad().data();
      for (std::size_t r = 0; r < rows; ++r) {
        const double s = kernels::dot(g + r * n, p + r * n, n);
        for (std::size_t j = 0; j < n; ++j) gl[r * n + j] += p[r * n + j] * (g[r * n + j] - s);
      }
    });
  }
  return out;
}

Tensor sum(Tape& tape, const Tensor& x) {
  require_defined(x, "sum");
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor out = make_output(tape, {1}, {s}, x.requires_grad());
  if (out.requires_grad()) {
    tape.record({x}, out, [x, out]() mutable {
      const double g = out.grad()[0];
      for (double& gx : x.mutable_grad()) gx += g;
    });
  }
  return out;
}

Tensor mean(Tape& tape, const Tensor& x) {
  require_defined(x, "mean");
  return scale(tape, sum(tape, x), 1.0 / static_cast<double>(x.size()));
}

Tensor mse_loss(Tape& tape, const Tensor& x, const Tensor& x_prime) {
  require_same_shape(x, x_prime, "mse_loss");
  const std::size_t n = x.size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[i] - x_prime[i];
    s += d * d;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  Tensor out = make_output(tape, {1}, {s * inv_n}, any_requires_grad({&x, &x_prime}));
  if (out.requires_grad()) {
    tape.record({x, x_prime}, out, [x, x_prime, out, n, inv_n]() mutable {
      const double g = 2.0 * inv_n * out.grad()[0];
      if (x.requires_grad()) {
        auto gx = x.mutable_grad();
        for (std::size_t i = 0; i < n; ++i) gx[i] += g * (x[i] - x_prime[i]);
      }
      if (x_prime.requires_grad()) {
        auto gp = x_prime.mutable_grad();
        for (std::size_t i = 0; i < n; ++i) gp[i] -= g * (x[i] - x_prime[i]);
      }
    });
  }
  return out;
}

Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const std::size_t> targets) {
  require_rank_at_most_2(logits, "cross_entropy");
  const std::size_t rows = logits.rows(), n = logits.cols();
  if (targets.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(rows) + " rows");
  }
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] >= n) {
      throw IndexError("cross_entropy: target " + std::to_string(targets[r]) + " at row " +
                       std::to_string(r) + " out of range for " + std::to_string(n) + " classes");
    }
  }
  std::vector<double> probs(rows * n);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* l = logits.values().data() + r * n;
    const double m = *std::max_element(l, l + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(l[j] - m);
    const double lse = m + std::log(z);
    total += lse - l[targets[r]];
    for (std::size_t j = 0; j < n; ++j) probs[r * n + j] = std::exp(l[j] - lse);
  }
  const double inv_rows = 1.0 / static_cast<double>(rows);
  Tensor out = make_output(tape, {1}, {total * inv_rows}, logits.requires_grad());
  if (out.requires_grad()) {
    std::vector<std::size_t> t(targets.begin(), targets.end());
    tape.record({logits}, out,
                [logits, out, probs = std::move(probs), t = std::move(t), n, inv_rows]() mutable {
                  const double g = out.grad()[0] * inv_rows;
                  auto gl = logits.mutable_grad();
                  for (std::size_t r = 0; r < t.size(); ++r) {
                    for (std::size_t j = 0; j < n; ++j) gl[r * n + j] += g * probs[r * n + j];
                    gl[r * n + t[r]] -= g;
                  }
                });
  }
  return out;
}

Tensor cross_entropy(Tape& tape, const Tensor& logits, std::size_t target) {
  if (logits.defined() && logits.rows() != 1) {
    throw ShapeError("cross_entropy: single target given for " + to_string(logits.shape()));
  }
  const std::size_t targets[1] = {target};
  return cross_entropy(tape, logits, targets);
}

Tensor neg_entropy(Tape& tape, const Tensor& p) {
  require_rank_at_most_2(p, "neg_entropy");
  const std::size_t rows = p.rows(), n = p.cols();
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = p.values().data() + r * n;
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!(row[j] >= 0.0 && row[j] <= 1.0)) {
        throw ValidationError("neg_entropy: entry " + std::to_string(row[j]) + " at row " +
                              std::to_string(r) + " is not a probability");
      }
      s += row[j];
      if (row[j] > 0.0) total += row[j] * std::log(row[j]);
    }
    if (std::abs(s - 1.0) > 1e-9) {
      throw ValidationError("neg_entropy: row " + std::to_string(r) + " sums to " +
                            std::to_string(s));
    }
  }
  const double inv_rows = 1.0 / static_cast<double>(rows);
  Tensor out = make_output(tape, {1}, {total * inv_rows}, p.requires_grad());
  if (out.requires_grad()) {
    tape.record({p}, out, [p, out, inv_rows]() mutable {
      const double g = out.grad()[0] * inv_rows;
      // d/dp (p log p) = log p + 1; at p == 0 the log is clamped to the
      // smallest normal double so the value stays finite.
      constexpr double kFloor = std::numeric_limits<double>::min();
      auto gp = p.mutable_grad();
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g * (std::log(std::max(p[i], kFloor)) + 1.0);
    });
  }
  return out;
}

}  // namespace cbae
