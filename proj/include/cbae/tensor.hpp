#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cbae {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);

// Dense row-major array of doubles with an optional gradient buffer.
//
// Tensor is a handle: copies share storage, the way a tape needs to refer to
// the same parameter the optimizer updates. Use clone() for an independent
// copy. A 1-D tensor of length n behaves as a 1×n matrix in row-wise ops.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  // Leading extent for matrices, 1 for vectors.
  std::size_t rows() const;
  // Trailing extent.
  std::size_t cols() const;

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double operator[](std::size_t i) const { return values()[i]; }
  double at(std::size_t r, std::size_t c) const { return values()[r * cols() + c]; }
  // Value of a single-element tensor.
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);

  bool has_grad() const;
  std::span<const double> grad() const;
  // Allocates a zero gradient on first use.
  std::span<double> mutable_grad() const;
  void zero_grad();

  Tensor clone() const;
  // Copy of the values with no gradient tracking.
  Tensor detach() const;
  bool shares_storage_with(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Storage {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> impl_;
};

// Ordered record of differentiable operations.
//
// A Tape and the tensors it references belong to one thread. backward() may
// be called once per recording; clear() drops the records, zeroes every
// gradient the tape touched and re-arms backward(). A tape in kNoGrad mode
// records nothing, for evaluation passes.
class Tape {
 public:
  enum class Mode { kRecord, kNoGrad };

  explicit Tape(Mode mode = Mode::kRecord) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return mode_ == Mode::kRecord; }
  std::size_t size() const { return records_.size(); }

  void backward(const Tensor& loss);
  void clear();

  // Registers an op. Called by the op implementations; backward_fn reads
  // output.grad() and accumulates into the inputs' gradients.
  void record(std::vector<Tensor> inputs, Tensor output, std::function<void()> backward_fn);

 private:
  struct Record {
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward_fn;
  };
  Mode mode_;
  std::vector<Record> records_;
  bool backward_done_ = false;
};

// Standard matrix product [m×k]·[k×n].
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
// Elementwise a + b, identical shapes.
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
// Elementwise a * b, identical shapes.
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
// x + bias broadcast over rows; bias has cols(x) elements.
Tensor add_row(Tape& tape, const Tensor& x, const Tensor& bias);
// x·weightᵀ + bias with weight stored [out×in].
Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor scale(Tape& tape, const Tensor& x, double factor);
Tensor relu(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);
// Row-wise softmax with max subtraction.
Tensor softmax(Tape& tape, const Tensor& logits);
Tensor sum(Tape& tape, const Tensor& x);
Tensor mean(Tape& tape, const Tensor& x);

// Mean of squared differences over all elements.
Tensor mse_loss(Tape& tape, const Tensor& x, const Tensor& x_prime);
// Mean over rows of -log softmax(logits)[target], evaluated in log space.
Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const std::size_t> targets);
Tensor cross_entropy(Tape& tape, const Tensor& logits, std::size_t target);
// Mean over rows of sum_i p_i log p_i with 0 log 0 = 0. Each row of p must
// sum to 1 within 1e-9.
Tensor neg_entropy(Tape& tape, const Tensor& p);

}  // namespace cbae
