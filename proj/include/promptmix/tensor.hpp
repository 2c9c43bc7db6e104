#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace promptmix {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense row-major array of doubles with an optional gradient slot.
//
// Tensor is a shared handle: copies alias the same storage, which is what lets
// a parameter owned by a model appear as an operand on the tape. Use clone()
// for an independent copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->values.size(); }
  // Leading dimension for matrices; 1 for vectors and scalars.
  std::size_t rows() const;
  // Trailing dimension; 1 for scalars.
  std::size_t cols() const;

  std::span<double> data() { return impl_->values; }
  std::span<const double> data() const { return impl_->values; }
  double item() const;
  double at(std::size_t row, std::size_t col) const {
    return impl_->values[row * cols() + col];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<double> grad() { return impl_->grad; }
  std::span<const double> grad() const { return impl_->grad; }
  // Allocates a zeroed gradient buffer if absent and returns it. Gradients
  // belong to the shared storage, so this is callable through const handles.
  std::span<double> grad_buffer() const;
  void clear_grad() const { impl_->grad.clear(); }

  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Storage {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  explicit Tensor(std::shared_ptr<Storage> impl) : impl_(std::move(impl)) {}

  std::shared_ptr<Storage> impl_;
};

// Ordered list of primitive applications (a Wengert list). Records are appended
// in execution order, so operands always precede results; backward() replays
// them in reverse, which fixes the gradient accumulation order.
class Tape {
 public:
  using BackwardRule = std::function<void()>;

  struct Record {
    std::string_view op;
    Tensor result;
    BackwardRule backward;
  };

  void record(std::string_view op, Tensor result, BackwardRule rule);
  std::size_t size() const { return records_.size(); }
  const std::vector<Record>& records() const { return records_; }
  void clear() { records_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and propagates to every reachable tensor that
  // requires a gradient. Gradients accumulate into existing buffers.
  void backward(const Tensor& loss);

 private:
  std::vector<Record> records_;
};

// Makes a tape the recording target for ops issued on this thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// Convenience for backward() on the active tape.
void backward(const Tensor& loss);

// Keeps freed tensor buffers in the process heap instead of returning them to
// the kernel after every step. Training allocates and frees the same large
// buffers thousands of times, and page faults otherwise dominate. Call once
// from main(); a no-op outside glibc.
void tune_allocator();

}  // namespace promptmix
