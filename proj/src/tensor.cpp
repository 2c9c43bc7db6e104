#include "promptmix/tensor.hpp"

#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "promptmix/errors.hpp"

namespace promptmix {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  auto storage = std::make_shared<Storage>();
  storage->values.assign(shape_numel(shape), value);
  storage->shape = std::move(shape);
  return Tensor(std::move(storage));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_string(shape) + " needs " + std::to_string(shape_numel(shape)) +
                     " values, got " + std::to_string(values.size()));
  }
  auto storage = std::make_shared<Storage>();
  storage->shape = std::move(shape);
  storage->values = std::move(values);
  return Tensor(std::move(storage));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

std::size_t Tensor::rows() const {
  const auto& s = impl_->shape;
  if (s.size() < 2) return 1;
  return numel() / s.back();
}

std::size_t Tensor::cols() const {
  const auto& s = impl_->shape;
  return s.empty() ? 1 : s.back();
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  return impl_->values[0];
}

std::span<double> Tensor::grad_buffer() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
  return impl_->grad;
}

Tensor Tensor::clone() const {
  auto storage = std::make_shared<Storage>();
  storage->shape = impl_->shape;
  storage->values = impl_->values;
  return Tensor(std::move(storage));
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

void Tape::record(std::string_view op, Tensor result, BackwardRule rule) {
  records_.push_back(Record{op, std::move(result), std::move(rule)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " +
                     (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    throw InputError("backward(): loss does not depend on any tensor that requires a gradient");
  }
  Tensor seed = loss;
  seed.grad_buffer()[0] += 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (!it->result.has_grad()) continue;
    it->backward();
  }
}

void backward(const Tensor& loss) {
  Tape* tape = active_tape();
  if (tape == nullptr) throw InputError("backward(): no active tape");
  tape->backward(loss);
}

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace promptmix
