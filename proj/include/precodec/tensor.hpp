#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "precodec/errors.hpp"

namespace precodec {

using Index = std::int64_t;
using Shape = std::vector<Index>;

Index numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

// Arithmetic precision of tensor values. Storage is always 64-bit; in
// kFloat32 mode every op result is rounded to the nearest float so the
// numerics behave like single precision.
enum class Precision { kFloat32, kFloat64 };

Precision precision();
void set_precision(Precision p);

// Sets the precision for the lifetime of the guard (per thread).
class PrecisionGuard {
 public:
  explicit PrecisionGuard(Precision p);
  ~PrecisionGuard();
  PrecisionGuard(const PrecisionGuard&) = delete;
  PrecisionGuard& operator=(const PrecisionGuard&) = delete;

 private:
  Precision saved_;
};

double round_to_precision(double v);

class Tape;
class GradSink;
class Tensor;

using BackwardFn = std::function<void(std::span<const double> grad_out, GradSink& sink)>;

namespace detail {

struct TensorImpl {
  Shape shape;
  std::shared_ptr<const std::vector<double>> data;
  bool requires_grad = false;
  // Written by Tape::backward for leaves that require grad.
  std::shared_ptr<std::vector<double>> grad;
  // Set when this tensor is the result of an op recorded on a tape.
  std::uint64_t tape_id = 0;
  Index node = -1;
};

}  // namespace detail

// Dense row-major real array. A Tensor is a cheap handle to immutable
// storage; ops never mutate their inputs.
class Tensor {
 public:
  Tensor();

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  Index dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  Index numel() const;

  std::span<const double> data() const;
  std::vector<double> to_vector() const;
  double item() const;
  double operator[](Index flat) const { return data()[static_cast<std::size_t>(flat)]; }

  bool requires_grad() const;
  // Gradient from the most recent backward pass that reached this leaf.
  const std::vector<double>* grad() const;

  // A copy of the values that does not participate in autograd.
  Tensor detach() const;
  // Same storage, flagged as a trainable leaf.
  Tensor as_leaf(bool requires_grad = true) const;

  const detail::TensorImpl* impl() const { return impl_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;

  friend class Tape;
  friend Tensor make_result(Shape, std::vector<double>, const std::vector<Tensor>&, BackwardFn);
};

// Handed to an op's backward function: exposes the gradient accumulator of
// each recorded input, or an empty span for inputs that need no gradient.
class GradSink {
 public:
  std::span<double> operator[](std::size_t input);
  bool wants(std::size_t input) const;

 private:
  friend class Tape;
  GradSink(Tape& tape, const std::vector<Index>& input_nodes) : tape_(tape), inputs_(input_nodes) {}
  Tape& tape_;
  const std::vector<Index>& inputs_;
};

// Creates an op result. When a tape is recording and any input needs a
// gradient, the op is appended to the tape with `backward`. Values are
// rounded to the active precision and checked for finiteness.
Tensor make_result(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                   BackwardFn backward);
Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   BackwardFn backward);

// Ordered record of executed ops. Recording is activated per thread with
// record(); backward() replays the record exactly once, in reverse order.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  class Recording {
   public:
    ~Recording();
    Recording(const Recording&) = delete;
    Recording& operator=(const Recording&) = delete;

   private:
    friend class Tape;
    explicit Recording(Tape* tape);
    Tape* previous_;
  };

  [[nodiscard]] Recording record();
  void backward(const Tensor& loss);

  // Gradient of the last backward pass w.r.t. any tensor recorded on this
  // tape (leaf or intermediate); nullopt when the tensor was unreachable.
  std::optional<std::vector<double>> grad(const Tensor& t) const;

  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

  static Tape* active();

 private:
  friend class GradSink;
  friend Tensor make_result(Shape, std::vector<double>, const std::vector<Tensor>&, BackwardFn);

  struct Node {
    Index numel = 0;
    std::vector<double> grad;
    std::vector<Index> inputs;
    BackwardFn backward;
    std::shared_ptr<detail::TensorImpl> leaf;
  };

  Index node_of(const Tensor& t);
  Index lookup(const detail::TensorImpl* impl) const;
  std::vector<double>& grad_buffer(Index node);

  std::uint64_t id_;
  std::vector<Node> nodes_;
  std::unordered_map<const detail::TensorImpl*, Index> leaves_;
  bool consumed_ = false;
};

}  // namespace precodec
