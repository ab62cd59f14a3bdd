#include "precodec/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace precodec {

namespace {

thread_local Precision g_precision = Precision::kFloat64;
thread_local Tape* g_active_tape = nullptr;
std::atomic<std::uint64_t> g_next_tape_id{1};

void round_all(std::vector<double>& values) {
  if (g_precision != Precision::kFloat32) return;
  for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

void check_finite(const std::vector<double>& values) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("non-finite value produced by tensor op");
  }
}

}  // namespace

Index numel_of(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) {
    if (e <= 0) throw InvalidShape("tensor extents must be positive, got " + shape_str(shape));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Precision precision() { return g_precision; }
void set_precision(Precision p) { g_precision = p; }

PrecisionGuard::PrecisionGuard(Precision p) : saved_(g_precision) { g_precision = p; }
PrecisionGuard::~PrecisionGuard() { g_precision = saved_; }

double round_to_precision(double v) {
  return g_precision == Precision::kFloat32 ? static_cast<double>(static_cast<float>(v)) : v;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() = default;

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (numel_of(shape) != static_cast<Index>(values.size())) {
    throw InvalidShape("value count " + std::to_string(values.size()) + " does not match shape " +
                       shape_str(shape));
  }
  round_all(values);
  check_finite(values);
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::make_shared<const std::vector<double>>(std::move(values));
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const Index n = numel_of(shape);
  return from(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const Index n = numel_of(shape);
  return from(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!impl_) throw InvalidArgument("use of undefined tensor");
  return impl_->shape;
}

Index Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw InvalidShape("axis out of range for shape " + shape_str(s));
  return s[axis];
}

Index Tensor::numel() const { return static_cast<Index>(data().size()); }

std::span<const double> Tensor::data() const {
  if (!impl_) throw InvalidArgument("use of undefined tensor");
  return {impl_->data->data(), impl_->data->size()};
}

std::vector<double> Tensor::to_vector() const {
  auto d = data();
  return {d.begin(), d.end()};
}

double Tensor::item() const {
  if (numel() != 1) throw InvalidShape("item() needs a single-element tensor, got " + shape_str(shape()));
  return data()[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

const std::vector<double>* Tensor::grad() const { return impl_ ? impl_->grad.get() : nullptr; }

Tensor Tensor::detach() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape();
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

Tensor Tensor::as_leaf(bool requires_grad) const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape();
  impl->data = impl_->data;
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

// ---------------------------------------------------------------------------
// Op results

Tensor make_result(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                   BackwardFn backward) {
  return make_result(std::move(shape), std::move(values), std::vector<Tensor>(inputs), std::move(backward));
}

Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   BackwardFn backward) {
  if (numel_of(shape) != static_cast<Index>(values.size())) {
    throw InvalidShape("op produced " + std::to_string(values.size()) + " values for shape " +
                       shape_str(shape));
  }
  round_all(values);
  check_finite(values);
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::make_shared<const std::vector<double>>(std::move(values));

  Tape* tape = g_active_tape;
  if (tape != nullptr && backward) {
    if (tape->consumed_) throw TapeConsumed("cannot record on a tape after backward");
    std::vector<Index> input_nodes;
    input_nodes.reserve(inputs.size());
    bool any = false;
    for (const Tensor& in : inputs) {
      Index n = in.defined() ? tape->node_of(in) : -1;
      any = any || n >= 0;
      input_nodes.push_back(n);
    }
    if (any) {
      Tape::Node node;
      node.numel = static_cast<Index>(impl->data->size());
      node.inputs = std::move(input_nodes);
      node.backward = std::move(backward);
      impl->tape_id = tape->id_;
      impl->node = static_cast<Index>(tape->nodes_.size());
      tape->nodes_.push_back(std::move(node));
    }
  }
  return Tensor(std::move(impl));
}

// ---------------------------------------------------------------------------
// GradSink

std::span<double> GradSink::operator[](std::size_t input) {
  const Index n = inputs_.at(input);
  if (n < 0) return {};
  auto& g = tape_.grad_buffer(n);
  return {g.data(), g.size()};
}

bool GradSink::wants(std::size_t input) const { return inputs_.at(input) >= 0; }

// ---------------------------------------------------------------------------
// Tape

Tape::Tape() : id_(g_next_tape_id.fetch_add(1)) {}

Tape::~Tape() {
  if (g_active_tape == this) g_active_tape = nullptr;
}

Tape::Recording::Recording(Tape* tape) : previous_(g_active_tape) { g_active_tape = tape; }
Tape::Recording::~Recording() { g_active_tape = previous_; }

Tape::Recording Tape::record() {
  if (consumed_) throw TapeConsumed("tape already consumed by backward");
  return Recording(this);
}

Tape* Tape::active() { return g_active_tape; }

Index Tape::node_of(const Tensor& t) {
  const auto* impl = t.impl_.get();
  if (impl->tape_id == id_ && impl->node >= 0) return impl->node;
  if (!impl->requires_grad) return -1;
  auto it = leaves_.find(impl);
  if (it != leaves_.end()) return it->second;
  Node node;
  node.numel = static_cast<Index>(impl->data->size());
  node.leaf = t.impl_;
  const Index idx = static_cast<Index>(nodes_.size());
  nodes_.push_back(std::move(node));
  leaves_.emplace(impl, idx);
  return idx;
}

Index Tape::lookup(const detail::TensorImpl* impl) const {
  if (impl->tape_id == id_ && impl->node >= 0) return impl->node;
  auto it = leaves_.find(impl);
  return it == leaves_.end() ? -1 : it->second;
}

std::vector<double>& Tape::grad_buffer(Index node) {
  Node& n = nodes_.at(static_cast<std::size_t>(node));
  if (n.grad.empty()) n.grad.assign(static_cast<std::size_t>(n.numel), 0.0);
  return n.grad;
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw TapeConsumed("tape already consumed by backward");
  if (loss.numel() != 1) throw InvalidShape("backward needs a scalar loss, got " + shape_str(loss.shape()));
  const Index root = lookup(loss.impl());
  consumed_ = true;
  // Detach recording so ops inside backward closures are never taped.
  Tape* saved = g_active_tape;
  g_active_tape = nullptr;
  if (root >= 0) {
    grad_buffer(root)[0] = 1.0;
    for (Index i = root; i >= 0; --i) {
      Node& node = nodes_[static_cast<std::size_t>(i)];
      if (node.grad.empty() || !node.backward) continue;
      GradSink sink(*this, node.inputs);
      node.backward({node.grad.data(), node.grad.size()}, sink);
    }
  }
  g_active_tape = saved == this ? nullptr : saved;
  for (Node& node : nodes_) {
    if (!node.leaf) continue;
    if (node.grad.empty()) node.grad.assign(static_cast<std::size_t>(node.numel), 0.0);
    node.leaf->grad = std::make_shared<std::vector<double>>(node.grad);
  }
}

std::optional<std::vector<double>> Tape::grad(const Tensor& t) const {
  if (!consumed_) return std::nullopt;
  const Index n = lookup(t.impl());
  if (n < 0) return std::nullopt;
  const Node& node = nodes_[static_cast<std::size_t>(n)];
  if (node.grad.empty()) return std::vector<double>(static_cast<std::size_t>(node.numel), 0.0);
  return node.grad;
}

}  // namespace precodec
