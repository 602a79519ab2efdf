#include "raad/tensor.hpp"

#include "raad/errors.hpp"

#include <unordered_map>

namespace raad {

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor() : Tensor(Shape{0}) {}

Tensor::Tensor(Shape shape, Scalar fill) : node_(std::make_shared<detail::TensorNode>()) {
  const auto n = numel_of(shape);
  node_->shape = std::move(shape);
  node_->data = Buffer::Constant(static_cast<Eigen::Index>(n), fill);
}

Tensor::Tensor(Shape shape, Buffer data) : node_(std::make_shared<detail::TensorNode>()) {
  if (numel_of(shape) != static_cast<std::size_t>(data.size()))
    throw DimensionError("tensor: shape " + shape_string(shape) + " holds " + std::to_string(numel_of(shape)) +
                         " values but data has " + std::to_string(data.size()));
  node_->shape = std::move(shape);
  node_->data = std::move(data);
}

Tensor::Tensor(Shape shape, std::initializer_list<Scalar> values)
    : Tensor(std::move(shape), Buffer(Eigen::Map<const Buffer>(values.begin(), static_cast<Eigen::Index>(values.size())))) {}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank())
    throw DimensionError("tensor: axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank()));
  return node_->shape[axis];
}

Scalar Tensor::item() const {
  if (numel() != 1) throw ContractError("tensor: item() on tensor of shape " + shape_string(shape()));
  return node_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  if (!on) node_->grad.reset();
  return *this;
}

const Buffer& Tensor::grad() const {
  if (!node_->grad) throw ContractError("tensor: gradient requested but absent");
  return *node_->grad;
}

void Tensor::accumulate_grad(const Buffer& g) {
  if (g.size() != node_->data.size()) throw DimensionError("tensor: gradient size mismatch");
  if (node_->grad)
    *node_->grad += g;
  else
    node_->grad = g;
}

Tensor Tensor::clone() const {
  Tensor t(node_->shape, node_->data);
  t.node_->requires_grad = node_->requires_grad;
  return t;
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->data); }

Tensor Tensor::reshaped(Shape shape) const {
  if (numel_of(shape) != numel())
    throw DimensionError("reshape: " + shape_string(this->shape()) + " -> " + shape_string(shape));
  return Tensor(std::move(shape), node_->data);
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Recording::Recording(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
Tape::Recording::~Recording() { g_active_tape = previous_; }

NoGrad::NoGrad() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGrad::~NoGrad() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

bool record_op(std::string_view op, std::vector<Tensor> inputs, Tensor& output, Tape::BackwardFn backward) {
  Tape* tape = active_tape();
  if (!tape) return false;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return false;
  output.set_requires_grad(true);
  tape->record({op, std::move(inputs), output, std::move(backward)});
  return true;
}

void backward(const Tensor& loss, const Tape& tape) {
  if (loss.numel() != 1)
    throw ContractError("backward: loss must be scalar, got shape " + shape_string(loss.shape()));
  if (!loss.requires_grad()) throw ContractError("backward: loss is not connected to any differentiable input");

  std::unordered_map<const detail::TensorNode*, Buffer> grads;
  std::unordered_map<const detail::TensorNode*, Tensor> handles;
  grads.emplace(loss.node(), Buffer::Ones(1));
  handles.emplace(loss.node(), loss);

  const auto& nodes = tape.nodes();
  std::vector<Buffer*> sinks;
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    auto found = grads.find(it->output.node());
    if (found == grads.end()) continue;
    const Buffer& grad_out = found->second;
    sinks.assign(it->inputs.size(), nullptr);
    for (std::size_t i = 0; i < it->inputs.size(); ++i) {
      const Tensor& in = it->inputs[i];
      if (!in.requires_grad()) continue;
      auto [slot, inserted] = grads.try_emplace(in.node());
      if (inserted) {
        slot->second = Buffer::Zero(static_cast<Eigen::Index>(in.numel()));
        handles.emplace(in.node(), in);
      }
      sinks[i] = &slot->second;
    }
    it->backward(grad_out, GradSinks(sinks));
  }

  for (auto& [node, g] : grads) {
    if (!g.allFinite()) throw NumericError("backward: non-finite gradient");
    handles.at(node).accumulate_grad(g);
  }
}

}  // namespace raad
