#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace raad {

using Scalar = double;
using Shape = std::vector<std::size_t>;
using Buffer = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename S>
using RowMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

std::size_t numel_of(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {
struct TensorNode {
  Shape shape;
  Buffer data;
  bool requires_grad = false;
  std::optional<Buffer> grad;
};
}  // namespace detail

/// Dense row-major array of doubles.
///
/// A Tensor is a shared handle: copies alias the same storage, which is what
/// lets the tape route gradients back to parameters. Use clone() for a deep
/// copy and detach() for a deep copy cut off from differentiation.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, Scalar fill = 0.0);
  Tensor(Shape shape, Buffer data);
  Tensor(Shape shape, std::initializer_list<Scalar> values);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return static_cast<std::size_t>(node_->data.size()); }

  const Buffer& data() const { return node_->data; }
  Buffer& data() { return node_->data; }
  Scalar operator[](std::size_t i) const { return node_->data[static_cast<Eigen::Index>(i)]; }
  Scalar& operator[](std::size_t i) { return node_->data[static_cast<Eigen::Index>(i)]; }
  Scalar item() const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool has_grad() const { return node_->grad.has_value(); }
  const Buffer& grad() const;
  void zero_grad() { node_->grad.reset(); }
  void accumulate_grad(const Buffer& g);

  Tensor clone() const;
  Tensor detach() const;
  Tensor reshaped(Shape shape) const;

  bool is_finite() const { return node_->data.allFinite(); }
  bool same_node(const Tensor& other) const { return node_ == other.node_; }
  const detail::TensorNode* node() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::TensorNode> node_;
};

/// Gradient buffers handed to a node's backward rule, one per input.
/// Entries are null for inputs that do not require gradients.
using GradSinks = std::span<Buffer* const>;

/// Ordered record of differentiable operations.
class Tape {
 public:
  using BackwardFn = std::function<void(const Buffer& grad_out, GradSinks grad_in)>;

  struct Node {
    std::string_view op;
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };

  /// Makes this tape the recording target on the current thread for its lifetime.
  class Recording {
   public:
    explicit Recording(Tape& tape);
    ~Recording();
    Recording(const Recording&) = delete;
    Recording& operator=(const Recording&) = delete;

   private:
    Tape* previous_;
  };

  void record(Node node) { nodes_.push_back(std::move(node)); }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

/// The tape currently recording on this thread, or null in inference mode.
Tape* active_tape();

/// Suspends recording for the lifetime of the guard.
class NoGrad {
 public:
  NoGrad();
  ~NoGrad();
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;

 private:
  Tape* previous_;
};

/// Records `output = op(inputs)` on the active tape when any input requires
/// gradients. Returns true if the node was recorded.
bool record_op(std::string_view op, std::vector<Tensor> inputs, Tensor& output, Tape::BackwardFn backward);

/// Reverse pass from a scalar loss. Every tensor on the tape that requires
/// gradients (parameters and intermediates alike) has dloss/dtensor added to
/// its grad, so repeated calls accumulate.
void backward(const Tensor& loss, const Tape& tape);

}  // namespace raad
