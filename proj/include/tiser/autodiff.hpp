#pragma once

// Reverse-mode differentiation over a linear tape.
//
// Nodes are appended in evaluation order, so the tape is a topological order
// by construction and backward() is a single reverse sweep. A Tape is not
// thread-safe; use one tape per thread. Parameters bound with
// Tape::parameter() are referenced, not copied, and must outlive the tape.

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tiser/tensor.hpp"

namespace tiser {

class Tape;

class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  std::size_t id() const noexcept { return id_; }
  Tape& tape() const { return *tape_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = std::numeric_limits<std::size_t>::max();
};

class Tape {
 public:
  // Called during the reverse sweep with the gradient flowing into `self`.
  using BackwardFn = std::function<void(Tape& tape, Var self, const Tensor& grad)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);
  // Leaf referencing external storage. Binding the same tensor twice returns
  // the same leaf.
  Var parameter(const Tensor& value);

  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Reverse sweep from a scalar. Gradients from earlier sweeps are discarded.
  void backward(Var loss);

  // Gradient of the last backward() target w.r.t. v; zeros when v was not
  // reached.
  Tensor grad(Var v) const;
  Tensor grad_of(const Tensor& parameter) const;

  // Accumulation buffer used by op implementations; allocated on first use.
  Tensor& grad_buffer(Var v);

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;

    const Tensor& value() const { return external ? *external : owned; }
  };

  Var push(Node node);

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> bound_;
};

enum class Activation { kLinear, kRelu, kTanh };

const char* activation_name(Activation a);
Activation activation_from_name(const std::string& name);

// c = a * b for a [m,k], b [k,n]
Var matmul(Var a, Var b);
// Shared-weight valid convolution. x is [T,C] or [N,T,C]; kernels [K,C,F];
// bias [F] or an invalid Var. Output [T',F] or [N,T',F] with
// T' = floor((T-K)/stride) + 1.
Var conv1d(Var x, Var kernels, Var bias, std::size_t stride);

Var relu(Var x);
Var tanh(Var x);
Var activate(Var x, Activation a);
Var scale(Var x, double factor);
Var add(Var a, Var b);
// x [..., F] + b [F]
Var add_bias(Var x, Var b);

Var reshape(Var x, Shape shape);
Var flatten(Var x);
// [..., p] ++ [..., q] -> [..., p+q]; leading dims must match.
Var concat_last(Var a, Var b);
// Concatenate along axis 0; trailing dims must match.
Var concat_rows(const std::vector<Var>& parts);
// [A, B, rest...] -> [B, A, rest...]
Var swap_leading_axes(Var x);

// Mean of squared differences over all elements; scalar output of shape [1].
Var mse_loss(Var pred, Var target);
Var sum_squares(Var x);
// coeff * sum over tensors of sum of squares; constant zero for an empty list.
Var l2_penalty(Tape& tape, const std::vector<Var>& params, double coeff);

}  // namespace tiser
