#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "gar/tensor.hpp"

namespace gar::ad {

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records operations in creation order, which is a topological order of the
// computation graph; backward replays it in reverse, visiting each node once.
class Tape {
 public:
  // Called with the node's output gradient; accumulates into parent grads.
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  // With record_gradients == false no backward closures are kept and
  // backward() is unavailable (inference mode).
  explicit Tape(bool record_gradients = true);

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var parameter(Tensor value);

  void backward(Var output);  // output must be a single scalar
  void backward(Var output, const Tensor& seed);

  const Tensor& value(Var v) const { return nodes_.at(v.id()).value; }
  // Zero-filled when the node received no gradient.
  const Tensor& grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }
  bool recording() const { return record_gradients_; }
  std::size_t size() const { return nodes_.size(); }

  // Op plumbing. Throws NumericFault if value holds NaN/Inf.
  Var push(Tensor value, std::initializer_list<Var> parents, BackwardFn fn,
           const char* op);
  // Gradient buffer of a node, allocated on first use.
  Tensor& grad_buffer(Var v);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
  };

  bool record_gradients_;
  std::vector<Node> nodes_;
};

// Same-length zero-padded convolution along the time axis.
// x: [..., T, C_in], w: [k, C_in, C_out] (k odd), b: [C_out] -> [..., T, C_out]
Var temporal_conv1d(Var x, Var w, Var b);

// Affine map over the last axis. x: [..., C_in], w: [C_in, C_out], b: [C_out].
Var dense(Var x, Var w, Var b);

Var relu(Var x);
Var sigmoid(Var x);

// Max-shifted softmax along an axis.
Var softmax(Var x, std::size_t axis);

// Removes the axis by averaging over it.
Var mean_over_axis(Var x, std::size_t axis);

// Contracts an axis with weights whose shape is x.shape[0..axis]:
// y[o, i] = sum_l w[o, l] * x[o, l, i].
Var weighted_sum_over_axis(Var x, Var w, std::size_t axis);

// y[..., c] = x[..., c] * w[...], where w has x's shape minus the last axis.
Var scale_last_axis(Var x, Var w);

Var reshape(Var x, Shape shape);
Var flatten(Var x);
// y.shape[i] = x.shape[perm[i]].
Var transpose(Var x, const std::vector<std::size_t>& perm);

// Mean over the batch of the weighted logistic loss, in the stable logit
// form: pw * t * softplus(-z) + (1 - t) * softplus(z).
Var bce_loss(Var logits, const Tensor& targets, double positive_weight = 1.0);

// Plain (non-differentiable) helpers shared by the model and tests.
double stable_sigmoid(double z);
double softplus(double z);

}  // namespace gar::ad
