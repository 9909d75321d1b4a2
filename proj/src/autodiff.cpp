#include "gar/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>

#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <stdexcept>

#include "gar/errors.hpp"

namespace gar::ad {
namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using ConstMapVec = Eigen::Map<const Eigen::RowVectorXd>;
using MapVec = Eigen::Map<Eigen::RowVectorXd>;

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw std::invalid_argument(std::string(op) + ": " + detail);
}

Tape& same_tape(Var a, Var b, const char* op) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    shape_error(op, "operands live on different tapes");
  }
  return *a.tape();
}

// [outer, len, inner] view of a tensor around one axis.
struct AxisView {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    shape_error(op, "axis " + std::to_string(axis) + " out of range for " +
                        shape_string(shape));
  }
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  return out;
}

// Rows n*T + t hold the k time taps of sequence n around t.
void im2col(const double* x, std::size_t n, std::size_t t, std::size_t cin,
            std::size_t k, double* col) {
  const std::size_t pad = k / 2;
  const std::size_t width = k * cin;
  for (std::size_t s = 0; s < n; ++s) {
    const double* xs = x + s * t * cin;
    for (std::size_t i = 0; i < t; ++i) {
      double* row = col + (s * t + i) * width;
      for (std::size_t tap = 0; tap < k; ++tap) {
        const auto src = static_cast<std::ptrdiff_t>(i + tap) -
                         static_cast<std::ptrdiff_t>(pad);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(t)) {
          std::fill_n(row + tap * cin, cin, 0.0);
          continue;
        }
        std::copy_n(xs + static_cast<std::size_t>(src) * cin, cin,
                    row + tap * cin);
      }
    }
  }
}

// im2col scratch, reused by every conv on this thread. Forward and backward
// never hold it across another conv call.
double* col_scratch(std::size_t size) {
  thread_local AlignedVector buffer;
  if (buffer.size() < size) buffer.resize(size);
  return buffer.data();
}

void col2im_add(const double* col, std::size_t n, std::size_t t,
                std::size_t cin, std::size_t k, double* x) {
  const std::size_t pad = k / 2;
  const std::size_t width = k * cin;
  for (std::size_t s = 0; s < n; ++s) {
    double* xs = x + s * t * cin;
    for (std::size_t i = 0; i < t; ++i) {
      const double* row = col + (s * t + i) * width;
      for (std::size_t tap = 0; tap < k; ++tap) {
        const auto src = static_cast<std::ptrdiff_t>(i + tap) -
                         static_cast<std::ptrdiff_t>(pad);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(t)) continue;
        double* dst = xs + static_cast<std::size_t>(src) * cin;
        const double* from = row + tap * cin;
        for (std::size_t c = 0; c < cin; ++c) dst[c] += from[c];
      }
    }
  }
}

// Activations are large short-lived buffers. glibc serves those with fresh
// mmap()s by default, so every op would pay for page faults; keeping them on
// the heap roughly halves training step time.
void tune_allocator() {
#if defined(__GLIBC__)
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 32 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
  });
#endif
}

}  // namespace

Tape::Tape(bool record_gradients) : record_gradients_(record_gradients) {
  tune_allocator();
}

const Tensor& Var::value() const { return tape_->value(*this); }
const Tensor& Var::grad() const { return tape_->grad(*this); }

Var Tape::constant(Tensor value) {
  return push(std::move(value), {}, nullptr, "constant");
}

Var Tape::parameter(Tensor value) {
  Var v = push(std::move(value), {}, nullptr, "parameter");
  nodes_.back().requires_grad = record_gradients_;
  return v;
}

Var Tape::push(Tensor value, std::initializer_list<Var> parents, BackwardFn fn,
               const char* op) {
  if (!value.all_finite()) {
    throw NumericFault(std::string(op) + ": non-finite value in output " +
                       shape_string(value.shape()));
  }
  Node node;
  node.value = std::move(value);
  if (record_gradients_) {
    for (Var p : parents) {
      if (nodes_.at(p.id()).requires_grad) node.requires_grad = true;
    }
    if (node.requires_grad) node.backward = std::move(fn);
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(Var v) {
  Node& node = nodes_.at(v.id());
  if (!node.has_grad) {
    node.grad = Tensor(node.value.shape(), 0.0);
    node.has_grad = true;
  }
  return node.grad;
}

const Tensor& Tape::grad(Var v) const {
  const Node& node = nodes_.at(v.id());
  if (!node.has_grad) {
    // Materialize zeros lazily; the tape owns the buffer.
    auto& self = const_cast<Node&>(node);
    self.grad = Tensor(node.value.shape(), 0.0);
    self.has_grad = true;
  }
  return node.grad;
}

void Tape::backward(Var output) {
  if (value(output).size() != 1) {
    throw std::invalid_argument("backward: output is not a scalar, shape " +
                                shape_string(value(output).shape()));
  }
  backward(output, Tensor(value(output).shape(), 1.0));
}

void Tape::backward(Var output, const Tensor& seed) {
  if (!record_gradients_) {
    throw std::logic_error("backward on a tape recorded without gradients");
  }
  if (seed.shape() != value(output).shape()) {
    throw std::invalid_argument("backward: seed shape mismatch");
  }
  Tensor& g = grad_buffer(output);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  for (std::size_t id = output.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.has_grad || !node.backward) continue;
    node.backward(*this, node.grad);
  }
}

Var temporal_conv1d(Var x, Var w, Var b) {
  constexpr const char* kOp = "temporal_conv1d";
  Tape& tape = same_tape(x, w, kOp);
  same_tape(x, b, kOp);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.rank() < 2 || wv.rank() != 3 || bv.rank() != 1) {
    shape_error(kOp, "expected x [..., T, C_in], w [k, C_in, C_out], b "
                     "[C_out]; got " +
                         shape_string(xv.shape()) + ", " +
                         shape_string(wv.shape()) + ", " +
                         shape_string(bv.shape()));
  }
  const std::size_t k = wv.dim(0);
  const std::size_t cin = wv.dim(1);
  const std::size_t cout = wv.dim(2);
  const std::size_t t = xv.dim(xv.rank() - 2);
  if (k % 2 == 0 || xv.dim(xv.rank() - 1) != cin || bv.dim(0) != cout) {
    shape_error(kOp, "incompatible shapes x " + shape_string(xv.shape()) +
                         ", w " + shape_string(wv.shape()) + ", b " +
                         shape_string(bv.shape()));
  }
  const std::size_t n = xv.size() / (t * cin);
  Shape out_shape = xv.shape();
  out_shape.back() = cout;
  Tensor out(out_shape);

  double* col = col_scratch(n * t * k * cin);
  im2col(xv.data(), n, t, cin, k, col);
  MapMat y(out.data(), static_cast<Eigen::Index>(n * t),
           static_cast<Eigen::Index>(cout));
  y.noalias() = ConstMapMat(col, static_cast<Eigen::Index>(n * t),
                            static_cast<Eigen::Index>(k * cin)) *
                ConstMapMat(wv.data(), static_cast<Eigen::Index>(k * cin),
                            static_cast<Eigen::Index>(cout));
  y.rowwise() += ConstMapVec(bv.data(), static_cast<Eigen::Index>(cout));

  auto backward = [x, w, b, n, t, cin, cout, k](Tape& tp, const Tensor& dy) {
    const auto rows = static_cast<Eigen::Index>(n * t);
    const auto width = static_cast<Eigen::Index>(k * cin);
    const auto cols = static_cast<Eigen::Index>(cout);
    ConstMapMat dym(dy.data(), rows, cols);
    if (tp.requires_grad(b)) {
      MapVec(tp.grad_buffer(b).data(), cols) += dym.colwise().sum();
    }
    const bool need_x = tp.requires_grad(x);
    const bool need_w = tp.requires_grad(w);
    if (!need_x && !need_w) return;
    double* col = col_scratch(n * t * k * cin);
    if (need_w) {
      im2col(tp.value(x).data(), n, t, cin, k, col);
      MapMat(tp.grad_buffer(w).data(), width, cols).noalias() +=
          ConstMapMat(col, rows, width).transpose() * dym;
    }
    if (need_x) {
      MapMat dcol(col, rows, width);
      dcol.noalias() =
          dym * ConstMapMat(tp.value(w).data(), width, cols).transpose();
      col2im_add(col, n, t, cin, k, tp.grad_buffer(x).data());
    }
  };
  return tape.push(std::move(out), {x, w, b}, backward, kOp);
}

Var dense(Var x, Var w, Var b) {
  constexpr const char* kOp = "dense";
  Tape& tape = same_tape(x, w, kOp);
  same_tape(x, b, kOp);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.rank() < 1 || wv.rank() != 2 || bv.rank() != 1 ||
      xv.dim(xv.rank() - 1) != wv.dim(0) || bv.dim(0) != wv.dim(1)) {
    shape_error(kOp, "incompatible shapes x " + shape_string(xv.shape()) +
                         ", w " + shape_string(wv.shape()) + ", b " +
                         shape_string(bv.shape()));
  }
  const std::size_t cin = wv.dim(0);
  const std::size_t cout = wv.dim(1);
  const std::size_t m = xv.size() / cin;
  Shape out_shape = xv.shape();
  out_shape.back() = cout;
  Tensor out(out_shape);
  MapMat y(out.data(), static_cast<Eigen::Index>(m),
           static_cast<Eigen::Index>(cout));
  y.noalias() = ConstMapMat(xv.data(), static_cast<Eigen::Index>(m),
                            static_cast<Eigen::Index>(cin)) *
                ConstMapMat(wv.data(), static_cast<Eigen::Index>(cin),
                            static_cast<Eigen::Index>(cout));
  y.rowwise() += ConstMapVec(bv.data(), static_cast<Eigen::Index>(cout));

  auto backward = [x, w, b, m, cin, cout](Tape& tp, const Tensor& dy) {
    const auto rows = static_cast<Eigen::Index>(m);
    const auto in = static_cast<Eigen::Index>(cin);
    const auto outc = static_cast<Eigen::Index>(cout);
    ConstMapMat dym(dy.data(), rows, outc);
    if (tp.requires_grad(b)) {
      MapVec(tp.grad_buffer(b).data(), outc) += dym.colwise().sum();
    }
    if (tp.requires_grad(w)) {
      MapMat(tp.grad_buffer(w).data(), in, outc).noalias() +=
          ConstMapMat(tp.value(x).data(), rows, in).transpose() * dym;
    }
    if (tp.requires_grad(x)) {
      MapMat(tp.grad_buffer(x).data(), rows, in).noalias() +=
          dym * ConstMapMat(tp.value(w).data(), in, outc).transpose();
    }
  };
  return tape.push(std::move(out), {x, w, b}, backward, kOp);
}

Var relu(Var x) {
  Tape& tape = *x.tape();
  Tensor out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  auto backward = [x](Tape& tp, const Tensor& dy) {
    const Tensor& xv = tp.value(x);
    Tensor& dx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < dy.size(); ++i) {
      if (xv[i] > 0.0) dx[i] += dy[i];
    }
  };
  return tape.push(std::move(out), {x}, backward, "relu");
}

double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

Var sigmoid(Var x) {
  Tape& tape = *x.tape();
  Tensor out = x.value();
  for (double& v : out.values()) v = stable_sigmoid(v);
  const std::size_t out_id = tape.size();
  auto backward = [x, out_id](Tape& tp, const Tensor& dy) {
    const Tensor& y = tp.value(Var(&tp, out_id));
    Tensor& dx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < dy.size(); ++i) {
      dx[i] += dy[i] * y[i] * (1.0 - y[i]);
    }
  };
  return tape.push(std::move(out), {x}, backward, "sigmoid");
}

Var softmax(Var x, std::size_t axis) {
  Tape& tape = *x.tape();
  const Tensor& xv = x.value();
  const AxisView v = axis_view(xv.shape(), axis, "softmax");
  Tensor out(xv.shape());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.len * v.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < v.len; ++l) {
        mx = std::max(mx, xv[base + l * v.inner]);
      }
      double sum = 0.0;
      for (std::size_t l = 0; l < v.len; ++l) {
        const double e = std::exp(xv[base + l * v.inner] - mx);
        out[base + l * v.inner] = e;
        sum += e;
      }
      for (std::size_t l = 0; l < v.len; ++l) out[base + l * v.inner] /= sum;
    }
  }
  const std::size_t out_id = tape.size();
  auto backward = [x, v, out_id](Tape& tp, const Tensor& dy) {
    const Tensor& y = tp.value(Var(&tp, out_id));
    Tensor& dx = tp.grad_buffer(x);
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t i = 0; i < v.inner; ++i) {
        const std::size_t base = o * v.len * v.inner + i;
        double dot = 0.0;
        for (std::size_t l = 0; l < v.len; ++l) {
          dot += dy[base + l * v.inner] * y[base + l * v.inner];
        }
        for (std::size_t l = 0; l < v.len; ++l) {
          const std::size_t idx = base + l * v.inner;
          dx[idx] += y[idx] * (dy[idx] - dot);
        }
      }
    }
  };
  return tape.push(std::move(out), {x}, backward, "softmax");
}

Var mean_over_axis(Var x, std::size_t axis) {
  Tape& tape = *x.tape();
  const Tensor& xv = x.value();
  const AxisView v = axis_view(xv.shape(), axis, "mean_over_axis");
  Tensor out(drop_axis(xv.shape(), axis));
  const double inv = 1.0 / static_cast<double>(v.len);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t l = 0; l < v.len; ++l) {
      const double* src = xv.data() + (o * v.len + l) * v.inner;
      double* dst = out.data() + o * v.inner;
      for (std::size_t i = 0; i < v.inner; ++i) dst[i] += src[i];
    }
  }
  for (double& y : out.values()) y *= inv;
  auto backward = [x, v, inv](Tape& tp, const Tensor& dy) {
    Tensor& dx = tp.grad_buffer(x);
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t l = 0; l < v.len; ++l) {
        double* dst = dx.data() + (o * v.len + l) * v.inner;
        const double* src = dy.data() + o * v.inner;
        for (std::size_t i = 0; i < v.inner; ++i) dst[i] += inv * src[i];
      }
    }
  };
  return tape.push(std::move(out), {x}, backward, "mean_over_axis");
}

Var weighted_sum_over_axis(Var x, Var w, std::size_t axis) {
  constexpr const char* kOp = "weighted_sum_over_axis";
  Tape& tape = same_tape(x, w, kOp);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const AxisView v = axis_view(xv.shape(), axis, kOp);
  const Shape expected(xv.shape().begin(),
                       xv.shape().begin() + static_cast<std::ptrdiff_t>(axis) + 1);
  if (wv.shape() != expected) {
    shape_error(kOp, "weights " + shape_string(wv.shape()) + " must have shape " +
                         shape_string(expected) + " for x " +
                         shape_string(xv.shape()));
  }
  Tensor out(drop_axis(xv.shape(), axis));
  for (std::size_t o = 0; o < v.outer; ++o) {
    double* dst = out.data() + o * v.inner;
    for (std::size_t l = 0; l < v.len; ++l) {
      const double a = wv[o * v.len + l];
      const double* src = xv.data() + (o * v.len + l) * v.inner;
      for (std::size_t i = 0; i < v.inner; ++i) dst[i] += a * src[i];
    }
  }
  auto backward = [x, w, v](Tape& tp, const Tensor& dy) {
    const bool need_x = tp.requires_grad(x);
    const bool need_w = tp.requires_grad(w);
    const Tensor& xv = tp.value(x);
    const Tensor& wv = tp.value(w);
    for (std::size_t o = 0; o < v.outer; ++o) {
      const double* g = dy.data() + o * v.inner;
      for (std::size_t l = 0; l < v.len; ++l) {
        const std::size_t row = (o * v.len + l) * v.inner;
        if (need_x) {
          double* dx = tp.grad_buffer(x).data() + row;
          const double a = wv[o * v.len + l];
          for (std::size_t i = 0; i < v.inner; ++i) dx[i] += a * g[i];
        }
        if (need_w) {
          const double* src = xv.data() + row;
          double acc = 0.0;
          for (std::size_t i = 0; i < v.inner; ++i) acc += src[i] * g[i];
          tp.grad_buffer(w)[o * v.len + l] += acc;
        }
      }
    }
  };
  return tape.push(std::move(out), {x, w}, backward, kOp);
}

Var scale_last_axis(Var x, Var w) {
  constexpr const char* kOp = "scale_last_axis";
  Tape& tape = same_tape(x, w, kOp);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.rank() < 1 || wv.shape() != drop_axis(xv.shape(), xv.rank() - 1)) {
    shape_error(kOp, "weights " + shape_string(wv.shape()) +
                         " must match x " + shape_string(xv.shape()) +
                         " without its last axis");
  }
  const std::size_t c = xv.dim(xv.rank() - 1);
  const std::size_t rows = wv.size();
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < c; ++i) out[r * c + i] = wv[r] * xv[r * c + i];
  }
  auto backward = [x, w, rows, c](Tape& tp, const Tensor& dy) {
    const bool need_x = tp.requires_grad(x);
    const bool need_w = tp.requires_grad(w);
    const Tensor& xv = tp.value(x);
    const Tensor& wv = tp.value(w);
    for (std::size_t r = 0; r < rows; ++r) {
      if (need_x) {
        double* dx = tp.grad_buffer(x).data() + r * c;
        for (std::size_t i = 0; i < c; ++i) dx[i] += wv[r] * dy[r * c + i];
      }
      if (need_w) {
        double acc = 0.0;
        for (std::size_t i = 0; i < c; ++i) acc += xv[r * c + i] * dy[r * c + i];
        tp.grad_buffer(w)[r] += acc;
      }
    }
  };
  return tape.push(std::move(out), {x, w}, backward, kOp);
}

Var reshape(Var x, Shape shape) {
  Tape& tape = *x.tape();
  Tensor out = x.value().reshaped(std::move(shape));
  auto backward = [x](Tape& tp, const Tensor& dy) {
    Tensor& dx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
  };
  return tape.push(std::move(out), {x}, backward, "reshape");
}

Var flatten(Var x) { return reshape(x, Shape{x.value().size()}); }

Var transpose(Var x, const std::vector<std::size_t>& perm) {
  Tape& tape = *x.tape();
  const Tensor& xv = x.value();
  const std::size_t rank = xv.rank();
  std::vector<char> seen(rank, 0);
  if (perm.size() != rank) shape_error("transpose", "permutation rank mismatch");
  for (std::size_t p : perm) {
    if (p >= rank || seen[p]) shape_error("transpose", "invalid permutation");
    seen[p] = 1;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = xv.dim(perm[i]);
  // Input stride for each output axis.
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) {
    in_strides[i - 1] = in_strides[i] * xv.dim(i);
  }
  std::vector<std::size_t> src_stride(rank);
  for (std::size_t i = 0; i < rank; ++i) src_stride[i] = in_strides[perm[i]];

  // Source offset for each output element, in output order.
  std::vector<std::size_t> gather(xv.size());
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = 0;
  for (std::size_t n = 0; n < gather.size(); ++n) {
    gather[n] = off;
    for (std::size_t a = rank; a-- > 0;) {
      ++idx[a];
      off += src_stride[a];
      if (idx[a] < out_shape[a]) break;
      off -= src_stride[a] * idx[a];
      idx[a] = 0;
    }
  }
  Tensor out(out_shape);
  for (std::size_t n = 0; n < gather.size(); ++n) out[n] = xv[gather[n]];
  auto backward = [x, gather = std::move(gather)](Tape& tp, const Tensor& dy) {
    Tensor& dx = tp.grad_buffer(x);
    for (std::size_t n = 0; n < gather.size(); ++n) dx[gather[n]] += dy[n];
  };
  return tape.push(std::move(out), {x}, backward, "transpose");
}

Var bce_loss(Var logits, const Tensor& targets, double positive_weight) {
  Tape& tape = *logits.tape();
  const Tensor& z = logits.value();
  if (z.rank() != 1 || targets.shape() != z.shape()) {
    shape_error("bce_loss", "logits " + shape_string(z.shape()) +
                                " and targets " +
                                shape_string(targets.shape()) +
                                " must be matching [B] vectors");
  }
  const std::size_t batch = z.size();
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const double t = targets[i];
    total += positive_weight * t * softplus(-z[i]) + (1.0 - t) * softplus(z[i]);
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(batch));
  auto backward = [logits, targets, positive_weight, batch](Tape& tp,
                                                            const Tensor& dy) {
    const Tensor& zv = tp.value(logits);
    Tensor& dz = tp.grad_buffer(logits);
    const double scale = dy.item() / static_cast<double>(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      const double s = stable_sigmoid(zv[i]);
      const double t = targets[i];
      dz[i] += scale * (positive_weight * t * (s - 1.0) + (1.0 - t) * s);
    }
  };
  return tape.push(std::move(out), {logits}, backward, "bce_loss");
}

}  // namespace gar::ad
