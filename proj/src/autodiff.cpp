#include "tiser/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "tiser/errors.hpp"
#include "tiser/kernels.hpp"

namespace tiser {

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->value(*this);
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(Tensor value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = grad_enabled_;
  return push(std::move(n));
}

Var Tape::parameter(const Tensor& value) {
  if (auto it = bound_.find(&value); it != bound_.end()) return Var(this, it->second);
  Node n;
  n.external = &value;
  n.requires_grad = grad_enabled_;
  Var v = push(std::move(n));
  bound_.emplace(&value, v.id());
  return v;
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  Node n;
  n.owned = std::move(value);
  if (grad_enabled_) {
    for (const Var& in : inputs) {
      if (!in.valid()) continue;
      if (&in.tape() != this) throw ContractError("op mixes Vars from different tapes");
      n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(backward);
  }
  return push(std::move(n));
}

const Tensor& Tape::value(Var v) const { return nodes_.at(v.id()).value(); }

Tensor& Tape::grad_buffer(Var v) {
  Node& n = nodes_[v.id()];
  if (n.grad.size() != n.value().size()) n.grad = Tensor(n.value().shape(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (!loss.valid() || &loss.tape() != this) throw ContractError("backward target not on this tape");
  if (value(loss).size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_str(value(loss).shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor();
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss)[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, Var(this, i), n.grad);
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id());
  if (n.grad.size() == n.value().size() && !n.grad.empty()) return n.grad;
  return Tensor(n.value().shape(), 0.0);
}

Tensor Tape::grad_of(const Tensor& parameter) const {
  if (auto it = bound_.find(&parameter); it != bound_.end()) return grad(Var(const_cast<Tape*>(this), it->second));
  return Tensor(parameter.shape(), 0.0);
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kLinear: return "linear";
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
  }
  return "linear";
}

Activation activation_from_name(const std::string& name) {
  if (name == "linear") return Activation::kLinear;
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  throw ConfigError("unknown activation '" + name + "'");
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void accumulate(Tensor& dst, std::span<const double> src) {
  double* d = dst.ptr();
  for (std::size_t i = 0; i < src.size(); ++i) d[i] += src[i];
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(av.shape()) + " x " +
                     shape_str(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  kernels::matmul(av.ptr(), bv.ptr(), out.ptr(), m, k, n);
  return a.tape().record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, Var, const Tensor& g) {
    if (t.requires_grad(a)) {
      kernels::matmul_nt_acc(g.ptr(), t.value(b).ptr(), t.grad_buffer(a).ptr(), m, n, k);
    }
    if (t.requires_grad(b)) {
      kernels::matmul_tn_acc(t.value(a).ptr(), g.ptr(), t.grad_buffer(b).ptr(), k, m, n);
    }
  });
}

Var conv1d(Var x, Var kernels, Var bias, std::size_t stride) {
  const Tensor& xv = x.value();
  const Tensor& kv = kernels.value();
  if (stride < 1) throw ShapeError("conv1d: stride must be >= 1");
  if (xv.rank() != 2 && xv.rank() != 3) {
    throw ShapeError("conv1d: input must be [T,C] or [N,T,C], got " + shape_str(xv.shape()));
  }
  if (kv.rank() != 3) throw ShapeError("conv1d: kernels must be [K,C,F]");
  const bool batched = xv.rank() == 3;
  kernels::ConvGeometry geo{};
  geo.nodes = batched ? xv.dim(0) : 1;
  geo.length = xv.dim(batched ? 1 : 0);
  geo.channels = xv.dim(batched ? 2 : 1);
  geo.taps = kv.dim(0);
  geo.filters = kv.dim(2);
  geo.stride = stride;
  if (kv.dim(1) != geo.channels) {
    throw ShapeError("conv1d: kernel channels " + std::to_string(kv.dim(1)) +
                     " do not match input channels " + std::to_string(geo.channels));
  }
  if (geo.taps == 0 || geo.taps > geo.length) {
    throw ShapeError("conv1d: kernel length " + std::to_string(geo.taps) +
                     " exceeds input length " + std::to_string(geo.length));
  }
  const double* bias_ptr = nullptr;
  if (bias.valid()) {
    if (bias.value().shape() != Shape{geo.filters}) throw ShapeError("conv1d: bias must be [F]");
    bias_ptr = bias.value().ptr();
  }
  const std::size_t out_len = geo.out_length();
  Shape out_shape = batched ? Shape{geo.nodes, out_len, geo.filters} : Shape{out_len, geo.filters};
  Tensor out(out_shape);
  kernels::conv1d_forward(geo, xv.ptr(), kv.ptr(), bias_ptr, out.ptr());
  return x.tape().record(
      std::move(out), {x, kernels, bias}, [x, kernels, bias, geo](Tape& t, Var, const Tensor& g) {
        if (t.requires_grad(x)) {
          kernels::conv1d_backward_input(geo, g.ptr(), t.value(kernels).ptr(),
                                         t.grad_buffer(x).ptr());
        }
        if (t.requires_grad(kernels)) {
          kernels::conv1d_backward_kernel(geo, t.value(x).ptr(), g.ptr(),
                                          t.grad_buffer(kernels).ptr());
        }
        if (bias.valid() && t.requires_grad(bias)) {
          double* gb = t.grad_buffer(bias).ptr();
          const std::size_t rows = g.size() / geo.filters;
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t f = 0; f < geo.filters; ++f) gb[f] += g[r * geo.filters + f];
          }
        }
      });
}

Var relu(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return x.tape().record(std::move(out), {x}, [x](Tape& t, Var, const Tensor& g) {
    if (!t.requires_grad(x)) return;
    const Tensor& xv = t.value(x);
    Tensor& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += g[i];
    }
  });
}

Var tanh(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = std::tanh(xv[i]);
  return x.tape().record(std::move(out), {x}, [x](Tape& t, Var self, const Tensor& g) {
    if (!t.requires_grad(x)) return;
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var activate(Var x, Activation a) {
  switch (a) {
    case Activation::kRelu: return relu(x);
    case Activation::kTanh: return tanh(x);
    case Activation::kLinear: break;
  }
  return x;
}

Var scale(Var x, double factor) {
  Tensor out = x.value();
  for (double& v : out.data()) v *= factor;
  return x.tape().record(std::move(out), {x}, [x, factor](Tape& t, Var, const Tensor& g) {
    if (!t.requires_grad(x)) return;
    Tensor& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
  });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  accumulate(out, b.value().data());
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, Var, const Tensor& g) {
    if (t.requires_grad(a)) accumulate(t.grad_buffer(a), g.data());
    if (t.requires_grad(b)) accumulate(t.grad_buffer(b), g.data());
  });
}

Var add_bias(Var x, Var b) {
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  if (xv.rank() == 0 || bv.rank() != 1 || xv.shape().back() != bv.dim(0)) {
    throw ShapeError("add_bias: bias " + shape_str(bv.shape()) + " does not match last axis of " +
                     shape_str(xv.shape()));
  }
  const std::size_t f = bv.dim(0);
  Tensor out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % f];
  return x.tape().record(std::move(out), {x, b}, [x, b, f](Tape& t, Var, const Tensor& g) {
    if (t.requires_grad(x)) accumulate(t.grad_buffer(x), g.data());
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % f] += g[i];
    }
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().record(std::move(out), {x}, [x](Tape& t, Var, const Tensor& g) {
    if (t.requires_grad(x)) accumulate(t.grad_buffer(x), g.data());
  });
}

Var flatten(Var x) { return reshape(x, {x.value().size()}); }

Var concat_last(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() == 0 || av.rank() != bv.rank() ||
      !std::equal(av.shape().begin(), av.shape().end() - 1, bv.shape().begin())) {
    throw ShapeError("concat_last: incompatible leading dims " + shape_str(av.shape()) + " and " +
                     shape_str(bv.shape()));
  }
  const std::size_t p = av.shape().back(), q = bv.shape().back();
  const std::size_t rows = p ? av.size() / p : bv.size() / q;
  Shape shape = av.shape();
  shape.back() = p + q;
  Tensor out(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.ptr() + r * p, p, out.ptr() + r * (p + q));
    std::copy_n(bv.ptr() + r * q, q, out.ptr() + r * (p + q) + p);
  }
  return a.tape().record(std::move(out), {a, b}, [a, b, p, q, rows](Tape& t, Var, const Tensor& g) {
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad_buffer(a);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < p; ++i) ga[r * p + i] += g[r * (p + q) + i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < q; ++i) gb[r * q + i] += g[r * (p + q) + p + i];
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: nothing to concatenate");
  const Shape& first = parts.front().value().shape();
  if (first.empty()) throw ShapeError("concat_rows: scalar parts");
  Shape shape = first;
  shape[0] = 0;
  for (const Var& p : parts) {
    const Shape& s = p.value().shape();
    if (s.size() != first.size() || !std::equal(s.begin() + 1, s.end(), first.begin() + 1)) {
      throw ShapeError("concat_rows: trailing dims differ: " + shape_str(s) + " vs " +
                       shape_str(first));
    }
    shape[0] += s[0];
  }
  Tensor out(shape);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), out.ptr() + offset);
    offset += p.value().size();
  }
  return parts.front().tape().record(
      std::move(out), std::span<const Var>(parts), [parts](Tape& t, Var, const Tensor& g) {
        std::size_t off = 0;
        for (const Var& p : parts) {
          const std::size_t n = t.value(p).size();
          if (t.requires_grad(p)) accumulate(t.grad_buffer(p), g.data().subspan(off, n));
          off += n;
        }
      });
}

Var swap_leading_axes(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() < 2) throw ShapeError("swap_leading_axes: rank must be >= 2");
  const std::size_t a = xv.dim(0), b = xv.dim(1);
  const std::size_t inner = (a != 0 && b != 0) ? xv.size() / (a * b) : 0;
  Shape shape = xv.shape();
  std::swap(shape[0], shape[1]);
  Tensor out(shape);
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j)
      std::copy_n(xv.ptr() + (i * b + j) * inner, inner, out.ptr() + (j * a + i) * inner);
  return x.tape().record(std::move(out), {x}, [x, a, b, inner](Tape& t, Var, const Tensor& g) {
    if (!t.requires_grad(x)) return;
    Tensor& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t j = 0; j < b; ++j)
        for (std::size_t k = 0; k < inner; ++k)
          gx[(i * b + j) * inner + k] += g[(j * a + i) * inner + k];
  });
}

Var mse_loss(Var pred, Var target) {
  const Tensor& p = pred.value();
  const Tensor& y = target.value();
  require_same_shape(p, y, "mse_loss");
  if (p.size() == 0) throw ShapeError("mse_loss: empty tensors");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - y[i];
    s += d * d;
  }
  const double n = static_cast<double>(p.size());
  return pred.tape().record(
      Tensor({1}, {s / n}), {pred, target}, [pred, target, n](Tape& t, Var, const Tensor& g) {
        const Tensor& p = t.value(pred);
        const Tensor& y = t.value(target);
        const double c = 2.0 * g[0] / n;
        if (t.requires_grad(pred)) {
          Tensor& gp = t.grad_buffer(pred);
          for (std::size_t i = 0; i < p.size(); ++i) gp[i] += c * (p[i] - y[i]);
        }
        if (t.requires_grad(target)) {
          Tensor& gy = t.grad_buffer(target);
          for (std::size_t i = 0; i < p.size(); ++i) gy[i] -= c * (p[i] - y[i]);
        }
      });
}

Var sum_squares(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v * v;
  return x.tape().record(Tensor({1}, {s}), {x}, [x](Tape& t, Var, const Tensor& g) {
    if (!t.requires_grad(x)) return;
    const Tensor& xv = t.value(x);
    Tensor& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += 2.0 * g[0] * xv[i];
  });
}

Var l2_penalty(Tape& tape, const std::vector<Var>& params, double coeff) {
  if (coeff < 0.0) throw InputError("l2_penalty: coefficient must be >= 0");
  Var total = tape.constant(Tensor({1}, 0.0));
  for (const Var& p : params) total = add(total, sum_squares(p));
  return scale(total, coeff);
}

}  // namespace tiser
