#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "surge/kernels.hpp"
#include "surge/tensor.hpp"

namespace surge {

// A named trainable tensor. Gradients accumulate additively across backward
// passes until zero_grad() resets them (minibatch accumulation semantics).
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string name, Tensor value)
      : name(std::move(name)), value(std::move(value)), grad(Tensor::zeros(this->value.shape())) {}

  void zero_grad() { grad = Tensor::zeros(value.shape()); }
};

class Tape;

// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::int64_t id = -1;

  bool defined() const { return tape != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Reverse-mode gradient tape. Records executed operations in topological
// order (inputs always precede outputs); one backward sweep visits each
// entry exactly once, in reverse. Confined to a single thread.
class Tape {
public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  Var leaf(Tensor value, bool requires_grad = false) {
    return make_node(std::move(value), recording_ && requires_grad, nullptr);
  }

  Var param(Parameter& p) { return make_node(p.value, recording_, &p); }

  const Tensor& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }

  bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }

  // Zero-initialized gradient buffer; nullptr when the node does not need one.
  double* grad_data(Var v) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (!n.requires_grad) return nullptr;
    if (!n.grad.defined()) n.grad = Tensor::zeros(n.value.shape());
    return n.grad.mutable_data();
  }

  const Tensor& grad(Var v) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (!n.grad.defined()) n.grad = Tensor::zeros(n.value.shape());
    return n.grad;
  }

  // Records an executed operation. `backward` reads the output gradient and
  // accumulates into the inputs' gradient buffers.
  Var record(const char* op, std::vector<std::int64_t> inputs, Tensor output,
             std::function<void(Tape&, Var)> backward) {
    bool any_grad = false;
    for (auto id : inputs) {
      if (nodes_[static_cast<std::size_t>(id)].requires_grad) any_grad = true;
    }
    Var out = make_node(std::move(output), recording_ && any_grad, nullptr);
    if (recording_ && any_grad) {
      entries_.push_back(Entry{op, std::move(inputs), out.id, std::move(backward)});
    }
    return out;
  }

  // Propagates d(loss)/d(node) to every node, then adds parameter-bound leaf
  // gradients into their Parameter::grad.
  void backward(Var loss) {
    if (loss.tape != this) throw contract_error("backward: loss from another tape");
    if (!recording_) throw contract_error("backward on a non-recording tape");
    if (used_) throw contract_error("backward already ran on this tape");
    used_ = true;
    Node& ln = nodes_[static_cast<std::size_t>(loss.id)];
    if (ln.value.numel() != 1) {
      throw contract_error("backward requires a scalar loss, got " + shape_str(ln.value.shape()));
    }
    if (!ln.requires_grad) {
      throw contract_error("backward: loss does not depend on any differentiable input");
    }
    ln.grad = Tensor::full(ln.value.shape(), 1.0);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      Node& out = nodes_[static_cast<std::size_t>(it->output)];
      if (!out.grad.defined()) continue;  // branch did not reach the loss
      it->backward(*this, Var{this, it->output});
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      Node& n = nodes_[i];
      if (n.bound == nullptr) continue;
      double* pg = n.bound->grad.mutable_data();
      if (n.grad.defined()) {
        const double* g = n.grad.data();
        for (std::int64_t j = 0; j < n.grad.numel(); ++j) pg[j] += g[j];
      }
    }
  }

  struct EntryInfo {
    const char* op;
    std::vector<std::int64_t> inputs;
    std::int64_t output;
  };

  std::vector<EntryInfo> entries_info() const {
    std::vector<EntryInfo> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(EntryInfo{e.op, e.inputs, e.output});
    return out;
  }

private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* bound = nullptr;
  };

  struct Entry {
    const char* op;
    std::vector<std::int64_t> inputs;
    std::int64_t output;
    std::function<void(Tape&, Var)> backward;
  };

  Var make_node(Tensor value, bool requires_grad, Parameter* bound) {
    nodes_.push_back(Node{std::move(value), Tensor(), requires_grad, bound});
    return Var{this, static_cast<std::int64_t>(nodes_.size()) - 1};
  }

  std::deque<Node> nodes_;  // deque: node references stay valid as the graph grows
  std::vector<Entry> entries_;
  bool recording_;
  bool used_ = false;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

namespace detail {

inline void same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw contract_error("operands belong to different tapes");
}

// Adds src into dst, reducing over leading axes when src broadcasts onto dst's
// producer (dst is the smaller suffix-shaped gradient).
inline void accumulate_reduced(const double* src, std::int64_t outer, double* dst,
                               std::int64_t inner) {
  if (dst == nullptr) return;
  for (std::int64_t i = 0; i < outer; ++i) {
    const double* s = src + i * inner;
    for (std::int64_t j = 0; j < inner; ++j) dst[j] += s[j];
  }
}

inline void accumulate(const double* src, double* dst, std::int64_t n) {
  if (dst == nullptr) return;
  for (std::int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

}  // namespace detail

// ---- elementwise binary ops (suffix broadcast: the smaller operand's shape
// ---- must be a trailing suffix of the larger's) ----

namespace detail {

template <typename Fwd, typename Bwd>
Var binary_elementwise(const char* name, Var a, Var b, Fwd fwd, Bwd bwd) {
  same_tape(a, b);
  Tape& tape = *a.tape;
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool a_big = av.numel() >= bv.numel();
  const Tensor& big = a_big ? av : bv;
  const Tensor& small = a_big ? bv : av;
  if (!suffix_broadcastable(big.shape(), small.shape())) {
    throw dimension_error(std::string(name) + ": shapes " + shape_str(av.shape()) + " and " +
                          shape_str(bv.shape()) + " are not broadcastable");
  }
  const std::int64_t inner = small.numel();
  const std::int64_t outer = big.numel() / inner;
  Tensor result = Tensor::uninitialized(big.shape());
  double* out = result.mutable_data();
  const double* bigp = big.data();
  const double* smallp = small.data();
  for (std::int64_t i = 0; i < outer; ++i) {
    const double* x = bigp + i * inner;
    double* o = out + i * inner;
    for (std::int64_t j = 0; j < inner; ++j) {
      o[j] = a_big ? fwd(x[j], smallp[j]) : fwd(smallp[j], x[j]);
    }
  }
  return tape.record(name, {a.id, b.id}, std::move(result),
                     [a, b, a_big, outer, inner, bwd](Tape& t, Var out) {
                       const double* g = t.grad(out).data();
                       bwd(t, a, b, a_big, outer, inner, g);
                     });
}

}  // namespace detail

inline Var add(Var a, Var b) {
  return detail::binary_elementwise(
      "add", a, b, [](double x, double y) { return x + y; },
      [](Tape& t, Var a, Var b, bool a_big, std::int64_t outer, std::int64_t inner,
         const double* g) {
        Var big = a_big ? a : b;
        Var small = a_big ? b : a;
        detail::accumulate(g, t.grad_data(big), outer * inner);
        detail::accumulate_reduced(g, outer, t.grad_data(small), inner);
      });
}

inline Var sub(Var a, Var b) {
  return detail::binary_elementwise(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](Tape& t, Var a, Var b, bool a_big, std::int64_t outer, std::int64_t inner,
         const double* g) {
        const std::int64_t n = outer * inner;
        if (double* ga = t.grad_data(a)) {
          if (a_big) {
            for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i];
          } else {
            for (std::int64_t i = 0; i < outer; ++i) {
              for (std::int64_t j = 0; j < inner; ++j) ga[j] += g[i * inner + j];
            }
          }
        }
        if (double* gb = t.grad_data(b)) {
          if (a_big) {
            for (std::int64_t i = 0; i < outer; ++i) {
              for (std::int64_t j = 0; j < inner; ++j) gb[j] -= g[i * inner + j];
            }
          } else {
            for (std::int64_t i = 0; i < n; ++i) gb[i] -= g[i];
          }
        }
      });
}

inline Var mul(Var a, Var b) {
  return detail::binary_elementwise(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](Tape& t, Var a, Var b, bool a_big, std::int64_t outer, std::int64_t inner,
         const double* g) {
        Var big = a_big ? a : b;
        Var small = a_big ? b : a;
        const double* bigv = big.value().data();
        const double* smallv = small.value().data();
        if (double* gbig = t.grad_data(big)) {
          for (std::int64_t i = 0; i < outer; ++i) {
            for (std::int64_t j = 0; j < inner; ++j) {
              gbig[i * inner + j] += g[i * inner + j] * smallv[j];
            }
          }
        }
        if (double* gsmall = t.grad_data(small)) {
          for (std::int64_t i = 0; i < outer; ++i) {
            for (std::int64_t j = 0; j < inner; ++j) {
              gsmall[j] += g[i * inner + j] * bigv[i * inner + j];
            }
          }
        }
      });
}

// ---- elementwise unary ops ----

namespace detail {

template <typename Fwd, typename Bwd>
Var unary_elementwise(const char* name, Var a, Fwd fwd, Bwd bwd) {
  Tape& tape = *a.tape;
  const Tensor& av = a.value();
  Tensor result = Tensor::uninitialized(av.shape());
  double* out = result.mutable_data();
  const double* x = av.data();
  for (std::int64_t i = 0; i < av.numel(); ++i) out[i] = fwd(x[i]);
  return tape.record(name, {a.id}, std::move(result), [a, bwd](Tape& t, Var out) {
    double* ga = t.grad_data(a);
    if (ga == nullptr) return;
    const double* g = t.grad(out).data();
    const double* y = out.value().data();
    const double* x = a.value().data();
    const std::int64_t n = out.value().numel();
    for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i] * bwd(x[i], y[i]);
  });
}

}  // namespace detail

inline Var tanh_op(Var a) {
  return detail::unary_elementwise(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

inline double sigmoid_scalar(double x) {
  if (x >= 0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var sigmoid_op(Var a) {
  return detail::unary_elementwise(
      "sigmoid", a, [](double x) { return sigmoid_scalar(x); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var relu_op(Var a) {
  return detail::unary_elementwise(
      "relu", a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

// ---- reshape ----

inline Var reshape(Var a, Shape new_shape) {
  Tape& tape = *a.tape;
  Tensor out = a.value().reshaped(std::move(new_shape));  // shares the buffer
  return tape.record("reshape", {a.id}, std::move(out), [a](Tape& t, Var out) {
    double* ga = t.grad_data(a);
    if (ga == nullptr) return;
    detail::accumulate(t.grad(out).data(), ga, out.value().numel());
  });
}

// ---- reduce_mean over a set of axes (empty set = all axes) ----

inline Var reduce_mean(Var a, std::vector<std::int64_t> axes) {
  Tape& tape = *a.tape;
  const Tensor& av = a.value();
  const auto& shape = av.shape();
  const std::int64_t rank = av.rank();
  std::vector<bool> reduced(static_cast<std::size_t>(rank), false);
  if (axes.empty()) {
    reduced.assign(static_cast<std::size_t>(rank), true);
  } else {
    for (auto ax : axes) {
      if (ax < 0 || ax >= rank) {
        throw dimension_error("reduce_mean: axis " + std::to_string(ax) + " invalid for shape " +
                              shape_str(shape));
      }
      if (reduced[static_cast<std::size_t>(ax)]) {
        throw dimension_error("reduce_mean: duplicate axis " + std::to_string(ax));
      }
      reduced[static_cast<std::size_t>(ax)] = true;
    }
  }
  Shape out_shape;
  std::int64_t count = 1;
  for (std::int64_t d = 0; d < rank; ++d) {
    if (reduced[static_cast<std::size_t>(d)]) {
      count *= shape[static_cast<std::size_t>(d)];
    } else {
      out_shape.push_back(shape[static_cast<std::size_t>(d)]);
    }
  }

  // in-to-out linear index map via per-axis strides (0 for reduced axes)
  std::vector<std::int64_t> out_stride(static_cast<std::size_t>(rank), 0);
  {
    std::int64_t s = 1;
    for (std::int64_t d = rank - 1; d >= 0; --d) {
      if (!reduced[static_cast<std::size_t>(d)]) {
        out_stride[static_cast<std::size_t>(d)] = s;
        s *= shape[static_cast<std::size_t>(d)];
      }
    }
  }
  const std::int64_t out_numel = shape_numel(out_shape);
  std::vector<double> sums(static_cast<std::size_t>(out_numel), 0.0);
  const double* x = av.data();
  std::vector<std::int64_t> idx(static_cast<std::size_t>(rank), 0);
  std::int64_t out_idx = 0;
  for (std::int64_t i = 0; i < av.numel(); ++i) {
    sums[static_cast<std::size_t>(out_idx)] += x[i];
    for (std::int64_t d = rank - 1; d >= 0; --d) {
      auto du = static_cast<std::size_t>(d);
      out_idx += out_stride[du];
      if (++idx[du] < shape[du]) break;
      idx[du] = 0;
      out_idx -= out_stride[du] * shape[du];
    }
  }
  for (auto& v : sums) v /= static_cast<double>(count);
  Tensor result(out_shape, std::move(sums));
  return tape.record("reduce_mean", {a.id}, std::move(result),
                     [a, out_stride, count](Tape& t, Var out) {
                       double* ga = t.grad_data(a);
                       if (ga == nullptr) return;
                       const double* g = t.grad(out).data();
                       const Shape& shape = a.value().shape();
                       const std::int64_t rank = a.value().rank();
                       std::vector<std::int64_t> idx(static_cast<std::size_t>(rank), 0);
                       std::int64_t out_idx = 0;
                       const double inv = 1.0 / static_cast<double>(count);
                       for (std::int64_t i = 0; i < a.value().numel(); ++i) {
                         ga[i] += g[out_idx] * inv;
                         for (std::int64_t d = rank - 1; d >= 0; --d) {
                           auto du = static_cast<std::size_t>(d);
                           out_idx += out_stride[du];
                           if (++idx[du] < shape[du]) break;
                           idx[du] = 0;
                           out_idx -= out_stride[du] * shape[du];
                         }
                       }
                     });
}

// ---- concat along an axis ----

inline Var concat(const std::vector<Var>& parts, std::int64_t axis) {
  if (parts.empty()) throw dimension_error("concat: empty tensor list");
  Tape& tape = *parts[0].tape;
  for (const Var& p : parts) detail::same_tape(parts[0], p);
  const Shape& first = parts[0].value().shape();
  const std::int64_t rank = parts[0].value().rank();
  if (axis < 0 || axis >= rank) {
    throw dimension_error("concat: axis " + std::to_string(axis) + " invalid for shape " +
                          shape_str(first));
  }
  Shape out_shape = first;
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const Shape& s = parts[i].value().shape();
    if (static_cast<std::int64_t>(s.size()) != rank) {
      throw dimension_error("concat: rank mismatch " + shape_str(first) + " vs " + shape_str(s));
    }
    for (std::int64_t d = 0; d < rank; ++d) {
      if (d == axis) continue;
      if (s[static_cast<std::size_t>(d)] != first[static_cast<std::size_t>(d)]) {
        throw dimension_error("concat: non-axis extents differ: " + shape_str(first) + " vs " +
                              shape_str(s));
      }
    }
    out_shape[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
  }

  std::int64_t outer = 1, inner = 1;
  for (std::int64_t d = 0; d < axis; ++d) outer *= first[static_cast<std::size_t>(d)];
  for (std::int64_t d = axis + 1; d < rank; ++d) inner *= first[static_cast<std::size_t>(d)];
  std::vector<std::int64_t> part_block(parts.size());
  std::int64_t total_block = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    part_block[i] = parts[i].value().extent(axis) * inner;
    total_block += part_block[i];
  }
  Tensor result = Tensor::uninitialized(out_shape);
  double* out = result.mutable_data();
  for (std::int64_t o = 0; o < outer; ++o) {
    double* dst = out + o * total_block;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const double* src = parts[i].value().data() + o * part_block[i];
      std::copy(src, src + part_block[i], dst);
      dst += part_block[i];
    }
  }
  std::vector<std::int64_t> input_ids;
  input_ids.reserve(parts.size());
  for (const Var& p : parts) input_ids.push_back(p.id);
  std::vector<Var> saved = parts;
  return tape.record("concat", std::move(input_ids), std::move(result),
                     [saved, part_block, outer, total_block](Tape& t, Var out) {
                       const double* g = t.grad(out).data();
                       for (std::int64_t o = 0; o < outer; ++o) {
                         const double* src = g + o * total_block;
                         for (std::size_t i = 0; i < saved.size(); ++i) {
                           if (double* gp = t.grad_data(saved[i])) {
                             double* dst = gp + o * part_block[i];
                             for (std::int64_t j = 0; j < part_block[i]; ++j) dst[j] += src[j];
                           }
                           src += part_block[i];
                         }
                       }
                     });
}

// ---- matmul ----
//
// a: (..,m,k), b: (k,n) or (..,k,n). Batch handling: b without batch axes
// broadcasts across a's leading axes; otherwise the leading axes must match.

inline Var matmul(Var a, Var b) {
  detail::same_tape(a, b);
  Tape& tape = *a.tape;
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() < 2 || bv.rank() < 2) {
    throw dimension_error("matmul: operands must have rank >= 2, got " + shape_str(av.shape()) +
                          " and " + shape_str(bv.shape()));
  }
  const std::int64_t m = av.shape()[av.shape().size() - 2];
  const std::int64_t k = av.shape()[av.shape().size() - 1];
  const std::int64_t kb = bv.shape()[bv.shape().size() - 2];
  const std::int64_t n = bv.shape()[bv.shape().size() - 1];
  if (k != kb) {
    throw dimension_error("matmul: inner extents disagree: " + shape_str(av.shape()) + " vs " +
                          shape_str(bv.shape()));
  }
  const bool b_broadcast = bv.rank() == 2;
  Shape a_batch(av.shape().begin(), av.shape().end() - 2);
  if (!b_broadcast) {
    Shape b_batch(bv.shape().begin(), bv.shape().end() - 2);
    if (a_batch != b_batch) {
      throw dimension_error("matmul: batch extents disagree: " + shape_str(av.shape()) + " vs " +
                            shape_str(bv.shape()));
    }
  }
  const std::int64_t batch = shape_numel(a_batch);
  Shape out_shape = a_batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor result = Tensor::uninitialized(std::move(out_shape));
  double* out = result.mutable_data();
  if (b_broadcast) {
    kern::gemm_nn(batch * m, n, k, av.data(), k, bv.data(), n, out, n, false);
  } else {
    for (std::int64_t i = 0; i < batch; ++i) {
      kern::gemm_nn(m, n, k, av.data() + i * m * k, k, bv.data() + i * k * n, n,
                    out + i * m * n, n, false);
    }
  }
  return tape.record(
      "matmul", {a.id, b.id}, std::move(result),
      [a, b, m, n, k, batch, b_broadcast](Tape& t, Var out) {
        const double* g = t.grad(out).data();
        const Tensor& av = a.value();
        const Tensor& bv = b.value();
        if (double* ga = t.grad_data(a)) {
          // dA += dC·Bᵀ
          std::vector<double> bt(static_cast<std::size_t>(k * n));
          if (b_broadcast) {
            kern::transpose(k, n, bv.data(), bt.data());
            kern::gemm_nn(batch * m, k, n, g, n, bt.data(), k, ga, k, true);
          } else {
            for (std::int64_t i = 0; i < batch; ++i) {
              kern::transpose(k, n, bv.data() + i * k * n, bt.data());
              kern::gemm_nn(m, k, n, g + i * m * n, n, bt.data(), k, ga + i * m * k, k, true);
            }
          }
        }
        if (double* gb = t.grad_data(b)) {
          // dB += Aᵀ·dC
          if (b_broadcast) {
            kern::gemm_tn(batch * m, n, k, av.data(), k, g, n, gb, n, true);
          } else {
            for (std::int64_t i = 0; i < batch; ++i) {
              kern::gemm_tn(m, n, k, av.data() + i * m * k, k, g + i * m * n, n, gb + i * k * n,
                            n, true);
            }
          }
        }
      });
}

}  // namespace surge
