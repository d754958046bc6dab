// SPDX-License-Identifier: Apache-2.0
#include "loretta/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace loretta::ad {
namespace {

// C[m,k] += A[m,n] * B[k,n]^T
template <typename T>
void gemm_abt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * n;
    T* crow = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      T acc{0};
      for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
template <typename T>
void gemm_atb_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T{0}) continue;
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void check_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  require(a.shape() == b.shape(), ErrorCode::ShapeMismatch,
          std::string(op) + ": " + shape_to_string(a.shape()) + " vs " +
              shape_to_string(b.shape()));
}

template <typename T>
void axpy(Tensor<T>& dst, const Tensor<T>& src, T alpha = T{1}) {
  T* d = dst.data();
  const T* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += alpha * s[i];
}

template <typename T>
std::size_t last_dim(const Shape& s) {
  require(!s.empty(), ErrorCode::ShapeMismatch, "scalar has no last axis");
  return s.back();
}

}  // namespace

// ---------------------------------------------------------------- Tape

template <typename T>
Var<T> Tape<T>::push(Node node) {
  if (check_finite_)
    require(node.value().all_finite(), ErrorCode::NonFiniteDetected,
            "node " + std::to_string(nodes_.size()) + " produced a non-finite value");
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::variable(Tensor<T> value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = grad_enabled_;
  return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::param(const Parameter<T>& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return Var<T>(this, it->second);
  require(p.materialized(), ErrorCode::InvalidConfig,
          "parameter '" + p.name + "' is shape-only and cannot be evaluated");
  Node n;
  n.borrowed = &p.value;
  n.requires_grad = grad_enabled_ && p.trainable;
  Var<T> v = push(std::move(n));
  bound_.emplace(&p, v.id());
  return v;
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn fn) {
  Node n;
  n.owned = std::move(value);
  if (grad_enabled_)
    for (const auto& in : inputs)
      if (nodes_.at(in.id()).requires_grad) n.requires_grad = true;
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

template <typename T>
const Tensor<T>& Tape<T>::value(Var<T> v) const {
  return nodes_.at(v.id()).value();
}

template <typename T>
Tensor<T> Tape<T>::grad(Var<T> v) const {
  const Node& n = nodes_.at(v.id());
  if (n.grad.empty()) return Tensor<T>(n.value().shape());
  return n.grad;
}

template <typename T>
const Tensor<T>* Tape<T>::grad_of(const Parameter<T>& p) const {
  auto it = bound_.find(&p);
  if (it == bound_.end()) return nullptr;
  const Node& n = nodes_[it->second];
  if (!n.requires_grad) return nullptr;
  return &n.grad;
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(Var<T> v) {
  Node& n = nodes_.at(v.id());
  if (n.grad.shape() != n.value().shape()) n.grad = Tensor<T>(n.value().shape());
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  require(value(loss).size() == 1, ErrorCode::NonScalarLoss,
          "loss has shape " + shape_to_string(value(loss).shape()));
  backward(loss, Tensor<T>(value(loss).shape(), T{1}));
}

template <typename T>
void Tape<T>::backward(Var<T> out, const Tensor<T>& upstream) {
  require(upstream.shape() == value(out).shape(), ErrorCode::ShapeMismatch,
          "upstream gradient shape " + shape_to_string(upstream.shape()) + " vs output " +
              shape_to_string(value(out).shape()));
  for (auto& n : nodes_) {
    if (n.requires_grad)
      n.grad = Tensor<T>(n.value().shape());
    else
      n.grad = Tensor<T>();
  }
  if (!nodes_.at(out.id()).requires_grad) return;
  nodes_[out.id()].grad = upstream;
  for (std::size_t i = out.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.backward) n.backward(n.grad);
  }
}

// ---------------------------------------------------------------- ops

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& tape = a.tape();
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const bool batched = sa.size() == 3;
  require((sa.size() == 2 && sb.size() == 2) ||
              (sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0]),
          ErrorCode::ShapeMismatch,
          "matmul " + shape_to_string(sa) + " x " + shape_to_string(sb));
  const std::size_t nb = batched ? sa[0] : 1;
  const std::size_t m = sa[sa.size() - 2], k = sa.back(), n = sb.back();
  require(sb[sb.size() - 2] == k, ErrorCode::ShapeMismatch,
          "matmul inner dims " + shape_to_string(sa) + " x " + shape_to_string(sb));

  Tensor<T> out(batched ? Shape{nb, m, n} : Shape{m, n});
  for (std::size_t b0 = 0; b0 < nb; ++b0)
    dense::gemm_acc(a.value().data() + b0 * m * k, b.value().data() + b0 * k * n,
                    out.data() + b0 * m * n, m, k, n);

  const Var<T> ins[] = {a, b};
  return tape.record(std::move(out), ins, [&tape, a, b, nb, m, k, n](const Tensor<T>& up) {
    if (tape.requires_grad(a)) {
      Tensor<T>& ga = tape.grad_buffer(a);
      const Tensor<T>& bv = tape.value(b);
      for (std::size_t b0 = 0; b0 < nb; ++b0)
        gemm_abt_acc(up.data() + b0 * m * n, bv.data() + b0 * k * n, ga.data() + b0 * m * k, m,
                     n, k);
    }
    if (tape.requires_grad(b)) {
      Tensor<T>& gb = tape.grad_buffer(b);
      const Tensor<T>& av = tape.value(a);
      for (std::size_t b0 = 0; b0 < nb; ++b0)
        gemm_atb_acc(av.data() + b0 * m * k, up.data() + b0 * m * n, gb.data() + b0 * k * n, m,
                     k, n);
    }
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  check_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  axpy(out, b.value());
  Tape<T>& tape = a.tape();
  const Var<T> ins[] = {a, b};
  return tape.record(std::move(out), ins, [&tape, a, b](const Tensor<T>& up) {
    if (tape.requires_grad(a)) axpy(tape.grad_buffer(a), up);
    if (tape.requires_grad(b)) axpy(tape.grad_buffer(b), up);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  check_same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  axpy(out, b.value(), T{-1});
  Tape<T>& tape = a.tape();
  const Var<T> ins[] = {a, b};
  return tape.record(std::move(out), ins, [&tape, a, b](const Tensor<T>& up) {
    if (tape.requires_grad(a)) axpy(tape.grad_buffer(a), up);
    if (tape.requires_grad(b)) axpy(tape.grad_buffer(b), up, T{-1});
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  check_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  Tape<T>& tape = a.tape();
  const Var<T> ins[] = {a, b};
  return tape.record(std::move(out), ins, [&tape, a, b](const Tensor<T>& up) {
    if (tape.requires_grad(a)) {
      Tensor<T>& g = tape.grad_buffer(a);
      const Tensor<T>& bv = tape.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += up[i] * bv[i];
    }
    if (tape.requires_grad(b)) {
      Tensor<T>& g = tape.grad_buffer(b);
      const Tensor<T>& av = tape.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += up[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= factor;
  Tape<T>& tape = a.tape();
  const Var<T> ins[] = {a};
  return tape.record(std::move(out), ins, [&tape, a, factor](const Tensor<T>& up) {
    axpy(tape.grad_buffer(a), up, factor);
  });
}

template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  const std::size_t n = last_dim<T>(x.shape());
  require(bias.shape() == Shape{n}, ErrorCode::ShapeMismatch,
          "bias " + shape_to_string(bias.shape()) + " for input " + shape_to_string(x.shape()));
  Tensor<T> out = x.value();
  const std::size_t rows = out.size() / n;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += bias.value()[j];
  Tape<T>& tape = x.tape();
  const Var<T> ins[] = {x, bias};
  return tape.record(std::move(out), ins, [&tape, x, bias, rows, n](const Tensor<T>& up) {
    if (tape.requires_grad(x)) axpy(tape.grad_buffer(x), up);
    if (tape.requires_grad(bias)) {
      Tensor<T>& g = tape.grad_buffer(bias);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) g[j] += up[r * n + j];
    }
  });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  Tape<T>& tape = a.tape();
  const Var<T> ins[] = {a};
  return tape.record(std::move(out), ins, [&tape, a](const Tensor<T>& up) {
    Tensor<T>& g = tape.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += up[i];
  });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  const Shape& s = a.shape();
  require(s.size() == 2 || s.size() == 3, ErrorCode::ShapeMismatch,
          "transpose expects rank 2 or 3, got " + shape_to_string(s));
  const std::size_t nb = s.size() == 3 ? s[0] : 1;
  const std::size_t m = s[s.size() - 2], n = s.back();
  Shape ts = s;
  std::swap(ts[ts.size() - 2], ts[ts.size() - 1]);
  Tensor<T> out(ts);
  const T* src = a.value().data();
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[b * m * n + j * m + i] = src[b * m * n + i * n + j];
  Tape<T>& tape = a.tape();
  const Var<T> ins[] = {a};
  return tape.record(std::move(out), ins, [&tape, a, nb, m, n](const Tensor<T>& up) {
    Tensor<T>& g = tape.grad_buffer(a);
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[b * m * n + i * n + j] += up[b * m * n + j * m + i];
  });
}

template <typename T>
Var<T> concat_last(std::span<const Var<T>> parts) {
  require(!parts.empty(), ErrorCode::ShapeMismatch, "concat of nothing");
  Shape lead = parts[0].shape();
  lead.pop_back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape pl = p.shape();
    const std::size_t w = last_dim<T>(pl);
    pl.pop_back();
    require(pl == lead, ErrorCode::ShapeMismatch, "concat leading shapes differ");
    widths.push_back(w);
    total += w;
  }
  Shape os = lead;
  os.push_back(total);
  Tensor<T> out(os);
  const std::size_t rows = shape_numel(lead);
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const T* src = parts[pi].value().data();
    const std::size_t w = widths[pi];
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(src + r * w, src + (r + 1) * w, out.data() + r * total + offset);
    offset += w;
  }
  Tape<T>& tape = parts[0].tape();
  std::vector<Var<T>> ins(parts.begin(), parts.end());
  return tape.record(std::move(out), ins,
                     [&tape, ins, widths, rows, total](const Tensor<T>& up) {
                       std::size_t off = 0;
                       for (std::size_t pi = 0; pi < ins.size(); ++pi) {
                         const std::size_t w = widths[pi];
                         if (tape.requires_grad(ins[pi])) {
                           Tensor<T>& g = tape.grad_buffer(ins[pi]);
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t j = 0; j < w; ++j)
                               g[r * w + j] += up[r * total + off + j];
                         }
                         off += w;
                       }
                     });
}

template <typename T>
Var<T> slice_last(Var<T> a, std::size_t begin, std::size_t end) {
  const std::size_t n = last_dim<T>(a.shape());
  require(begin < end && end <= n, ErrorCode::ShapeMismatch,
          "slice [" + std::to_string(begin) + "," + std::to_string(end) + ") of width " +
              std::to_string(n));
  Shape os = a.shape();
  os.back() = end - begin;
  Tensor<T> out(os);
  const std::size_t rows = a.value().size() / n;
  const std::size_t w = end - begin;
  const T* src = a.value().data();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy(src + r * n + begin, src + r * n + end, out.data() + r * w);
  Tape<T>& tape = a.tape();
  const Var<T> ins[] = {a};
  return tape.record(std::move(out), ins, [&tape, a, rows, n, begin, w](const Tensor<T>& up) {
    Tensor<T>& g = tape.grad_buffer(a);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) g[r * n + begin + j] += up[r * w + j];
  });
}

template <typename T>
Var<T> relu(Var<T> a) {
  Tensor<T> out = a.value();
  Tape<T>& tape = a.tape();
  for (auto& v : out.values()) {
    tape.note_relu_input(static_cast<double>(v));
    v = v > T{0} ? v : T{0};
  }
  const Var<T> ins[] = {a};
  return tape.record(std::move(out), ins, [&tape, a](const Tensor<T>& up) {
    Tensor<T>& g = tape.grad_buffer(a);
    const Tensor<T>& x = tape.value(a);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > T{0}) g[i] += up[i];
  });
}

template <typename T>
Var<T> gelu(Var<T> a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  Tensor<T> out = a.value();
  for (auto& v : out.values()) {
    const T x = v;
    v = T(0.5) * x * (T{1} + std::tanh(T(kC) * (x + T(kA) * x * x * x)));
  }
  Tape<T>& tape = a.tape();
  const Var<T> ins[] = {a};
  return tape.record(std::move(out), ins, [&tape, a](const Tensor<T>& up) {
    Tensor<T>& g = tape.grad_buffer(a);
    const Tensor<T>& xs = tape.value(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T x = xs[i];
      const T th = std::tanh(T(kC) * (x + T(kA) * x * x * x));
      const T d = T(0.5) * (T{1} + th) +
                  T(0.5) * x * (T{1} - th * th) * T(kC) * (T{1} + T(3 * kA) * x * x);
      g[i] += up[i] * d;
    }
  });
}

template <typename T>
Var<T> softmax(Var<T> a) {
  const std::size_t n = last_dim<T>(a.shape());
  Tensor<T> out = a.value();
  const std::size_t rows = out.size() / n;
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = out.data() + r * n;
    const T mx = *std::max_element(row, row + n);
    T total{0};
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      total += row[j];
    }
    for (std::size_t j = 0; j < n; ++j) row[j] /= total;
  }
  auto y = std::make_shared<Tensor<T>>(out);
  Tape<T>& tape = a.tape();
  const Var<T> ins[] = {a};
  return tape.record(std::move(out), ins, [&tape, a, y, rows, n](const Tensor<T>& up) {
    Tensor<T>& g = tape.grad_buffer(a);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yr = y->data() + r * n;
      const T* ur = up.data() + r * n;
      T dot{0};
      for (std::size_t j = 0; j < n; ++j) dot += yr[j] * ur[j];
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += yr[j] * (ur[j] - dot);
    }
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> offset, T eps) {
  const std::size_t n = last_dim<T>(x.shape());
  require(gain.shape() == Shape{n} && offset.shape() == Shape{n}, ErrorCode::ShapeMismatch,
          "layer_norm parameters must have shape [" + std::to_string(n) + "]");
  const std::size_t rows = x.value().size() / n;
  auto xhat = std::make_shared<std::vector<T>>(x.value().size());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  Tensor<T> out(x.shape());
  const T* xv = x.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    T mean{0};
    for (std::size_t j = 0; j < n; ++j) mean += xv[r * n + j];
    mean /= static_cast<T>(n);
    T var{0};
    for (std::size_t j = 0; j < n; ++j) {
      const T c = xv[r * n + j] - mean;
      var += c * c;
    }
    var /= static_cast<T>(n);
    const T is = T{1} / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (xv[r * n + j] - mean) * is;
      (*xhat)[r * n + j] = h;
      out[r * n + j] = gain.value()[j] * h + offset.value()[j];
    }
  }
  Tape<T>& tape = x.tape();
  const Var<T> ins[] = {x, gain, offset};
  return tape.record(
      std::move(out), ins, [&tape, x, gain, offset, xhat, inv_std, rows, n](const Tensor<T>& up) {
        const std::vector<T>& h = *xhat;
        if (tape.requires_grad(gain)) {
          Tensor<T>& g = tape.grad_buffer(gain);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) g[j] += up[r * n + j] * h[r * n + j];
        }
        if (tape.requires_grad(offset)) {
          Tensor<T>& g = tape.grad_buffer(offset);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) g[j] += up[r * n + j];
        }
        if (tape.requires_grad(x)) {
          Tensor<T>& g = tape.grad_buffer(x);
          const Tensor<T>& gv = tape.value(gain);
          const T inv_n = T{1} / static_cast<T>(n);
          for (std::size_t r = 0; r < rows; ++r) {
            T sum_d{0}, sum_dh{0};
            for (std::size_t j = 0; j < n; ++j) {
              const T dh = up[r * n + j] * gv[j];
              sum_d += dh;
              sum_dh += dh * h[r * n + j];
            }
            const T is = (*inv_std)[r];
            for (std::size_t j = 0; j < n; ++j) {
              const T dh = up[r * n + j] * gv[j];
              g[r * n + j] += is * (dh - inv_n * sum_d - h[r * n + j] * inv_n * sum_dh);
            }
          }
        }
      });
}

template <typename T>
Var<T> embedding(Var<T> table, std::span<const std::uint32_t> ids) {
  require(table.shape().size() == 2, ErrorCode::ShapeMismatch, "embedding table must be a matrix");
  const std::size_t vocab = table.shape()[0], n = table.shape()[1];
  Tensor<T> out(Shape{ids.size(), n});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] < vocab, ErrorCode::TokenOutOfRange,
            "token id " + std::to_string(ids[i]) + " >= vocab " + std::to_string(vocab));
    const T* src = table.value().data() + static_cast<std::size_t>(ids[i]) * n;
    std::copy(src, src + n, out.data() + i * n);
  }
  Tape<T>& tape = table.tape();
  const Var<T> ins[] = {table};
  std::vector<std::uint32_t> idv(ids.begin(), ids.end());
  return tape.record(std::move(out), ins, [&tape, table, idv, n](const Tensor<T>& up) {
    Tensor<T>& g = tape.grad_buffer(table);
    for (std::size_t i = 0; i < idv.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) g[idv[i] * n + j] += up[i * n + j];
  });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::uint32_t> labels) {
  require(logits.shape().size() == 2 && logits.shape()[0] == labels.size() && !labels.empty(),
          ErrorCode::ShapeMismatch,
          "cross_entropy logits " + shape_to_string(logits.shape()) + " with " +
              std::to_string(labels.size()) + " labels");
  const std::size_t b = logits.shape()[0], c = logits.shape()[1];
  auto probs = std::make_shared<std::vector<T>>(b * c);
  T total{0};
  const T* lv = logits.value().data();
  for (std::size_t r = 0; r < b; ++r) {
    require(labels[r] < c, ErrorCode::ShapeMismatch, "label out of range");
    const T* row = lv + r * c;
    const T mx = *std::max_element(row, row + c);
    T z{0};
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const T lse = mx + std::log(z);
    total += lse - row[labels[r]];
    for (std::size_t j = 0; j < c; ++j) (*probs)[r * c + j] = std::exp(row[j] - lse);
  }
  Tensor<T> out(Shape{1}, total / static_cast<T>(b));
  Tape<T>& tape = logits.tape();
  const Var<T> ins[] = {logits};
  std::vector<std::uint32_t> lab(labels.begin(), labels.end());
  return tape.record(std::move(out), ins, [&tape, logits, probs, lab, b, c](const Tensor<T>& up) {
    Tensor<T>& g = tape.grad_buffer(logits);
    const T s = up[0] / static_cast<T>(b);
    for (std::size_t r = 0; r < b; ++r)
      for (std::size_t j = 0; j < c; ++j)
        g[r * c + j] += s * ((*probs)[r * c + j] - (j == lab[r] ? T{1} : T{0}));
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  T total{0};
  for (const T& v : a.value().values()) total += v;
  Tape<T>& tape = a.tape();
  const Var<T> ins[] = {a};
  return tape.record(Tensor<T>(Shape{1}, total), ins, [&tape, a](const Tensor<T>& up) {
    Tensor<T>& g = tape.grad_buffer(a);
    for (auto& v : g.values()) v += up[0];
  });
}

template <typename T>
Var<T> mean_tokens(Var<T> a) {
  const Shape& s = a.shape();
  require(s.size() == 3, ErrorCode::ShapeMismatch, "mean_tokens expects [B,S,H]");
  const std::size_t nb = s[0], ns = s[1], nh = s[2];
  Tensor<T> out(Shape{nb, nh});
  const T inv = T{1} / static_cast<T>(ns);
  const T* src = a.value().data();
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t t = 0; t < ns; ++t)
      for (std::size_t h = 0; h < nh; ++h) out[b * nh + h] += src[(b * ns + t) * nh + h];
  for (auto& v : out.values()) v *= inv;
  Tape<T>& tape = a.tape();
  const Var<T> ins[] = {a};
  return tape.record(std::move(out), ins, [&tape, a, nb, ns, nh, inv](const Tensor<T>& up) {
    Tensor<T>& g = tape.grad_buffer(a);
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t t = 0; t < ns; ++t)
        for (std::size_t h = 0; h < nh; ++h) g[(b * ns + t) * nh + h] += inv * up[b * nh + h];
  });
}

#define LORETTA_INSTANTIATE_AD(T)                                                        \
  template class Tape<T>;                                                                \
  template Var<T> matmul(Var<T>, Var<T>);                                                \
  template Var<T> add(Var<T>, Var<T>);                                                   \
  template Var<T> sub(Var<T>, Var<T>);                                                   \
  template Var<T> mul(Var<T>, Var<T>);                                                   \
  template Var<T> scale(Var<T>, T);                                                      \
  template Var<T> add_bias(Var<T>, Var<T>);                                              \
  template Var<T> reshape(Var<T>, Shape);                                                \
  template Var<T> transpose(Var<T>);                                                     \
  template Var<T> concat_last(std::span<const Var<T>>);                                  \
  template Var<T> slice_last(Var<T>, std::size_t, std::size_t);                          \
  template Var<T> relu(Var<T>);                                                          \
  template Var<T> gelu(Var<T>);                                                          \
  template Var<T> softmax(Var<T>);                                                       \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                 \
  template Var<T> embedding(Var<T>, std::span<const std::uint32_t>);                     \
  template Var<T> cross_entropy(Var<T>, std::span<const std::uint32_t>);                 \
  template Var<T> sum(Var<T>);                                                           \
  template Var<T> mean_tokens(Var<T>);

LORETTA_INSTANTIATE_AD(float)
LORETTA_INSTANTIATE_AD(double)

}  // namespace loretta::ad
