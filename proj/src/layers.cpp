// SPDX-License-Identifier: Apache-2.0
#include "loretta/layers.hpp"

#include <cmath>

namespace loretta {

double matched_factor_sigma(const TTShape& shape, const TTRanks& ranks, double target_std) {
  require(target_std > 0.0, ErrorCode::InvalidSigma, "target std must be positive");
  validate_pair(shape, ranks);
  double interior = 1.0;
  for (std::size_t i = 1; i < shape.order(); ++i) interior *= static_cast<double>(ranks[i]);
  const double d = static_cast<double>(shape.order());
  return std::pow(target_std * target_std / interior, 1.0 / (2.0 * d));
}

// ---------------------------------------------------------------- TTWeight

template <typename T>
TTWeight<T>::TTWeight(std::string name, const TTTensor<T>& tt, ParamRole role)
    : name_(std::move(name)),
      shape_(tt.shape()),
      ranks_(tt.ranks()),
      rows_(tt.rows()),
      cols_(tt.cols()),
      plan_(plan_matvec(tt.shape(), tt.rows(), tt.cols())) {
  factors_.reserve(tt.order());
  for (std::size_t i = 0; i < tt.order(); ++i)
    factors_.emplace_back(name_ + ".g" + std::to_string(i), tt.factor(i), ParamKind::Weight, role);
}

template <typename T>
TTWeight<T> TTWeight<T>::gaussian(std::string name, const TTShape& shape, const TTRanks& ranks,
                                  std::size_t rows, std::size_t cols, double sigma,
                                  std::mt19937_64& rng, ParamRole role) {
  return TTWeight(std::move(name),
                  TTTensor<T>::from_factors(gaussian_factors<T>(shape, ranks, sigma, rng), rows,
                                            cols),
                  role);
}

template <typename T>
TTWeight<T> TTWeight<T>::meta(std::string name, const TTShape& shape, const TTRanks& ranks,
                              std::size_t rows, std::size_t cols, ParamRole role) {
  validate_pair(shape, ranks);
  require(shape.numel() == rows * cols, ErrorCode::ShapeProductMismatch,
          "shape " + to_string(shape) + " does not match " + std::to_string(rows) + "x" +
              std::to_string(cols));
  TTWeight w;
  w.name_ = std::move(name);
  w.shape_ = shape;
  w.ranks_ = ranks;
  w.rows_ = rows;
  w.cols_ = cols;
  w.plan_ = plan_matvec(shape, rows, cols);
  for (std::size_t i = 0; i < shape.order(); ++i)
    w.factors_.push_back(Parameter<T>::meta(w.name_ + ".g" + std::to_string(i),
                                            Shape{ranks[i], shape.dims[i], ranks[i + 1]},
                                            ParamKind::Weight, role));
  return w;
}

template <typename T>
ad::Var<T> TTWeight<T>::apply(ad::Tape<T>& tape, ad::Var<T> x) const {
  require(x.shape().size() == 2 && x.shape()[1] == cols_, ErrorCode::DimensionMismatch,
          name_ + " expects inputs of width " + std::to_string(cols_) + ", got " +
              shape_to_string(x.shape()));
  const std::size_t batch = x.shape()[0];
  const auto& dims = shape_.dims;
  const std::size_t d = shape_.order();
  const std::size_t s = plan_.window_begin;
  const std::size_t t = plan_.window_end;

  // Column cores, right to left.
  ad::Var<T> state = x;
  std::size_t lead = batch * cols_;
  for (std::size_t j = d; j-- > t;) {
    const std::size_t r_in = ranks_[j], r_out = ranks_[j + 1];
    lead /= dims[j];
    ad::Var<T> g = ad::reshape(tape.param(factors_[j]), Shape{r_in, dims[j] * r_out});
    state = ad::matmul(ad::reshape(state, Shape{lead, dims[j] * r_out}), ad::transpose(g));
  }
  const std::size_t r_s = ranks_[s], r_t = ranks_[t];
  state = ad::reshape(state, Shape{batch, plan_.window_cols * r_t});

  ad::Var<T> out = state;  // [B, r_s * window_rows]
  if (s < t) {
    ad::Var<T> block = ad::reshape(tape.param(factors_[s]), Shape{r_s * dims[s], ranks_[s + 1]});
    std::size_t block_lead = r_s * dims[s];
    for (std::size_t j = s + 1; j < t; ++j) {
      ad::Var<T> g = ad::reshape(tape.param(factors_[j]), Shape{ranks_[j], dims[j] * ranks_[j + 1]});
      block = ad::matmul(block, g);
      block_lead *= dims[j];
      block = ad::reshape(block, Shape{block_lead, ranks_[j + 1]});
    }
    block = ad::reshape(block, Shape{r_s * plan_.window_rows, plan_.window_cols * r_t});
    out = ad::matmul(state, ad::transpose(block));
  }

  // Row cores, right to left; each prepends one output digit.
  std::size_t tail = plan_.window_rows;
  for (std::size_t j = s; j-- > 0;) {
    const std::size_t r_in = ranks_[j], r_out = ranks_[j + 1];
    ad::Var<T> g = ad::reshape(tape.param(factors_[j]), Shape{r_in * dims[j], r_out});
    if (tail == 1) {
      out = ad::matmul(ad::reshape(out, Shape{batch, r_out}), ad::transpose(g));
    } else {
      ad::Var<T> u = ad::transpose(ad::reshape(out, Shape{batch, r_out, tail}));
      u = ad::matmul(ad::reshape(u, Shape{batch * tail, r_out}), ad::transpose(g));
      out = ad::transpose(ad::reshape(u, Shape{batch, tail, r_in * dims[j]}));
    }
    tail *= dims[j];
    out = ad::reshape(out, Shape{batch, r_in * tail});
  }
  return out;
}

template <typename T>
TTTensor<T> TTWeight<T>::snapshot() const {
  std::vector<Tensor<T>> f;
  f.reserve(factors_.size());
  for (const auto& p : factors_) {
    require(p.materialized(), ErrorCode::InvalidConfig, name_ + " is shape-only");
    f.push_back(p.value);
  }
  return TTTensor<T>::from_factors(std::move(f), rows_, cols_);
}

template <typename T>
ParamGroup<T> TTWeight<T>::group() {
  ParamGroup<T> g;
  g.name = name_;
  for (auto& p : factors_) g.parts.push_back(&p);
  g.dims = shape_.dims;
  g.ranks = ranks_.values;
  g.role = factors_.empty() ? ParamRole::Peft : factors_.front().role;
  return g;
}

// ---------------------------------------------------------------- dense

template <typename T>
DenseLinear<T>::DenseLinear(std::string name, Tensor<T> w, std::optional<Tensor<T>> b,
                            ParamRole role)
    : weight(name + ".weight", std::move(w), ParamKind::Weight, role) {
  require(weight.shape.size() == 2, ErrorCode::InvalidShape, name + ": weight must be a matrix");
  if (b) {
    require(b->shape() == Shape{weight.shape[0]}, ErrorCode::DimensionMismatch,
            name + ": bias length must equal out_features");
    bias.emplace(name + ".bias", std::move(*b), ParamKind::Bias, role);
  }
}

template <typename T>
DenseLinear<T> DenseLinear<T>::init(std::string name, std::size_t out, std::size_t in, bool biased,
                                    double std, std::mt19937_64& rng, ParamRole role,
                                    bool materialize) {
  if (!materialize) {
    DenseLinear l;
    l.weight = Parameter<T>::meta(name + ".weight", Shape{out, in}, ParamKind::Weight, role);
    if (biased) l.bias = Parameter<T>::meta(name + ".bias", Shape{out}, ParamKind::Bias, role);
    return l;
  }
  Tensor<T> w = Tensor<T>::matrix(out, in);
  std::normal_distribution<double> normal(0.0, std);
  for (auto& v : w.values()) v = static_cast<T>(normal(rng));
  std::optional<Tensor<T>> b;
  if (biased) b = Tensor<T>(Shape{out});
  return DenseLinear(std::move(name), std::move(w), std::move(b), role);
}

template <typename T>
ad::Var<T> DenseLinear<T>::apply(ad::Tape<T>& tape, ad::Var<T> x) const {
  require(x.shape().size() == 2 && x.shape()[1] == in_features(), ErrorCode::DimensionMismatch,
          weight.name + " expects inputs of width " + std::to_string(in_features()) + ", got " +
              shape_to_string(x.shape()));
  ad::Var<T> y = ad::matmul(x, ad::transpose(tape.param(weight)));
  if (bias) y = ad::add_bias(y, tape.param(*bias));
  return y;
}

template <typename T>
std::vector<ParamGroup<T>> DenseLinear<T>::groups() {
  std::vector<ParamGroup<T>> g{dense_group(weight)};
  if (bias) g.push_back(dense_group(*bias));
  return g;
}

// ---------------------------------------------------------------- TT linear

template <typename T>
TTLinear<T>::TTLinear(TTWeight<T> w, std::optional<Tensor<T>> b, ParamRole role)
    : weight(std::move(w)) {
  if (b) {
    require(b->shape() == Shape{weight.rows()}, ErrorCode::DimensionMismatch,
            weight.name() + ": bias length must equal out_features");
    bias.emplace(weight.name() + ".bias", std::move(*b), ParamKind::Bias, role);
  }
}

template <typename T>
ad::Var<T> TTLinear<T>::apply(ad::Tape<T>& tape, ad::Var<T> x) const {
  ad::Var<T> y = weight.apply(tape, x);
  if (bias) y = ad::add_bias(y, tape.param(*bias));
  return y;
}

template <typename T>
std::vector<ParamGroup<T>> TTLinear<T>::groups() {
  std::vector<ParamGroup<T>> g{weight.group()};
  if (bias) g.push_back(dense_group(*bias));
  return g;
}

template <typename T>
ad::Var<T> activate(Activation act, ad::Var<T> x) {
  return act == Activation::Relu ? ad::relu(x) : ad::gelu(x);
}

// ---------------------------------------------------------------- adapters

template <typename T>
TensorizedAdapter<T>::TensorizedAdapter(TTLinear<T> d, TTLinear<T> u, Activation act)
    : down(std::move(d)), up(std::move(u)), activation(act) {
  require(down.out_features() == up.in_features() && down.in_features() == up.out_features(),
          ErrorCode::DimensionMismatch, "adapter projections do not chain");
}

template <typename T>
ad::Var<T> TensorizedAdapter<T>::apply(ad::Tape<T>& tape, ad::Var<T> h) const {
  return ad::add(h, up.apply(tape, activate(activation, down.apply(tape, h))));
}

template <typename T>
std::vector<ParamGroup<T>> TensorizedAdapter<T>::groups() {
  auto g = down.groups();
  for (auto& x : up.groups()) g.push_back(x);
  return g;
}

template <typename T>
DenseAdapter<T>::DenseAdapter(DenseLinear<T> d, DenseLinear<T> u, Activation act)
    : down(std::move(d)), up(std::move(u)), activation(act) {
  require(down.out_features() == up.in_features() && down.in_features() == up.out_features(),
          ErrorCode::DimensionMismatch, "adapter projections do not chain");
}

template <typename T>
ad::Var<T> DenseAdapter<T>::apply(ad::Tape<T>& tape, ad::Var<T> h) const {
  return ad::add(h, up.apply(tape, activate(activation, down.apply(tape, h))));
}

template <typename T>
std::vector<ParamGroup<T>> DenseAdapter<T>::groups() {
  auto g = down.groups();
  for (auto& x : up.groups()) g.push_back(x);
  return g;
}

// ---------------------------------------------------------------- LoRA

template <typename T>
LoRAUpdate<T>::LoRAUpdate(std::string name, Tensor<T> a_, Tensor<T> b_, T s)
    : a(name + ".lora_a", std::move(a_), ParamKind::Weight, ParamRole::Peft),
      b(name + ".lora_b", std::move(b_), ParamKind::Weight, ParamRole::Peft),
      scale(s) {
  require(a.shape.size() == 2 && b.shape.size() == 2 && b.shape[1] == a.shape[0],
          ErrorCode::DimensionMismatch, name + ": LoRA factors do not chain");
}

template <typename T>
LoRAUpdate<T> LoRAUpdate<T>::init(std::string name, std::size_t out, std::size_t in,
                                  std::size_t rank, double std, std::mt19937_64& rng,
                                  bool materialize) {
  require(rank >= 1, ErrorCode::InvalidConfig, "LoRA rank must be >= 1");
  if (!materialize) {
    LoRAUpdate u(name, Tensor<T>(Shape{1, 1}), Tensor<T>(Shape{1, 1}), T{1});
    u.a = Parameter<T>::meta(name + ".lora_a", Shape{rank, in}, ParamKind::Weight, ParamRole::Peft);
    u.b = Parameter<T>::meta(name + ".lora_b", Shape{out, rank}, ParamKind::Weight,
                             ParamRole::Peft);
    return u;
  }
  Tensor<T> a = Tensor<T>::matrix(rank, in);
  std::normal_distribution<double> normal(0.0, std);
  for (auto& v : a.values()) v = static_cast<T>(normal(rng));
  return LoRAUpdate(std::move(name), std::move(a), Tensor<T>::matrix(out, rank), T{1});
}

template <typename T>
ad::Var<T> LoRAUpdate<T>::apply(ad::Tape<T>& tape, ad::Var<T> x) const {
  require(x.shape().size() == 2 && x.shape()[1] == a.shape[1], ErrorCode::DimensionMismatch,
          a.name + " expects inputs of width " + std::to_string(a.shape[1]));
  ad::Var<T> ax = ad::matmul(x, ad::transpose(tape.param(a)));
  ad::Var<T> y = ad::matmul(ax, ad::transpose(tape.param(b)));
  return scale == T{1} ? y : ad::scale(y, scale);
}

template <typename T>
std::vector<ParamGroup<T>> LoRAUpdate<T>::groups() {
  return {dense_group(a), dense_group(b)};
}

// ---------------------------------------------------------------- TT rep

template <typename T>
TTRepUpdate<T>::TTRepUpdate(TTWeight<T> d, TTWeight<T> u, T s)
    : down(std::move(d)), up(std::move(u)), scale(s) {
  require(up.cols() == down.rows(), ErrorCode::DimensionMismatch,
          "reparameterization pair does not chain: up has " + std::to_string(up.cols()) +
              " inputs, down has " + std::to_string(down.rows()) + " outputs");
  offset_ = Parameter<T>::meta(up.name() + ".zero_offset", Shape{up.rows(), down.cols()},
                               ParamKind::Weight, ParamRole::Base);
}

template <typename T>
void TTRepUpdate<T>::init_zero_offset() {
  const std::string name = offset_.name;
  const bool concrete = !down.factors().empty() && down.factors().front().materialized();
  if (concrete) {
    offset_ = Parameter<T>(name, dense::matmul(up.contract(), down.contract()), ParamKind::Weight,
                           ParamRole::Base);
  } else {
    offset_ = Parameter<T>::meta(name, Shape{up.rows(), down.cols()}, ParamKind::Weight,
                                 ParamRole::Base);
  }
  offset_.trainable = false;
  offset_enabled_ = true;
}

template <typename T>
ad::Var<T> TTRepUpdate<T>::apply(ad::Tape<T>& tape, ad::Var<T> x) const {
  ad::Var<T> y = up.apply(tape, down.apply(tape, x));
  if (offset_enabled_) y = ad::sub(y, ad::matmul(x, ad::transpose(tape.param(offset_))));
  return scale == T{1} ? y : ad::scale(y, scale);
}

template <typename T>
std::vector<ParamGroup<T>> TTRepUpdate<T>::groups() {
  return {down.group(), up.group()};
}

// ---------------------------------------------------------------- wrapped

template <typename T>
UpdatedLinear<T>::UpdatedLinear(DenseLinear<T> b, std::unique_ptr<Module<T>> u)
    : base(std::move(b)), update(std::move(u)) {}

template <typename T>
ad::Var<T> UpdatedLinear<T>::apply(ad::Tape<T>& tape, ad::Var<T> x) const {
  ad::Var<T> y = base.apply(tape, x);
  if (update) y = ad::add(y, update->apply(tape, x));
  return y;
}

template <typename T>
std::vector<ParamGroup<T>> UpdatedLinear<T>::groups() {
  auto g = base.groups();
  if (update)
    for (auto& x : update->groups()) g.push_back(x);
  return g;
}

// ---------------------------------------------------------------- misc

template <typename T>
ParamReport trainable_param_report(const std::vector<ParamGroup<T>>& groups) {
  ParamReport r;
  for (const auto& g : groups) {
    std::size_t n = 0;
    for (const auto* p : g.parts)
      if (p->trainable) n += p->numel();
    if (n == 0) continue;
    r.rows.push_back({g.name, n});
    r.total += n;
  }
  return r;
}

template <typename T>
Tensor<T> run_module(const Module<T>& m, const Tensor<T>& x) {
  ad::Tape<T> tape;
  tape.set_grad_enabled(false);
  return tape.value(m.apply(tape, tape.constant(x)));
}

#define LORETTA_INSTANTIATE_LAYERS(T)                                                \
  template class TTWeight<T>;                                                        \
  template class DenseLinear<T>;                                                     \
  template class TTLinear<T>;                                                        \
  template class TensorizedAdapter<T>;                                               \
  template class DenseAdapter<T>;                                                    \
  template class LoRAUpdate<T>;                                                      \
  template class TTRepUpdate<T>;                                                     \
  template class UpdatedLinear<T>;                                                   \
  template ad::Var<T> activate(Activation, ad::Var<T>);                              \
  template ParamReport trainable_param_report(const std::vector<ParamGroup<T>>&);    \
  template Tensor<T> run_module(const Module<T>&, const Tensor<T>&);

LORETTA_INSTANTIATE_LAYERS(float)
LORETTA_INSTANTIATE_LAYERS(double)

}  // namespace loretta
