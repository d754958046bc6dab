// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "loretta/autodiff.hpp"
#include "loretta/parameter.hpp"
#include "loretta/tt.hpp"

namespace loretta {

enum class Activation { Relu, Gelu };

/// Anything with a forward on the tape and a list of parameter groups.
template <typename T>
class Module {
 public:
  virtual ~Module() = default;
  /// x: [B, in] -> [B, out].
  virtual ad::Var<T> apply(ad::Tape<T>& tape, ad::Var<T> x) const = 0;
  virtual std::vector<ParamGroup<T>> groups() = 0;
};

/// Per-factor sigma such that the contracted weight has entry standard
/// deviation `target_std`: the variance of one entry is
/// sigma^(2d) * prod(interior ranks).
double matched_factor_sigma(const TTShape& shape, const TTRanks& ranks, double target_std);

/// A weight matrix held only as TT factors. Factors are Parameters so the
/// optimizer, freezing policy and checkpoints treat them like any other
/// tensor.
template <typename T>
class TTWeight {
 public:
  TTWeight() = default;
  TTWeight(std::string name, const TTTensor<T>& tt, ParamRole role);

  static TTWeight gaussian(std::string name, const TTShape& shape, const TTRanks& ranks,
                           std::size_t rows, std::size_t cols, double sigma, std::mt19937_64& rng,
                           ParamRole role);
  /// Shape-only weight for counting.
  static TTWeight meta(std::string name, const TTShape& shape, const TTRanks& ranks,
                       std::size_t rows, std::size_t cols, ParamRole role);

  /// [B, cols] -> [B, rows] using the same factor schedule as tt_apply.
  ad::Var<T> apply(ad::Tape<T>& tape, ad::Var<T> x) const;

  TTTensor<T> snapshot() const;
  Tensor<T> contract() const { return tt_contract(snapshot()); }

  ParamGroup<T> group();
  const std::string& name() const noexcept { return name_; }
  const TTShape& shape() const noexcept { return shape_; }
  const TTRanks& ranks() const noexcept { return ranks_; }
  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::vector<Parameter<T>>& factors() noexcept { return factors_; }
  const std::vector<Parameter<T>>& factors() const noexcept { return factors_; }

 private:
  std::string name_;
  TTShape shape_;
  TTRanks ranks_;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  MatvecPlan plan_;
  std::vector<Parameter<T>> factors_;
};

/// y = x W^T + b with W stored dense as [out, in].
template <typename T>
class DenseLinear : public Module<T> {
 public:
  DenseLinear() = default;
  DenseLinear(std::string name, Tensor<T> weight, std::optional<Tensor<T>> bias, ParamRole role);
  /// N(0, std^2) weight, zero bias. Shape-only when `materialize` is false.
  static DenseLinear init(std::string name, std::size_t out, std::size_t in, bool biased,
                          double std, std::mt19937_64& rng, ParamRole role, bool materialize);

  ad::Var<T> apply(ad::Tape<T>& tape, ad::Var<T> x) const override;
  std::vector<ParamGroup<T>> groups() override;

  std::size_t out_features() const { return weight.shape[0]; }
  std::size_t in_features() const { return weight.shape[1]; }

  Parameter<T> weight;
  std::optional<Parameter<T>> bias;
};

/// y = TT(W) x + b.
template <typename T>
class TTLinear : public Module<T> {
 public:
  TTLinear() = default;
  TTLinear(TTWeight<T> weight, std::optional<Tensor<T>> bias, ParamRole role);

  ad::Var<T> apply(ad::Tape<T>& tape, ad::Var<T> x) const override;
  std::vector<ParamGroup<T>> groups() override;

  std::size_t out_features() const { return weight.rows(); }
  std::size_t in_features() const { return weight.cols(); }

  TTWeight<T> weight;
  std::optional<Parameter<T>> bias;
};

template <typename T>
ad::Var<T> activate(Activation act, ad::Var<T> x);

/// h + up(act(down(h))) with TT projections.
template <typename T>
class TensorizedAdapter : public Module<T> {
 public:
  TensorizedAdapter(TTLinear<T> down, TTLinear<T> up, Activation act);

  ad::Var<T> apply(ad::Tape<T>& tape, ad::Var<T> h) const override;
  std::vector<ParamGroup<T>> groups() override;
  std::size_t bottleneck() const { return down.out_features(); }

  TTLinear<T> down;
  TTLinear<T> up;
  Activation activation;
};

/// Classical bottleneck adapter with dense projections.
template <typename T>
class DenseAdapter : public Module<T> {
 public:
  DenseAdapter(DenseLinear<T> down, DenseLinear<T> up, Activation act);

  ad::Var<T> apply(ad::Tape<T>& tape, ad::Var<T> h) const override;
  std::vector<ParamGroup<T>> groups() override;

  DenseLinear<T> down;
  DenseLinear<T> up;
  Activation activation;
};

/// scale * B (A x). A ~ N(0, std^2), B = 0.
template <typename T>
class LoRAUpdate : public Module<T> {
 public:
  LoRAUpdate(std::string name, Tensor<T> a, Tensor<T> b, T scale);
  static LoRAUpdate init(std::string name, std::size_t out, std::size_t in, std::size_t rank,
                         double std, std::mt19937_64& rng, bool materialize);

  ad::Var<T> apply(ad::Tape<T>& tape, ad::Var<T> x) const override;
  std::vector<ParamGroup<T>> groups() override;
  std::size_t rank() const { return a.shape[0]; }

  Parameter<T> a;  // [r, in]
  Parameter<T> b;  // [out, r]
  T scale = T{1};
};

/// scale * (TT(up) TT(down) x - offset x). The offset is frozen and never
/// listed among the groups.
template <typename T>
class TTRepUpdate : public Module<T> {
 public:
  TTRepUpdate(TTWeight<T> down, TTWeight<T> up, T scale);

  /// offset = contract(up) * contract(down), captured from the current
  /// factors.
  void init_zero_offset();
  void disable_zero_offset() { offset_enabled_ = false; }
  bool offset_enabled() const noexcept { return offset_enabled_; }
  const Parameter<T>& zero_offset() const noexcept { return offset_; }

  ad::Var<T> apply(ad::Tape<T>& tape, ad::Var<T> x) const override;
  std::vector<ParamGroup<T>> groups() override;
  std::size_t bottleneck() const { return down.rows(); }

  TTWeight<T> down;  // bottleneck x in
  TTWeight<T> up;    // out x bottleneck
  T scale = T{1};

 private:
  Parameter<T> offset_;
  bool offset_enabled_ = false;
};

/// A dense linear map plus an optional additive update path (LoRA or TT
/// reparameterization). With no update it is just the base layer.
template <typename T>
class UpdatedLinear : public Module<T> {
 public:
  UpdatedLinear() = default;
  explicit UpdatedLinear(DenseLinear<T> base, std::unique_ptr<Module<T>> update = nullptr);

  ad::Var<T> apply(ad::Tape<T>& tape, ad::Var<T> x) const override;
  std::vector<ParamGroup<T>> groups() override;

  DenseLinear<T> base;
  std::unique_ptr<Module<T>> update;
};

template <typename T>
using LoRALinear = UpdatedLinear<T>;
template <typename T>
using TTRepLinear = UpdatedLinear<T>;

struct ParamReport {
  struct Row {
    std::string name;
    std::size_t count = 0;
  };
  std::vector<Row> rows;
  std::size_t total = 0;

  std::size_t storage_bytes(std::size_t dtype_width) const { return total * dtype_width; }
};

/// Sums every trainable entry, one row per trainable group.
template <typename T>
ParamReport trainable_param_report(const std::vector<ParamGroup<T>>& groups);

/// Forward-only convenience: runs `m` on a constant batch.
template <typename T>
Tensor<T> run_module(const Module<T>& m, const Tensor<T>& x);

}  // namespace loretta
