// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "loretta/checkpoint.hpp"
#include "loretta/data.hpp"
#include "loretta/encoder.hpp"
#include "loretta/grad_check.hpp"
#include "loretta/optim.hpp"

namespace loretta {

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 16;
  std::size_t steps = 500;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  std::size_t eval_every = 50;
  Method method = Method::Adp;
  std::size_t rank = 5;
  /// 0 picks the method default (64 for adapters, 8 for rep).
  std::size_t bottleneck = 0;

  void validate() const;
};

struct EvalResult {
  std::size_t count = 0;
  /// Unset for an empty split.
  std::optional<double> accuracy;
  double mean_loss = 0.0;
};

struct EvalPoint {
  std::size_t step = 0;
  double val_loss = 0.0;
  std::optional<double> val_accuracy;
};

struct TrainHistory {
  std::vector<double> losses;  // one per step
  std::vector<EvalPoint> evals;
  std::size_t best_step = 0;
  double best_val_loss = 0.0;
  /// Trainables at the lowest validation loss.
  Checkpoint best;
  EvalResult final_train;
  EvalResult final_val;
};

template <typename T>
EvalResult evaluate(const Encoder<T>& model, const Split& split, std::size_t batch_size = 64);

/// AdamW over the model's trainable parameters. Deterministic given the
/// config seed: batches come from a seeded epoch-wise shuffle.
template <typename T>
TrainHistory train(Encoder<T>& model, const SyntheticDataset& data, const TrainConfig& config);

/// Builds the encoder, injects `method` and applies its default freezing
/// policy. The tensorized pooler uses the method rank.
template <typename T>
std::unique_ptr<Encoder<T>> make_model(EncoderConfig arch, Method method, std::size_t rank,
                                       std::size_t bottleneck = 0, std::uint64_t seed = 1);

/// Central-difference check of every trainable scalar of a small injected
/// double-precision encoder. Trainable entries are first jittered with
/// N(0, jitter^2) so no factor sits at an exact zero (a zeroed factor would
/// make the other gradients of its chain vanish identically). A draw that
/// puts any relu input closer than kink_margin to zero is redrawn: across
/// the kink a central difference does not estimate a derivative.
struct ModelGradCheckConfig {
  EncoderConfig arch = [] {
    EncoderConfig c;
    c.layers = 1;
    c.vocab = 16;
    c.max_seq = 4;
    c.num_classes = 3;
    // Larger than the training default so that no gradient is small enough
    // to drown in the rounding error of the difference quotient.
    c.init_std = 0.05;
    return c;
  }();
  Method method = Method::Adp;
  std::size_t rank = 5;
  std::size_t bottleneck = 0;
  std::size_t batch = 2;
  std::size_t seq = 4;
  double jitter = 0.2;
  double kink_margin = 1e-4;
  std::size_t max_draws = 50;
  std::uint64_t seed = 3;
  GradCheckOptions options;
};

struct ModelGradCheck {
  GradCheckReport report;
  /// Smallest |relu input| at the checked point (infinity without relu).
  double relu_margin = 0.0;
  std::size_t draws = 0;
};

/// Throws InvalidConfig when no draw clears the kink margin.
ModelGradCheck check_model_gradients(const ModelGradCheckConfig& config);

template <typename T>
constexpr DType dtype_of() {
  return sizeof(T) == 4 ? DType::F32 : DType::F64;
}

}  // namespace loretta
