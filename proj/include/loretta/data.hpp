// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "loretta/encoder.hpp"

namespace loretta {

enum class TaskKind { Parity, Cluster };

std::string to_string(TaskKind kind);
TaskKind parse_task(const std::string& s);

struct Example {
  std::vector<std::uint32_t> tokens;
  std::uint32_t label = 0;

  friend bool operator==(const Example&, const Example&) = default;
};

struct Split {
  std::size_t seq_len = 0;
  std::vector<Example> examples;

  std::size_t size() const noexcept { return examples.size(); }
  bool empty() const noexcept { return examples.empty(); }
};

struct DatasetConfig {
  TaskKind kind = TaskKind::Cluster;
  std::size_t num_classes = 4;
  std::size_t vocab = 64;
  std::size_t seq_len = 16;
  std::size_t train_size = 512;
  std::size_t val_size = 128;
  /// Cluster task: chance that a token comes from its class's own block
  /// rather than from the whole vocabulary.
  double own_block_prob = 0.75;
  std::uint64_t seed = 0;
};

/// Deterministic from the seed; no sequence appears in both splits.
///   cluster: the vocabulary is cut into one block per class and each token
///            of a class-c sequence is drawn from block c with probability
///            own_block_prob, else uniformly; labels are balanced within each split.
///   parity:  binary tokens, label = number of ones mod 2; all 2^seq_len
///            sequences are enumerated, shuffled and split.
struct SyntheticDataset {
  DatasetConfig config;
  Split train;
  Split val;
};

SyntheticDataset make_dataset(const DatasetConfig& config);

/// Gathers examples into a [batch, seq] token batch and a label list.
TokenBatch make_batch(const Split& split, std::span<const std::size_t> indices,
                      std::vector<std::uint32_t>& labels);

}  // namespace loretta
