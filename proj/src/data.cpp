// SPDX-License-Identifier: Apache-2.0
#include "loretta/data.hpp"

#include <algorithm>
#include <random>
#include <set>

namespace loretta {

std::string to_string(TaskKind kind) { return kind == TaskKind::Parity ? "parity" : "cluster"; }

TaskKind parse_task(const std::string& s) {
  if (s == "parity") return TaskKind::Parity;
  if (s == "cluster") return TaskKind::Cluster;
  fail(ErrorCode::InvalidArgument, "unknown task '" + s + "' (expected parity or cluster)");
}

namespace {

SyntheticDataset make_cluster(const DatasetConfig& c) {
  require(c.num_classes >= 2 && c.vocab >= c.num_classes, ErrorCode::InvalidConfig,
          "cluster task needs >= 2 classes and at least one token per class");
  require(c.seq_len >= 1, ErrorCode::InvalidConfig, "sequence length must be >= 1");
  require(c.own_block_prob >= 0.0 && c.own_block_prob <= 1.0, ErrorCode::InvalidConfig,
          "own_block_prob must lie in [0, 1]");
  const std::size_t block = c.vocab / c.num_classes;
  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> any(0, c.vocab - 1);
  std::uniform_int_distribution<std::size_t> within(0, block - 1);

  const std::size_t total = c.train_size + c.val_size;
  std::vector<Example> all;
  std::set<std::vector<std::uint32_t>> seen;
  std::size_t attempts = 0;
  while (all.size() < total) {
    require(++attempts <= 100 * total + 1000, ErrorCode::InvalidConfig,
            "cannot draw enough distinct sequences; lower the split sizes");
    Example e;
    e.label = static_cast<std::uint32_t>(all.size() % c.num_classes);
    for (std::size_t t = 0; t < c.seq_len; ++t) {
      const std::size_t tok =
          coin(rng) < c.own_block_prob ? e.label * block + within(rng) : any(rng);
      e.tokens.push_back(static_cast<std::uint32_t>(tok));
    }
    if (seen.insert(e.tokens).second) all.push_back(std::move(e));
  }
  // Stratified split: class k gets train_size / C train examples, plus one
  // of the remainder for the first classes, so both splits stay balanced.
  SyntheticDataset ds;
  ds.config = c;
  ds.train.seq_len = ds.val.seq_len = c.seq_len;
  std::vector<std::size_t> train_quota(c.num_classes, c.train_size / c.num_classes);
  for (std::size_t k = 0; k < c.train_size % c.num_classes; ++k) ++train_quota[k];
  for (auto& e : all) {
    if (train_quota[e.label] > 0) {
      --train_quota[e.label];
      ds.train.examples.push_back(std::move(e));
    } else {
      ds.val.examples.push_back(std::move(e));
    }
  }
  std::shuffle(ds.train.examples.begin(), ds.train.examples.end(), rng);
  std::shuffle(ds.val.examples.begin(), ds.val.examples.end(), rng);
  return ds;
}

SyntheticDataset make_parity(DatasetConfig c) {
  require(c.seq_len >= 1 && c.seq_len <= 20, ErrorCode::InvalidConfig,
          "parity sequences must have length in [1, 20]");
  require(c.vocab >= 2, ErrorCode::InvalidConfig, "parity needs a vocabulary of at least 2");
  c.num_classes = 2;
  const std::size_t n = std::size_t{1} << c.seq_len;
  require(c.train_size + c.val_size <= n, ErrorCode::InvalidConfig,
          "only " + std::to_string(n) + " distinct parity sequences exist");
  std::vector<Example> all;
  for (std::size_t code = 0; code < n; ++code) {
    Example e;
    std::uint32_t ones = 0;
    for (std::size_t t = 0; t < c.seq_len; ++t) {
      const std::uint32_t bit = (code >> (c.seq_len - 1 - t)) & 1u;
      e.tokens.push_back(bit);
      ones += bit;
    }
    e.label = ones % 2;
    all.push_back(std::move(e));
  }
  std::mt19937_64 rng(c.seed);
  std::shuffle(all.begin(), all.end(), rng);
  SyntheticDataset ds;
  ds.config = c;
  ds.train.seq_len = ds.val.seq_len = c.seq_len;
  ds.train.examples.assign(all.begin(), all.begin() + static_cast<long>(c.train_size));
  ds.val.examples.assign(all.begin() + static_cast<long>(c.train_size),
                         all.begin() + static_cast<long>(c.train_size + c.val_size));
  return ds;
}

}  // namespace

SyntheticDataset make_dataset(const DatasetConfig& config) {
  return config.kind == TaskKind::Cluster ? make_cluster(config) : make_parity(config);
}

TokenBatch make_batch(const Split& split, std::span<const std::size_t> indices,
                      std::vector<std::uint32_t>& labels) {
  TokenBatch b;
  b.batch = indices.size();
  b.seq = split.seq_len;
  b.ids.reserve(b.batch * b.seq);
  labels.clear();
  for (std::size_t i : indices) {
    const Example& e = split.examples.at(i);
    b.ids.insert(b.ids.end(), e.tokens.begin(), e.tokens.end());
    labels.push_back(e.label);
  }
  return b;
}

}  // namespace loretta
