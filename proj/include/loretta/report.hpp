// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "loretta/encoder.hpp"

namespace loretta {

/// key = value lines (layers, hidden, heads, ffn_mult, vocab, max_seq,
/// num_classes, classifier, classifier_layout, layernorm_trainable, seed,
/// init_std); '#' starts a comment. Unknown keys throw ParseError.
EncoderConfig parse_arch_text(const std::string& text, EncoderConfig base = {});

/// "toy", "deberta-base-like", or a path to a key = value file.
EncoderConfig load_arch(const std::string& name_or_path);

struct CountRow {
  Method method = Method::Adp;
  std::size_t rank = 0;
  std::size_t bottleneck = 0;
  std::size_t trainable = 0;

  std::size_t bytes(std::size_t dtype_width) const { return trainable * dtype_width; }
};

/// Closed-form trainable count for `method` at the given rank (LoRA rank,
/// or TT rank of every TT weight including a tensorized pooler). A zero
/// bottleneck picks the method default.
std::size_t analytic_count(const EncoderConfig& arch, Method method, std::size_t rank,
                           std::size_t bottleneck = 0,
                           const std::set<std::string>& targets = {"q", "v"});

/// The same number obtained by building a shape-only model and
/// enumerating its trainable tensors.
std::size_t constructed_count(EncoderConfig arch, Method method, std::size_t rank,
                              std::size_t bottleneck = 0,
                              const std::set<std::string>& targets = {"q", "v"});

std::vector<CountRow> compare_report(const EncoderConfig& arch, const std::vector<Method>& methods,
                                     const std::vector<std::size_t>& ranks,
                                     std::size_t bottleneck = 0);

std::string format_count_table(const std::vector<CountRow>& rows);

}  // namespace loretta
