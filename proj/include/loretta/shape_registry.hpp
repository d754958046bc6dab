// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <utility>

#include "loretta/tt.hpp"

namespace loretta {

/// Greedy balanced split of rows*cols into at most `target_order` factors:
/// prime factors in descending order each go to the currently smallest
/// bucket (lowest index on ties); unit buckets are dropped and the result
/// is sorted ascending. A prime product comes back as [1, p].
TTShape balanced_factorization(std::size_t rows, std::size_t cols, std::size_t target_order);

/// 5 factors up to 2^16 elements, 6 above.
std::size_t default_target_order(std::size_t rows, std::size_t cols);

/// r_i = min(k_1*...*k_i, k_{i+1}*...*k_d), the ranks at which a TT-SVD is
/// exact for every matrix of this shape.
TTRanks max_ranks(const TTShape& shape);

/// Matrix geometry -> TT shape. Starts from the published shape table and
/// can be extended or overridden from a `ROWSxCOLS: k1,k2,...` text file.
class ShapeRegistry {
 public:
  enum class ClassifierLayout { TwelveEight, EightFold };

  static ShapeRegistry builtin(ClassifierLayout classifier = ClassifierLayout::TwelveEight);

  /// Built-ins first, then every line of `path` on top.
  static ShapeRegistry from_file(const std::filesystem::path& path,
                                 ClassifierLayout classifier = ClassifierLayout::TwelveEight);

  /// Parses config text; later lines win over earlier ones and over
  /// whatever the registry already holds.
  void merge_text(const std::string& text);

  void set(std::size_t rows, std::size_t cols, TTShape shape);

  /// Table hit if present, otherwise balanced_factorization with the
  /// default target order.
  TTShape lookup(std::size_t rows, std::size_t cols) const;
  bool contains(std::size_t rows, std::size_t cols) const;

  const std::string& source() const noexcept { return source_; }
  const std::map<std::pair<std::size_t, std::size_t>, TTShape>& entries() const noexcept {
    return entries_;
  }

 private:
  std::map<std::pair<std::size_t, std::size_t>, TTShape> entries_;
  std::string source_ = "builtin";
};

inline TTShape lookup_shape(const ShapeRegistry& registry, std::size_t rows, std::size_t cols) {
  return registry.lookup(rows, cols);
}

}  // namespace loretta
