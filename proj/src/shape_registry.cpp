// SPDX-License-Identifier: Apache-2.0
#include "loretta/shape_registry.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace loretta {
namespace {

std::vector<std::size_t> prime_factors(std::size_t n) {
  std::vector<std::size_t> primes;
  for (std::size_t p = 2; p * p <= n; ++p) {
    while (n % p == 0) {
      primes.push_back(p);
      n /= p;
    }
  }
  if (n > 1) primes.push_back(n);
  return primes;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::size_t parse_positive(const std::string& token, std::size_t line_no) {
  const std::string t = trim(token);
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(t, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  const bool digits_only = !t.empty() && std::all_of(t.begin(), t.end(), [](unsigned char ch) {
    return std::isdigit(ch) != 0;
  });
  require(digits_only && pos == t.size() && v > 0, ErrorCode::ParseError,
          "line " + std::to_string(line_no) + ": expected a positive integer, got '" + t + "'");
  return static_cast<std::size_t>(v);
}

}  // namespace

TTShape balanced_factorization(std::size_t rows, std::size_t cols, std::size_t target_order) {
  require(target_order >= 2, ErrorCode::InvalidArgument, "target order must be >= 2");
  const std::size_t n = rows * cols;
  require(n >= 4, ErrorCode::FactorizationFailure,
          "cannot tensorize a matrix with " + std::to_string(n) + " elements");

  std::vector<std::size_t> primes = prime_factors(n);
  std::sort(primes.begin(), primes.end(), std::greater<>());
  std::vector<std::size_t> buckets(target_order, 1);
  for (std::size_t p : primes) {
    auto smallest = std::min_element(buckets.begin(), buckets.end());  // first on ties
    *smallest *= p;
  }
  std::vector<std::size_t> dims;
  for (std::size_t b : buckets)
    if (b > 1) dims.push_back(b);
  while (dims.size() < 2) dims.push_back(1);
  std::sort(dims.begin(), dims.end());
  return TTShape(std::move(dims));
}

std::size_t default_target_order(std::size_t rows, std::size_t cols) {
  return rows * cols <= (std::size_t{1} << 16) ? 5 : 6;
}

TTRanks max_ranks(const TTShape& shape) {
  const std::size_t d = shape.order();
  std::vector<std::size_t> r(d + 1, 1);
  std::size_t left = 1;
  const std::size_t total = shape.numel();
  for (std::size_t i = 1; i < d; ++i) {
    left *= shape.dims[i - 1];
    r[i] = std::min(left, total / left);
  }
  return TTRanks(std::move(r));
}

ShapeRegistry ShapeRegistry::builtin(ClassifierLayout classifier) {
  ShapeRegistry reg;
  // Tensorized adapters.
  reg.set(768, 64, TTShape({8, 8, 12, 8, 8}));
  reg.set(4096, 64, TTShape({16, 16, 16, 4, 4, 4}));
  reg.set(64, 768, TTShape({8, 8, 12, 8, 8}));
  reg.set(64, 4096, TTShape({4, 4, 4, 16, 16, 16}));
  // Tensorized updating matrices.
  reg.set(768, 8, TTShape({8, 8, 12, 8}));
  reg.set(768, 16, TTShape({8, 8, 12, 4, 4}));
  reg.set(768, 32, TTShape({8, 8, 12, 8, 4}));
  reg.set(8, 768, TTShape({8, 12, 8, 8}));
  reg.set(16, 768, TTShape({4, 4, 12, 8, 8}));
  reg.set(32, 768, TTShape({4, 8, 12, 8, 8}));
  reg.set(4096, 8, TTShape({8, 8, 8, 8, 8}));
  reg.set(4096, 16, TTShape({8, 8, 8, 8, 4, 4}));
  reg.set(4096, 32, TTShape({8, 8, 8, 8, 8, 4}));
  reg.set(8, 4096, TTShape({8, 8, 8, 8, 8}));
  reg.set(16, 4096, TTShape({4, 4, 8, 8, 8, 8}));
  reg.set(32, 4096, TTShape({4, 8, 8, 8, 8, 8}));
  // Tensorized classifier.
  // The published eight-factor listing, all 8s, multiplies to 8^8 and cannot
  // tile 768x768; this is the nearest eight-factor layout that does.
  if (classifier == ClassifierLayout::TwelveEight)
    reg.set(768, 768, TTShape({12, 8, 8, 8, 8, 12}));
  else
    reg.set(768, 768, TTShape({4, 4, 6, 8, 8, 6, 4, 4}));
  return reg;
}

ShapeRegistry ShapeRegistry::from_file(const std::filesystem::path& path,
                                       ClassifierLayout classifier) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::IoFailure, "cannot open shapes file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  ShapeRegistry reg = builtin(classifier);
  reg.merge_text(buffer.str());
  reg.source_ = path.string();
  return reg;
}

void ShapeRegistry::merge_text(const std::string& text) {
  std::istringstream lines(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;

    const auto colon = line.find(':');
    require(colon != std::string::npos, ErrorCode::ParseError,
            "line " + std::to_string(line_no) + ": expected 'ROWSxCOLS: k1,k2,...'");
    const std::string geometry = trim(line.substr(0, colon));
    const auto x = geometry.find_first_of("xX");
    require(x != std::string::npos, ErrorCode::ParseError,
            "line " + std::to_string(line_no) + ": geometry must look like ROWSxCOLS");
    const std::size_t rows = parse_positive(geometry.substr(0, x), line_no);
    const std::size_t cols = parse_positive(geometry.substr(x + 1), line_no);

    std::vector<std::size_t> dims;
    std::stringstream list(line.substr(colon + 1));
    std::string item;
    while (std::getline(list, item, ',')) dims.push_back(parse_positive(item, line_no));
    set(rows, cols, TTShape(std::move(dims)));
  }
}

void ShapeRegistry::set(std::size_t rows, std::size_t cols, TTShape shape) {
  require(shape.numel() == rows * cols, ErrorCode::ShapeProductMismatch,
          "shape " + to_string(shape) + " does not tile a " + std::to_string(rows) + "x" +
              std::to_string(cols) + " matrix");
  entries_[{rows, cols}] = std::move(shape);
}

bool ShapeRegistry::contains(std::size_t rows, std::size_t cols) const {
  return entries_.contains({rows, cols});
}

TTShape ShapeRegistry::lookup(std::size_t rows, std::size_t cols) const {
  require(rows >= 1 && cols >= 1, ErrorCode::InvalidArgument, "matrix sizes must be >= 1");
  if (auto it = entries_.find({rows, cols}); it != entries_.end()) return it->second;
  return balanced_factorization(rows, cols, default_target_order(rows, cols));
}

}  // namespace loretta
