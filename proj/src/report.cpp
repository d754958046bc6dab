// SPDX-License-Identifier: Apache-2.0
#include "loretta/report.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace loretta {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& v, const std::string& key) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    x = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  // stoull accepts a leading '-' and wraps it around.
  const bool digits_only = !v.empty() && std::all_of(v.begin(), v.end(), [](unsigned char ch) {
    return std::isdigit(ch) != 0;
  });
  require(digits_only && pos == v.size(), ErrorCode::ParseError,
          key + ": expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(x);
}

bool to_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(ErrorCode::ParseError, key + ": expected true or false, got '" + v + "'");
}

std::size_t tt_count(const ShapeRegistry& reg, std::size_t rows, std::size_t cols,
                     std::size_t rank) {
  const TTShape s = reg.lookup(rows, cols);
  return tt_param_count(s, TTRanks::fixed(s.order(), rank));
}

}  // namespace

EncoderConfig parse_arch_text(const std::string& text, EncoderConfig c) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorCode::ParseError,
            "line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "layers") c.layers = to_size(value, key);
    else if (key == "hidden") c.hidden = to_size(value, key);
    else if (key == "heads") c.heads = to_size(value, key);
    else if (key == "ffn_mult") c.ffn_mult = to_size(value, key);
    else if (key == "vocab") c.vocab = to_size(value, key);
    else if (key == "max_seq") c.max_seq = to_size(value, key);
    else if (key == "num_classes") c.num_classes = to_size(value, key);
    else if (key == "classifier") c.classifier = parse_classifier_mode(value);
    else if (key == "classifier_layout") {
      if (value == "12-8") c.classifier_layout = ShapeRegistry::ClassifierLayout::TwelveEight;
      else if (value == "eightfold") c.classifier_layout = ShapeRegistry::ClassifierLayout::EightFold;
      else fail(ErrorCode::ParseError, "classifier_layout: expected 12-8 or eightfold");
    } else if (key == "layernorm_trainable") c.layernorm_trainable = to_bool(value, key);
    else if (key == "seed") c.seed = to_size(value, key);
    else if (key == "init_std") {
      try {
        c.init_std = std::stod(value);
      } catch (const std::exception&) {
        fail(ErrorCode::ParseError, "init_std: expected a number");
      }
    } else if (key == "materialize") c.materialize = to_bool(value, key);
    else fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

EncoderConfig load_arch(const std::string& name_or_path) {
  if (name_or_path == "toy") return EncoderConfig::toy();
  if (name_or_path == "deberta-base-like") return EncoderConfig::deberta_base_like();
  std::ifstream in(name_or_path);
  require(static_cast<bool>(in), ErrorCode::IoFailure, "cannot open arch config " + name_or_path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_arch_text(ss.str());
}

std::size_t analytic_count(const EncoderConfig& arch, Method method, std::size_t rank,
                           std::size_t bottleneck, const std::set<std::string>& targets) {
  arch.validate();
  const ShapeRegistry reg = ShapeRegistry::builtin(arch.classifier_layout);
  const std::size_t L = arch.layers, H = arch.hidden, C = arch.num_classes;
  const std::size_t F = arch.ffn_mult * H;
  const std::size_t b = bottleneck > 0 ? bottleneck : default_injection(method, rank).bottleneck;
  const FreezingPolicy policy = FreezingPolicy::for_method(method, arch);

  std::size_t n = 0;
  if (policy.train_layernorm) n += (2 * L + 1) * 2 * H;
  if (policy.train_classifier && arch.classifier != ClassifierMode::Frozen) {
    const std::size_t pooler =
        arch.classifier == ClassifierMode::Tensorized ? tt_count(reg, H, H, rank) : H * H;
    n += pooler + H + C * H + C;
  }
  if (policy.train_base) {
    n += arch.vocab * H + arch.max_seq * H;
    n += L * (4 * (H * H + H) + (F * H + F) + (H * F + H));
  }
  const std::size_t wrapped = L * targets.size();
  switch (method) {
    case Method::Adp:
      n += 2 * L * (tt_count(reg, b, H, rank) + tt_count(reg, H, b, rank) + b + H);
      break;
    case Method::Adapter:
      n += 2 * L * (2 * H * b + b + H);
      break;
    case Method::Lora:
      n += wrapped * (rank * H + H * rank);
      break;
    case Method::Rep:
      n += wrapped * (tt_count(reg, b, H, rank) + tt_count(reg, H, b, rank));
      break;
    case Method::Ft:
      break;
  }
  return n;
}

std::size_t constructed_count(EncoderConfig arch, Method method, std::size_t rank,
                              std::size_t bottleneck, const std::set<std::string>& targets) {
  arch.materialize = false;
  arch.classifier_rank = rank;
  auto model = build_encoder<float>(arch);
  InjectionOptions o = default_injection(method, rank);
  if (bottleneck > 0) o.bottleneck = bottleneck;
  o.targets = targets;
  inject_method(*model, method, o);
  return apply_freezing_policy(*model, FreezingPolicy::for_method(method, arch)).total;
}

std::vector<CountRow> compare_report(const EncoderConfig& arch, const std::vector<Method>& methods,
                                     const std::vector<std::size_t>& ranks,
                                     std::size_t bottleneck) {
  std::vector<CountRow> rows;
  for (Method m : methods) {
    for (std::size_t r : ranks) {
      CountRow row;
      row.method = m;
      row.rank = r;
      row.bottleneck = bottleneck > 0 ? bottleneck : default_injection(m, r).bottleneck;
      row.trainable = analytic_count(arch, m, r, bottleneck);
      rows.push_back(row);
    }
  }
  return rows;
}

std::string format_count_table(const std::vector<CountRow>& rows) {
  std::string out = "method   rank  bottleneck   trainable   params(M)   f32 bytes   f64 bytes\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-8s %4zu  %10zu  %10zu  %10.3f  %10zu  %10zu\n",
                  to_string(r.method).c_str(), r.rank, r.bottleneck, r.trainable,
                  static_cast<double>(r.trainable) / 1e6, r.bytes(4), r.bytes(8));
    out += buf;
  }
  return out;
}

}  // namespace loretta
