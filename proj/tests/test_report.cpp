// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <functional>

#include "loretta/report.hpp"

using namespace loretta;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::InvalidArgument;
}

const std::vector<Method> kAllMethods{Method::Adp, Method::Rep, Method::Lora, Method::Adapter,
                                      Method::Ft};

std::size_t peft_entries(Method method, std::size_t rank) {
  EncoderConfig arch = EncoderConfig::deberta_base_like();
  arch.classifier_rank = rank;
  auto model = build_encoder<float>(arch);
  InjectionOptions o = default_injection(method, rank);
  inject_method(*model, method, o);
  std::size_t n = 0;
  for (const auto& g : model->groups())
    if (g.role == ParamRole::Peft) n += g.numel();
  return n;
}

}  // namespace

TEST(Counts, AnalyticMatchesConstructed) {
  EncoderConfig eightfold = EncoderConfig::deberta_base_like();
  eightfold.classifier_layout = ShapeRegistry::ClassifierLayout::EightFold;
  EncoderConfig dense_head = EncoderConfig::deberta_base_like();
  dense_head.classifier = ClassifierMode::Dense;
  EncoderConfig frozen_ln = EncoderConfig::toy();
  frozen_ln.layernorm_trainable = false;
  for (const EncoderConfig& arch : {EncoderConfig::deberta_base_like(), EncoderConfig::toy(),
                                    eightfold, dense_head, frozen_ln})
    for (Method m : kAllMethods)
      for (std::size_t r : {2, 5, 10, 20})
        EXPECT_EQ(analytic_count(arch, m, r), constructed_count(arch, m, r))
            << to_string(m) << " rank " << r << " hidden " << arch.hidden;
}

TEST(Counts, AnalyticMatchesConstructedForOtherTargetsAndBottlenecks) {
  const EncoderConfig arch = EncoderConfig::toy();
  for (Method m : {Method::Rep, Method::Lora})
    for (const std::set<std::string>& targets :
         {std::set<std::string>{"q"}, {"q", "k", "v", "o"}})
      EXPECT_EQ(analytic_count(arch, m, 4, 0, targets), constructed_count(arch, m, 4, 0, targets));
  for (std::size_t b : {4, 16, 32})
    for (Method m : {Method::Adp, Method::Adapter, Method::Rep})
      EXPECT_EQ(analytic_count(arch, m, 5, b), constructed_count(arch, m, 5, b));
}

TEST(Counts, LoRAOnQueryAndValue) {
  EXPECT_EQ(peft_entries(Method::Lora, 8), 12u * 2 * (768 * 8 + 8 * 768));
  EXPECT_EQ(peft_entries(Method::Lora, 8), 294912u);
  EXPECT_EQ(peft_entries(Method::Lora, 4), 294912u / 2);
}

TEST(Counts, DebertaLikeTotalsByHand) {
  const EncoderConfig arch = EncoderConfig::deberta_base_like();
  const std::size_t layernorm = (2 * 12 + 1) * 2 * 768;
  const std::size_t pooler_tt = 12 * 5 + 4 * (5 * 8 * 5) + 5 * 12;
  const std::size_t head = pooler_tt + 768 + 2 * 768 + 2;
  const std::size_t adapter = 780 + 780 + 64 + 768;
  EXPECT_EQ(analytic_count(arch, Method::Adp, 5), layernorm + head + 24 * adapter);
  // 8x768 as [8,12,8,8] and 768x8 as [8,8,12,8] at rank 5: 580 each.
  EXPECT_EQ(analytic_count(arch, Method::Rep, 5), layernorm + head + 24 * (580 + 580));
}

TEST(Counts, DebertaLikeBands) {
  const EncoderConfig arch = EncoderConfig::deberta_base_like();
  const std::size_t adp = analytic_count(arch, Method::Adp, 5);
  const std::size_t rep = analytic_count(arch, Method::Rep, 5);
  EXPECT_GE(adp, 90000u);
  EXPECT_LE(adp, 110000u);
  EXPECT_GE(rep, 40000u);
  EXPECT_LE(rep, 70000u);
  EXPECT_LT(rep, adp);
}

TEST(Counts, MonotoneInRank) {
  const auto rows =
      compare_report(EncoderConfig::deberta_base_like(), kAllMethods, {2, 5, 10, 20});
  ASSERT_EQ(rows.size(), kAllMethods.size() * 4);
  for (std::size_t i = 0; i < rows.size(); i += 4)
    for (std::size_t j = i + 1; j < i + 4; ++j) {
      EXPECT_EQ(rows[j].method, rows[i].method);
      EXPECT_GE(rows[j].trainable, rows[j - 1].trainable) << to_string(rows[j].method);
    }
}

TEST(Counts, RowBytesAndTable) {
  const auto rows = compare_report(EncoderConfig::deberta_base_like(), {Method::Rep}, {5});
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].bottleneck, 8u);
  EXPECT_EQ(rows[0].bytes(4), 4 * rows[0].trainable);
  const std::string table = format_count_table(rows);
  EXPECT_NE(table.find("rep"), std::string::npos);
  EXPECT_NE(table.find(std::to_string(rows[0].trainable)), std::string::npos);
}

TEST(ArchText, ParsesKeysAndComments) {
  const EncoderConfig c = parse_arch_text(
      "# small\nlayers = 3\nhidden=48 # trailing\nheads = 6\nffn_mult = 2\nvocab = 30\n"
      "max_seq = 10\nnum_classes = 5\nclassifier = dense\nlayernorm_trainable = false\n"
      "classifier_layout = eightfold\nseed = 9\ninit_std = 0.05\n");
  EXPECT_EQ(c.layers, 3u);
  EXPECT_EQ(c.hidden, 48u);
  EXPECT_EQ(c.heads, 6u);
  EXPECT_EQ(c.ffn_mult, 2u);
  EXPECT_EQ(c.vocab, 30u);
  EXPECT_EQ(c.max_seq, 10u);
  EXPECT_EQ(c.num_classes, 5u);
  EXPECT_EQ(c.classifier, ClassifierMode::Dense);
  EXPECT_FALSE(c.layernorm_trainable);
  EXPECT_EQ(c.classifier_layout, ShapeRegistry::ClassifierLayout::EightFold);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.init_std, 0.05);
}

TEST(ArchText, Errors) {
  EXPECT_EQ(code_of([] { parse_arch_text("layers 3\n"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { parse_arch_text("depth = 3\n"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { parse_arch_text("layers = -1\n"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { parse_arch_text("layers = 2x\n"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { parse_arch_text("layernorm_trainable = maybe\n"); }),
            ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { parse_arch_text("hidden = 65\nheads = 4\n"); }),
            ErrorCode::InvalidConfig);
}

TEST(ArchText, LoadByNameOrPath) {
  EXPECT_EQ(load_arch("deberta-base-like").hidden, 768u);
  EXPECT_EQ(load_arch("toy").hidden, EncoderConfig::toy().hidden);
  const auto path = std::filesystem::temp_directory_path() / "loretta_arch_test.txt";
  {
    std::ofstream out(path);
    out << "layers = 1\nhidden = 32\nheads = 2\n";
  }
  EXPECT_EQ(load_arch(path.string()).hidden, 32u);
  std::filesystem::remove(path);
  EXPECT_EQ(code_of([] { load_arch("/nonexistent/arch.txt"); }), ErrorCode::IoFailure);
}
