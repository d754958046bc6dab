// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>

#include "loretta/encoder.hpp"
#include "loretta/train.hpp"

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

TokenBatch random_tokens(std::size_t batch, std::size_t seq, std::size_t vocab,
                         std::mt19937_64& rng) {
  std::uniform_int_distribution<std::uint32_t> tok(0, static_cast<std::uint32_t>(vocab - 1));
  TokenBatch t{batch, seq, {}};
  for (std::size_t i = 0; i < batch * seq; ++i) t.ids.push_back(tok(rng));
  return t;
}

EncoderConfig small() {
  EncoderConfig c = EncoderConfig::toy();
  c.layers = 2;
  c.hidden = 64;
  c.heads = 4;
  c.vocab = 100;
  return c;
}

double max_diff(const Tensor<double>& a, const Tensor<double>& b) {
  return dense::max_abs_diff<double>(a.values(), b.values());
}

// Entries of TT-format PEFT weights only: no biases, no classifier.
std::size_t tt_peft_entries(Encoder<double>& model) {
  std::size_t n = 0;
  for (const auto& g : model.groups())
    if (g.role == ParamRole::Peft && !g.ranks.empty()) n += g.numel();
  return n;
}

std::size_t enumerate_trainable(Encoder<double>& model) {
  std::size_t n = 0;
  for (auto* p : model.parameters())
    if (p->trainable) n += p->numel();
  return n;
}

}  // namespace

TEST(Encoder, LogitShape) {
  auto model = build_encoder<double>(small());
  std::mt19937_64 rng(1);
  const Tensor<double> logits = model->logits(random_tokens(3, 7, 100, rng));
  EXPECT_EQ(logits.shape(), (Shape{3, small().num_classes}));
  EXPECT_TRUE(logits.all_finite());
}

TEST(Encoder, SameSeedSameWeights) {
  auto a = build_encoder<double>(small());
  auto b = build_encoder<double>(small());
  const auto pa = a->parameters(), pb = b->parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i]->name, pb[i]->name);
    EXPECT_EQ(pa[i]->value, pb[i]->value);
    EXPECT_FALSE(pa[i]->trainable);
  }
  EncoderConfig other = small();
  other.seed = 1;
  EXPECT_NE(build_encoder<double>(other)->token_embedding.value, a->token_embedding.value);
}

TEST(Encoder, InvalidConfigs) {
  EncoderConfig c = small();
  c.hidden = 65;
  EXPECT_EQ(code_of([&] { build_encoder<double>(c); }), ErrorCode::InvalidConfig);
  c = small();
  c.layers = 0;
  EXPECT_EQ(code_of([&] { build_encoder<double>(c); }), ErrorCode::InvalidConfig);
  c = small();
  c.vocab = 0;
  EXPECT_EQ(code_of([&] { build_encoder<double>(c); }), ErrorCode::InvalidConfig);
}

TEST(Encoder, InputErrors) {
  auto model = build_encoder<double>(small());
  TokenBatch bad{1, 2, {3, 100}};
  EXPECT_EQ(code_of([&] { model->logits(bad); }), ErrorCode::TokenOutOfRange);
  std::mt19937_64 rng(2);
  const TokenBatch too_long = random_tokens(1, small().max_seq + 1, 100, rng);
  EXPECT_EQ(code_of([&] { model->logits(too_long); }), ErrorCode::SequenceTooLong);
}

TEST(Encoder, SingleTokenSoftmax) {
  EncoderConfig c = small();
  c.layers = 1;
  auto model = build_encoder<double>(c);
  const Tensor<double> logits = model->logits(TokenBatch{1, 1, {42}});
  ASSERT_TRUE(logits.all_finite());
  const double m = *std::max_element(logits.values().begin(), logits.values().end());
  double z = 0.0;
  for (double v : logits.values()) z += std::exp(v - m);
  double total = 0.0;
  for (double v : logits.values()) total += std::exp(v - m) / z;
  EXPECT_NEAR(total, 1.0, 1e-6);
}

TEST(Encoder, BatchPermutationPermutesRows) {
  auto model = build_encoder<double>(small());
  std::mt19937_64 rng(3);
  const std::size_t batch = 6, seq = 5;
  const TokenBatch tokens = random_tokens(batch, seq, 100, rng);
  std::vector<std::size_t> perm(batch);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  TokenBatch permuted{batch, seq, {}};
  for (std::size_t i : perm)
    permuted.ids.insert(permuted.ids.end(), tokens.ids.begin() + i * seq,
                        tokens.ids.begin() + (i + 1) * seq);
  const Tensor<double> a = model->logits(tokens), b = model->logits(permuted);
  for (std::size_t r = 0; r < batch; ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) EXPECT_EQ(b(r, c), a(perm[r], c));
}

class ZeroStart : public ::testing::TestWithParam<Method> {};

TEST_P(ZeroStart, InjectedLogitsMatchBase) {
  const EncoderConfig c = small();
  auto base = build_encoder<double>(c);
  auto injected = build_encoder<double>(c);
  inject_method(*injected, GetParam(), default_injection(GetParam(), 5));
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const TokenBatch t = random_tokens(4, 1 + trial % c.max_seq, c.vocab, rng);
    EXPECT_LT(max_diff(injected->logits(t), base->logits(t)), 1e-12);
  }
}

INSTANTIATE_TEST_SUITE_P(Methods, ZeroStart,
                         ::testing::Values(Method::Adp, Method::Rep, Method::Lora,
                                           Method::Adapter),
                         [](const auto& info) { return to_string(info.param); });

TEST(Injection, AlreadyInjected) {
  auto model = build_encoder<double>(small());
  inject_adapters(*model, default_injection(Method::Adp, 5));
  EXPECT_EQ(code_of([&] { inject_adapters(*model, default_injection(Method::Adp, 5)); }),
            ErrorCode::AlreadyInjected);
  EXPECT_EQ(code_of([&] { inject_rep(*model, default_injection(Method::Rep, 5)); }),
            ErrorCode::AlreadyInjected);
}

TEST(Injection, UnknownTarget) {
  auto model = build_encoder<double>(small());
  InjectionOptions opts = default_injection(Method::Rep, 5);
  opts.targets = {"qq"};
  EXPECT_EQ(code_of([&] { inject_rep(*model, opts); }), ErrorCode::UnknownTarget);
}

TEST(Injection, RepWrapsOnlyTargets) {
  auto model = build_encoder<double>(small());
  InjectionOptions opts = default_injection(Method::Rep, 5);
  opts.targets = {"k", "o"};
  inject_rep(*model, opts);
  for (auto& layer : model->layers()) {
    EXPECT_EQ(layer->q.update, nullptr);
    EXPECT_EQ(layer->v.update, nullptr);
    EXPECT_NE(dynamic_cast<TTRepUpdate<double>*>(layer->k.update.get()), nullptr);
    EXPECT_NE(dynamic_cast<TTRepUpdate<double>*>(layer->o.update.get()), nullptr);
  }
}

TEST(Freezing, NothingTrainable) {
  auto model = build_encoder<double>(small());
  inject_adapters(*model, default_injection(Method::Adp, 5));
  EXPECT_EQ(code_of([&] { apply_freezing_policy(*model, FreezingPolicy{false, false, false, false}); }),
            ErrorCode::NothingTrainable);
}

TEST(Freezing, ReportMatchesEnumeration) {
  for (Method m : {Method::Adp, Method::Rep, Method::Lora, Method::Adapter, Method::Ft}) {
    auto model = make_model<double>(small(), m, 5);
    const ParamReport rep = model->report();
    EXPECT_EQ(rep.total, enumerate_trainable(*model)) << to_string(m);
    EXPECT_GT(rep.total, 0u);
    for (auto* p : model->parameters()) {
      if (p->role == ParamRole::Base) EXPECT_EQ(p->trainable, m == Method::Ft) << p->name;
    }
  }
}

TEST(Counting, DebertaLikeAdapters) {
  auto model = build_encoder<double>(EncoderConfig::deberta_base_like());
  inject_adapters(*model, default_injection(Method::Adp, 5));
  EXPECT_EQ(tt_peft_entries(*model), 24u * 2 * 780);

  const ParamReport rep =
      apply_freezing_policy(*model, FreezingPolicy::for_method(Method::Adp, model->config()));
  EXPECT_EQ(rep.total, enumerate_trainable(*model));
  EXPECT_GE(rep.total, 90000u);
  EXPECT_LE(rep.total, 110000u);
}

TEST(Counting, DebertaLikeRep) {
  auto model = build_encoder<double>(EncoderConfig::deberta_base_like());
  inject_rep(*model, default_injection(Method::Rep, 5));
  EXPECT_EQ(tt_peft_entries(*model), 12u * 2 * 1160);

  const ParamReport rep =
      apply_freezing_policy(*model, FreezingPolicy::for_method(Method::Rep, model->config()));
  EXPECT_EQ(rep.total, enumerate_trainable(*model));
  EXPECT_GE(rep.total, 40000u);
  EXPECT_LE(rep.total, 70000u);
}

TEST(Counting, LayerNormOnly) {
  auto model = build_encoder<double>(EncoderConfig::deberta_base_like());
  const ParamReport rep = apply_freezing_policy(*model, FreezingPolicy{false, true, false, false});
  std::size_t expect = 0;
  for (auto* p : model->parameters())
    if (p->role == ParamRole::LayerNorm) expect += p->numel();
  EXPECT_EQ(expect, 12u * 2 * (2 * 768) + 2 * 768);
  EXPECT_EQ(rep.total, expect);
}

TEST(Counting, TensorizedPoolerIsSmall) {
  auto model = build_encoder<double>(EncoderConfig::deberta_base_like());
  std::size_t pooler = 0;
  for (const auto& g : model->pooler->groups())
    if (!g.ranks.empty()) {
      EXPECT_EQ(g.dims, (Shape{12, 8, 8, 8, 8, 12}));
      pooler += g.numel();
    }
  EXPECT_EQ(pooler, 1u * 12 * 5 + 3 * (5 * 8 * 5) + 5 * 8 * 5 + 5 * 12 * 1);
  EXPECT_LT(static_cast<double>(pooler), 0.085 * 768 * 768);
}

TEST(Counting, ShapeOnlyModelRefusesForward) {
  auto model = build_encoder<double>(EncoderConfig::deberta_base_like());
  std::mt19937_64 rng(5);
  EXPECT_THROW(model->logits(random_tokens(1, 4, 10, rng)), Error);
}

class ModelGradients : public ::testing::TestWithParam<Method> {};

TEST_P(ModelGradients, EveryTrainableScalar) {
  ModelGradCheckConfig config;
  config.method = GetParam();
  config.options.max_coords = std::numeric_limits<std::size_t>::max();
  const ModelGradCheck result = check_model_gradients(config);
  EXPECT_GE(result.relu_margin, config.kink_margin);
  auto model = make_model<double>(config.arch, config.method, config.rank, config.bottleneck);
  EXPECT_EQ(result.report.checked, model->report().total);
  EXPECT_LT(result.report.max_rel_error, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Methods, ModelGradients, ::testing::Values(Method::Adp, Method::Rep),
                         [](const auto& info) { return to_string(info.param); });
