// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <optional>
#include <random>

#include "loretta/autodiff.hpp"
#include "loretta/grad_check.hpp"

using namespace loretta;
using ad::Tape;
using ad::Var;

namespace {

using Build = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

Tensor<double> randn(Shape shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = normal(rng);
  return t;
}

// Norm-wise relative error between reverse-mode gradients and a central
// difference computed here, independent of the library's grad_check.
double primitive_error(std::vector<Tensor<double>> inputs, const Build& build) {
  std::optional<Tensor<double>> weights;
  auto loss = [&](Tape<double>& tape, const std::vector<Var<double>>& vars) {
    Var<double> out = build(tape, vars);
    if (out.value().size() == 1) return ad::sum(out);
    if (!weights) weights = randn(out.shape(), 99);
    return ad::sum(ad::mul(out, tape.constant(*weights)));
  };
  auto value = [&] {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& t : inputs) vars.push_back(tape.variable(t));
    return loss(tape, vars).value()[0];
  };

  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (const auto& t : inputs) vars.push_back(tape.variable(t));
  tape.backward(loss(tape, vars));

  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor<double> analytic = tape.grad(vars[k]);
    Tensor<double> numeric(inputs[k].shape());
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double saved = inputs[k][i];
      inputs[k][i] = saved + h;
      const double up = value();
      inputs[k][i] = saved - h;
      const double down = value();
      inputs[k][i] = saved;
      numeric[i] = (up - down) / (2 * h);
    }
    const double denom = std::max(dense::frobenius_norm(numeric), 1e-300);
    worst = std::max(worst, dense::frobenius_distance(analytic, numeric) / denom);
  }
  return worst;
}

}  // namespace

TEST(AutodiffPrimitives, MatmulAgainstFiniteDifferences) {
  EXPECT_LT(primitive_error({randn({3, 4}, 1), randn({4, 2}, 2)},
                            [](auto&, const auto& v) { return ad::matmul(v[0], v[1]); }),
            1e-6);
  EXPECT_LT(primitive_error({randn({2, 3, 4}, 3), randn({2, 4, 5}, 4)},
                            [](auto&, const auto& v) { return ad::matmul(v[0], v[1]); }),
            1e-6);
}

TEST(AutodiffPrimitives, ElementwiseOps) {
  const auto a = randn({3, 5}, 5), b = randn({3, 5}, 6);
  EXPECT_LT(primitive_error({a, b}, [](auto&, const auto& v) { return ad::add(v[0], v[1]); }),
            1e-6);
  EXPECT_LT(primitive_error({a, b}, [](auto&, const auto& v) { return ad::sub(v[0], v[1]); }),
            1e-6);
  EXPECT_LT(primitive_error({a, b}, [](auto&, const auto& v) { return ad::mul(v[0], v[1]); }),
            1e-6);
  EXPECT_LT(primitive_error({a}, [](auto&, const auto& v) { return ad::scale(v[0], -2.5); }),
            1e-6);
  EXPECT_LT(primitive_error({randn({2, 3, 5}, 7), randn({5}, 8)},
                            [](auto&, const auto& v) { return ad::add_bias(v[0], v[1]); }),
            1e-6);
}

TEST(AutodiffPrimitives, ShapeOps) {
  EXPECT_LT(primitive_error({randn({4, 6}, 9)},
                            [](auto&, const auto& v) {
                              return ad::reshape(v[0], Shape{2, 3, 4});
                            }),
            1e-6);
  EXPECT_LT(primitive_error({randn({4, 6}, 10)},
                            [](auto&, const auto& v) { return ad::transpose(v[0]); }),
            1e-6);
  EXPECT_LT(primitive_error({randn({2, 4, 3}, 11)},
                            [](auto&, const auto& v) { return ad::transpose(v[0]); }),
            1e-6);
  EXPECT_LT(primitive_error({randn({3, 2}, 12), randn({3, 4}, 13)},
                            [](auto&, const auto& v) {
                              const Var<double> parts[] = {v[0], v[1]};
                              return ad::concat_last<double>(parts);
                            }),
            1e-6);
  EXPECT_LT(primitive_error({randn({2, 3, 7}, 14)},
                            [](auto&, const auto& v) { return ad::slice_last(v[0], 2, 5); }),
            1e-6);
}

TEST(AutodiffPrimitives, Nonlinearities) {
  EXPECT_LT(primitive_error({randn({4, 5}, 15)},
                            [](auto&, const auto& v) { return ad::relu(v[0]); }),
            1e-6);
  EXPECT_LT(primitive_error({randn({4, 5}, 16, 2.0)},
                            [](auto&, const auto& v) { return ad::gelu(v[0]); }),
            1e-6);
  EXPECT_LT(primitive_error({randn({3, 6}, 17)},
                            [](auto&, const auto& v) { return ad::softmax(v[0]); }),
            1e-6);
  EXPECT_LT(primitive_error({randn({2, 3, 8}, 18), randn({8}, 19), randn({8}, 20)},
                            [](auto&, const auto& v) {
                              return ad::layer_norm(v[0], v[1], v[2], 1e-5);
                            }),
            1e-6);
}

TEST(AutodiffPrimitives, LookupsAndReductions) {
  const std::vector<std::uint32_t> ids{3, 0, 3, 1, 4};
  EXPECT_LT(primitive_error({randn({5, 4}, 21)},
                            [&](auto&, const auto& v) {
                              return ad::embedding(v[0], std::span<const std::uint32_t>(ids));
                            }),
            1e-6);
  const std::vector<std::uint32_t> labels{2, 0, 1};
  EXPECT_LT(primitive_error({randn({3, 4}, 22, 2.0)},
                            [&](auto&, const auto& v) {
                              return ad::cross_entropy(v[0],
                                                       std::span<const std::uint32_t>(labels));
                            }),
            1e-6);
  EXPECT_LT(primitive_error({randn({2, 5, 3}, 23)},
                            [](auto&, const auto& v) { return ad::mean_tokens(v[0]); }),
            1e-6);
  EXPECT_LT(primitive_error({randn({3, 3}, 24)},
                            [](auto&, const auto& v) { return ad::sum(v[0]); }),
            1e-6);
}

TEST(Autodiff, ReluBackwardExample) {
  Tape<double> tape;
  auto x = tape.variable(Tensor<double>({2}, {-1.0, 2.0}));
  auto y = ad::relu(x);
  tape.backward(y, Tensor<double>({2}, {1.0, 1.0}));
  EXPECT_EQ(tape.grad(x), Tensor<double>({2}, {0.0, 1.0}));
}

TEST(Autodiff, UniformCrossEntropyIsLogC) {
  for (std::size_t c : {2, 3, 10}) {
    Tape<double> tape;
    auto logits = tape.constant(Tensor<double>({2, c}, 0.7));
    const std::vector<std::uint32_t> labels{0, static_cast<std::uint32_t>(c - 1)};
    EXPECT_NEAR(ad::cross_entropy(logits, std::span<const std::uint32_t>(labels)).value()[0],
                std::log(static_cast<double>(c)), 1e-15);
  }
}

TEST(Autodiff, SumAndHalfSquaredNorm) {
  Tape<double> tape;
  const auto x0 = randn({3, 4}, 30);
  auto x = tape.variable(x0);
  tape.backward(ad::sum(x));
  const Tensor<double> ones = tape.grad(x);
  for (double g : ones.values()) EXPECT_EQ(g, 1.0);

  Tape<double> t2;
  auto y = t2.variable(x0);
  t2.backward(ad::scale(ad::sum(ad::mul(y, y)), 0.5));
  const Tensor<double> g = t2.grad(y);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_DOUBLE_EQ(g[i], x0[i]);
}

TEST(Autodiff, NonScalarLoss) {
  Tape<double> tape;
  auto x = tape.variable(randn({2, 2}, 1));
  try {
    tape.backward(x);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonScalarLoss);
  }
}

TEST(Autodiff, ShapeMismatch) {
  Tape<double> tape;
  auto a = tape.variable(randn({2, 3}, 1));
  auto b = tape.variable(randn({2, 4}, 2));
  try {
    ad::add(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
}

TEST(Autodiff, CheckFiniteMode) {
  Tape<double> tape;
  tape.set_check_finite(true);
  Tensor<double> bad({2}, {1.0, std::numeric_limits<double>::infinity()});
  try {
    tape.variable(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteDetected);
  }
}

namespace {

struct Composite {
  Tensor<double> x = randn({3, 6}, 40), w = randn({6, 6}, 41), g = randn({6}, 42),
                 b = randn({6}, 43);
  std::vector<Tensor<double>> run(const Tensor<double>& upstream) const {
    Tape<double> tape;
    auto vx = tape.variable(x), vw = tape.variable(w), vg = tape.variable(g),
         vb = tape.variable(b);
    auto out = ad::softmax(ad::layer_norm(ad::gelu(ad::matmul(vx, vw)), vg, vb, 1e-5));
    tape.backward(out, upstream);
    return {tape.grad(vx), tape.grad(vw), tape.grad(vg), tape.grad(vb)};
  }
};

}  // namespace

TEST(Autodiff, BackwardIsLinearInUpstream) {
  const Composite c;
  const Tensor<double> up = randn({3, 6}, 44);
  Tensor<double> up2 = up;
  for (auto& v : up2.values()) v *= 2.0;
  const auto g1 = c.run(up);
  const auto g2 = c.run(up2);
  for (std::size_t k = 0; k < g1.size(); ++k)
    for (std::size_t i = 0; i < g1[k].size(); ++i) EXPECT_EQ(g2[k][i], 2.0 * g1[k][i]);
}

TEST(Autodiff, RepeatedRunsAreBitIdentical) {
  const Composite c;
  const Tensor<double> up = randn({3, 6}, 45);
  const auto g1 = c.run(up);
  const auto g2 = c.run(up);
  for (std::size_t k = 0; k < g1.size(); ++k) EXPECT_EQ(g1[k], g2[k]);
}

TEST(Autodiff, FrozenParameterGetsNoGradient) {
  Parameter<double> w("w", randn({4, 3}, 50), ParamKind::Weight, ParamRole::Base);
  Parameter<double> b("b", randn({3}, 51), ParamKind::Bias, ParamRole::Peft);
  b.trainable = true;
  Tape<double> tape;
  auto x = tape.constant(randn({2, 4}, 52));
  auto y = ad::add_bias(ad::matmul(x, tape.param(w)), tape.param(b));
  tape.backward(ad::sum(y));
  EXPECT_EQ(tape.grad_of(w), nullptr);
  ASSERT_NE(tape.grad_of(b), nullptr);
  for (double g : tape.grad_of(b)->values()) EXPECT_DOUBLE_EQ(g, 2.0);
}

TEST(GradCheck, LinearFunction) {
  Parameter<double> p("p", randn({7}, 60), ParamKind::Weight, ParamRole::Peft);
  p.trainable = true;
  const Tensor<double> c = randn({7}, 61);
  const LossFn f = [&](Tape<double>& tape) {
    return ad::sum(ad::mul(tape.param(p), tape.constant(c)));
  };
  const auto report = grad_check(f, {&p});
  EXPECT_EQ(report.checked, 7u);
  EXPECT_LT(report.max_rel_error, 1e-10);
}

TEST(GradCheck, QuadraticFormAgainstAnalytic) {
  const std::size_t n = 6;
  Tensor<double> a = randn({n, n}, 62);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) a(i, j) = a(j, i);
  Parameter<double> p("p", randn({1, n}, 63), ParamKind::Weight, ParamRole::Peft);
  p.trainable = true;
  const LossFn f = [&](Tape<double>& tape) {
    auto v = tape.param(p);
    return ad::sum(ad::mul(ad::matmul(v, tape.constant(a)), v));
  };
  const auto report = grad_check(f, {&p});
  EXPECT_LT(report.max_rel_error, 1e-8);

  Tape<double> tape;
  tape.backward(f(tape));
  const Tensor<double>* g = tape.grad_of(p);
  ASSERT_NE(g, nullptr);
  for (std::size_t i = 0; i < n; ++i) {
    double expect = 0.0;
    for (std::size_t j = 0; j < n; ++j) expect += 2.0 * a(i, j) * p.value[j];
    EXPECT_NEAR((*g)[i], expect, 1e-12);
  }
}

TEST(GradCheck, SamplesLargeTensorsAndRestoresValues) {
  Parameter<double> p("p", randn({50, 50}, 64), ParamKind::Weight, ParamRole::Peft);
  p.trainable = true;
  const Tensor<double> before = p.value;
  const LossFn f = [&](Tape<double>& tape) {
    auto v = tape.param(p);
    return ad::sum(ad::mul(v, v));
  };
  GradCheckOptions opt;
  opt.max_coords = 100;
  const auto report = grad_check(f, {&p}, opt);
  EXPECT_EQ(report.checked, 100u);
  // The loss is ~2500, so rounding in the difference quotient is ~5e-8.
  EXPECT_LT(report.max_rel_error, 1e-5);
  EXPECT_EQ(p.value, before);
}

TEST(GradCheck, DetectsWrongGradient) {
  // A deliberately wrong backward: claims d/dx (x^2) = x.
  Parameter<double> p("p", randn({4}, 65), ParamKind::Weight, ParamRole::Peft);
  p.trainable = true;
  const LossFn f = [&](Tape<double>& tape) {
    auto v = tape.param(p);
    Tensor<double> sq = v.value();
    for (auto& e : sq.values()) e *= e;
    const Var<double> ins[] = {v};
    auto out = tape.record(std::move(sq), ins, [&tape, v](const Tensor<double>& up) {
      Tensor<double>& g = tape.grad_buffer(v);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += up[i] * tape.value(v)[i];
    });
    return ad::sum(out);
  };
  EXPECT_GT(grad_check(f, {&p}).max_rel_error, 0.4);
}

TEST(GradCheck, RelativeErrorDefinition) {
  EXPECT_NEAR(relative_error(1.0, 1.1, 1e-10), 0.1 / 1.1, 1e-15);
  EXPECT_EQ(relative_error(1e-12, -1e-12, 1e-10), 0.0);
}
