// SPDX-License-Identifier: Apache-2.0
#include "loretta/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace loretta {

double relative_error(double a, double b, double zero_tolerance) {
  const double scale = std::max(std::abs(a), std::abs(b));
  if (scale < zero_tolerance) return 0.0;
  return std::abs(a - b) / scale;
}

namespace {

double evaluate(const LossFn& f) {
  ad::Tape<double> tape;
  tape.set_grad_enabled(false);
  const ad::Var<double> loss = f(tape);
  require(loss.value().size() == 1, ErrorCode::NonScalarLoss, "grad_check needs a scalar loss");
  return loss.value()[0];
}

}  // namespace

GradCheckReport grad_check(const LossFn& f, const std::vector<Parameter<double>*>& params,
                           const GradCheckOptions& options) {
  require(options.step > 0.0, ErrorCode::InvalidArgument, "finite-difference step must be > 0");

  std::vector<Tensor<double>> analytic;
  {
    ad::Tape<double> tape;
    const ad::Var<double> loss = f(tape);
    tape.backward(loss);
    for (const auto* p : params) {
      const Tensor<double>* g = tape.grad_of(*p);
      analytic.push_back(g && !g->empty() ? *g : Tensor<double>(p->shape));
    }
  }

  std::mt19937_64 rng(options.seed);
  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter<double>& p = *params[pi];
    require(p.materialized(), ErrorCode::InvalidConfig, p.name + " is shape-only");
    std::vector<std::size_t> coords(p.value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > options.max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords);
      std::sort(coords.begin(), coords.end());
    }
    GradCheckEntry entry;
    entry.name = p.name;
    for (std::size_t i : coords) {
      const double saved = p.value[i];
      p.value[i] = saved + options.step;
      const double plus = evaluate(f);
      p.value[i] = saved - options.step;
      const double minus = evaluate(f);
      p.value[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic[pi][i];
      const double err = relative_error(a, numeric, options.zero_tolerance);
      if (err > entry.max_rel_error || entry.checked == 0) {
        if (err >= entry.max_rel_error) {
          entry.max_rel_error = err;
          entry.worst_index = i;
          entry.analytic = a;
          entry.numeric = numeric;
        }
      }
      ++entry.checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.checked += entry.checked;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace loretta
