// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "loretta/autodiff.hpp"
#include "loretta/parameter.hpp"

namespace loretta {

struct GradCheckOptions {
  double step = 1e-5;
  /// Per parameter tensor: all coordinates up to this many, otherwise a
  /// seeded sample of this size.
  std::size_t max_coords = 1000;
  /// Coordinates where both estimates are below this count as exact.
  double zero_tolerance = 1e-10;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  std::size_t checked = 0;

  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

/// Builds the scalar loss on a fresh tape. Parameters must be bound with
/// tape.param so their values can be perturbed in place.
using LossFn = std::function<ad::Var<double>(ad::Tape<double>&)>;

double relative_error(double a, double b, double zero_tolerance);

/// Central differences (f(p + h e_i) - f(p - h e_i)) / 2h against reverse
/// mode, coordinate by coordinate. Every perturbed value is restored.
GradCheckReport grad_check(const LossFn& f, const std::vector<Parameter<double>*>& params,
                           const GradCheckOptions& options = {});

}  // namespace loretta
