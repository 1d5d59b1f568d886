#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mixnet/autodiff.hpp"

namespace mixnet {

struct GradCheckOptions {
  double step = 1e-3;
  double tolerance = 1e-4;
  /// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double denominator_floor = 1e-3;
  /// 0 checks every coordinate; otherwise a seeded random subset per input.
  std::size_t max_coords_per_input = 0;
  /// Coordinates whose stencil changes a relu / max-pool selection are
  /// excluded; more than this fraction of exclusions fails the check.
  double max_skip_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  bool passed = false;
  std::string worst;  // "input i, coord j: analytic a numeric n"
};

using GraphBuilder = std::function<Var(Graph<double>&, const std::vector<Var>&)>;

/// Compares reverse-mode gradients of a scalar-valued graph against central
/// finite differences, all in double precision.
GradCheckReport grad_check(const GraphBuilder& f, const std::vector<DTensor>& inputs,
                           const GradCheckOptions& options = {});

}  // namespace mixnet
