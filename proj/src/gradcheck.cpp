#include "mixnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "mixnet/error.hpp"

namespace mixnet {

namespace {

struct Evaluation {
  double value;
  std::uint64_t signature;
};

Evaluation evaluate(const GraphBuilder& f, const std::vector<DTensor>& inputs) {
  Graph<double> g(false);
  g.track_branches(true);
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(g.constant(t));
  Var out = f(g, vars);
  if (g.value(out).size() != 1) throw UsageError("grad_check: builder must return a scalar");
  return {g.value(out)[0], g.branch_signature()};
}

}  // namespace

GradCheckReport grad_check(const GraphBuilder& f, const std::vector<DTensor>& inputs, const GradCheckOptions& options) {
  Graph<double> g(true);
  g.track_branches(true);
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(g.variable(t));
  Var out = f(g, vars);
  if (g.value(out).size() != 1) throw UsageError("grad_check: builder must return a scalar");
  const std::uint64_t base_signature = g.branch_signature();
  g.backward(out);

  GradCheckReport report;
  std::mt19937_64 rng(options.seed);
  std::vector<DTensor> work = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const DTensor analytic = g.grad(vars[i]);
    std::vector<std::size_t> coords(inputs[i].size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_input != 0 && coords.size() > options.max_coords_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_input);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t j : coords) {
      const double original = work[i][j];
      work[i][j] = original + options.step;
      const Evaluation plus = evaluate(f, work);
      work[i][j] = original - options.step;
      const Evaluation minus = evaluate(f, work);
      work[i][j] = original;
      if (plus.signature != base_signature || minus.signature != base_signature) {
        ++report.skipped;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * options.step);
      const double a = analytic[j];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_error || report.worst.empty()) {
        report.max_rel_error = std::max(report.max_rel_error, rel);
        if (rel >= report.max_rel_error) {
          std::ostringstream os;
          os << "input " << i << ", coord " << j << ": analytic " << a << " numeric " << numeric;
          report.worst = os.str();
        }
      }
    }
  }
  const double total = static_cast<double>(report.checked + report.skipped);
  report.passed = report.checked > 0 && report.max_rel_error <= options.tolerance &&
                  static_cast<double>(report.skipped) <= options.max_skip_fraction * total;
  return report;
}

}  // namespace mixnet
