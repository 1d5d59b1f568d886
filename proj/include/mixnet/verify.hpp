#pragma once

#include <string>
#include <vector>

namespace mixnet::verify {

// Self-checks shipped with the library so an installed binary can confirm its
// own numerics. Each suite recomputes its expectations independently of the
// code path under test (finite differences, brute-force distances, closed-form
// schedules, the published level layout).

struct Check {
  std::string name;
  bool passed = false;
  double value = 0.0;      // measured quantity (error, count, ...)
  double tolerance = 0.0;  // bound the value was compared against
  std::string detail;
};

struct SuiteResult {
  std::string suite;
  std::vector<Check> checks;
  double seconds = 0.0;

  bool passed() const;
};

/// gradcheck, shapes, embedding, metrics, schedule, augment.
const std::vector<std::string>& suite_names();

/// Throws ConfigError for an unknown suite name.
SuiteResult run_suite(const std::string& name);

/// One JSON object: {"passed": bool, "suites": [{suite, passed, seconds, checks: [...]}]}.
std::string summary_json(const std::vector<SuiteResult>& results);

}  // namespace mixnet::verify
