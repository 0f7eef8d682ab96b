#pragma once

// Registry of finite-difference gradient checks, grouped into suites.

#include <cstdint>
#include <string>
#include <vector>

namespace scq::gc {

struct CheckResult {
  std::string name;
  std::string suite;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  std::size_t trials = 0;     // instances compared
  std::size_t discarded = 0;  // instances dropped because a branch flipped under +-eps
  bool pass = false;
  bool excluded = false;      // reported but not compared (biased estimators)
  std::string note;
};

/// "quantizers", "models" or "all". Throws ContractViolation for other names.
std::vector<CheckResult> run_suite(const std::string& suite, std::uint64_t seed);

}  // namespace scq::gc
