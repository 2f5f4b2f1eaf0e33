#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace s2t::gradsuite {

struct SuiteOptions {
  std::uint64_t seed = 7;
  double tol_double = 1e-4;
  double tol_single = 1e-3;
};

struct CheckResult {
  std::string name;
  /// "double": double analytic vs double FD. "single": float analytic vs double FD.
  std::string path;
  double worst = 0;
  double tol = 0;
  bool passed = false;
  std::string failures;
};

/// Finite-difference checks of every differentiable op, the attention
/// primitives, all four block variants, a stage, the losses and a toy model.
/// Shapes are drawn from the seed.
std::vector<CheckResult> run(const SuiteOptions& opts = {});

bool all_passed(const std::vector<CheckResult>& results);

}  // namespace s2t::gradsuite
