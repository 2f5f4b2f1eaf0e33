#pragma once

#include <functional>
#include <string>
#include <vector>

#include "s2t/tensor.hpp"

namespace s2t {

template <typename Scalar>
struct NamedTensor {
  std::string name;
  Tensor<Scalar> tensor;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tol = 1e-4;
  /// Entries checked per parameter; 0 checks all of them. Subsets use a fixed stride.
  std::size_t max_entries = 0;
  /// Denominator floor for the relative error.
  double floor = 1e-10;
  /// Additional floor as a fraction of the largest gradient entry over all
  /// parameters, so parameters with a structurally zero gradient are judged
  /// against the problem's gradient scale instead of rounding noise.
  double relative_floor = 1e-3;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tol = 0.0;

  bool passed() const;
  double worst() const;
  /// Names of failing parameters, comma separated.
  std::string failures() const;
};

/// Sampled entries of one parameter's gradient.
struct GradientSample {
  std::vector<std::size_t> index;
  std::vector<double> value;
};

template <typename Scalar>
using LossFn = std::function<Tensor<Scalar>()>;

/// dLoss/dparam via the tape, at the entries selected by `opts.max_entries`.
template <typename Scalar>
std::vector<GradientSample> analytic_gradients(const LossFn<Scalar>& f, std::vector<NamedTensor<Scalar>>& params,
                                               const GradCheckOptions& opts);

/// Central differences (f(p+h) - f(p-h)) / 2h at the same entries.
template <typename Scalar>
std::vector<GradientSample> numeric_gradients(const LossFn<Scalar>& f, std::vector<NamedTensor<Scalar>>& params,
                                              const GradCheckOptions& opts);

/// Per parameter: max|a - n| / max(max|a|, max|n|, floor, relative_floor * global max).
GradCheckReport compare_gradients(const std::vector<std::string>& names, const std::vector<GradientSample>& analytic,
                                  const std::vector<GradientSample>& numeric, const GradCheckOptions& opts);

template <typename Scalar>
GradCheckReport grad_check(const LossFn<Scalar>& f, std::vector<NamedTensor<Scalar>>& params,
                           const GradCheckOptions& opts = {});

/// Single-precision analytic gradients checked against double-precision
/// central differences of the same function. `params32` and `params64` must
/// list the same parameters in the same order.
GradCheckReport grad_check_shadow(const LossFn<float>& f32, std::vector<NamedTensor<float>>& params32,
                                  const LossFn<double>& f64, std::vector<NamedTensor<double>>& params64,
                                  const GradCheckOptions& opts);

}  // namespace s2t
