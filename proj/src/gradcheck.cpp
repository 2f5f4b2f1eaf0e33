#include "s2t/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace s2t {
namespace {

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t max_entries) {
  std::vector<std::size_t> idx;
  if (max_entries == 0 || n <= max_entries) {
    idx.resize(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return idx;
  }
  const double stride = static_cast<double>(n) / static_cast<double>(max_entries);
  for (std::size_t k = 0; k < max_entries; ++k) idx.push_back(static_cast<std::size_t>(k * stride));
  return idx;
}

}  // namespace

bool GradCheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const GradCheckEntry& e) { return e.passed; });
}

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.max_rel_error);
  return w;
}

std::string GradCheckReport::failures() const {
  std::ostringstream os;
  bool first = true;
  for (const auto& e : entries) {
    if (e.passed) continue;
    if (!first) os << ", ";
    os << e.name << " (" << e.max_rel_error << ")";
    first = false;
  }
  return os.str();
}

template <typename Scalar>
std::vector<GradientSample> analytic_gradients(const LossFn<Scalar>& f, std::vector<NamedTensor<Scalar>>& params,
                                               const GradCheckOptions& opts) {
  auto& graph = Graph<Scalar>::current();
  graph.clear();
  for (auto& p : params) {
    p.tensor.set_requires_grad(true);
    p.tensor.zero_grad();
  }
  Tensor<Scalar> loss = f();
  backward(loss);
  std::vector<GradientSample> out;
  for (auto& p : params) {
    GradientSample s;
    s.index = sample_indices(static_cast<std::size_t>(p.tensor.numel()), opts.max_entries);
    auto g = p.tensor.grad();
    for (std::size_t i : s.index) s.value.push_back(static_cast<double>(g[i]));
    out.push_back(std::move(s));
  }
  graph.clear();
  return out;
}

template <typename Scalar>
std::vector<GradientSample> numeric_gradients(const LossFn<Scalar>& f, std::vector<NamedTensor<Scalar>>& params,
                                              const GradCheckOptions& opts) {
  if (!(opts.step > 0)) throw ContractError("numeric_gradients: step must be positive");
  NoGradGuard guard;
  const Scalar h = static_cast<Scalar>(opts.step);
  std::vector<GradientSample> out;
  for (auto& p : params) {
    GradientSample s;
    s.index = sample_indices(static_cast<std::size_t>(p.tensor.numel()), opts.max_entries);
    auto v = p.tensor.values();
    for (std::size_t i : s.index) {
      const Scalar orig = v[i];
      v[i] = orig + h;
      const double fp = static_cast<double>(f().item());
      v[i] = orig - h;
      const double fm = static_cast<double>(f().item());
      v[i] = orig;
      s.value.push_back((fp - fm) / (2.0 * static_cast<double>(h)));
    }
    out.push_back(std::move(s));
  }
  return out;
}

GradCheckReport compare_gradients(const std::vector<std::string>& names, const std::vector<GradientSample>& analytic,
                                  const std::vector<GradientSample>& numeric, const GradCheckOptions& opts) {
  if (names.size() != analytic.size() || analytic.size() != numeric.size()) {
    throw ContractError("compare_gradients: parameter lists differ in length");
  }
  GradCheckReport report;
  report.tol = opts.tol;
  double global = 0.0;
  for (std::size_t p = 0; p < names.size(); ++p) {
    for (double v : analytic[p].value) global = std::max(global, std::abs(v));
    for (double v : numeric[p].value) global = std::max(global, std::abs(v));
  }
  const double floor = std::max(opts.floor, opts.relative_floor * global);
  for (std::size_t p = 0; p < names.size(); ++p) {
    const auto& a = analytic[p].value;
    const auto& n = numeric[p].value;
    if (a.size() != n.size()) throw ContractError("compare_gradients: sample sizes differ for " + names[p]);
    double diff = 0.0, scale = floor;
    for (std::size_t i = 0; i < a.size(); ++i) {
      diff = std::max(diff, std::abs(a[i] - n[i]));
      scale = std::max({scale, std::abs(a[i]), std::abs(n[i])});
    }
    GradCheckEntry e;
    e.name = names[p];
    e.checked = a.size();
    e.max_rel_error = std::isfinite(diff) ? diff / scale : INFINITY;
    e.passed = e.max_rel_error < opts.tol;
    report.entries.push_back(std::move(e));
  }
  return report;
}

template <typename Scalar>
GradCheckReport grad_check(const LossFn<Scalar>& f, std::vector<NamedTensor<Scalar>>& params,
                           const GradCheckOptions& opts) {
  auto analytic = analytic_gradients(f, params, opts);
  auto numeric = numeric_gradients(f, params, opts);
  std::vector<std::string> names;
  for (const auto& p : params) names.push_back(p.name);
  return compare_gradients(names, analytic, numeric, opts);
}

GradCheckReport grad_check_shadow(const LossFn<float>& f32, std::vector<NamedTensor<float>>& params32,
                                  const LossFn<double>& f64, std::vector<NamedTensor<double>>& params64,
                                  const GradCheckOptions& opts) {
  if (params32.size() != params64.size()) throw ContractError("grad_check_shadow: parameter lists differ");
  auto analytic = analytic_gradients(f32, params32, opts);
  auto numeric = numeric_gradients(f64, params64, opts);
  std::vector<std::string> names;
  for (const auto& p : params32) names.push_back(p.name);
  return compare_gradients(names, analytic, numeric, opts);
}

template std::vector<GradientSample> analytic_gradients(const LossFn<float>&, std::vector<NamedTensor<float>>&,
                                                        const GradCheckOptions&);
template std::vector<GradientSample> analytic_gradients(const LossFn<double>&, std::vector<NamedTensor<double>>&,
                                                        const GradCheckOptions&);
template std::vector<GradientSample> numeric_gradients(const LossFn<float>&, std::vector<NamedTensor<float>>&,
                                                       const GradCheckOptions&);
template std::vector<GradientSample> numeric_gradients(const LossFn<double>&, std::vector<NamedTensor<double>>&,
                                                       const GradCheckOptions&);
template GradCheckReport grad_check(const LossFn<float>&, std::vector<NamedTensor<float>>&, const GradCheckOptions&);
template GradCheckReport grad_check(const LossFn<double>&, std::vector<NamedTensor<double>>&, const GradCheckOptions&);

}  // namespace s2t
