#pragma once

#include <string>
#include <vector>

#include "s2t/gradcheck.hpp"

namespace s2t {

/// Named handles to every tensor a parameter struct exposes through visit().
template <typename Scalar, typename Params>
std::vector<NamedTensor<Scalar>> collect(Params& p, const std::string& prefix) {
  std::vector<NamedTensor<Scalar>> out;
  p.visit(prefix, [&](const std::string& name, Tensor<Scalar>& t) { out.push_back({name, t}); });
  return out;
}

/// Copies values between two parameter lists of the same layout, converting precision.
template <typename To, typename From>
void assign_cast(std::vector<NamedTensor<To>>& dst, const std::vector<NamedTensor<From>>& src) {
  if (dst.size() != src.size()) throw DimensionError("assign_cast: parameter lists differ in length");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].name != src[i].name || dst[i].tensor.shape() != src[i].tensor.shape()) {
      throw DimensionError("assign_cast: mismatch at " + src[i].name);
    }
    auto s = src[i].tensor.values();
    auto d = dst[i].tensor.values();
    for (std::size_t k = 0; k < s.size(); ++k) d[k] = static_cast<To>(s[k]);
  }
}

inline Index count_scalars(const auto& named) {
  Index n = 0;
  for (const auto& p : named) n += p.tensor.numel();
  return n;
}

}  // namespace s2t
