#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "s2t/tensor.hpp"

namespace s2t {

/// Flat source offsets for gather(); shared so closures do not copy it.
using IndexMap = std::shared_ptr<const std::vector<std::uint32_t>>;

inline IndexMap make_index_map(std::vector<std::uint32_t> idx) {
  return std::make_shared<const std::vector<std::uint32_t>>(std::move(idx));
}

// Elementwise, identical shapes.
template <typename Scalar> Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar> Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar> Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar> Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar factor);
template <typename Scalar> Tensor<Scalar> abs(const Tensor<Scalar>& x);
template <typename Scalar> Tensor<Scalar> reciprocal(const Tensor<Scalar>& x);
/// max(x, floor); the gradient is zero where the floor is active.
template <typename Scalar> Tensor<Scalar> clamp_min(const Tensor<Scalar>& x, Scalar floor);

template <typename Scalar> Tensor<Scalar> sum(const Tensor<Scalar>& x);
template <typename Scalar> Tensor<Scalar> mean(const Tensor<Scalar>& x);

template <typename Scalar> Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape);
/// out[i] = x[index[i]]; the adjoint scatter-adds in index order.
template <typename Scalar> Tensor<Scalar> gather(const Tensor<Scalar>& x, const IndexMap& index, Shape shape);
template <typename Scalar> Tensor<Scalar> concat_last(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
/// Copy cut from the graph.
template <typename Scalar> Tensor<Scalar> detach(const Tensor<Scalar>& x);

// Broadcasts: b is viewed as [groups, C] and x as [groups, reps, C].
template <typename Scalar> Tensor<Scalar> add_broadcast(const Tensor<Scalar>& x, const Tensor<Scalar>& b, Index groups = 1);
template <typename Scalar> Tensor<Scalar> mul_broadcast(const Tensor<Scalar>& x, const Tensor<Scalar>& b, Index groups = 1);

template <typename Scalar> Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
/// Per-batch op(a) * op(b) on rank-3 operands.
template <typename Scalar>
Tensor<Scalar> batched_matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b, bool transpose_a = false,
                              bool transpose_b = false);
/// x[..., in] * w[in, out] + bias[out]. `bias` may be undefined.
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& bias);

template <typename Scalar> Tensor<Scalar> softmax_last(const Tensor<Scalar>& x);
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gain, const Tensor<Scalar>& bias,
                          Scalar eps = Scalar(1e-5));
/// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename Scalar> Tensor<Scalar> gelu(const Tensor<Scalar>& x);

/// x[h, w, cin] with kernel[3, 3, cin, cout], zero padding 1, stride 1.
template <typename Scalar>
Tensor<Scalar> conv2d_3x3(const Tensor<Scalar>& x, const Tensor<Scalar>& kernel, const Tensor<Scalar>& bias);

/// Mean of each patch x patch x C block of x[H, W, C]; edge blocks may be partial.
template <typename Scalar> Tensor<Scalar> block_mean(const Tensor<Scalar>& x, Index patch);

template <typename Scalar> Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return add(a, b); }
template <typename Scalar> Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return sub(a, b); }
template <typename Scalar> Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return mul(a, b); }

}  // namespace s2t
