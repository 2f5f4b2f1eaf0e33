#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Core>

#include "s2t/tensor.hpp"

namespace s2t::optics {

/// H x W x N_lambda spectral cube, stored as Tensor[h, w, n_lambda].
struct HyperCube {
  Tensor<float> data;

  HyperCube() = default;
  explicit HyperCube(Tensor<float> t);
  static HyperCube zeros(Index h, Index w, Index n_lambda);

  Index height() const { return data.dim(0); }
  Index width() const { return data.dim(1); }
  Index channels() const { return data.dim(2); }
  float& at(Index y, Index x, Index c) { return data[(y * width() + x) * channels() + c]; }
  float at(Index y, Index x, Index c) const { return data[(y * width() + x) * channels() + c]; }
};

/// Coded aperture transmission, Tensor[h, w] with values in [0, 1].
struct CodedMask {
  Tensor<float> data;

  CodedMask() = default;
  explicit CodedMask(Tensor<float> t);

  Index height() const { return data.dim(0); }
  Index width() const { return data.dim(1); }
  float at(Index y, Index x) const { return data[y * width() + x]; }
};

/// Disperser shear: channel n lands d * (n - anchor) columns from the anchor.
struct ShearRule {
  Index step = 2;
  Index anchor = 0;

  /// Column offset of channel n inside the extended frame. The frame starts at
  /// the leftmost channel so offsets are d * n for any anchor.
  Index offset(Index channel) const { return step * channel; }
  Index extended_width(Index width, Index n_lambda) const { return width + step * (n_lambda - 1); }
};

/// 2D snapshot, Tensor[h, w + d (n_lambda - 1)].
struct Measurement {
  Tensor<float> data;

  Index height() const { return data.dim(0); }
  Index extended_width() const { return data.dim(1); }
};

HyperCube apply_mask(const HyperCube& cube, const CodedMask& mask);

/// Zero-initialised [h, w_ext, n_lambda] buffer with channel n at column offset d * n.
Tensor<float> shear(const HyperCube& cube, const ShearRule& rule);

/// Y = sum_n shear(F . M)(:, :, n) + noise, noise ~ N(0, sigma^2) iid from `seed`.
Measurement form_measurement(const HyperCube& cube, const CodedMask& mask, const ShearRule& rule, double noise_sigma,
                             std::uint64_t seed);

/// Network input: per channel, the width-W crop of Y at offset d * n, re-masked.
HyperCube init_input(const Measurement& y, const CodedMask& mask, const ShearRule& rule, Index n_lambda);

enum class MaskKind { Binary, Uniform, File };

MaskKind parse_mask_kind(const std::string& name);

/// Binary: iid Bernoulli(density). Uniform: iid U[0, 1]. File: MSK1 at `path`.
CodedMask make_mask(Index h, Index w, MaskKind kind, double density, std::uint64_t seed, const std::string& path = {});

/// Sum of spatial Gaussian blobs, each with a smooth random spectral response,
/// clipped to [0, 1].
HyperCube make_synthetic_cube(Index h, Index w, Index n_lambda, int n_blobs, std::uint64_t seed);

/// Pearson correlation between every pair of spectral channels.
Eigen::MatrixXd spectral_correlation(const HyperCube& cube);

/// Same-offset crops of a cube and a mask (used for training patches).
HyperCube crop(const HyperCube& cube, Index y0, Index x0, Index h, Index w);
CodedMask crop(const CodedMask& mask, Index y0, Index x0, Index h, Index w);

}  // namespace s2t::optics
