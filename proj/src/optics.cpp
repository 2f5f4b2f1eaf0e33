#include "s2t/optics.hpp"

#include <algorithm>
#include <cmath>

#include "s2t/io.hpp"
#include "s2t/rng.hpp"

namespace s2t::optics {

HyperCube::HyperCube(Tensor<float> t) : data(std::move(t)) {
  if (data.rank() != 3) throw DimensionError("HyperCube: expected [h, w, n_lambda], got " + shape_str(data.shape()));
}

HyperCube HyperCube::zeros(Index h, Index w, Index n_lambda) { return HyperCube(Tensor<float>(Shape{h, w, n_lambda})); }

CodedMask::CodedMask(Tensor<float> t) : data(std::move(t)) {
  if (data.rank() != 2) throw DimensionError("CodedMask: expected [h, w], got " + shape_str(data.shape()));
}

namespace {

void require_spatial_match(const char* op, const HyperCube& cube, const CodedMask& mask) {
  if (cube.height() != mask.height() || cube.width() != mask.width()) {
    throw DimensionError(std::string(op) + ": cube " + shape_str(cube.data.shape()) + " does not match mask " +
                         shape_str(mask.data.shape()));
  }
}

}  // namespace

HyperCube apply_mask(const HyperCube& cube, const CodedMask& mask) {
  require_spatial_match("apply_mask", cube, mask);
  const Index h = cube.height(), w = cube.width(), n = cube.channels();
  HyperCube out = HyperCube::zeros(h, w, n);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const float m = mask.at(y, x);
      for (Index c = 0; c < n; ++c) out.at(y, x, c) = cube.at(y, x, c) * m;
    }
  return out;
}

Tensor<float> shear(const HyperCube& cube, const ShearRule& rule) {
  if (rule.step < 0) throw ContractError("shear: step must be non-negative");
  const Index h = cube.height(), w = cube.width(), n = cube.channels();
  const Index we = rule.extended_width(w, n);
  Tensor<float> out(Shape{h, we, n});
  for (Index y = 0; y < h; ++y)
    for (Index c = 0; c < n; ++c) {
      const Index off = rule.offset(c);
      for (Index x = 0; x < w; ++x) out[(y * we + x + off) * n + c] = cube.at(y, x, c);
    }
  return out;
}

Measurement form_measurement(const HyperCube& cube, const CodedMask& mask, const ShearRule& rule, double noise_sigma,
                             std::uint64_t seed) {
  if (!(noise_sigma >= 0)) throw ContractError("form_measurement: noise_sigma must be >= 0");
  const HyperCube encoded = apply_mask(cube, mask);
  const Tensor<float> sheared = shear(encoded, rule);
  const Index h = sheared.dim(0), we = sheared.dim(1), n = sheared.dim(2);
  Measurement y{Tensor<float>(Shape{h, we})};
  for (Index r = 0; r < h; ++r)
    for (Index x = 0; x < we; ++x) {
      float acc = 0.0f;
      for (Index c = 0; c < n; ++c) acc += sheared[(r * we + x) * n + c];
      y.data[r * we + x] = acc;
    }
  if (noise_sigma > 0) {
    Rng rng(seed, 0x4e4f495345ULL);
    for (float& v : y.data.values()) v += static_cast<float>(noise_sigma * rng.normal());
  }
  return y;
}

HyperCube init_input(const Measurement& y, const CodedMask& mask, const ShearRule& rule, Index n_lambda) {
  const Index h = mask.height(), w = mask.width();
  if (y.height() != h || y.extended_width() != rule.extended_width(w, n_lambda)) {
    throw DimensionError("init_input: measurement " + shape_str(y.data.shape()) + " is inconsistent with mask " +
                         shape_str(mask.data.shape()) + ", step " + std::to_string(rule.step) + " and " +
                         std::to_string(n_lambda) + " channels");
  }
  const Index we = y.extended_width();
  HyperCube out = HyperCube::zeros(h, w, n_lambda);
  for (Index r = 0; r < h; ++r)
    for (Index c = 0; c < n_lambda; ++c) {
      const Index off = rule.offset(c);
      for (Index x = 0; x < w; ++x) out.at(r, x, c) = y.data[r * we + off + x] * mask.at(r, x);
    }
  return out;
}

MaskKind parse_mask_kind(const std::string& name) {
  if (name == "binary") return MaskKind::Binary;
  if (name == "uniform") return MaskKind::Uniform;
  if (name == "file") return MaskKind::File;
  throw ContractError("unknown mask kind '" + name + "' (expected binary, uniform or file)");
}

CodedMask make_mask(Index h, Index w, MaskKind kind, double density, std::uint64_t seed, const std::string& path) {
  if (kind == MaskKind::File) {
    CodedMask m = io::read_mask(path);
    if (m.height() != h || m.width() != w) {
      throw DimensionError("make_mask: mask file " + path + " is " + shape_str(m.data.shape()) + ", expected [" +
                           std::to_string(h) + "x" + std::to_string(w) + "]");
    }
    return m;
  }
  Tensor<float> t(Shape{h, w});
  Rng rng(seed, 0x4d41534bULL);
  if (kind == MaskKind::Binary) {
    if (!(density > 0.0 && density <= 1.0)) throw ContractError("make_mask: density must lie in (0, 1]");
    for (float& v : t.values()) v = rng.uniform() < density ? 1.0f : 0.0f;
  } else {
    for (float& v : t.values()) v = static_cast<float>(rng.uniform());
  }
  return CodedMask(std::move(t));
}

HyperCube make_synthetic_cube(Index h, Index w, Index n_lambda, int n_blobs, std::uint64_t seed) {
  if (n_blobs < 1) throw ContractError("make_synthetic_cube: n_blobs must be >= 1");
  Rng rng(seed, 0x43554245ULL);
  HyperCube cube = HyperCube::zeros(h, w, n_lambda);
  std::vector<double> spectrum(static_cast<std::size_t>(n_lambda));
  for (int b = 0; b < n_blobs; ++b) {
    const double cy = rng.uniform(0.0, static_cast<double>(h));
    const double cx = rng.uniform(0.0, static_cast<double>(w));
    const double sy = std::max(0.7, rng.uniform(0.06, 0.25) * static_cast<double>(h));
    const double sx = std::max(0.7, rng.uniform(0.06, 0.25) * static_cast<double>(w));
    const double amp = rng.uniform(0.4, 1.0);

    // Smooth response: a low baseline plus two Gaussian bumps in normalised wavelength.
    const double base = rng.uniform(0.0, 0.2);
    double peak = 0.0;
    const double mu1 = rng.uniform(), s1 = rng.uniform(0.15, 0.4), a1 = rng.uniform(0.3, 1.0);
    const double mu2 = rng.uniform(), s2 = rng.uniform(0.15, 0.4), a2 = rng.uniform(0.3, 1.0);
    for (Index c = 0; c < n_lambda; ++c) {
      const double lam = n_lambda > 1 ? static_cast<double>(c) / static_cast<double>(n_lambda - 1) : 0.0;
      const double v = base + a1 * std::exp(-0.5 * (lam - mu1) * (lam - mu1) / (s1 * s1)) +
                       a2 * std::exp(-0.5 * (lam - mu2) * (lam - mu2) / (s2 * s2));
      spectrum[static_cast<std::size_t>(c)] = v;
      peak = std::max(peak, v);
    }
    for (double& v : spectrum) v /= peak;

    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        const double dy = (static_cast<double>(y) + 0.5 - cy) / sy;
        const double dx = (static_cast<double>(x) + 0.5 - cx) / sx;
        const double s = amp * std::exp(-0.5 * (dy * dy + dx * dx));
        for (Index c = 0; c < n_lambda; ++c) cube.at(y, x, c) += static_cast<float>(s * spectrum[static_cast<std::size_t>(c)]);
      }
  }
  for (float& v : cube.data.values()) v = std::clamp(v, 0.0f, 1.0f);
  return cube;
}

Eigen::MatrixXd spectral_correlation(const HyperCube& cube) {
  const Index n = cube.channels();
  const Index px = cube.height() * cube.width();
  Eigen::MatrixXd samples(px, n);
  for (Index p = 0; p < px; ++p)
    for (Index c = 0; c < n; ++c) samples(p, c) = cube.data[p * n + c];
  const Eigen::RowVectorXd mu = samples.colwise().mean();
  samples.rowwise() -= mu;
  Eigen::MatrixXd cov = samples.transpose() * samples;
  Eigen::VectorXd sd = cov.diagonal().cwiseSqrt();
  Eigen::MatrixXd corr(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      const double d = sd(i) * sd(j);
      corr(i, j) = d > 0 ? cov(i, j) / d : (i == j ? 1.0 : 0.0);
    }
  return corr;
}

HyperCube crop(const HyperCube& cube, Index y0, Index x0, Index h, Index w) {
  if (y0 < 0 || x0 < 0 || y0 + h > cube.height() || x0 + w > cube.width()) {
    throw DimensionError("crop: window exceeds cube " + shape_str(cube.data.shape()));
  }
  const Index n = cube.channels();
  HyperCube out = HyperCube::zeros(h, w, n);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < n; ++c) out.at(y, x, c) = cube.at(y0 + y, x0 + x, c);
  return out;
}

CodedMask crop(const CodedMask& mask, Index y0, Index x0, Index h, Index w) {
  if (y0 < 0 || x0 < 0 || y0 + h > mask.height() || x0 + w > mask.width()) {
    throw DimensionError("crop: window exceeds mask " + shape_str(mask.data.shape()));
  }
  Tensor<float> t(Shape{h, w});
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) t[y * w + x] = mask.at(y0 + y, x0 + x);
  return CodedMask(std::move(t));
}

}  // namespace s2t::optics
