#pragma once

#include <string>

#include "s2t/ops.hpp"
#include "s2t/optics.hpp"

namespace s2t::objective {

enum class Phase { ME, MA };
enum class Reduction { Global, Patchwise };
/// MaskAware runs the ME/MA schedule; ReconOnly trains on the reconstruction term alone.
enum class Mode { MaskAware, ReconOnly };

Reduction parse_reduction(const std::string& s);
Mode parse_mode(const std::string& s);
std::string phase_name(Phase p);

struct LossConfig {
  double alpha = 1.5;
  double beta_ma = 10.0;
  double eps_den = 1e-6;
  Reduction reduction = Reduction::Global;
  Index patch = 32;
  Phase phase = Phase::ME;
  Mode mode = Mode::MaskAware;
  /// Treat the MA weight as a constant instead of differentiating through it.
  bool detach_weight = false;

  void validate() const;
};

template <typename Scalar>
struct LossBreakdown {
  double recon = 0, me = 0, ma = 0, total = 0;
  /// Differentiable total, shape [1].
  Tensor<Scalar> loss;
};

/// The masked cube F' = F . M as a constant.
template <typename Scalar>
Tensor<Scalar> encoded_target(const optics::HyperCube& cube, const optics::CodedMask& mask);

/// mean |pred - gt|.
template <typename Scalar>
Tensor<Scalar> recon_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& gt);

/// alpha * mean|encoded_pred - F'| + mean|pred - F|.
template <typename Scalar>
LossBreakdown<Scalar> me_loss(const Tensor<Scalar>& encoded_pred, const optics::HyperCube& cube,
                              const optics::CodedMask& mask, const Tensor<Scalar>& pred, const LossConfig& cfg);

/// beta / max(mean|encoded_pred - F'|, eps). Global: shape [1]. Patchwise: one
/// weight per patch x patch x n_lambda block, row-major over blocks.
template <typename Scalar>
Tensor<Scalar> ma_weight(const Tensor<Scalar>& encoded_pred, const optics::HyperCube& cube,
                         const optics::CodedMask& mask, const LossConfig& cfg);

/// me_loss + weight * recon. Patchwise uses the size-weighted mean over
/// blocks of weight_p * recon_p, which equals the global form when all
/// weights agree.
template <typename Scalar>
LossBreakdown<Scalar> ma_loss(const Tensor<Scalar>& encoded_pred, const optics::HyperCube& cube,
                              const optics::CodedMask& mask, const Tensor<Scalar>& pred, const LossConfig& cfg);

/// Dispatch on cfg.mode and cfg.phase. `encoded_pred` may be undefined in ReconOnly mode.
template <typename Scalar>
LossBreakdown<Scalar> compute_loss(const Tensor<Scalar>& encoded_pred, const optics::HyperCube& cube,
                                   const optics::CodedMask& mask, const Tensor<Scalar>& pred, const LossConfig& cfg);

struct ProbeReport {
  double masked_mae = 0, unmasked_mae = 0, ratio = 0;
  Index masked_pixels = 0, unmasked_pixels = 0;
  /// False when either class is empty or the unmasked residual is zero.
  bool ratio_defined = false;
  /// |clamp(pred) - gt| per voxel, [H, W, n_lambda].
  Tensor<float> difficulty;
};

/// Mean absolute residual over masked (mask < threshold) and unmasked pixels,
/// averaged over channels, with pred clamped to [0, 1] first.
ProbeReport corollary_probe(const optics::HyperCube& pred, const optics::HyperCube& gt, const optics::CodedMask& mask,
                            double threshold = 0.5);

}  // namespace s2t::objective
