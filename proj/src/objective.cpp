#include "s2t/objective.hpp"

#include <algorithm>
#include <cmath>

namespace s2t::objective {

Reduction parse_reduction(const std::string& s) {
  if (s == "global") return Reduction::Global;
  if (s == "patchwise") return Reduction::Patchwise;
  throw ContractError("unknown loss reduction '" + s + "' (expected global or patchwise)");
}

Mode parse_mode(const std::string& s) {
  if (s == "mask_aware") return Mode::MaskAware;
  if (s == "recon") return Mode::ReconOnly;
  throw ContractError("unknown loss mode '" + s + "' (expected mask_aware or recon)");
}

std::string phase_name(Phase p) { return p == Phase::ME ? "ME" : "MA"; }

void LossConfig::validate() const {
  if (!(alpha >= 0)) throw ContractError("loss config: alpha must be >= 0");
  if (!(beta_ma >= 0)) throw ContractError("loss config: beta_ma must be >= 0");
  if (!(eps_den > 0)) throw ContractError("loss config: eps_den must be > 0");
  if (patch < 1) throw ContractError("loss config: patch must be >= 1");
}

namespace {

void require_same(const char* op, const Shape& a, const Shape& b) {
  if (a != b) throw DimensionError(std::string(op) + ": shapes differ " + shape_str(a) + " vs " + shape_str(b));
}

template <typename Scalar>
Tensor<Scalar> abs_residual(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return abs(sub(a, b));
}

// Voxel count of each patch block, divided by the total, as a constant.
template <typename Scalar>
Tensor<Scalar> patch_shares(Index h, Index w, Index patch) {
  const Index by = (h + patch - 1) / patch, bx = (w + patch - 1) / patch;
  Tensor<Scalar> s(Shape{by, bx});
  for (Index y = 0; y < by; ++y)
    for (Index x = 0; x < bx; ++x) {
      const Index ph = std::min(patch, h - y * patch), pw = std::min(patch, w - x * patch);
      s[y * bx + x] = static_cast<Scalar>(static_cast<double>(ph * pw) / static_cast<double>(h * w));
    }
  return s;
}

template <typename Scalar>
double value(const Tensor<Scalar>& t) {
  return static_cast<double>(t.item());
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> encoded_target(const optics::HyperCube& cube, const optics::CodedMask& mask) {
  const optics::HyperCube masked = optics::apply_mask(cube, mask);
  return cast<Scalar>(masked.data);
}

template <typename Scalar>
Tensor<Scalar> recon_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& gt) {
  require_same("recon_loss", pred.shape(), gt.shape());
  return mean(abs_residual(pred, gt));
}

template <typename Scalar>
LossBreakdown<Scalar> me_loss(const Tensor<Scalar>& encoded_pred, const optics::HyperCube& cube,
                              const optics::CodedMask& mask, const Tensor<Scalar>& pred, const LossConfig& cfg) {
  cfg.validate();
  const Tensor<Scalar> target = encoded_target<Scalar>(cube, mask);
  require_same("me_loss", encoded_pred.shape(), target.shape());
  const Tensor<Scalar> me = mean(abs_residual(encoded_pred, target));
  const Tensor<Scalar> rec = recon_loss(pred, cast<Scalar>(cube.data));
  LossBreakdown<Scalar> b;
  b.loss = add(scale(me, static_cast<Scalar>(cfg.alpha)), rec);
  b.me = value(me);
  b.recon = value(rec);
  b.total = value(b.loss);
  return b;
}

template <typename Scalar>
Tensor<Scalar> ma_weight(const Tensor<Scalar>& encoded_pred, const optics::HyperCube& cube,
                         const optics::CodedMask& mask, const LossConfig& cfg) {
  cfg.validate();
  const Tensor<Scalar> target = encoded_target<Scalar>(cube, mask);
  require_same("ma_weight", encoded_pred.shape(), target.shape());
  const Tensor<Scalar> r = abs_residual(encoded_pred, target);
  Tensor<Scalar> me = cfg.reduction == Reduction::Global ? mean(r) : block_mean(r, cfg.patch);
  if (cfg.detach_weight) me = detach(me);
  return scale(reciprocal(clamp_min(me, static_cast<Scalar>(cfg.eps_den))), static_cast<Scalar>(cfg.beta_ma));
}

template <typename Scalar>
LossBreakdown<Scalar> ma_loss(const Tensor<Scalar>& encoded_pred, const optics::HyperCube& cube,
                              const optics::CodedMask& mask, const Tensor<Scalar>& pred, const LossConfig& cfg) {
  LossBreakdown<Scalar> b = me_loss(encoded_pred, cube, mask, pred, cfg);
  const Tensor<Scalar> weight = ma_weight(encoded_pred, cube, mask, cfg);
  const Tensor<Scalar> gt = cast<Scalar>(cube.data);
  Tensor<Scalar> ma;
  if (cfg.reduction == Reduction::Global) {
    ma = mul(weight, recon_loss(pred, gt));
  } else {
    const Tensor<Scalar> rec_p = block_mean(abs_residual(pred, gt), cfg.patch);
    ma = sum(mul(mul(weight, rec_p), patch_shares<Scalar>(cube.height(), cube.width(), cfg.patch)));
  }
  b.loss = add(b.loss, ma);
  b.ma = value(ma);
  b.total = value(b.loss);
  return b;
}

template <typename Scalar>
LossBreakdown<Scalar> compute_loss(const Tensor<Scalar>& encoded_pred, const optics::HyperCube& cube,
                                   const optics::CodedMask& mask, const Tensor<Scalar>& pred, const LossConfig& cfg) {
  if (cfg.mode == Mode::ReconOnly) {
    LossBreakdown<Scalar> b;
    b.loss = recon_loss(pred, cast<Scalar>(cube.data));
    b.recon = b.total = value(b.loss);
    return b;
  }
  if (!encoded_pred.defined()) throw ContractError("compute_loss: mask-aware objective needs the encode head output");
  return cfg.phase == Phase::ME ? me_loss(encoded_pred, cube, mask, pred, cfg)
                                : ma_loss(encoded_pred, cube, mask, pred, cfg);
}

ProbeReport corollary_probe(const optics::HyperCube& pred, const optics::HyperCube& gt, const optics::CodedMask& mask,
                            double threshold) {
  require_same("corollary_probe", pred.data.shape(), gt.data.shape());
  if (gt.height() != mask.height() || gt.width() != mask.width()) {
    throw DimensionError("corollary_probe: mask " + shape_str(mask.data.shape()) + " does not match cube " +
                         shape_str(gt.data.shape()));
  }
  const Index h = gt.height(), w = gt.width(), n = gt.channels();
  ProbeReport r;
  r.difficulty = Tensor<float>(gt.data.shape());
  double masked = 0, unmasked = 0;
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      double pix = 0;
      for (Index c = 0; c < n; ++c) {
        const float p = std::clamp(pred.at(y, x, c), 0.0f, 1.0f);
        const float d = std::abs(p - gt.at(y, x, c));
        r.difficulty[(y * w + x) * n + c] = d;
        pix += d;
      }
      pix /= static_cast<double>(n);
      if (mask.at(y, x) < threshold) {
        masked += pix;
        ++r.masked_pixels;
      } else {
        unmasked += pix;
        ++r.unmasked_pixels;
      }
    }
  if (r.masked_pixels > 0) r.masked_mae = masked / static_cast<double>(r.masked_pixels);
  if (r.unmasked_pixels > 0) r.unmasked_mae = unmasked / static_cast<double>(r.unmasked_pixels);
  r.ratio_defined = r.masked_pixels > 0 && r.unmasked_pixels > 0 && r.unmasked_mae > 0;
  r.ratio = r.ratio_defined ? r.masked_mae / r.unmasked_mae : 0.0;
  return r;
}

#define S2T_INSTANTIATE_OBJECTIVE(S)                                                                                  \
  template Tensor<S> encoded_target<S>(const optics::HyperCube&, const optics::CodedMask&);                          \
  template Tensor<S> recon_loss<S>(const Tensor<S>&, const Tensor<S>&);                                              \
  template LossBreakdown<S> me_loss<S>(const Tensor<S>&, const optics::HyperCube&, const optics::CodedMask&,         \
                                       const Tensor<S>&, const LossConfig&);                                         \
  template Tensor<S> ma_weight<S>(const Tensor<S>&, const optics::HyperCube&, const optics::CodedMask&,              \
                                  const LossConfig&);                                                                \
  template LossBreakdown<S> ma_loss<S>(const Tensor<S>&, const optics::HyperCube&, const optics::CodedMask&,         \
                                       const Tensor<S>&, const LossConfig&);                                         \
  template LossBreakdown<S> compute_loss<S>(const Tensor<S>&, const optics::HyperCube&, const optics::CodedMask&,    \
                                            const Tensor<S>&, const LossConfig&);

S2T_INSTANTIATE_OBJECTIVE(float)
S2T_INSTANTIATE_OBJECTIVE(double)

}  // namespace s2t::objective
