#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "s2t/attention.hpp"
#include "s2t/gradcheck.hpp"

namespace s2t::network {

using attention::BlockVariant;

struct NetworkConfig {
  Index stages = 4;      // K
  Index blocks = 6;      // L per stage
  Index channels = 60;   // C
  Index heads = 6;       // T
  Index window = 8;      // M
  Index n_lambda = 28;
  Index k_me = 2;        // 1-based stage whose output feeds the encode head
  Index ffn_mult = 2;
  BlockVariant variant = BlockVariant::ParallSS;
  bool shift = true;

  attention::HeadConfig head_config() const { return {channels, heads}; }
  /// Structural checks. `needs_encode_tap` additionally requires 1 <= k_me < K.
  void validate(bool needs_encode_tap = true) const;
};

template <typename Scalar>
struct StageParams {
  std::vector<attention::BlockParams<Scalar>> blocks;
  /// Stage output conv [3, 3, C, C], zero-initialised.
  Tensor<Scalar> conv_w, conv_b;

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    for (std::size_t b = 0; b < blocks.size(); ++b) blocks[b].visit(prefix + ".block" + std::to_string(b), fn);
    fn(prefix + ".conv.w", conv_w);
    fn(prefix + ".conv.b", conv_b);
  }
};

template <typename Scalar>
struct ModelParams {
  Tensor<Scalar> extractor_w, extractor_b;
  std::vector<StageParams<Scalar>> stages;
  Tensor<Scalar> head_w, head_b;
  Tensor<Scalar> encode_ln_g, encode_ln_b, encode_w, encode_b;

  static ModelParams init(const NetworkConfig& cfg, std::uint64_t seed);

  template <typename Fn>
  void visit(Fn&& fn) {
    fn("extractor.w", extractor_w);
    fn("extractor.b", extractor_b);
    for (std::size_t k = 0; k < stages.size(); ++k) stages[k].visit("stage" + std::to_string(k), fn);
    fn("head.w", head_w);
    fn("head.b", head_b);
    fn("encode.ln.g", encode_ln_g);
    fn("encode.ln.b", encode_ln_b);
    fn("encode.w", encode_w);
    fn("encode.b", encode_b);
  }

  /// Handles in checkpoint order.
  std::vector<NamedTensor<Scalar>> named();
  /// Parameters reached by the reconstruction path only (everything but the encode head).
  std::vector<NamedTensor<Scalar>> named_without_encode_head();
};

/// Observer for intermediate feature maps: (0-based stage, 0-based block, [H, W, C]).
/// Called after every block and once more with block == L for the stage output.
template <typename Scalar>
using FeatureTap = std::function<void(Index, Index, const Tensor<Scalar>&)>;

/// Z + conv3x3(f_L(Z)); f_L chains the stage's blocks with window partition and
/// merge around each one.
template <typename Scalar>
Tensor<Scalar> stage_forward(const Tensor<Scalar>& z, const StageParams<Scalar>& p, const NetworkConfig& cfg,
                             Index stage_index = 0, const FeatureTap<Scalar>& tap = {});

/// LN + conv3x3 prediction of the masked cube from a stage embedding.
template <typename Scalar>
Tensor<Scalar> encode_head(const Tensor<Scalar>& z, const ModelParams<Scalar>& p);

template <typename Scalar>
struct ForwardResult {
  Tensor<Scalar> recon;    // [H, W, n_lambda]
  Tensor<Scalar> encoded;  // [H, W, n_lambda], undefined unless requested
};

template <typename Scalar>
ForwardResult<Scalar> full_forward(const Tensor<Scalar>& y_prime, const ModelParams<Scalar>& p,
                                   const NetworkConfig& cfg, bool with_encode = true,
                                   const FeatureTap<Scalar>& tap = {});

template <typename Scalar>
Index param_count(ModelParams<Scalar>& p);

}  // namespace s2t::network
