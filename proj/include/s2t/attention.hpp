#pragma once

#include <string>

#include "s2t/ops.hpp"
#include "s2t/rng.hpp"

namespace s2t::attention {

enum class BlockVariant { SpaSpa, SpeSpe, SequnSS, ParallSS };

BlockVariant parse_variant(const std::string& name);
std::string variant_name(BlockVariant v);

/// Maps an [h, w, c] map to [n_windows, m*m, c] tokens and back. The map is
/// reflect-padded to a multiple of m and cyclically rolled by -shift first.
class WindowGrid {
 public:
  WindowGrid(Index height, Index width, Index window_m, Index shift = 0);

  Index height() const { return h_; }
  Index width() const { return w_; }
  Index window() const { return m_; }
  Index shift() const { return shift_; }
  Index padded_height() const { return hp_; }
  Index padded_width() const { return wp_; }
  Index windows_y() const { return hp_ / m_; }
  Index windows_x() const { return wp_ / m_; }
  Index n_windows() const { return windows_y() * windows_x(); }
  Index tokens() const { return m_ * m_; }

  /// Token slot (window * m*m + token) that receives padded position (y, x) after the roll.
  Index slot(Index y, Index x) const;

  template <typename Scalar> Tensor<Scalar> partition(const Tensor<Scalar>& x) const;
  template <typename Scalar> Tensor<Scalar> merge(const Tensor<Scalar>& tokens) const;

 private:
  Index h_, w_, m_, shift_, hp_, wp_;
};

/// Shift to use for the block at 0-based `block_index`: m/2 on odd blocks
/// when the map spans more than one window per axis, else 0.
Index block_shift(Index block_index, Index height, Index width, Index window_m, bool enabled = true);

struct HeadConfig {
  Index channels = 60;
  Index heads = 6;

  Index head_dim() const { return channels / heads; }
  /// Trailing channels that bypass attention through the value path.
  Index remainder() const { return channels - heads * head_dim(); }
  void validate() const;
};

enum class MsaKind { Spatial, Spectral };

template <typename Scalar>
struct MsaParams {
  MsaKind kind = MsaKind::Spatial;
  Tensor<Scalar> wq, bq, wk, bk, wv, bv, wo, bo;
  /// Per-head scale, initialised to sqrt(head_dim).
  Tensor<Scalar> beta;
  /// Spatial: relative-position table [heads, (2m-1)^2]. Spectral: [heads, c_h, c_h].
  Tensor<Scalar> pos_bias;

  static MsaParams init(MsaKind kind, const HeadConfig& heads, Index window_m, Rng& rng);

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".wq", wq);
    fn(prefix + ".bq", bq);
    fn(prefix + ".wk", wk);
    fn(prefix + ".bk", bk);
    fn(prefix + ".wv", wv);
    fn(prefix + ".bv", bv);
    fn(prefix + ".wo", wo);
    fn(prefix + ".bo", bo);
    fn(prefix + ".beta", beta);
    fn(prefix + ".pos_bias", pos_bias);
  }
};

template <typename Scalar>
struct Qkv {
  Tensor<Scalar> q, k, v;
};

/// Q = z Wq + bq, K = z Wk + bk, V = z Wv + bv over the last axis.
template <typename Scalar>
Qkv<Scalar> qkv_project(const Tensor<Scalar>& z, const MsaParams<Scalar>& p);

template <typename Scalar>
struct AttentionResult {
  Tensor<Scalar> output;
  /// Spatial: [batch, n, n], rows sum to one. Spectral: [batch, c_h, c_h]
  /// with columns summing to one. Detached from the graph.
  Tensor<Scalar> attention;
};

/// Per batch entry: A = softmax_rows(K Q^T * scale + bias), output A V.
/// q, k, v are [batch, n, c]; scale is [groups], bias [groups, n, n] or undefined;
/// batch entries are grouped contiguously (group = batch index / (batch / groups)).
template <typename Scalar>
AttentionResult<Scalar> spa_attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                                      const Tensor<Scalar>& scale, const Tensor<Scalar>& bias);

/// Per batch entry: A = softmax over the first index of (K^T Q * scale + bias),
/// output V A, so each output channel is a convex combination of value channels.
template <typename Scalar>
AttentionResult<Scalar> spe_attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                                      const Tensor<Scalar>& scale, const Tensor<Scalar>& bias);

/// Multi-head MSA over tokens [n_windows, m*m, C]. Heads are split from Q, K, V,
/// attended per window, concatenated, and projected by Wo.
template <typename Scalar>
AttentionResult<Scalar> msa_forward(const Tensor<Scalar>& tokens, const MsaParams<Scalar>& p, const HeadConfig& heads,
                                    Index window_m);

template <typename Scalar>
struct BlockParams {
  BlockVariant variant = BlockVariant::ParallSS;
  Tensor<Scalar> ln1_g, ln1_b, ln2_g, ln2_b, ln3_g, ln3_b;
  MsaParams<Scalar> msa1, msa2;
  /// ParallSS fusion [2C, C] and bias.
  Tensor<Scalar> wcat, bcat;
  Tensor<Scalar> ffn_w1, ffn_b1, ffn_w2, ffn_b2;

  static BlockParams init(BlockVariant variant, const HeadConfig& heads, Index window_m, Index ffn_mult, Rng& rng);

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".ln1.g", ln1_g);
    fn(prefix + ".ln1.b", ln1_b);
    msa1.visit(prefix + ".msa1", fn);
    if (variant != BlockVariant::ParallSS) {
      fn(prefix + ".ln2.g", ln2_g);
      fn(prefix + ".ln2.b", ln2_b);
    }
    msa2.visit(prefix + ".msa2", fn);
    if (variant == BlockVariant::ParallSS) {
      fn(prefix + ".wcat", wcat);
      fn(prefix + ".bcat", bcat);
    }
    fn(prefix + ".ln3.g", ln3_g);
    fn(prefix + ".ln3.b", ln3_b);
    fn(prefix + ".ffn.w1", ffn_w1);
    fn(prefix + ".ffn.b1", ffn_b1);
    fn(prefix + ".ffn.w2", ffn_w2);
    fn(prefix + ".ffn.b2", ffn_b2);
  }
};

/// Linear -> GELU -> Linear -> GELU.
template <typename Scalar>
Tensor<Scalar> ffn(const Tensor<Scalar>& x, const BlockParams<Scalar>& p);

/// One S2 block on window tokens [n_windows, m*m, C]; output has the same shape.
template <typename Scalar>
Tensor<Scalar> block_forward(const Tensor<Scalar>& tokens, const BlockParams<Scalar>& p, const HeadConfig& heads,
                             Index window_m);

/// Truncated normal (sigma 0.02) tensor.
template <typename Scalar>
Tensor<Scalar> trunc_normal(Shape shape, Rng& rng, double sigma = 0.02);

}  // namespace s2t::attention
