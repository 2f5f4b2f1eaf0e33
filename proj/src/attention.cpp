#include "s2t/attention.hpp"

#include <cmath>

namespace s2t::attention {

BlockVariant parse_variant(const std::string& name) {
  if (name == "SpaSpa") return BlockVariant::SpaSpa;
  if (name == "SpeSpe") return BlockVariant::SpeSpe;
  if (name == "SequnSS") return BlockVariant::SequnSS;
  if (name == "ParallSS") return BlockVariant::ParallSS;
  throw ContractError("unknown block variant '" + name + "' (expected SpaSpa, SpeSpe, SequnSS or ParallSS)");
}

std::string variant_name(BlockVariant v) {
  switch (v) {
    case BlockVariant::SpaSpa: return "SpaSpa";
    case BlockVariant::SpeSpe: return "SpeSpe";
    case BlockVariant::SequnSS: return "SequnSS";
    case BlockVariant::ParallSS: return "ParallSS";
  }
  throw ContractError("unknown block variant");
}

namespace {

// Floor on the learnable attention scale so a collapsed beta cannot divide by zero.
constexpr double kMinBeta = 1e-4;

Index round_up(Index v, Index m) { return (v + m - 1) / m * m; }

Index wrap(Index v, Index n) { return ((v % n) + n) % n; }

// Mirror index without repeating the edge sample.
Index reflect(Index i, Index n) {
  if (n == 1) return 0;
  const Index period = 2 * (n - 1);
  i = wrap(i, period);
  return i < n ? i : period - i;
}

}  // namespace

WindowGrid::WindowGrid(Index height, Index width, Index window_m, Index shift)
    : h_(height), w_(width), m_(window_m), shift_(shift) {
  if (h_ < 1 || w_ < 1 || m_ < 1) throw DimensionError("WindowGrid: extents and window must be positive");
  if (shift_ < 0 || shift_ >= m_) throw ContractError("WindowGrid: shift must lie in [0, m)");
  hp_ = round_up(h_, m_);
  wp_ = round_up(w_, m_);
}

Index WindowGrid::slot(Index y, Index x) const {
  const Index ry = wrap(y - shift_, hp_), rx = wrap(x - shift_, wp_);
  const Index win = (ry / m_) * windows_x() + rx / m_;
  return win * m_ * m_ + (ry % m_) * m_ + rx % m_;
}

template <typename Scalar>
Tensor<Scalar> WindowGrid::partition(const Tensor<Scalar>& x) const {
  if (x.rank() != 3 || x.dim(0) != h_ || x.dim(1) != w_) {
    throw DimensionError("WindowGrid::partition: expected [" + std::to_string(h_) + "x" + std::to_string(w_) +
                         "xC], got " + shape_str(x.shape()));
  }
  const Index c = x.dim(2);
  std::vector<std::uint32_t> idx(static_cast<std::size_t>(hp_ * wp_ * c));
  for (Index py = 0; py < hp_; ++py)
    for (Index px = 0; px < wp_; ++px) {
      const Index src = (reflect(py, h_) * w_ + reflect(px, w_)) * c;
      const Index dst = slot(py, px) * c;
      for (Index k = 0; k < c; ++k) idx[static_cast<std::size_t>(dst + k)] = static_cast<std::uint32_t>(src + k);
    }
  return gather(x, make_index_map(std::move(idx)), Shape{n_windows(), tokens(), c});
}

template <typename Scalar>
Tensor<Scalar> WindowGrid::merge(const Tensor<Scalar>& t) const {
  if (t.rank() != 3 || t.dim(0) != n_windows() || t.dim(1) != tokens()) {
    throw DimensionError("WindowGrid::merge: expected [" + std::to_string(n_windows()) + "x" +
                         std::to_string(tokens()) + "xC], got " + shape_str(t.shape()));
  }
  const Index c = t.dim(2);
  std::vector<std::uint32_t> idx(static_cast<std::size_t>(h_ * w_ * c));
  for (Index y = 0; y < h_; ++y)
    for (Index x = 0; x < w_; ++x) {
      const Index src = slot(y, x) * c;
      const Index dst = (y * w_ + x) * c;
      for (Index k = 0; k < c; ++k) idx[static_cast<std::size_t>(dst + k)] = static_cast<std::uint32_t>(src + k);
    }
  return gather(t, make_index_map(std::move(idx)), Shape{h_, w_, c});
}

Index block_shift(Index block_index, Index height, Index width, Index window_m, bool enabled) {
  if (!enabled || block_index % 2 == 0 || height <= window_m || width <= window_m) return 0;
  return window_m / 2;
}

void HeadConfig::validate() const {
  if (heads < 1 || channels < 1 || head_dim() < 1) {
    throw ContractError("HeadConfig: need heads >= 1 and channels >= heads (got C=" + std::to_string(channels) +
                        ", T=" + std::to_string(heads) + ")");
  }
}

template <typename Scalar>
Tensor<Scalar> trunc_normal(Shape shape, Rng& rng, double sigma) {
  Tensor<Scalar> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<Scalar>(rng.truncated_normal(sigma));
  return t;
}

template <typename Scalar>
MsaParams<Scalar> MsaParams<Scalar>::init(MsaKind kind, const HeadConfig& heads, Index window_m, Rng& rng) {
  heads.validate();
  const Index c = heads.channels, t = heads.heads, ch = heads.head_dim();
  MsaParams p;
  p.kind = kind;
  p.wq = trunc_normal<Scalar>({c, c}, rng);
  p.bq = Tensor<Scalar>(Shape{c});
  p.wk = trunc_normal<Scalar>({c, c}, rng);
  p.bk = Tensor<Scalar>(Shape{c});
  p.wv = trunc_normal<Scalar>({c, c}, rng);
  p.bv = Tensor<Scalar>(Shape{c});
  p.wo = trunc_normal<Scalar>({c, c}, rng);
  p.bo = Tensor<Scalar>(Shape{c});
  p.beta = Tensor<Scalar>(Shape{t}, static_cast<Scalar>(std::sqrt(static_cast<double>(ch))));
  if (kind == MsaKind::Spatial) {
    const Index r = 2 * window_m - 1;
    p.pos_bias = trunc_normal<Scalar>({t, r * r}, rng);
  } else {
    p.pos_bias = trunc_normal<Scalar>({t, ch, ch}, rng);
  }
  return p;
}

template <typename Scalar>
Qkv<Scalar> qkv_project(const Tensor<Scalar>& z, const MsaParams<Scalar>& p) {
  return {linear(z, p.wq, p.bq), linear(z, p.wk, p.bk), linear(z, p.wv, p.bv)};
}

namespace {

void check_qkv(const char* op, const Shape& q, const Shape& k, const Shape& v) {
  if (q.size() != 3 || q != k || q != v) {
    throw DimensionError(std::string(op) + ": q, k, v must share a rank-3 shape, got " + shape_str(q) + ", " +
                         shape_str(k) + ", " + shape_str(v));
  }
}

// [batch, a, b] -> [batch, b, a].
IndexMap transpose_map(Index batch, Index a, Index b) {
  std::vector<std::uint32_t> idx(static_cast<std::size_t>(batch * a * b));
  for (Index n = 0; n < batch; ++n)
    for (Index j = 0; j < b; ++j)
      for (Index i = 0; i < a; ++i)
        idx[static_cast<std::size_t>((n * b + j) * a + i)] = static_cast<std::uint32_t>((n * a + i) * b + j);
  return make_index_map(std::move(idx));
}

template <typename Scalar>
Tensor<Scalar> transpose_last2(const Tensor<Scalar>& x) {
  const Index batch = x.dim(0), a = x.dim(1), b = x.dim(2);
  return gather(x, transpose_map(batch, a, b), Shape{batch, b, a});
}

// Head split [nwin, n, C] -> [T * nwin, n, c_h], head-major.
IndexMap split_heads_map(Index nwin, Index n, Index c, Index t, Index ch) {
  std::vector<std::uint32_t> idx(static_cast<std::size_t>(t * nwin * n * ch));
  std::size_t o = 0;
  for (Index h = 0; h < t; ++h)
    for (Index w = 0; w < nwin; ++w)
      for (Index p = 0; p < n; ++p)
        for (Index j = 0; j < ch; ++j) idx[o++] = static_cast<std::uint32_t>((w * n + p) * c + h * ch + j);
  return make_index_map(std::move(idx));
}

// Inverse of the split, producing [nwin, n, T * c_h].
IndexMap merge_heads_map(Index nwin, Index n, Index t, Index ch) {
  std::vector<std::uint32_t> idx(static_cast<std::size_t>(t * nwin * n * ch));
  std::size_t o = 0;
  for (Index w = 0; w < nwin; ++w)
    for (Index p = 0; p < n; ++p)
      for (Index h = 0; h < t; ++h)
        for (Index j = 0; j < ch; ++j) idx[o++] = static_cast<std::uint32_t>(((h * nwin + w) * n + p) * ch + j);
  return make_index_map(std::move(idx));
}

IndexMap tail_channels_map(Index rows, Index c, Index from) {
  const Index r = c - from;
  std::vector<std::uint32_t> idx(static_cast<std::size_t>(rows * r));
  std::size_t o = 0;
  for (Index i = 0; i < rows; ++i)
    for (Index j = from; j < c; ++j) idx[o++] = static_cast<std::uint32_t>(i * c + j);
  return make_index_map(std::move(idx));
}

// Table [T, (2m-1)^2] -> bias matrix [T, m^2, m^2] indexed by relative offset.
IndexMap relative_position_map(Index t, Index m) {
  const Index n = m * m, r = 2 * m - 1;
  std::vector<std::uint32_t> idx(static_cast<std::size_t>(t * n * n));
  std::size_t o = 0;
  for (Index h = 0; h < t; ++h)
    for (Index a = 0; a < n; ++a)
      for (Index b = 0; b < n; ++b) {
        const Index dy = a / m - b / m + m - 1, dx = a % m - b % m + m - 1;
        idx[o++] = static_cast<std::uint32_t>(h * r * r + dy * r + dx);
      }
  return make_index_map(std::move(idx));
}

}  // namespace

template <typename Scalar>
AttentionResult<Scalar> spa_attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                                      const Tensor<Scalar>& scale, const Tensor<Scalar>& bias) {
  check_qkv("spa_attention", q.shape(), k.shape(), v.shape());
  const Index groups = scale.numel();
  Tensor<Scalar> s = mul_broadcast(batched_matmul(k, q, false, true), scale, groups);
  if (bias.defined()) s = add_broadcast(s, bias, groups);
  Tensor<Scalar> a = softmax_last(s);
  return {batched_matmul(a, v), detach(a)};
}

template <typename Scalar>
AttentionResult<Scalar> spe_attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                                      const Tensor<Scalar>& scale, const Tensor<Scalar>& bias) {
  check_qkv("spe_attention", q.shape(), k.shape(), v.shape());
  const Index groups = scale.numel();
  // Work with the transpose so the normalised axis is the last one:
  // st[j, i] = (K^T Q)[i, j], softmax over i, output V A = V st^T.
  Tensor<Scalar> st = mul_broadcast(batched_matmul(q, k, true, false), scale, groups);
  if (bias.defined()) st = add_broadcast(st, transpose_last2(bias), groups);
  Tensor<Scalar> at = softmax_last(st);
  Tensor<Scalar> out = batched_matmul(v, at, false, true);
  NoGradGuard guard;
  return {out, transpose_last2(at)};
}

template <typename Scalar>
AttentionResult<Scalar> msa_forward(const Tensor<Scalar>& tokens, const MsaParams<Scalar>& p, const HeadConfig& heads,
                                    Index window_m) {
  heads.validate();
  if (tokens.rank() != 3 || tokens.dim(2) != heads.channels) {
    throw DimensionError("msa_forward: expected [windows x tokens x " + std::to_string(heads.channels) + "], got " +
                         shape_str(tokens.shape()));
  }
  const Index nwin = tokens.dim(0), n = tokens.dim(1), c = heads.channels, t = heads.heads, ch = heads.head_dim();
  const Qkv<Scalar> qkv = qkv_project(tokens, p);
  const IndexMap split = split_heads_map(nwin, n, c, t, ch);
  const Shape head_shape{t * nwin, n, ch};
  const Tensor<Scalar> qh = gather(qkv.q, split, head_shape);
  const Tensor<Scalar> kh = gather(qkv.k, split, head_shape);
  const Tensor<Scalar> vh = gather(qkv.v, split, head_shape);
  const Tensor<Scalar> scale = reciprocal(clamp_min(p.beta, Scalar(kMinBeta)));

  AttentionResult<Scalar> r;
  if (p.kind == MsaKind::Spatial) {
    if (n != window_m * window_m) {
      throw DimensionError("msa_forward: " + std::to_string(n) + " tokens do not fill a " + std::to_string(window_m) +
                           "x" + std::to_string(window_m) + " window");
    }
    const Tensor<Scalar> bias = gather(p.pos_bias, relative_position_map(t, window_m), Shape{t, n, n});
    r = spa_attention(qh, kh, vh, scale, bias);
  } else {
    r = spe_attention(qh, kh, vh, scale, p.pos_bias);
  }

  Tensor<Scalar> merged = gather(r.output, merge_heads_map(nwin, n, t, ch), Shape{nwin, n, t * ch});
  if (heads.remainder() > 0) {
    merged = concat_last(merged, gather(qkv.v, tail_channels_map(nwin * n, c, t * ch), Shape{nwin, n, heads.remainder()}));
  }
  r.output = linear(merged, p.wo, p.bo);
  return r;
}

template <typename Scalar>
BlockParams<Scalar> BlockParams<Scalar>::init(BlockVariant variant, const HeadConfig& heads, Index window_m,
                                              Index ffn_mult, Rng& rng) {
  heads.validate();
  if (ffn_mult < 1) throw ContractError("BlockParams: ffn_mult must be >= 1");
  const Index c = heads.channels, hidden = ffn_mult * c;
  MsaKind first = MsaKind::Spectral, second = MsaKind::Spatial;
  if (variant == BlockVariant::SpaSpa) first = MsaKind::Spatial;
  if (variant == BlockVariant::SpeSpe) second = MsaKind::Spectral;

  BlockParams p;
  p.variant = variant;
  p.ln1_g = Tensor<Scalar>(Shape{c}, Scalar(1));
  p.ln1_b = Tensor<Scalar>(Shape{c});
  p.msa1 = MsaParams<Scalar>::init(first, heads, window_m, rng);
  if (variant != BlockVariant::ParallSS) {
    p.ln2_g = Tensor<Scalar>(Shape{c}, Scalar(1));
    p.ln2_b = Tensor<Scalar>(Shape{c});
  }
  p.msa2 = MsaParams<Scalar>::init(second, heads, window_m, rng);
  if (variant == BlockVariant::ParallSS) {
    p.wcat = trunc_normal<Scalar>({2 * c, c}, rng);
    p.bcat = Tensor<Scalar>(Shape{c});
  }
  p.ln3_g = Tensor<Scalar>(Shape{c}, Scalar(1));
  p.ln3_b = Tensor<Scalar>(Shape{c});
  p.ffn_w1 = trunc_normal<Scalar>({c, hidden}, rng);
  p.ffn_b1 = Tensor<Scalar>(Shape{hidden});
  p.ffn_w2 = trunc_normal<Scalar>({hidden, c}, rng);
  p.ffn_b2 = Tensor<Scalar>(Shape{c});
  return p;
}

template <typename Scalar>
Tensor<Scalar> ffn(const Tensor<Scalar>& x, const BlockParams<Scalar>& p) {
  return gelu(linear(gelu(linear(x, p.ffn_w1, p.ffn_b1)), p.ffn_w2, p.ffn_b2));
}

template <typename Scalar>
Tensor<Scalar> block_forward(const Tensor<Scalar>& z, const BlockParams<Scalar>& p, const HeadConfig& heads,
                             Index window_m) {
  auto msa = [&](const Tensor<Scalar>& x, const MsaParams<Scalar>& mp) {
    return msa_forward(x, mp, heads, window_m).output;
  };
  Tensor<Scalar> x;
  if (p.variant == BlockVariant::ParallSS) {
    const Tensor<Scalar> n1 = layer_norm(z, p.ln1_g, p.ln1_b);
    const Tensor<Scalar> cat = concat_last(msa(n1, p.msa1), msa(n1, p.msa2));
    x = linear(cat, p.wcat, p.bcat) + z;
  } else {
    const Tensor<Scalar> x1 = msa(layer_norm(z, p.ln1_g, p.ln1_b), p.msa1) + z;
    x = msa(layer_norm(x1, p.ln2_g, p.ln2_b), p.msa2) + x1;
  }
  return ffn(layer_norm(x, p.ln3_g, p.ln3_b), p) + x;
}

#define S2T_INSTANTIATE_ATTENTION(S)                                                                          \
  template Tensor<S> WindowGrid::partition<S>(const Tensor<S>&) const;                                        \
  template Tensor<S> WindowGrid::merge<S>(const Tensor<S>&) const;                                            \
  template Tensor<S> trunc_normal<S>(Shape, Rng&, double);                                                    \
  template struct MsaParams<S>;                                                                               \
  template struct BlockParams<S>;                                                                             \
  template Qkv<S> qkv_project<S>(const Tensor<S>&, const MsaParams<S>&);                                      \
  template AttentionResult<S> spa_attention<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,          \
                                               const Tensor<S>&, const Tensor<S>&);                            \
  template AttentionResult<S> spe_attention<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,          \
                                               const Tensor<S>&, const Tensor<S>&);                            \
  template AttentionResult<S> msa_forward<S>(const Tensor<S>&, const MsaParams<S>&, const HeadConfig&, Index); \
  template Tensor<S> ffn<S>(const Tensor<S>&, const BlockParams<S>&);                                         \
  template Tensor<S> block_forward<S>(const Tensor<S>&, const BlockParams<S>&, const HeadConfig&, Index);

S2T_INSTANTIATE_ATTENTION(float)
S2T_INSTANTIATE_ATTENTION(double)

}  // namespace s2t::attention
