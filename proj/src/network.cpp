#include "s2t/network.hpp"

#include "s2t/params.hpp"

namespace s2t::network {

void NetworkConfig::validate(bool needs_encode_tap) const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ContractError("network config: " + what);
  };
  require(stages >= 1, "K must be >= 1");
  require(blocks >= 1, "L must be >= 1");
  require(channels >= 1, "C must be >= 1");
  require(heads >= 1 && heads <= channels, "T must lie in [1, C]");
  require(window >= 1, "M must be >= 1");
  require(n_lambda >= 1, "n_lambda must be >= 1");
  require(ffn_mult >= 1, "ffn_mult must be >= 1");
  if (needs_encode_tap) require(k_me >= 1 && k_me < stages, "k_me must satisfy 1 <= k_me < K");
}

namespace {

using attention::trunc_normal;

template <typename Scalar>
Tensor<Scalar> zeros(Shape s) {
  return Tensor<Scalar>(std::move(s));
}

}  // namespace

template <typename Scalar>
ModelParams<Scalar> ModelParams<Scalar>::init(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate(false);
  Rng rng(seed, 0x4d4f44454cULL);
  const Index c = cfg.channels, nl = cfg.n_lambda;
  ModelParams p;
  p.extractor_w = trunc_normal<Scalar>({3, 3, nl, c}, rng);
  p.extractor_b = zeros<Scalar>({c});
  for (Index k = 0; k < cfg.stages; ++k) {
    StageParams<Scalar> s;
    for (Index b = 0; b < cfg.blocks; ++b) {
      s.blocks.push_back(attention::BlockParams<Scalar>::init(cfg.variant, cfg.head_config(), cfg.window,
                                                              cfg.ffn_mult, rng));
    }
    s.conv_w = zeros<Scalar>({3, 3, c, c});
    s.conv_b = zeros<Scalar>({c});
    p.stages.push_back(std::move(s));
  }
  p.head_w = trunc_normal<Scalar>({3, 3, c, nl}, rng);
  p.head_b = zeros<Scalar>({nl});
  p.encode_ln_g = Tensor<Scalar>(Shape{c}, Scalar(1));
  p.encode_ln_b = zeros<Scalar>({c});
  p.encode_w = trunc_normal<Scalar>({3, 3, c, nl}, rng);
  p.encode_b = zeros<Scalar>({nl});
  return p;
}

template <typename Scalar>
std::vector<NamedTensor<Scalar>> ModelParams<Scalar>::named() {
  std::vector<NamedTensor<Scalar>> out;
  visit([&](const std::string& name, Tensor<Scalar>& t) { out.push_back({name, t}); });
  return out;
}

template <typename Scalar>
std::vector<NamedTensor<Scalar>> ModelParams<Scalar>::named_without_encode_head() {
  std::vector<NamedTensor<Scalar>> out;
  visit([&](const std::string& name, Tensor<Scalar>& t) {
    if (name.rfind("encode.", 0) != 0) out.push_back({name, t});
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> stage_forward(const Tensor<Scalar>& z, const StageParams<Scalar>& p, const NetworkConfig& cfg,
                             Index stage_index, const FeatureTap<Scalar>& tap) {
  if (z.rank() != 3 || z.dim(2) != cfg.channels) {
    throw DimensionError("stage_forward: expected [H x W x " + std::to_string(cfg.channels) + "], got " +
                         shape_str(z.shape()));
  }
  const Index h = z.dim(0), w = z.dim(1);
  const auto heads = cfg.head_config();
  Tensor<Scalar> x = z;
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    const Index bi = static_cast<Index>(b);
    const attention::WindowGrid grid(h, w, cfg.window, attention::block_shift(bi, h, w, cfg.window, cfg.shift));
    x = grid.merge(attention::block_forward(grid.partition(x), p.blocks[b], heads, cfg.window));
    if (tap) tap(stage_index, bi, x);
  }
  Tensor<Scalar> out = z + conv2d_3x3(x, p.conv_w, p.conv_b);
  if (tap) tap(stage_index, static_cast<Index>(p.blocks.size()), out);
  return out;
}

template <typename Scalar>
Tensor<Scalar> encode_head(const Tensor<Scalar>& z, const ModelParams<Scalar>& p) {
  return conv2d_3x3(layer_norm(z, p.encode_ln_g, p.encode_ln_b), p.encode_w, p.encode_b);
}

template <typename Scalar>
ForwardResult<Scalar> full_forward(const Tensor<Scalar>& y_prime, const ModelParams<Scalar>& p,
                                   const NetworkConfig& cfg, bool with_encode, const FeatureTap<Scalar>& tap) {
  cfg.validate(with_encode);
  if (y_prime.rank() != 3 || y_prime.dim(2) != cfg.n_lambda) {
    throw DimensionError("full_forward: expected [H x W x " + std::to_string(cfg.n_lambda) + "] input, got " +
                         shape_str(y_prime.shape()));
  }
  if (static_cast<Index>(p.stages.size()) != cfg.stages) {
    throw ContractError("full_forward: parameters hold " + std::to_string(p.stages.size()) + " stages, config has " +
                        std::to_string(cfg.stages));
  }
  ForwardResult<Scalar> r;
  Tensor<Scalar> z = conv2d_3x3(y_prime, p.extractor_w, p.extractor_b);
  for (Index k = 0; k < cfg.stages; ++k) {
    z = stage_forward(z, p.stages[static_cast<std::size_t>(k)], cfg, k, tap);
    if (with_encode && k + 1 == cfg.k_me) r.encoded = encode_head(z, p);
  }
  r.recon = conv2d_3x3(z, p.head_w, p.head_b);
  return r;
}

template <typename Scalar>
Index param_count(ModelParams<Scalar>& p) {
  Index n = 0;
  p.visit([&](const std::string&, Tensor<Scalar>& t) { n += t.numel(); });
  return n;
}

#define S2T_INSTANTIATE_NETWORK(S)                                                                       \
  template struct ModelParams<S>;                                                                        \
  template Tensor<S> stage_forward<S>(const Tensor<S>&, const StageParams<S>&, const NetworkConfig&, Index, \
                                      const FeatureTap<S>&);                                             \
  template Tensor<S> encode_head<S>(const Tensor<S>&, const ModelParams<S>&);                            \
  template ForwardResult<S> full_forward<S>(const Tensor<S>&, const ModelParams<S>&, const NetworkConfig&, bool, \
                                            const FeatureTap<S>&);                                       \
  template Index param_count<S>(ModelParams<S>&);

S2T_INSTANTIATE_NETWORK(float)
S2T_INSTANTIATE_NETWORK(double)

}  // namespace s2t::network
