#include "s2t/gradsuite.hpp"

#include "s2t/attention.hpp"
#include "s2t/gradcheck.hpp"
#include "s2t/network.hpp"
#include "s2t/objective.hpp"
#include "s2t/params.hpp"

#include <type_traits>

namespace s2t::gradsuite {

namespace {

using attention::BlockParams;
using attention::BlockVariant;
using attention::HeadConfig;
using attention::MsaKind;
using attention::MsaParams;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

struct Input {
  std::string name;
  Shape shape;
  double lo = -1, hi = 1;
};

class Runner {
 public:
  explicit Runner(const SuiteOptions& o) : opts_(o) {}

  std::vector<CheckResult> results;

  Index draw(Index lo, Index hi) { return lo + static_cast<Index>(shapes_.below(static_cast<std::uint64_t>(hi - lo + 1))); }

  // f maps a list of input tensors to an output tensor; the loss contracts the
  // output against fixed random weights.
  template <typename F>
  void op(const std::string& name, const std::vector<Input>& inputs, F f, GradCheckOptions base = {}) {
    Rng rng(opts_.seed, fnv1a(name));
    std::vector<Tensor<double>> values;
    for (const auto& in : inputs) {
      Tensor<double> t(in.shape);
      for (auto& v : t.values()) v = static_cast<double>(static_cast<float>(rng.uniform(in.lo, in.hi)));
      values.push_back(t);
    }
    auto named = [&]<typename S>(std::vector<Tensor<S>>& ts) {
      std::vector<NamedTensor<S>> out;
      for (std::size_t i = 0; i < ts.size(); ++i) out.push_back({inputs[i].name, ts[i]});
      return out;
    };
    const std::uint64_t probe_seed = opts_.seed ^ fnv1a(name + ".probe");
    auto loss = [&]<typename S>(std::vector<Tensor<S>>& ts) {
      return LossFn<S>([&ts, f, probe_seed]() {
        const Tensor<S> out = f(ts);
        Rng pr(probe_seed);
        Tensor<S> w(out.shape());
        for (auto& v : w.values()) v = static_cast<S>(pr.uniform(-1, 1));
        return sum(mul(out, w));
      });
    };

    std::vector<Tensor<double>> p64;
    for (const auto& t : values) p64.push_back(t.clone());
    auto n64 = named(p64);
    GradCheckOptions d = base;
    d.tol = opts_.tol_double;
    record(name, "double", grad_check<double>(loss(p64), n64, d));

    std::vector<Tensor<float>> s32;
    std::vector<Tensor<double>> s64;
    for (const auto& t : values) {
      s32.push_back(cast<float>(t));
      s64.push_back(t.clone());
    }
    auto m32 = named(s32);
    auto m64 = named(s64);
    GradCheckOptions s = base;
    s.tol = opts_.tol_single;
    record(name, "single", grad_check_shadow(loss(s32), m32, loss(s64), m64, s));
  }

  // Parameterised module: `build` creates params for a scalar type from a
  // seed, `f` evaluates a scalar loss.
  template <typename Build, typename F>
  void module(const std::string& name, Build build, F f, GradCheckOptions base = {}) {
    const std::uint64_t seed = opts_.seed ^ fnv1a(name);
    {
      auto p = build.template operator()<double>(seed);
      auto named = p.named();
      GradCheckOptions d = base;
      d.tol = opts_.tol_double;
      record(name, "double", grad_check<double>([&] { return f(p); }, named, d));
    }
    auto p32 = build.template operator()<float>(seed);
    auto p64 = build.template operator()<double>(seed);
    auto n32 = p32.named();
    auto n64 = p64.named();
    assign_cast(n64, n32);
    GradCheckOptions s = base;
    s.tol = opts_.tol_single;
    record(name, "single", grad_check_shadow([&] { return f(p32); }, n32, [&] { return f(p64); }, n64, s));
  }

 private:
  void record(const std::string& name, const std::string& path, const GradCheckReport& r) {
    results.push_back({name, path, r.worst(), r.tol, r.passed(), r.failures()});
  }

  SuiteOptions opts_;
  Rng shapes_{opts_.seed, 0x5348415045ULL};
};

// O(1) parameter values so gradients sit well above rounding noise; gains and
// attention scales stay positive.
template <typename Scalar, typename Visit>
void randomize(Visit visit, std::uint64_t seed) {
  Rng rng(seed, 77);
  visit([&](const std::string& name, Tensor<Scalar>& t) {
    const bool positive = name.ends_with(".beta") || name.ends_with(".g");
    for (auto& v : t.values()) {
      v = static_cast<Scalar>(static_cast<float>(positive ? rng.uniform(0.8, 1.6) : rng.uniform(-0.5, 0.5)));
    }
  });
}

// A parameter bundle plus extra inputs, exposed through named().
template <typename Scalar, typename P>
struct Bundle {
  P params;
  std::vector<NamedTensor<Scalar>> extra;

  std::vector<NamedTensor<Scalar>> named() {
    auto out = collect<Scalar>(params, "p");
    out.insert(out.end(), extra.begin(), extra.end());
    return out;
  }
};

template <typename Scalar>
Tensor<Scalar> input_tensor(Shape shape, std::uint64_t seed, double lo = -1, double hi = 1) {
  Rng rng(seed, 0x494e505554ULL);
  Tensor<Scalar> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<Scalar>(static_cast<float>(rng.uniform(lo, hi)));
  return t;
}

template <typename Scalar>
Tensor<Scalar> probe_loss(const Tensor<Scalar>& out, std::uint64_t seed) {
  Rng rng(seed, 0x50524f4245ULL);
  Tensor<Scalar> w(out.shape());
  for (auto& v : w.values()) v = static_cast<Scalar>(rng.uniform(-1, 1));
  return sum(mul(out, w));
}

template <typename Scalar>
struct ModelHolder {
  network::ModelParams<Scalar> params;
  Tensor<Scalar> input;
  std::vector<NamedTensor<Scalar>> named() {
    auto out = params.named();
    out.push_back({"input", input});
    return out;
  }
};

void ops(Runner& r) {
  const Index h = r.draw(2, 6), w = r.draw(2, 6), c = r.draw(2, 5);
  const Shape s{h, w, c};
  auto rev = [](Index n) {
    std::vector<std::uint32_t> idx(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::uint32_t>(idx.size() - 1 - i);
    return make_index_map(idx);
  };
  const IndexMap perm = rev(h * w * c);

  r.op("add", {{"a", s}, {"b", s}}, [](auto& x) { return add(x[0], x[1]); });
  r.op("sub", {{"a", s}, {"b", s}}, [](auto& x) { return sub(x[0], x[1]); });
  r.op("mul", {{"a", s}, {"b", s}}, [](auto& x) { return mul(x[0], x[1]); });
  r.op("scale", {{"a", s}}, [](auto& x) { return scale(x[0], std::remove_cvref_t<decltype(x[0][0])>(-2.5)); });
  r.op("abs", {{"a", s, 0.2, 1.0}, {"b", s, -1.0, -0.2}}, [](auto& x) { return concat_last(abs(x[0]), abs(x[1])); });
  r.op("reciprocal", {{"a", s, 0.5, 2.0}}, [](auto& x) { return reciprocal(x[0]); });
  r.op("clamp_min", {{"a", s, 0.3, 1.0}, {"b", s, -1.0, -0.3}}, [](auto& x) {
    using S = std::remove_cvref_t<decltype(x[0][0])>;
    return concat_last(clamp_min(x[0], S(0)), clamp_min(x[1], S(0)));
  });
  r.op("sum", {{"a", s}}, [](auto& x) { return sum(x[0]); });
  r.op("mean", {{"a", s}}, [](auto& x) { return mean(x[0]); });
  r.op("reshape", {{"a", s}}, [h, w, c](auto& x) { return reshape(x[0], {h * w, c}); });
  r.op("gather", {{"a", s}}, [perm, h, w, c](auto& x) { return gather(x[0], perm, {c, h * w}); });
  r.op("concat_last", {{"a", s}, {"b", {h, w, 1}}}, [](auto& x) { return concat_last(x[0], x[1]); });
  r.op("add_broadcast", {{"a", s}, {"b", {c}}}, [](auto& x) { return add_broadcast(x[0], x[1]); });
  r.op("add_broadcast_groups", {{"a", {2, h * w, c}}, {"b", {2, c}}},
       [](auto& x) { return add_broadcast(x[0], x[1], 2); });
  r.op("mul_broadcast", {{"a", s}, {"b", {c}}}, [](auto& x) { return mul_broadcast(x[0], x[1]); });

  const Index m = r.draw(2, 5), k = r.draw(2, 5), n = r.draw(2, 5), g = r.draw(1, 3);
  r.op("matmul", {{"a", {m, k}}, {"b", {k, n}}}, [](auto& x) { return matmul(x[0], x[1]); });
  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb) {
      const Shape sa = ta ? Shape{g, k, m} : Shape{g, m, k};
      const Shape sb = tb ? Shape{g, n, k} : Shape{g, k, n};
      r.op("batched_matmul_t" + std::to_string(ta) + std::to_string(tb), {{"a", sa}, {"b", sb}},
           [ta, tb](auto& x) { return batched_matmul(x[0], x[1], ta != 0, tb != 0); });
    }
  r.op("linear", {{"x", {h, w, k}}, {"w", {k, n}}, {"b", {n}}}, [](auto& x) { return linear(x[0], x[1], x[2]); });
  r.op("softmax_last", {{"a", {g, m, n}, -2, 2}}, [](auto& x) { return softmax_last(x[0]); });
  r.op("layer_norm", {{"x", s}, {"g", {c}, 0.5, 1.5}, {"b", {c}}},
       [](auto& x) { return layer_norm(x[0], x[1], x[2]); });
  r.op("gelu", {{"a", s, -3, 3}}, [](auto& x) { return gelu(x[0]); });
  r.op("conv2d_3x3", {{"x", s}, {"k", {3, 3, c, n}}, {"b", {n}}}, [](auto& x) { return conv2d_3x3(x[0], x[1], x[2]); });
  r.op("block_mean", {{"a", {h + 2, w + 1, c}}}, [](auto& x) { return block_mean(x[0], 2); });
}

void attention_primitives(Runner& r) {
  const Index g = r.draw(1, 3), n = r.draw(3, 6), ch = r.draw(2, 4);
  r.op("spa_attention", {{"q", {g, n, ch}}, {"k", {g, n, ch}}, {"v", {g, n, ch}}, {"scale", {g}, 0.5, 1.5}, {"bias", {g, n, n}}},
       [](auto& x) { return attention::spa_attention(x[0], x[1], x[2], x[3], x[4]).output; });
  r.op("spe_attention", {{"q", {g, n, ch}}, {"k", {g, n, ch}}, {"v", {g, n, ch}}, {"scale", {g}, 0.5, 1.5}, {"bias", {g, ch, ch}}},
       [](auto& x) { return attention::spe_attention(x[0], x[1], x[2], x[3], x[4]).output; });

  const HeadConfig heads{6, 2};
  const Index wm = 2;
  for (MsaKind kind : {MsaKind::Spatial, MsaKind::Spectral}) {
    const std::string name = kind == MsaKind::Spatial ? "msa_spatial" : "msa_spectral";
    auto build = [&]<typename S>(std::uint64_t seed) {
      Rng rng(seed);
      Bundle<S, MsaParams<S>> b{MsaParams<S>::init(kind, heads, wm, rng), {}};
      randomize<S>([&](auto fn) { b.params.visit("p", fn); }, seed);
      b.extra.push_back({"tokens", input_tensor<S>({2, wm * wm, heads.channels}, seed)});
      return b;
    };
    r.module(name, build, [&](auto& b) {
      return probe_loss(attention::msa_forward(b.extra[0].tensor, b.params, heads, wm).output, 5);
    });
  }
}

void blocks(Runner& r) {
  const HeadConfig heads{8, 2};
  const Index m = 4, h = 8, w = 8;
  for (BlockVariant v : {BlockVariant::SpaSpa, BlockVariant::SpeSpe, BlockVariant::SequnSS, BlockVariant::ParallSS}) {
    for (Index shift : {Index(0), Index(2)}) {
      auto build = [&]<typename S>(std::uint64_t seed) {
        Rng rng(seed);
        Bundle<S, BlockParams<S>> b{BlockParams<S>::init(v, heads, m, 2, rng), {}};
        randomize<S>([&](auto fn) { b.params.visit("p", fn); }, seed);
        b.extra.push_back({"input", input_tensor<S>({h, w, heads.channels}, seed)});
        return b;
      };
      const attention::WindowGrid grid(h, w, m, shift);
      r.module("block_" + attention::variant_name(v) + "_shift" + std::to_string(shift), build, [&](auto& b) {
        return probe_loss(grid.merge(attention::block_forward(grid.partition(b.extra[0].tensor), b.params, heads, m)), 6);
      });
    }
  }
}

network::NetworkConfig toy_network() {
  network::NetworkConfig cfg;
  cfg.stages = 2;
  cfg.blocks = 1;
  cfg.channels = 4;
  cfg.heads = 2;
  cfg.window = 4;
  cfg.n_lambda = 2;
  cfg.k_me = 1;
  cfg.ffn_mult = 2;
  return cfg;
}

template <typename S>
ModelHolder<S> build_model(const network::NetworkConfig& cfg, std::uint64_t seed, Index input_channels) {
  ModelHolder<S> m{network::ModelParams<S>::init(cfg, seed), input_tensor<S>({8, 8, input_channels}, seed, 0, 1)};
  randomize<S>([&](auto fn) { m.params.visit(fn); }, seed);
  return m;
}

void model(Runner& r) {
  const network::NetworkConfig cfg = toy_network();
  GradCheckOptions sub;
  sub.max_entries = 6;

  r.module(
      "stage",
      [&]<typename S>(std::uint64_t seed) { return build_model<S>(cfg, seed, cfg.channels); },
      [&](auto& m) { return probe_loss(network::stage_forward(m.input, m.params.stages[0], cfg), 7); }, sub);

  const optics::HyperCube gt(input_tensor<float>({8, 8, cfg.n_lambda}, 91, 0, 1));
  const optics::CodedMask mask(input_tensor<float>({8, 8}, 92, 0, 1));
  objective::LossConfig lc;
  lc.alpha = 1.0;
  lc.phase = objective::Phase::MA;
  for (objective::Reduction red : {objective::Reduction::Global, objective::Reduction::Patchwise}) {
    lc.reduction = red;
    lc.patch = 3;
    const std::string name = red == objective::Reduction::Global ? "model_ma_global" : "model_ma_patchwise";
    r.module(
        name, [&]<typename S>(std::uint64_t seed) { return build_model<S>(cfg, seed, cfg.n_lambda); },
        [&](auto& m) {
          const auto fr = network::full_forward(m.input, m.params, cfg);
          return objective::ma_loss(fr.encoded, gt, mask, fr.recon, lc).loss;
        },
        sub);
  }
}

}  // namespace

std::vector<CheckResult> run(const SuiteOptions& opts) {
  Runner r(opts);
  ops(r);
  attention_primitives(r);
  blocks(r);
  model(r);
  return r.results;
}

bool all_passed(const std::vector<CheckResult>& results) {
  for (const auto& r : results) {
    if (!r.passed) return false;
  }
  return !results.empty();
}

}  // namespace s2t::gradsuite
