#include <cmath>

#include "doctest.h"
#include "s2t/gradcheck.hpp"
#include "s2t/network.hpp"
#include "s2t/objective.hpp"
#include "test_util.hpp"

using namespace s2t;
using namespace s2t::objective;
using optics::CodedMask;
using optics::HyperCube;

namespace {

HyperCube filled(Index h, Index w, Index n, float v) { return HyperCube(Tensor<float>(Shape{h, w, n}, v)); }
CodedMask ones_mask(Index h, Index w) { return CodedMask(Tensor<float>(Shape{h, w}, 1.0f)); }

Tensor<float> shifted(const Tensor<float>& t, float d) {
  Tensor<float> out(t.shape());
  for (Index i = 0; i < t.numel(); ++i) out[i] = t[i] + d;
  return out;
}

LossConfig config(double alpha, Phase phase) {
  LossConfig c;
  c.alpha = alpha;
  c.phase = phase;
  return c;
}

}  // namespace

TEST_CASE("recon_loss values") {
  Rng rng(5);
  HyperCube gt(s2t::testing::random_tensor<float>({4, 6, 3}, rng, 0, 1));
  CHECK(recon_loss(gt.data, gt.data).item() == 0.0f);
  CHECK(recon_loss(shifted(gt.data, 0.1f), gt.data).item() == doctest::Approx(0.1).epsilon(1e-5));

  Tensor<float> pred = s2t::testing::random_tensor<float>({4, 6, 3}, rng, 0, 1);
  double brute = 0;
  for (Index i = 0; i < pred.numel(); ++i) brute += std::abs(static_cast<double>(pred[i]) - gt.data[i]);
  brute /= static_cast<double>(pred.numel());
  CHECK(recon_loss(pred, gt.data).item() == doctest::Approx(brute).epsilon(1e-6));

  CHECK_THROWS_AS(recon_loss(pred, Tensor<float>(Shape{4, 6, 2})), DimensionError);
}

TEST_CASE("me_loss substitution") {
  const HyperCube gt = filled(2, 3, 2, 0.0f);
  const CodedMask mask = ones_mask(2, 3);
  const Tensor<float> enc(Shape{2, 3, 2}, 2.0f);
  const Tensor<float> pred(Shape{2, 3, 2}, 1.0f);
  const auto b = me_loss(enc, gt, mask, pred, config(1.5, Phase::ME));
  CHECK(b.me == doctest::Approx(2.0));
  CHECK(b.recon == doctest::Approx(1.0));
  CHECK(b.total == doctest::Approx(4.0));
  CHECK(b.loss.item() == doctest::Approx(4.0));

  const auto zero = me_loss(encoded_target<float>(gt, mask), gt, mask, gt.data, config(1.5, Phase::ME));
  CHECK(zero.total == 0.0);
}

TEST_CASE("ME target uses the masked cube") {
  Rng rng(2);
  HyperCube gt(s2t::testing::random_tensor<float>({3, 3, 2}, rng, 0.2, 1));
  CodedMask mask(Tensor<float>(Shape{3, 3}, {1, 0, 1, 0, 1, 0, 1, 0, 1}));
  // Predicting the unmasked cube leaves a residual exactly where the mask is zero.
  const auto b = me_loss(gt.data, gt, mask, gt.data, config(1.0, Phase::ME));
  double expect = 0;
  for (Index y = 0; y < 3; ++y)
    for (Index x = 0; x < 3; ++x)
      for (Index c = 0; c < 2; ++c) expect += mask.at(y, x) == 0.0f ? gt.at(y, x, c) : 0.0;
  CHECK(b.me == doctest::Approx(expect / 18.0).epsilon(1e-6));
}

TEST_CASE("me_loss is linear in each term") {
  Rng rng(9);
  HyperCube gt(s2t::testing::random_tensor<float>({4, 4, 2}, rng, 0, 1));
  const CodedMask mask = ones_mask(4, 4);
  const Tensor<float> enc = s2t::testing::random_tensor<float>({4, 4, 2}, rng, 0, 1);
  const Tensor<float> pred = s2t::testing::random_tensor<float>({4, 4, 2}, rng, 0, 1);
  for (double alpha : {0.0, 0.5, 1.5, 3.0}) {
    const auto b = me_loss(enc, gt, mask, pred, config(alpha, Phase::ME));
    CHECK(b.total == doctest::Approx(alpha * b.me + b.recon).epsilon(1e-6));
  }
}

TEST_CASE("ma_weight values, floor and monotonicity") {
  const HyperCube gt = filled(2, 2, 2, 0.0f);
  const CodedMask mask = ones_mask(2, 2);
  LossConfig cfg = config(1.0, Phase::MA);
  CHECK(ma_weight(Tensor<float>(Shape{2, 2, 2}, 2.0f), gt, mask, cfg).item() == doctest::Approx(5.0));

  const double capped = ma_weight(Tensor<double>(Shape{2, 2, 2}), gt, mask, cfg).item();
  CHECK(std::isfinite(capped));
  CHECK(capped == doctest::Approx(cfg.beta_ma / cfg.eps_den));

  double prev = INFINITY;
  for (int i = 1; i <= 100; ++i) {
    const double r = 0.01 * i;
    const double wgt = ma_weight(Tensor<double>(Shape{2, 2, 2}, r), gt, mask, cfg).item();
    CHECK(wgt < prev);
    CHECK(wgt <= cfg.beta_ma / cfg.eps_den);
    prev = wgt;
  }
}

TEST_CASE("ma_loss substitution") {
  const HyperCube gt = filled(2, 3, 2, 0.0f);
  const CodedMask mask = ones_mask(2, 3);
  const Tensor<float> enc(Shape{2, 3, 2}, 2.0f);
  const Tensor<float> pred(Shape{2, 3, 2}, 1.0f);
  const auto b = ma_loss(enc, gt, mask, pred, config(1.0, Phase::MA));
  CHECK(b.ma == doctest::Approx(5.0));
  CHECK(b.total == doctest::Approx(8.0));
  CHECK(b.loss.item() == doctest::Approx(8.0));

  const auto exact = ma_loss(enc, gt, mask, gt.data, config(1.0, Phase::MA));
  CHECK(exact.total == doctest::Approx(2.0));
  CHECK(exact.ma == 0.0);
}

TEST_CASE("L_MA >= L_ME on random inputs") {
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const Index h = 1 + static_cast<Index>(rng.below(5)), w = 1 + static_cast<Index>(rng.below(5)), n = 1 + static_cast<Index>(rng.below(3));
    HyperCube gt(s2t::testing::random_tensor<float>({h, w, n}, rng, 0, 1));
    CodedMask mask(s2t::testing::random_tensor<float>({h, w}, rng, 0, 1));
    const Tensor<float> enc = s2t::testing::random_tensor<float>({h, w, n}, rng, -1, 2);
    const Tensor<float> pred = s2t::testing::random_tensor<float>({h, w, n}, rng, -1, 2);
    LossConfig cfg = config(rng.uniform(0, 2), Phase::MA);
    cfg.reduction = trial % 2 ? Reduction::Patchwise : Reduction::Global;
    cfg.patch = 1 + static_cast<Index>(rng.below(3));
    const auto me = me_loss(enc, gt, mask, pred, cfg);
    const auto ma = ma_loss(enc, gt, mask, pred, cfg);
    REQUIRE(std::isfinite(ma.total));
    CHECK(me.total >= 0.0);
    CHECK(ma.ma >= 0.0);
    CHECK(ma.total >= me.total);
  }
}

TEST_CASE("patchwise reduction") {
  Rng rng(4);
  HyperCube gt(s2t::testing::random_tensor<float>({5, 7, 2}, rng, 0, 1));
  const CodedMask mask = ones_mask(5, 7);
  LossConfig cfg = config(1.0, Phase::MA);
  cfg.reduction = Reduction::Patchwise;
  cfg.patch = 3;

  const Tensor<float> w = ma_weight(shifted(gt.data, 0.5f), gt, mask, cfg);
  CHECK(w.shape() == Shape{2, 3});
  for (float v : w.values()) CHECK(v == doctest::Approx(20.0).epsilon(1e-5));

  // Uniform ME residual: every patch weight agrees, so patchwise equals global.
  const Tensor<float> pred = s2t::testing::random_tensor<float>({5, 7, 2}, rng, 0, 1);
  const auto pw = ma_loss(shifted(gt.data, 0.5f), gt, mask, pred, cfg);
  cfg.reduction = Reduction::Global;
  const auto gl = ma_loss(shifted(gt.data, 0.5f), gt, mask, pred, cfg);
  CHECK(pw.total == doctest::Approx(gl.total).epsilon(1e-5));

  // A patch with a larger ME residual gets a smaller weight.
  Tensor<float> enc = gt.data.clone();
  for (Index y = 0; y < 3; ++y)
    for (Index x = 0; x < 3; ++x)
      for (Index c = 0; c < 2; ++c) enc[(y * 7 + x) * 2 + c] += 1.0f;
  for (Index i = 0; i < enc.numel(); ++i) enc[i] += 0.1f;
  cfg.reduction = Reduction::Patchwise;
  const Tensor<float> w2 = ma_weight(enc, gt, mask, cfg);
  CHECK(w2[0] < w2[1]);
}

TEST_CASE("phase gating and mode dispatch") {
  Rng rng(12);
  HyperCube gt(s2t::testing::random_tensor<float>({3, 4, 2}, rng, 0, 1));
  const CodedMask mask(s2t::testing::random_tensor<float>({3, 4}, rng, 0, 1));
  const Tensor<double> gt64 = cast<double>(gt.data);

  auto grads = [&](const LossConfig& cfg) {
    Tensor<double> enc = cast<double>(s2t::testing::random_tensor<float>({3, 4, 2}, rng, 0, 1));
    Tensor<double> pred = cast<double>(s2t::testing::random_tensor<float>({3, 4, 2}, rng, 0, 1));
    enc.set_requires_grad(true);
    pred.set_requires_grad(true);
    const auto b = compute_loss(enc, gt, mask, pred, cfg);
    backward(b.loss);
    return std::make_pair(b, pred);
  };

  // In ME the recon gradient is exactly sign(pred - gt)/N: no MA contribution.
  const auto [me, pred_me] = grads(config(1.5, Phase::ME));
  CHECK(me.ma == 0.0);
  const double n = static_cast<double>(pred_me.numel());
  for (Index i = 0; i < pred_me.numel(); ++i) {
    const double s = pred_me[i] > gt64[i] ? 1.0 : -1.0;
    CHECK(pred_me.grad()[i] == doctest::Approx(s / n));
  }

  const auto [ma, pred_ma] = grads(config(1.0, Phase::MA));
  CHECK(ma.ma > 0.0);
  CHECK(std::abs(pred_ma.grad()[0]) > 1.0 / n);

  LossConfig recon = config(1.5, Phase::MA);
  recon.mode = Mode::ReconOnly;
  const auto r = compute_loss(Tensor<float>(), gt, mask, gt.data, recon);
  CHECK(r.total == 0.0);
  CHECK_THROWS_AS(compute_loss(Tensor<float>(), gt, mask, gt.data, config(1.5, Phase::ME)), ContractError);
}

TEST_CASE("MA gradients: propagated and detached weight") {
  Rng rng(21);
  HyperCube gt(s2t::testing::random_tensor<float>({4, 4, 2}, rng, 0, 1));
  const CodedMask mask(s2t::testing::random_tensor<float>({4, 4}, rng, 0, 1));
  for (bool detach_weight : {false, true}) {
    for (Reduction red : {Reduction::Global, Reduction::Patchwise}) {
      LossConfig cfg = config(1.0, Phase::MA);
      cfg.detach_weight = detach_weight;
      cfg.reduction = red;
      cfg.patch = 3;
      Tensor<double> enc = s2t::testing::random_tensor<double>({4, 4, 2}, rng, -0.5, 1.5);
      Tensor<double> pred = s2t::testing::random_tensor<double>({4, 4, 2}, rng, -0.5, 1.5);
      std::vector<NamedTensor<double>> params{{"enc", enc}, {"pred", pred}};
      if (!detach_weight) {
        const auto rep = grad_check<double>([&] { return ma_loss(enc, gt, mask, pred, cfg).loss; }, params);
        CHECK_MESSAGE(rep.passed(), rep.worst());
      } else {
        // Detached: the encoded gradient matches the ME term alone.
        enc.set_requires_grad(true);
        backward(ma_loss(enc, gt, mask, pred, cfg).loss);
        const std::vector<double> g_ma(enc.grad().begin(), enc.grad().end());
        enc.zero_grad();
        backward(me_loss(enc, gt, mask, pred, cfg).loss);
        for (Index i = 0; i < enc.numel(); ++i) CHECK(g_ma[static_cast<std::size_t>(i)] == doctest::Approx(enc.grad()[i]));
      }
    }
  }
}

TEST_CASE("ME loss reaches early-stage parameters through both terms") {
  network::NetworkConfig cfg;
  cfg.stages = 2;
  cfg.blocks = 1;
  cfg.channels = 4;
  cfg.heads = 2;
  cfg.window = 4;
  cfg.n_lambda = 2;
  cfg.k_me = 1;
  auto p = network::ModelParams<double>::init(cfg, 3);
  Rng rng(8);
  p.visit([&](const std::string&, Tensor<double>& t) {
    for (auto& v : t.values()) v = rng.uniform(-0.3, 0.3);
  });
  HyperCube gt(s2t::testing::random_tensor<float>({8, 8, 2}, rng, 0, 1));
  const CodedMask mask(s2t::testing::random_tensor<float>({8, 8}, rng, 0, 1));
  const Tensor<double> input = s2t::testing::random_tensor<double>({8, 8, 2}, rng, 0, 1);

  auto grad_norm = [&](double alpha, bool zero_recon) {
    auto named = p.named();
    for (auto& nt : named) {
      nt.tensor.set_requires_grad(true);
      nt.tensor.zero_grad();
    }
    const auto fr = network::full_forward(input, p, cfg);
    const Tensor<double> recon = zero_recon ? detach(fr.recon) : fr.recon;
    backward(me_loss(fr.encoded, gt, mask, recon, config(alpha, Phase::ME)).loss);
    double s = 0;
    for (double g : p.stages[0].blocks[0].ffn_w1.grad()) s += g * g;
    return std::sqrt(s);
  };
  CHECK(grad_norm(1.5, true) > 0.0);   // ME term alone
  CHECK(grad_norm(0.0, false) > 0.0);  // Recon term alone
}

TEST_CASE("corollary_probe") {
  Rng rng(31);
  HyperCube gt(s2t::testing::random_tensor<float>({4, 4, 2}, rng, 0, 1));
  CodedMask mask(Tensor<float>(Shape{4, 4}, 1.0f));
  for (Index x = 0; x < 4; ++x) mask.data[x] = 0.0f;  // top row masked

  const auto same = corollary_probe(gt, gt, mask);
  CHECK(same.masked_mae == 0.0);
  CHECK(same.unmasked_mae == 0.0);
  CHECK_FALSE(same.ratio_defined);

  HyperCube pred(gt.data.clone());
  for (Index c = 0; c < 2; ++c) {
    pred.at(0, 0, c) = std::clamp(gt.at(0, 0, c) + 0.4f, 0.0f, 1.0f);
    pred.at(3, 3, c) = 2.0f;  // clamped to 1 before comparison
  }
  const auto p = corollary_probe(pred, gt, mask);
  CHECK(p.masked_pixels == 4);
  CHECK(p.unmasked_pixels == 12);
  double masked = 0, unmasked = 0;
  for (Index c = 0; c < 2; ++c) {
    masked += std::abs(pred.at(0, 0, c) - gt.at(0, 0, c));
    unmasked += 1.0 - gt.at(3, 3, c);
  }
  CHECK(p.masked_mae == doctest::Approx(masked / 2 / 4).epsilon(1e-6));
  CHECK(p.unmasked_mae == doctest::Approx(unmasked / 2 / 12).epsilon(1e-6));
  CHECK(p.ratio_defined);
  CHECK(p.ratio == doctest::Approx(p.masked_mae / p.unmasked_mae));
  CHECK(p.difficulty.shape() == gt.data.shape());
  CHECK(p.difficulty[(3 * 4 + 3) * 2] == doctest::Approx(1.0 - gt.at(3, 3, 0)));

  const auto all_ones = corollary_probe(pred, gt, CodedMask(Tensor<float>(Shape{4, 4}, 1.0f)));
  CHECK(all_ones.masked_pixels == 0);
  CHECK_FALSE(all_ones.ratio_defined);
  CHECK(all_ones.unmasked_mae > 0.0);

  CHECK_THROWS_AS(corollary_probe(pred, gt, CodedMask(Tensor<float>(Shape{3, 4}, 1.0f))), DimensionError);
}

TEST_CASE("loss config parsing and validation") {
  CHECK(parse_reduction("patchwise") == Reduction::Patchwise);
  CHECK(parse_mode("recon") == Mode::ReconOnly);
  CHECK_THROWS_AS(parse_reduction("median"), ContractError);
  LossConfig bad;
  bad.eps_den = 0;
  CHECK_THROWS_AS(bad.validate(), ContractError);
}
