#include <cmath>
#include <cstdlib>

#include "doctest.h"
#include "s2t/training.hpp"
#include "test_util.hpp"

using namespace s2t;
using namespace s2t::training;
using optics::CodedMask;
using optics::HyperCube;

namespace {

TrainConfig toy_config(Index epochs, Index phase_switch) {
  TrainConfig c;
  c.network.stages = 2;
  c.network.blocks = 1;
  c.network.channels = 8;
  c.network.heads = 2;
  c.network.window = 8;
  c.network.n_lambda = 4;
  c.network.k_me = 1;
  c.network.variant = attention::BlockVariant::ParallSS;
  c.schedule.total_epochs = epochs;
  c.schedule.phase_switch = phase_switch;
  c.schedule.lr_half_every = 50;
  c.schedule.base_lr = 2e-3;
  c.schedule.batch_size = 4;
  return c;
}

std::vector<HyperCube> toy_scenes(Index count, Index h, Index w, Index n, std::uint64_t seed) {
  std::vector<HyperCube> out;
  for (Index i = 0; i < count; ++i) out.push_back(optics::make_synthetic_cube(h, w, n, 4, seed + static_cast<std::uint64_t>(i)));
  return out;
}

CodedMask toy_mask(Index h, Index w) { return optics::make_mask(h, w, optics::MaskKind::Binary, 0.5, 11); }

bool same_params(network::ModelParams<float>& a, network::ModelParams<float>& b) {
  const auto na = a.named(), nb = b.named();
  if (na.size() != nb.size()) return false;
  for (std::size_t i = 0; i < na.size(); ++i) {
    const auto va = na[i].tensor.values(), vb = nb[i].tensor.values();
    if (!std::equal(va.begin(), va.end(), vb.begin(), vb.end())) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("adam first step and zero gradient") {
  Tensor<double> p(Shape{1}, 3.0);
  Tensor<double> q(Shape{2}, 1.0);
  Adam<double> adam({{"p", p}, {"q", q}});
  p.grad()[0] = 1.0;
  q.grad();
  adam.step(0.01);
  CHECK(p[0] == doctest::Approx(3.0 - 0.01).epsilon(1e-6));
  CHECK(q[0] == 1.0);
  CHECK(q[1] == 1.0);
  CHECK(adam.steps() == 1);
}

TEST_CASE("adam minimises p^2") {
  Tensor<double> p(Shape{1}, 1.0);
  p.set_requires_grad(true);
  Adam<double> adam({{"p", p}});
  for (int i = 0; i < 100; ++i) {
    adam.zero_grad();
    backward(sum(mul(p, p)));
    adam.step(0.1);
  }
  Graph<double>::current().clear();
  CHECK(std::abs(p[0]) < 0.1);
}

TEST_CASE("adam names a parameter without gradient") {
  Tensor<float> p(Shape{3});
  Adam<float> adam({{"stage0.conv.w", p}});
  try {
    adam.step(1e-3);
    FAIL("expected ContractError");
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find("stage0.conv.w") != std::string::npos);
  }
}

TEST_CASE("learning-rate schedule") {
  Schedule s;
  CHECK(lr_at_epoch(0, s) == 4e-4);
  CHECK(lr_at_epoch(49, s) == 4e-4);
  CHECK(lr_at_epoch(50, s) == 2e-4);
  CHECK(lr_at_epoch(100, s) == 1e-4);
  CHECK(lr_at_epoch(250, s) == 4e-4 / 32);
  double prev = lr_at_epoch(0, s);
  for (Index e = 1; e < s.total_epochs; ++e) {
    const double lr = lr_at_epoch(e, s);
    CHECK(lr <= prev);
    CHECK((lr < prev) == (e % 50 == 0));
    prev = lr;
  }
  CHECK_THROWS_AS(lr_at_epoch(-1, s), ContractError);
  CHECK_THROWS_AS(lr_at_epoch(300, s), ContractError);
}

TEST_CASE("phase switch flips alpha") {
  Schedule s;
  CHECK(phase_at_epoch(149, s) == objective::Phase::ME);
  CHECK(alpha_at_epoch(149, s) == 1.5);
  CHECK(phase_at_epoch(150, s) == objective::Phase::MA);
  CHECK(alpha_at_epoch(150, s) == 1.0);
  s.phase_switch = 300;
  CHECK_THROWS_AS(s.validate(), ContractError);
}

TEST_CASE("psnr values") {
  HyperCube gt(Tensor<float>(Shape{2, 2, 1}, 0.5f));
  HyperCube pred(Tensor<float>(Shape{2, 2, 1}, 0.6f));
  CHECK(psnr(pred, gt).db == doctest::Approx(20.0).epsilon(1e-5));
  CHECK_FALSE(psnr(pred, gt).infinite);
  CHECK(psnr(gt, gt).infinite);

  // Clamping: 1.5 is compared as 1.0.
  HyperCube over(Tensor<float>(Shape{2, 2, 1}, 1.5f));
  CHECK(psnr(over, gt).db == doctest::Approx(10.0 * std::log10(1.0 / 0.25)));

  Rng rng(3);
  HyperCube a(s2t::testing::random_tensor<float>({5, 6, 3}, rng, 0, 1));
  HyperCube b(s2t::testing::random_tensor<float>({5, 6, 3}, rng, 0, 1));
  double se = 0;
  for (Index i = 0; i < a.data.numel(); ++i) se += std::pow(static_cast<double>(a.data[i]) - b.data[i], 2);
  CHECK(psnr(a, b).db == doctest::Approx(10.0 * std::log10(a.data.numel() / se)).epsilon(1e-9));

  // Identical voxel permutation (reverse order) leaves the value unchanged.
  HyperCube ra(Tensor<float>(a.data.shape())), rb(Tensor<float>(b.data.shape()));
  const Index n = a.data.numel();
  for (Index i = 0; i < n; ++i) {
    ra.data[i] = a.data[n - 1 - i];
    rb.data[i] = b.data[n - 1 - i];
  }
  CHECK(psnr(ra, rb).db == doctest::Approx(psnr(a, b).db).epsilon(1e-12));

  const Psnr ch = psnr(a, b, 1.0, PsnrMode::ChannelMean);
  CHECK(std::isfinite(ch.db));
  CHECK_THROWS_AS(psnr(a, HyperCube(Tensor<float>(Shape{5, 6, 2}))), DimensionError);
}

TEST_CASE("ssim values") {
  Rng rng(8);
  HyperCube a(s2t::testing::random_tensor<float>({16, 16, 2}, rng, 0, 1));
  CHECK(ssim(a, a) == doctest::Approx(1.0));

  HyperCube bin(Tensor<float>(Shape{16, 16, 1}));
  HyperCube inv(Tensor<float>(Shape{16, 16, 1}));
  for (Index i = 0; i < bin.data.numel(); ++i) {
    bin.data[i] = rng.uniform() < 0.5 ? 1.0f : 0.0f;
    inv.data[i] = 1.0f - bin.data[i];
  }
  CHECK(ssim(inv, bin) < 0.0);

  const double ca = 0.3, cb = 0.7, c1 = 1e-4, c2 = 9e-4;
  HyperCube ka(Tensor<float>(Shape{12, 12, 1}, static_cast<float>(ca)));
  HyperCube kb(Tensor<float>(Shape{12, 12, 1}, static_cast<float>(cb)));
  const double fa = static_cast<float>(ca), fb = static_cast<float>(cb);
  const double closed = (2 * fa * fb + c1) * c2 / ((fa * fa + fb * fb + c1) * c2);
  CHECK(ssim(ka, kb) == doctest::Approx(closed).epsilon(1e-9));

  CHECK_THROWS_AS(ssim(HyperCube(Tensor<float>(Shape{10, 16, 1})), HyperCube(Tensor<float>(Shape{10, 16, 1}))),
                  DimensionError);
}

TEST_CASE("ssim is translation invariant away from the boundary") {
  Rng rng(5);
  const Tensor<float> pa = s2t::testing::random_tensor<float>({8, 8}, rng, 0, 1);
  const Tensor<float> pb = s2t::testing::random_tensor<float>({8, 8}, rng, 0, 1);
  auto embed = [](const Tensor<float>& patch, Index y0, Index x0) {
    HyperCube c(Tensor<float>(Shape{40, 40, 1}, 0.5f));
    for (Index y = 0; y < 8; ++y)
      for (Index x = 0; x < 8; ++x) c.at(y0 + y, x0 + x, 0) = patch[y * 8 + x];
    return c;
  };
  const double s1 = ssim(embed(pa, 12, 12), embed(pb, 12, 12));
  const double s2 = ssim(embed(pa, 15, 18), embed(pb, 15, 18));
  CHECK(s1 < 0.99);
  CHECK(std::abs(s1 - s2) < 1e-9);
}

TEST_CASE("fit reduces the reconstruction term") {
  const auto scenes = toy_scenes(8, 16, 16, 4, 100);
  const CodedMask mask = toy_mask(16, 16);
  const TrainConfig cfg = toy_config(80, 40);
  const FitResult r = fit(scenes, mask, cfg, 1);
  REQUIRE(r.history.size() == 80);
  CHECK(r.history.back().recon < r.history.front().recon);
  for (const auto& e : r.history) {
    CHECK(std::isfinite(e.total));
    CHECK(e.alpha == (e.epoch < 40 ? 1.5 : 1.0));
    CHECK(e.phase == (e.epoch < 40 ? objective::Phase::ME : objective::Phase::MA));
    CHECK((e.ma > 0) == (e.epoch >= 40));
  }
  MESSAGE("recon first " << r.history.front().recon << " last " << r.history.back().recon);
}

TEST_CASE("fit is deterministic in the seed") {
  const auto scenes = toy_scenes(5, 16, 16, 4, 7);
  const CodedMask mask = toy_mask(16, 16);
  TrainConfig cfg = toy_config(3, 1);
  cfg.crop = 12;
  auto a = fit(scenes, mask, cfg, 42);
  auto b = fit(scenes, mask, cfg, 42);
  auto c = fit(scenes, mask, cfg, 43);
  CHECK(same_params(a.params, b.params));
  CHECK_FALSE(same_params(a.params, c.params));
  for (std::size_t i = 0; i < a.history.size(); ++i) CHECK(a.history[i].total == b.history[i].total);
}

TEST_CASE("fit in recon mode leaves the encode head alone") {
  const auto scenes = toy_scenes(2, 16, 16, 4, 3);
  const CodedMask mask = toy_mask(16, 16);
  TrainConfig cfg = toy_config(2, 1);
  cfg.network.stages = 1;
  cfg.loss.mode = objective::Mode::ReconOnly;
  const auto init = network::ModelParams<float>::init(cfg.network, 9);
  const std::vector<float> before(init.encode_w.values().begin(), init.encode_w.values().end());
  auto r = fit(scenes, mask, cfg, 9);
  CHECK(std::equal(before.begin(), before.end(), r.params.encode_w.values().begin()));
  CHECK_FALSE(std::equal(init.extractor_w.values().begin(), init.extractor_w.values().end(),
                         r.params.extractor_w.values().begin()));
  for (const auto& e : r.history) {
    CHECK(e.recon_only);
    CHECK(e.total == e.recon);
  }
}

TEST_CASE("fit errors") {
  const CodedMask mask = toy_mask(16, 16);
  const TrainConfig cfg = toy_config(2, 1);
  CHECK_THROWS_AS(fit({}, mask, cfg, 1), ContractError);
  CHECK_THROWS_AS(fit(toy_scenes(1, 12, 16, 4, 1), mask, cfg, 1), DimensionError);

  auto params = network::ModelParams<float>::init(cfg.network, 1);
  params.head_b[0] = NAN;
  try {
    fit(std::move(params), toy_scenes(2, 16, 16, 4, 1), mask, cfg, 1);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("epoch 0, step 0") != std::string::npos);
  }
}

TEST_CASE("gradient clipping bounds the update") {
  const auto scenes = toy_scenes(4, 16, 16, 4, 21);
  const CodedMask mask = toy_mask(16, 16);
  TrainConfig cfg = toy_config(2, 1);
  cfg.grad_clip = 1e-3;
  const auto r = fit(scenes, mask, cfg, 5);
  for (const auto& e : r.history) CHECK(std::isfinite(e.total));
}

TEST_CASE("evaluate is independent of worker count") {
  const auto scenes = toy_scenes(3, 16, 16, 4, 50);
  const CodedMask mask = toy_mask(16, 16);
  const TrainConfig cfg = toy_config(1, 0);
  const auto params = network::ModelParams<float>::init(cfg.network, 2);
  setenv("S2_THREADS", "1", 1);
  CHECK(worker_count() == 1);
  const EvalResult serial = evaluate(params, cfg, scenes, mask, 4);
  setenv("S2_THREADS", "3", 1);
  CHECK(worker_count() == 3);
  const EvalResult parallel = evaluate(params, cfg, scenes, mask, 4);
  unsetenv("S2_THREADS");
  REQUIRE(serial.scenes.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(serial.scenes[i].psnr.db == parallel.scenes[i].psnr.db);
    CHECK(serial.scenes[i].ssim == parallel.scenes[i].ssim);
    CHECK(serial.scenes[i].probe.masked_mae == parallel.scenes[i].probe.masked_mae);
  }
  CHECK(std::isfinite(serial.mean_psnr));
  CHECK(serial.mean_ssim <= 1.0);
}
