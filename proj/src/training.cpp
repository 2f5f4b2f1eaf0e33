#include "s2t/training.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <numeric>
#include <thread>

namespace s2t::training {

using objective::Phase;
using optics::CodedMask;
using optics::HyperCube;

namespace {

constexpr std::uint64_t kEpochStream = 0x45504f4348ULL;
constexpr std::uint64_t kEvalStream = 0x4556414cULL;

std::string epoch_context(Index epoch, Index step) {
  return "epoch " + std::to_string(epoch) + ", step " + std::to_string(step);
}

}  // namespace

template <typename Scalar>
Adam<Scalar>::Adam(std::vector<NamedTensor<Scalar>> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
    v_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
  }
}

template <typename Scalar>
void Adam<Scalar>::step(double lr) {
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) throw ContractError("adam: parameter '" + p.name + "' has no gradient");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor<Scalar> t = params_[i].tensor;
    auto x = t.values();
    auto g = t.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
      const double mh = m[j] / c1, vh = v[j] / c2;
      x[j] = static_cast<Scalar>(static_cast<double>(x[j]) - lr * mh / (std::sqrt(vh) + cfg_.eps));
    }
  }
}

template <typename Scalar>
void Adam<Scalar>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template class Adam<float>;
template class Adam<double>;

void Schedule::validate() const {
  if (total_epochs < 1) throw ContractError("schedule: epochs must be >= 1");
  if (phase_switch < 0 || phase_switch >= total_epochs) {
    throw ContractError("schedule: phase_switch must lie in [0, epochs)");
  }
  if (lr_half_every < 1) throw ContractError("schedule: lr_half_every must be >= 1");
  if (batch_size < 1) throw ContractError("schedule: batch_size must be >= 1");
  if (!(base_lr > 0)) throw ContractError("schedule: lr must be > 0");
}

double lr_at_epoch(Index epoch, const Schedule& s) {
  if (epoch < 0 || epoch >= s.total_epochs) {
    throw ContractError("lr_at_epoch: epoch " + std::to_string(epoch) + " outside [0, " +
                        std::to_string(s.total_epochs) + ")");
  }
  return s.base_lr * std::ldexp(1.0, -static_cast<int>(epoch / s.lr_half_every));
}

Phase phase_at_epoch(Index epoch, const Schedule& s) { return epoch < s.phase_switch ? Phase::ME : Phase::MA; }

double alpha_at_epoch(Index epoch, const Schedule& s) {
  return phase_at_epoch(epoch, s) == Phase::ME ? s.alpha_me : s.alpha_ma;
}

void TrainConfig::validate() const {
  network.validate(uses_encode_head());
  loss.validate();
  schedule.validate();
  if (!(noise_sigma >= 0)) throw ContractError("train config: noise_sigma must be >= 0");
  if (crop < 0) throw ContractError("train config: crop must be >= 0");
  if (!(grad_clip >= 0)) throw ContractError("train config: grad_clip must be >= 0");
  if (shear.step < 0) throw ContractError("train config: shear step must be >= 0");
}

HyperCube network_input(const HyperCube& cube, const CodedMask& mask, const TrainConfig& cfg,
                        std::uint64_t noise_seed) {
  const optics::Measurement y = optics::form_measurement(cube, mask, cfg.shear, cfg.noise_sigma, noise_seed);
  return optics::init_input(y, mask, cfg.shear, cube.channels());
}

HyperCube reconstruct(const network::ModelParams<float>& params, const TrainConfig& cfg, const HyperCube& cube,
                      const CodedMask& mask, std::uint64_t noise_seed) {
  NoGradGuard guard;
  const HyperCube input = network_input(cube, mask, cfg, noise_seed);
  return HyperCube(network::full_forward(input.data, params, cfg.network, false).recon);
}

FitResult fit(const std::vector<HyperCube>& dataset, const CodedMask& mask, const TrainConfig& cfg,
              std::uint64_t seed, const EpochCallback& on_epoch) {
  cfg.validate();
  return fit(network::ModelParams<float>::init(cfg.network, seed), dataset, mask, cfg, seed, on_epoch);
}

FitResult fit(network::ModelParams<float> init, const std::vector<HyperCube>& dataset, const CodedMask& mask,
              const TrainConfig& cfg, std::uint64_t seed, const EpochCallback& on_epoch) {
  cfg.validate();
  if (dataset.empty()) throw ContractError("fit: dataset is empty");
  for (const auto& cube : dataset) {
    if (cube.height() != mask.height() || cube.width() != mask.width()) {
      throw DimensionError("fit: mask " + shape_str(mask.data.shape()) + " does not match scene " +
                           shape_str(cube.data.shape()));
    }
    if (cube.channels() != cfg.network.n_lambda) {
      throw DimensionError("fit: scene has " + std::to_string(cube.channels()) + " channels, network expects " +
                           std::to_string(cfg.network.n_lambda));
    }
    if (cfg.crop > std::min(cube.height(), cube.width())) {
      throw DimensionError("fit: crop " + std::to_string(cfg.crop) + " exceeds scene " + shape_str(cube.data.shape()));
    }
  }

  FitResult out;
  out.params = std::move(init);
  const bool mask_aware = cfg.uses_encode_head();
  Adam<float> adam(mask_aware ? out.params.named() : out.params.named_without_encode_head());
  for (const auto& p : adam.params()) Tensor<float>(p.tensor).set_requires_grad(true);

  const Index n = static_cast<Index>(dataset.size());
  const Schedule& sched = cfg.schedule;
  std::vector<Index> order(static_cast<std::size_t>(n));
  Index step = 0;

  for (Index epoch = 0; epoch < sched.total_epochs; ++epoch) {
    Rng rng(seed, kEpochStream + static_cast<std::uint64_t>(epoch));
    std::iota(order.begin(), order.end(), Index(0));
    for (Index i = n - 1; i > 0; --i) {
      std::swap(order[static_cast<std::size_t>(i)], order[rng.below(static_cast<std::uint64_t>(i + 1))]);
    }

    objective::LossConfig lc = cfg.loss;
    lc.phase = phase_at_epoch(epoch, sched);
    lc.alpha = alpha_at_epoch(epoch, sched);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.phase = lc.phase;
    rec.recon_only = !mask_aware;
    rec.lr = lr_at_epoch(epoch, sched);
    rec.alpha = mask_aware ? lc.alpha : 0.0;
    Index probed = 0;

    for (Index start = 0; start < n; start += sched.batch_size, ++step) {
      const Index count = std::min(sched.batch_size, n - start);
      adam.zero_grad();
      for (Index b = start; b < start + count; ++b) {
        const HyperCube& scene = dataset[static_cast<std::size_t>(order[static_cast<std::size_t>(b)])];
        HyperCube cube = scene;
        CodedMask m = mask;
        if (cfg.crop > 0) {
          const Index y0 = static_cast<Index>(rng.below(static_cast<std::uint64_t>(scene.height() - cfg.crop + 1)));
          const Index x0 = static_cast<Index>(rng.below(static_cast<std::uint64_t>(scene.width() - cfg.crop + 1)));
          cube = optics::crop(scene, y0, x0, cfg.crop, cfg.crop);
          m = optics::crop(mask, y0, x0, cfg.crop, cfg.crop);
        }
        const std::uint64_t noise_seed = rng.next_u64();
        const HyperCube input = network_input(cube, m, cfg, noise_seed);
        const auto fr = network::full_forward(input.data, out.params, cfg.network, mask_aware);
        const auto loss = objective::compute_loss(fr.encoded, cube, m, fr.recon, lc);
        if (!std::isfinite(loss.total)) {
          throw TrainingError("fit: non-finite loss at " + epoch_context(epoch, step) + " (scene " +
                              std::to_string(order[static_cast<std::size_t>(b)]) + ")");
        }
        backward(scale(loss.loss, 1.0f / static_cast<float>(count)));
        Graph<float>::current().clear();

        rec.recon += loss.recon;
        rec.me += loss.me;
        rec.ma += loss.ma;
        rec.total += loss.total;
        const auto probe = objective::corollary_probe(HyperCube(detach(fr.recon)), cube, m);
        rec.masked_mae += probe.masked_mae;
        rec.unmasked_mae += probe.unmasked_mae;
        ++probed;
      }

      double norm2 = 0;
      for (const auto& p : adam.params()) {
        for (float g : p.tensor.grad()) norm2 += static_cast<double>(g) * g;
      }
      if (!std::isfinite(norm2)) throw TrainingError("fit: non-finite gradient at " + epoch_context(epoch, step));
      if (cfg.grad_clip > 0 && std::sqrt(norm2) > cfg.grad_clip) {
        const float f = static_cast<float>(cfg.grad_clip / std::sqrt(norm2));
        for (const auto& p : adam.params()) {
          for (float& g : p.tensor.grad()) g *= f;
        }
      }
      adam.step(rec.lr);
    }

    const double k = static_cast<double>(probed);
    rec.recon /= k;
    rec.me /= k;
    rec.ma /= k;
    rec.total /= k;
    rec.masked_mae /= k;
    rec.unmasked_mae /= k;
    out.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  for (const auto& p : adam.params()) Tensor<float>(p.tensor).set_requires_grad(false);
  return out;
}

Psnr psnr(const HyperCube& pred, const HyperCube& gt, double peak, PsnrMode mode) {
  if (pred.data.shape() != gt.data.shape()) {
    throw DimensionError("psnr: shapes differ " + shape_str(pred.data.shape()) + " vs " + shape_str(gt.data.shape()));
  }
  const Index n = gt.channels(), pixels = gt.height() * gt.width();
  std::vector<double> se(static_cast<std::size_t>(n), 0.0);
  for (Index i = 0; i < pixels; ++i)
    for (Index c = 0; c < n; ++c) {
      const double d = std::clamp(static_cast<double>(pred.data[i * n + c]), 0.0, 1.0) - gt.data[i * n + c];
      se[static_cast<std::size_t>(c)] += d * d;
    }
  auto db = [&](double mse) { return 10.0 * std::log10(peak * peak / mse); };
  Psnr r;
  if (mode == PsnrMode::WholeCube) {
    const double mse = std::accumulate(se.begin(), se.end(), 0.0) / static_cast<double>(pixels * n);
    r.infinite = mse == 0.0;
    r.db = r.infinite ? INFINITY : db(mse);
    return r;
  }
  double sum = 0;
  Index finite = 0;
  for (double s : se) {
    if (s == 0.0) continue;
    sum += db(s / static_cast<double>(pixels));
    ++finite;
  }
  r.infinite = finite == 0;
  r.db = r.infinite ? INFINITY : sum / static_cast<double>(finite);
  return r;
}

namespace {

constexpr int kSsimWindow = 11;

std::array<double, kSsimWindow> gaussian_window() {
  std::array<double, kSsimWindow> g{};
  double s = 0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double x = i - kSsimWindow / 2;
    g[static_cast<std::size_t>(i)] = std::exp(-x * x / (2 * 1.5 * 1.5));
    s += g[static_cast<std::size_t>(i)];
  }
  for (double& v : g) v /= s;
  return g;
}

// Valid-position separable Gaussian filter of an h x w image.
Eigen::MatrixXd filter_valid(const Eigen::MatrixXd& img) {
  static const auto g = gaussian_window();
  const Index h = img.rows(), w = img.cols(), oh = h - kSsimWindow + 1, ow = w - kSsimWindow + 1;
  Eigen::MatrixXd rows = Eigen::MatrixXd::Zero(h, ow);
  for (int k = 0; k < kSsimWindow; ++k) rows += g[static_cast<std::size_t>(k)] * img.middleCols(k, ow);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(oh, ow);
  for (int k = 0; k < kSsimWindow; ++k) out += g[static_cast<std::size_t>(k)] * rows.middleRows(k, oh);
  return out;
}

}  // namespace

double ssim(const HyperCube& pred, const HyperCube& gt) {
  if (pred.data.shape() != gt.data.shape()) {
    throw DimensionError("ssim: shapes differ " + shape_str(pred.data.shape()) + " vs " + shape_str(gt.data.shape()));
  }
  const Index h = gt.height(), w = gt.width(), n = gt.channels();
  if (h < kSsimWindow || w < kSsimWindow) {
    throw DimensionError("ssim: image " + shape_str(gt.data.shape()) + " is smaller than the 11x11 window");
  }
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0;
  for (Index c = 0; c < n; ++c) {
    Eigen::MatrixXd x(h, w), y(h, w);
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j) {
        x(i, j) = std::clamp(static_cast<double>(pred.at(i, j, c)), 0.0, 1.0);
        y(i, j) = gt.at(i, j, c);
      }
    const Eigen::MatrixXd mx = filter_valid(x), my = filter_valid(y);
    const Eigen::MatrixXd sxx = filter_valid(x.cwiseProduct(x)) - mx.cwiseProduct(mx);
    const Eigen::MatrixXd syy = filter_valid(y.cwiseProduct(y)) - my.cwiseProduct(my);
    const Eigen::MatrixXd sxy = filter_valid(x.cwiseProduct(y)) - mx.cwiseProduct(my);
    const Eigen::ArrayXXd num = (2 * mx.cwiseProduct(my).array() + c1) * (2 * sxy.array() + c2);
    const Eigen::ArrayXXd den =
        (mx.cwiseProduct(mx).array() + my.cwiseProduct(my).array() + c1) * (sxx.array() + syy.array() + c2);
    total += (num / den).mean();
  }
  return total / static_cast<double>(n);
}

unsigned worker_count() {
  if (const char* env = std::getenv("S2_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

EvalResult evaluate(const network::ModelParams<float>& params, const TrainConfig& cfg,
                    const std::vector<HyperCube>& scenes, const CodedMask& mask, std::uint64_t seed) {
  EvalResult r;
  r.scenes.resize(scenes.size());
  auto run = [&](std::size_t i) {
    const std::uint64_t noise_seed = Rng(seed, kEvalStream + i).next_u64();
    const HyperCube pred = reconstruct(params, cfg, scenes[i], mask, noise_seed);
    SceneMetrics& s = r.scenes[i];
    s.psnr = psnr(pred, scenes[i]);
    s.ssim = ssim(pred, scenes[i]);
    s.probe = objective::corollary_probe(pred, scenes[i], mask);
  };
  const std::size_t workers = std::min<std::size_t>(worker_count(), scenes.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < scenes.size(); ++i) run(i);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < scenes.size(); i += workers) run(i);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  Index finite = 0;
  for (const auto& s : r.scenes) {
    if (!s.psnr.infinite) {
      r.mean_psnr += s.psnr.db;
      ++finite;
    }
    r.mean_ssim += s.ssim;
    r.mean_masked_mae += s.probe.masked_mae;
    r.mean_unmasked_mae += s.probe.unmasked_mae;
  }
  const double k = static_cast<double>(std::max<std::size_t>(r.scenes.size(), 1));
  r.mean_psnr = finite > 0 ? r.mean_psnr / static_cast<double>(finite) : INFINITY;
  r.mean_ssim /= k;
  r.mean_masked_mae /= k;
  r.mean_unmasked_mae /= k;
  return r;
}

}  // namespace s2t::training
