#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "s2t/network.hpp"
#include "s2t/objective.hpp"
#include "s2t/optics.hpp"

namespace s2t::training {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed parameter list. Reads each parameter's
/// gradient buffer; a parameter without one is a contract error.
template <typename Scalar>
class Adam {
 public:
  explicit Adam(std::vector<NamedTensor<Scalar>> params, AdamConfig cfg = {});

  void step(double lr);
  void zero_grad();
  Index steps() const { return t_; }
  const std::vector<NamedTensor<Scalar>>& params() const { return params_; }

 private:
  std::vector<NamedTensor<Scalar>> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamConfig cfg_;
  Index t_ = 0;
};

struct Schedule {
  Index total_epochs = 300;
  Index phase_switch = 150;
  Index lr_half_every = 50;
  Index batch_size = 4;
  double base_lr = 4e-4;
  double alpha_me = 1.5;
  double alpha_ma = 1.0;

  void validate() const;
};

double lr_at_epoch(Index epoch, const Schedule& s);
objective::Phase phase_at_epoch(Index epoch, const Schedule& s);
double alpha_at_epoch(Index epoch, const Schedule& s);

struct TrainConfig {
  network::NetworkConfig network;
  objective::LossConfig loss;
  Schedule schedule;
  optics::ShearRule shear;
  double noise_sigma = 0.01;
  /// Square training crop side; 0 trains on whole scenes.
  Index crop = 0;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 0.0;

  void validate() const;
  bool uses_encode_head() const { return loss.mode == objective::Mode::MaskAware; }
};

struct EpochRecord {
  Index epoch = 0;
  objective::Phase phase = objective::Phase::ME;
  bool recon_only = false;
  double lr = 0, alpha = 0;
  double recon = 0, me = 0, ma = 0, total = 0;
  /// Training-batch residuals split by the mask, before the epoch's updates.
  double masked_mae = 0, unmasked_mae = 0;
};

struct FitResult {
  network::ModelParams<float> params;
  std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Deterministic in (dataset, mask, cfg, seed). The mask must cover every scene.
FitResult fit(const std::vector<optics::HyperCube>& dataset, const optics::CodedMask& mask, const TrainConfig& cfg,
              std::uint64_t seed, const EpochCallback& on_epoch = {});

/// Same as above, continuing from given parameters.
FitResult fit(network::ModelParams<float> init, const std::vector<optics::HyperCube>& dataset,
              const optics::CodedMask& mask, const TrainConfig& cfg, std::uint64_t seed,
              const EpochCallback& on_epoch = {});

/// Simulated measurement of `cube`, turned into the network input.
optics::HyperCube network_input(const optics::HyperCube& cube, const optics::CodedMask& mask, const TrainConfig& cfg,
                                std::uint64_t noise_seed);

/// Unclamped reconstruction, computed without recording a graph.
optics::HyperCube reconstruct(const network::ModelParams<float>& params, const TrainConfig& cfg,
                              const optics::HyperCube& cube, const optics::CodedMask& mask, std::uint64_t noise_seed);

enum class PsnrMode { WholeCube, ChannelMean };

struct Psnr {
  double db = 0;
  bool infinite = false;
};

/// 10 log10(peak^2 / MSE) with pred clamped to [0, 1]. ChannelMean averages
/// the finite per-channel values and flags infinite only if every channel matches.
Psnr psnr(const optics::HyperCube& pred, const optics::HyperCube& gt, double peak = 1.0,
          PsnrMode mode = PsnrMode::WholeCube);

/// Single-scale SSIM per channel, 11x11 Gaussian window (sigma 1.5) over
/// valid positions, C1 = 0.01^2, C2 = 0.03^2, averaged over channels.
double ssim(const optics::HyperCube& pred, const optics::HyperCube& gt);

struct SceneMetrics {
  Psnr psnr;
  double ssim = 0;
  objective::ProbeReport probe;
};

struct EvalResult {
  std::vector<SceneMetrics> scenes;
  /// Mean over scenes with a finite PSNR.
  double mean_psnr = 0;
  double mean_ssim = 0, mean_masked_mae = 0, mean_unmasked_mae = 0;
};

/// Scenes are evaluated concurrently (see worker_count); results are ordered by scene.
EvalResult evaluate(const network::ModelParams<float>& params, const TrainConfig& cfg,
                    const std::vector<optics::HyperCube>& scenes, const optics::CodedMask& mask, std::uint64_t seed);

/// S2_THREADS if set and positive, else the hardware concurrency.
unsigned worker_count();

}  // namespace s2t::training
