// s2t: command-line front end for simulation, training, evaluation and checks.
//
// Exit codes: 0 success, 1 usage error, 2 unreadable or invalid input,
// 3 a check or training guard failed.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "s2t/config.hpp"
#include "s2t/gradsuite.hpp"
#include "s2t/io.hpp"
#include "s2t/network.hpp"
#include "s2t/optics.hpp"
#include "s2t/report.hpp"
#include "s2t/training.hpp"

namespace {

using namespace s2t;

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kInput = 2;
constexpr int kCheckFailed = 3;

std::string config_sidecar(const std::string& ckpt) { return ckpt + ".cfg"; }

io::RunConfig load_run_config(const std::string& ckpt, const std::string& explicit_path) {
  return io::read_config(explicit_path.empty() ? config_sidecar(ckpt) : explicit_path);
}

network::ModelParams<float> load_model(const std::string& ckpt, const io::RunConfig& cfg) {
  auto params = network::ModelParams<float>::init(cfg.train.network, 0);
  auto named = params.named();
  io::load_into(named, io::read_checkpoint(ckpt));
  return params;
}

std::vector<optics::HyperCube> load_scenes(const std::vector<std::string>& paths) {
  std::vector<optics::HyperCube> out;
  out.reserve(paths.size());
  for (const auto& p : paths) out.push_back(io::read_cube(p));
  return out;
}

std::vector<std::string> require_cubes(const std::string& dir) {
  auto paths = report::list_cubes(dir);
  if (paths.empty()) throw io::IoError("no .hsc cubes in '" + dir + "'");
  return paths;
}

struct SimulateArgs {
  std::string cube, mask, out, input_out;
  double noise_sigma = 0;
  std::uint64_t seed = 0;
  Index shear_step = 2;
};

int run_simulate(const SimulateArgs& a) {
  const auto cube = io::read_cube(a.cube);
  const auto mask = io::read_mask(a.mask);
  optics::ShearRule rule;
  rule.step = a.shear_step;
  const auto y = optics::form_measurement(cube, mask, rule, a.noise_sigma, a.seed);
  // The measurement is stored as a single-channel cube.
  io::write_cube(a.out, optics::HyperCube(reshape(y.data, {y.height(), y.extended_width(), 1})));
  if (!a.input_out.empty()) io::write_cube(a.input_out, optics::init_input(y, mask, rule, cube.channels()));
  std::printf("measurement %lld x %lld -> %s\n", static_cast<long long>(y.height()),
              static_cast<long long>(y.extended_width()), a.out.c_str());
  return kOk;
}

struct SynthArgs {
  std::string out;
  Index count = 8, h = 64, w = 64, nl = 28;
  int blobs = 6;
  std::uint64_t seed = 0;
};

int run_synth(const SynthArgs& a) {
  std::error_code ec;
  std::filesystem::create_directories(a.out, ec);
  if (ec) throw io::IoError("cannot create directory '" + a.out + "': " + ec.message());
  for (Index i = 0; i < a.count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "scene_%04lld.hsc", static_cast<long long>(i));
    const auto cube = optics::make_synthetic_cube(a.h, a.w, a.nl, a.blobs, a.seed + static_cast<std::uint64_t>(i));
    io::write_cube((std::filesystem::path(a.out) / name).string(), cube);
  }
  std::printf("wrote %lld cubes of %lld x %lld x %lld to %s\n", static_cast<long long>(a.count),
              static_cast<long long>(a.h), static_cast<long long>(a.w), static_cast<long long>(a.nl), a.out.c_str());
  return kOk;
}

struct MaskArgs {
  std::string out, kind = "binary";
  Index h = 64, w = 64;
  double density = 0.5;
  std::uint64_t seed = 0;
};

int run_make_mask(const MaskArgs& a) {
  const auto kind = optics::parse_mask_kind(a.kind);
  if (kind == optics::MaskKind::File) throw ContractError("make-mask: kind must be binary or uniform");
  io::write_mask(a.out, optics::make_mask(a.h, a.w, kind, a.density, a.seed));
  return kOk;
}

struct TrainArgs {
  std::string config, data, mask, out, history;
  bool quiet = false;
};

int run_train(const TrainArgs& a) {
  const io::RunConfig cfg = io::read_config(a.config);
  const auto scenes = load_scenes(require_cubes(a.data));
  const auto mask = io::read_mask(a.mask);
  const auto result = training::fit(scenes, mask, cfg.train, cfg.seed, [&](const training::EpochRecord& e) {
    if (a.quiet) return;
    const std::string phase = e.recon_only ? "recon" : objective::phase_name(e.phase);
    std::fprintf(stderr, "epoch %lld %s lr %s total %s recon %s\n", static_cast<long long>(e.epoch), phase.c_str(),
                 io::format_number(e.lr).c_str(), io::format_number(e.total).c_str(),
                 io::format_number(e.recon).c_str());
  });
  auto params = result.params;
  io::write_checkpoint(a.out, params.named());
  io::write_text_atomic(config_sidecar(a.out), io::format_config(cfg));
  if (!a.history.empty()) io::write_text_atomic(a.history, report::history_csv(result.history));
  const auto& last = result.history.back();
  std::printf("trained %zu epochs on %zu scenes, final total %s -> %s\n", result.history.size(), scenes.size(),
              io::format_number(last.total).c_str(), a.out.c_str());
  return kOk;
}

struct EvalArgs {
  std::string ckpt, data, mask, report, dump_difficulty, config;
  std::optional<std::uint64_t> seed;
};

int run_eval(const EvalArgs& a) {
  const io::RunConfig cfg = load_run_config(a.ckpt, a.config);
  const auto params = load_model(a.ckpt, cfg);
  const auto paths = require_cubes(a.data);
  const auto scenes = load_scenes(paths);
  const auto mask = io::read_mask(a.mask);
  const auto result = training::evaluate(params, cfg.train, scenes, mask, a.seed.value_or(cfg.seed));

  std::vector<std::string> names;
  for (const auto& p : paths) names.push_back(std::filesystem::path(p).stem().string());
  io::write_text_atomic(a.report, report::eval_csv(result, names));
  if (!a.dump_difficulty.empty()) {
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      report::write_channel_maps(a.dump_difficulty, names[i] + "_difficulty", result.scenes[i].probe.difficulty);
    }
  }
  std::printf("mean psnr %s dB, mean ssim %s over %zu scenes\n", io::format_number(result.mean_psnr).c_str(),
              io::format_number(result.mean_ssim).c_str(), scenes.size());
  return kOk;
}

struct GradcheckArgs {
  gradsuite::SuiteOptions opts;
};

int run_gradcheck(const GradcheckArgs& a) {
  const auto results = gradsuite::run(a.opts);
  for (const auto& r : results) {
    std::printf("%s %-28s %-6s worst %s tol %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.path.c_str(),
                io::format_number(r.worst).c_str(), io::format_number(r.tol).c_str());
  }
  return gradsuite::all_passed(results) ? kOk : kCheckFailed;
}

struct FeatureArgs {
  std::string ckpt, cube, mask, out, config;
  Index stage = 1, block = 1;
  std::uint64_t seed = 0;
};

int run_dump_features(const FeatureArgs& a) {
  const io::RunConfig cfg = load_run_config(a.ckpt, a.config);
  const auto& net = cfg.train.network;
  if (a.stage < 1 || a.stage > net.stages) {
    throw ContractError("dump-features: --stage must lie in [1, " + std::to_string(net.stages) + "]");
  }
  if (a.block < 0 || a.block > net.blocks) {
    throw ContractError("dump-features: --block must lie in [0, " + std::to_string(net.blocks) + "]");
  }
  const auto params = load_model(a.ckpt, cfg);
  const auto cube = io::read_cube(a.cube);
  const auto mask = io::read_mask(a.mask);
  // Block 0 selects the stage output; blocks 1..L select the block outputs.
  const Index want_block = a.block == 0 ? net.blocks : a.block - 1;
  Tensor<float> captured;
  {
    NoGradGuard guard;
    const auto input = training::network_input(cube, mask, cfg.train, a.seed);
    network::full_forward<float>(input.data, params, net, false, [&](Index s, Index b, const Tensor<float>& x) {
      if (s == a.stage - 1 && b == want_block) captured = x.clone();
    });
  }
  const std::string prefix = "stage" + std::to_string(a.stage) + "_block" + std::to_string(a.block);
  const auto files = report::write_channel_maps(a.out, prefix, abs(captured));
  std::printf("wrote %zu channel maps to %s\n", files.size(), a.out.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"S2-Transformer snapshot spectral reconstruction"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "form a coded measurement from a cube");
  c_sim->add_option("--cube", sim.cube, "input cube (.hsc)")->required();
  c_sim->add_option("--mask", sim.mask, "coded mask (.msk)")->required();
  c_sim->add_option("--out", sim.out, "measurement, written as a 1-channel cube")->required();
  c_sim->add_option("--input-out", sim.input_out, "also write the shifted, re-masked network input");
  c_sim->add_option("--noise-sigma", sim.noise_sigma, "Gaussian read noise std")->check(CLI::NonNegativeNumber);
  c_sim->add_option("--seed", sim.seed, "noise seed");
  c_sim->add_option("--shear-step", sim.shear_step, "column shift per channel")->check(CLI::NonNegativeNumber);

  SynthArgs syn;
  auto* c_syn = app.add_subcommand("synth", "write synthetic blob cubes");
  c_syn->set_help_flag("--help", "print this help");  // frees --h for the height
  c_syn->add_option("--out", syn.out, "output directory")->required();
  c_syn->add_option("--count", syn.count)->check(CLI::PositiveNumber);
  c_syn->add_option("--h", syn.h)->check(CLI::PositiveNumber);
  c_syn->add_option("--w", syn.w)->check(CLI::PositiveNumber);
  c_syn->add_option("--nl", syn.nl)->check(CLI::PositiveNumber);
  c_syn->add_option("--blobs", syn.blobs)->check(CLI::PositiveNumber);
  c_syn->add_option("--seed", syn.seed, "scene i uses seed + i");

  MaskArgs msk;
  auto* c_msk = app.add_subcommand("make-mask", "write a random coded mask");
  c_msk->set_help_flag("--help", "print this help");
  c_msk->add_option("--out", msk.out)->required();
  c_msk->add_option("--h", msk.h)->check(CLI::PositiveNumber);
  c_msk->add_option("--w", msk.w)->check(CLI::PositiveNumber);
  c_msk->add_option("--kind", msk.kind, "binary or uniform");
  c_msk->add_option("--density", msk.density, "open fraction for binary masks")->check(CLI::Range(0.0, 1.0));
  c_msk->add_option("--seed", msk.seed);

  TrainArgs trn;
  auto* c_trn = app.add_subcommand("train", "fit a model; writes CKPT and CKPT.cfg");
  c_trn->add_option("--config", trn.config)->required();
  c_trn->add_option("--data", trn.data, "directory of .hsc cubes")->required();
  c_trn->add_option("--mask", trn.mask)->required();
  c_trn->add_option("--out", trn.out, "checkpoint path")->required();
  c_trn->add_option("--history", trn.history, "per-epoch CSV");
  c_trn->add_flag("--quiet", trn.quiet, "no per-epoch progress on stderr");

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "score a checkpoint on a directory of cubes");
  c_ev->add_option("--ckpt", ev.ckpt)->required();
  c_ev->add_option("--data", ev.data)->required();
  c_ev->add_option("--mask", ev.mask)->required();
  c_ev->add_option("--report", ev.report, "per-scene CSV")->required();
  c_ev->add_option("--dump-difficulty", ev.dump_difficulty, "directory for per-pixel error maps");
  c_ev->add_option("--config", ev.config, "config to use instead of CKPT.cfg");
  c_ev->add_option("--seed", ev.seed, "noise seed (default: the config seed)");

  GradcheckArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "finite-difference checks of every op and module");
  c_gc->add_option("--seed", gc.opts.seed);
  c_gc->add_option("--tol", gc.opts.tol_double, "double-path tolerance")->check(CLI::PositiveNumber);
  c_gc->add_option("--tol-single", gc.opts.tol_single, "single-path tolerance")->check(CLI::PositiveNumber);

  FeatureArgs ft;
  auto* c_ft = app.add_subcommand("dump-features", "write |feature| maps of one block as PGM images");
  c_ft->add_option("--ckpt", ft.ckpt)->required();
  c_ft->add_option("--cube", ft.cube)->required();
  c_ft->add_option("--mask", ft.mask)->required();
  c_ft->add_option("--stage", ft.stage, "1-based stage")->required();
  c_ft->add_option("--block", ft.block, "1-based block, or 0 for the stage output")->required();
  c_ft->add_option("--out", ft.out, "output directory")->required();
  c_ft->add_option("--config", ft.config, "config to use instead of CKPT.cfg");
  c_ft->add_option("--seed", ft.seed, "noise seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*c_sim) return run_simulate(sim);
    if (*c_syn) return run_synth(syn);
    if (*c_msk) return run_make_mask(msk);
    if (*c_trn) return run_train(trn);
    if (*c_ev) return run_eval(ev);
    if (*c_gc) return run_gradcheck(gc);
    if (*c_ft) return run_dump_features(ft);
  } catch (const training::TrainingError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kCheckFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInput;
  }
  return kUsage;
}
