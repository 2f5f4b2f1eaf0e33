#include "s2t/report.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>

#include "s2t/io.hpp"

namespace s2t::report {

using io::format_number;

std::string history_csv(const std::vector<training::EpochRecord>& history) {
  std::string out = "epoch,phase,lr,recon,me,ma,total,masked_mae,unmasked_mae\n";
  for (const auto& e : history) {
    const std::string phase = e.recon_only ? "recon" : objective::phase_name(e.phase);
    out += std::to_string(e.epoch) + "," + phase + "," + format_number(e.lr) + "," + format_number(e.recon) + "," +
           format_number(e.me) + "," + format_number(e.ma) + "," + format_number(e.total) + "," +
           format_number(e.masked_mae) + "," + format_number(e.unmasked_mae) + "\n";
  }
  return out;
}

std::string eval_csv(const training::EvalResult& result, const std::vector<std::string>& scene_names) {
  if (scene_names.size() != result.scenes.size()) {
    throw ContractError("eval_csv: " + std::to_string(scene_names.size()) + " names for " +
                        std::to_string(result.scenes.size()) + " scenes");
  }
  std::string out = "scene,psnr_db,psnr_infinite,ssim,masked_mae,unmasked_mae,ratio,ratio_defined\n";
  for (std::size_t i = 0; i < result.scenes.size(); ++i) {
    const auto& s = result.scenes[i];
    out += scene_names[i] + "," + format_number(s.psnr.db) + "," + (s.psnr.infinite ? "1" : "0") + "," +
           format_number(s.ssim) + "," + format_number(s.probe.masked_mae) + "," +
           format_number(s.probe.unmasked_mae) + "," + format_number(s.probe.ratio) + "," +
           (s.probe.ratio_defined ? "1" : "0") + "\n";
  }
  bool all_infinite = !result.scenes.empty();
  for (const auto& s : result.scenes) all_infinite = all_infinite && s.psnr.infinite;
  const double ratio = result.mean_unmasked_mae > 0 ? result.mean_masked_mae / result.mean_unmasked_mae : 0.0;
  out += "mean," + format_number(result.mean_psnr) + "," + (all_infinite ? "1" : "0") + "," +
         format_number(result.mean_ssim) + "," + format_number(result.mean_masked_mae) + "," +
         format_number(result.mean_unmasked_mae) + "," + format_number(ratio) + "," +
         (result.mean_unmasked_mae > 0 ? "1" : "0") + "\n";
  return out;
}

std::vector<std::string> write_channel_maps(const std::string& dir, const std::string& prefix,
                                            const Tensor<float>& maps) {
  if (maps.rank() != 3) throw DimensionError("write_channel_maps: expected [H, W, C], got " + shape_str(maps.shape()));
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw io::IoError("cannot create directory '" + dir + "': " + ec.message());
  const Index h = maps.dim(0), w = maps.dim(1), c = maps.dim(2);
  std::vector<std::string> paths;
  std::vector<float> plane(static_cast<std::size_t>(h * w));
  for (Index ch = 0; ch < c; ++ch) {
    for (Index i = 0; i < h * w; ++i) plane[static_cast<std::size_t>(i)] = maps[i * c + ch];
    char name[32];
    std::snprintf(name, sizeof name, "_c%02lld", static_cast<long long>(ch));
    const std::string base = (std::filesystem::path(dir) / (prefix + name)).string();
    const double max = io::write_pgm(base + ".pgm", h, w, plane);
    io::write_text_atomic(base + ".max", format_number(max) + "\n");
    paths.push_back(base + ".pgm");
  }
  return paths;
}

std::vector<std::string> list_cubes(const std::string& dir) {
  std::error_code ec;
  std::filesystem::directory_iterator it(dir, ec);
  if (ec) throw io::IoError("cannot list '" + dir + "': " + ec.message());
  std::vector<std::string> out;
  for (const auto& entry : it) {
    if (entry.is_regular_file() && entry.path().extension() == ".hsc") out.push_back(entry.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace s2t::report
