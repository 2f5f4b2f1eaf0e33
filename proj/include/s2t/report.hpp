#pragma once

#include <string>
#include <vector>

#include "s2t/training.hpp"

namespace s2t::report {

/// Header: epoch,phase,lr,recon,me,ma,total,masked_mae,unmasked_mae.
/// phase is ME, MA, or recon for the reconstruction-only objective.
std::string history_csv(const std::vector<training::EpochRecord>& history);

/// Header: scene,psnr_db,psnr_infinite,ssim,masked_mae,unmasked_mae,ratio,ratio_defined,
/// one row per scene followed by a row named "mean".
std::string eval_csv(const training::EvalResult& result, const std::vector<std::string>& scene_names);

/// One 8-bit PGM per channel of maps[H, W, C], named <prefix>_cNN.pgm, each
/// with a <prefix>_cNN.max sidecar holding the value mapped to 255.
/// Returns the PGM paths.
std::vector<std::string> write_channel_maps(const std::string& dir, const std::string& prefix,
                                            const Tensor<float>& maps);

/// Sorted paths of the *.hsc files in `dir`.
std::vector<std::string> list_cubes(const std::string& dir);

}  // namespace s2t::report
