#pragma once

#include "advdef/core/image_tensor.hpp"
#include "advdef/eval/evaluation.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace advdef::cli {

// Recovered (solid) and no-defense (dashed) accuracy against iteration count,
// one colour per epsilon.
void write_sweep_svg(const std::filesystem::path& file, const std::vector<eval::SweepCurve>& curves,
                     const std::string& family);

// Two panels of grouped bars per row: MAE and PSNR (inf capped at 60 dB),
// attacked vs restored.
void write_fidelity_svg(const std::filesystem::path& file, const std::vector<eval::FidelityRow>& rows);

// Grid of images: one row per entry of `rows`, columns are the images of each
// row's batch. All rows must share the image shape. Pixels are upscaled by
// `scale` (nearest).
void write_image_grid_png(const std::filesystem::path& file, const std::vector<ImageTensor>& rows, int scale = 3);

}  // namespace advdef::cli
