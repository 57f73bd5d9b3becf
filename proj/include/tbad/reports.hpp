#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "tbad/image.hpp"
#include "tbad/training.hpp"

namespace tbad {

using Rgb = std::array<std::uint8_t, 3>;

/// TL green, FL yellow, FLT red; background has no overlay.
Rgb class_color(std::uint8_t class_id);

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB

  Rgb at(int x, int y) const;
};

/// Three orthogonal mid-slices (axial, coronal, sagittal) per row, one row per
/// label map; with no label map a single row of the bare image. Each voxel is
/// drawn as a `scale` x `scale` block.
RgbImage compose_overlay(const Volume& image, const std::vector<LabelMap>& labels, int scale = 2,
                         double alpha = 0.55);

/// Pixel origin of panel (row, column) in a composed overlay.
std::pair<int, int> overlay_panel_origin(const Volume& image, int row, int column, int scale = 2);

void write_png(const RgbImage& image, const fs::path& path);
RgbImage read_png(const fs::path& path);

/// compose_overlay + write_png. Misaligned labels are contract errors.
void render_overlay(const Volume& image, const std::vector<LabelMap>& labels, const fs::path& out_path);

using NamedHistory = std::pair<std::string, TrainingHistory>;

/// Training loss and validation DC per run on shared epoch axes, as SVG.
std::string history_svg(const std::vector<NamedHistory>& histories);
void plot_history(const std::vector<NamedHistory>& histories, const fs::path& out_path);

}  // namespace tbad
