#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "tbad/image.hpp"

namespace tbad {

namespace fs = std::filesystem;

/// Translation from the integer codes found in a dataset's label files to the
/// library's {0,1,2,3} class codes. An empty table means "already canonical".
struct LabelRemap {
  std::map<std::int64_t, std::uint8_t> table;

  bool empty() const noexcept { return table.empty(); }
};

struct NiftiHeaderInfo {
  Index3 shape{};
  Vec3 spacing{};
  Affine affine{};
  int datatype = 0;
};

/// Reads only the header of a .nii / .nii.gz file.
NiftiHeaderInfo read_nifti_header(const fs::path& path);

/// Intensities are converted to float32 after applying scl_slope / scl_inter.
Volume read_volume(const fs::path& path);

/// Label values must be integral and map into {0,1,2,3} (directly or via `remap`).
LabelMap read_label(const fs::path& path, const LabelRemap& remap = {});

/// gzip-compressed when the extension is .gz, raw otherwise.
void write_volume(const Volume& volume, const fs::path& path);
void write_label(const LabelMap& label, const fs::path& path);

struct LoadedCase {
  Volume volume;
  std::optional<LabelMap> label;
};

LoadedCase load_case(const fs::path& image_path, const std::optional<fs::path>& label_path,
                     const LabelRemap& remap = {});

struct SavedCase {
  fs::path image;
  std::optional<fs::path> label;
};

/// Writes `<dir>/<id>_image.nii.gz` and, if given, `<dir>/<id>_label.nii.gz`.
SavedCase save_case(const Volume& volume, const std::optional<LabelMap>& label, const fs::path& dir);

fs::path image_path_for(const fs::path& dir, const std::string& id);
fs::path label_path_for(const fs::path& dir, const std::string& id);

/// Case id if `filename` follows the `<id>_image.nii[.gz]` convention.
std::optional<std::string> case_id_from_image_name(const std::string& filename);

}  // namespace tbad
