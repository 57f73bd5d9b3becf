#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "tbad/image.hpp"
#include "tbad/nifti_io.hpp"

namespace tbad {

inline constexpr int kManifestSchemaVersion = 1;
inline constexpr int kSplitsSchemaVersion = 1;

struct CaseRecord {
  std::string id;
  fs::path image_path;
  fs::path label_path;
  bool has_flt = false;
  Index3 shape{};
  Vec3 spacing{};
};

struct CohortManifest {
  std::vector<CaseRecord> cases;
  /// Images found without a matching label; kept out of every supervised split.
  std::vector<std::string> unlabeled;
  std::vector<std::string> warnings;

  const CaseRecord& find(const std::string& id) const;
  std::size_t flt_positive_count() const;
};

/// Scans `<dir>/<id>_image.nii[.gz]` / `<dir>/<id>_label.nii[.gz]` pairs.
CohortManifest build_manifest(const fs::path& data_dir, const LabelRemap& remap = {});

struct FoldSplit {
  int fold_index = 0;
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
};

/// FLT-positive and FLT-negative cases are shuffled separately and dealt
/// round-robin (negatives continue where positives stopped) into k buckets.
/// Fold i tests bucket i, validates on bucket (i+1) mod k and trains on the rest.
std::vector<FoldSplit> stratified_folds(const CohortManifest& manifest, int k = 5, std::uint64_t seed = 0);

/// Single stratified train/validation/test split; FLT-positive counts per role
/// use largest-remainder apportionment.
FoldSplit holdout_split(const CohortManifest& manifest, int n_train = 80, int n_val = 10, int n_test = 10,
                        std::uint64_t seed = 0);

void to_json(nlohmann::json& j, const CaseRecord& r);
void from_json(const nlohmann::json& j, CaseRecord& r);
void to_json(nlohmann::json& j, const FoldSplit& s);
void from_json(const nlohmann::json& j, FoldSplit& s);

nlohmann::json manifest_to_json(const CohortManifest& manifest);
CohortManifest manifest_from_json(const nlohmann::json& j);
void write_manifest(const CohortManifest& manifest, const fs::path& path);
CohortManifest read_manifest(const fs::path& path);

struct SplitFile {
  std::string protocol;  // "kfold" or "holdout"
  int k = 0;
  std::uint64_t seed = 0;
  std::vector<FoldSplit> folds;
};

void write_splits(const SplitFile& splits, const fs::path& path);
SplitFile read_splits(const fs::path& path);

/// Writes pretty-printed JSON with a trailing newline; byte-stable for equal input.
void write_json_file(const nlohmann::json& j, const fs::path& path);
nlohmann::json read_json_file(const fs::path& path);

}  // namespace tbad
