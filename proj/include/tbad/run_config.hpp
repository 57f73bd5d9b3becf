#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "tbad/augment.hpp"
#include "tbad/networks.hpp"
#include "tbad/nifti_io.hpp"
#include "tbad/phantom.hpp"
#include "tbad/pipelines.hpp"
#include "tbad/preprocess.hpp"
#include "tbad/training.hpp"

namespace tbad {

struct PhantomSource {
  int n = 100;
  double flt_fraction = 0.68;
  std::uint64_t seed = 0;
};

struct CohortSettings {
  std::string protocol = "kfold";  // or "holdout"
  int k = 5;
  int n_train = 80;
  int n_val = 10;
  int n_test = 10;
  std::uint64_t seed = 0;
};

/// One document describing a whole run. Exactly one data source: either a
/// directory of NIfTI cases or a phantom cohort generated under the output dir.
struct RunConfig {
  std::string run_id = "run";
  std::uint64_t seed = 0;
  std::optional<fs::path> data_dir;
  std::optional<PhantomSource> phantom;
  LabelRemap label_remap;
  PreprocessConfig preprocess;
  AugmentConfig augment;
  CohortSettings cohort;
  SegmenterConfig network;
  /// Second ensemble member; the first uses `network`.
  SegmenterConfig ensemble_partner{SegmenterArch::swin_unetr};
  ClassifierConfig classifier;
  TrainConfig train;
  PipelineConfig pipeline;
  fs::path output_dir = "out";

  void validate() const;

  /// Where the cases live: data_dir, or <output>/phantoms.
  fs::path cases_dir() const;
  fs::path manifest_path() const { return output_dir / "manifest.json"; }
  fs::path splits_path() const { return output_dir / "splits.json"; }
  fs::path preprocessed_dir() const { return output_dir / "preprocessed"; }
  fs::path stage_dir(int fold, const std::string& stage) const {
    return stage_directory(output_dir, run_id, fold, stage);
  }
  fs::path evaluation_dir(int fold) const { return stage_dir(fold, "evaluate"); }
};

/// Parses a TOML run file. Unknown sections or keys are config errors. Relative
/// paths are resolved against the file's directory.
RunConfig load_run_config(const fs::path& path);
RunConfig parse_run_config(const std::string& text, const fs::path& base_dir = ".");

}  // namespace tbad
