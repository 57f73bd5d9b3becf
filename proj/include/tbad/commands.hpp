#pragma once

#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tbad/metrics.hpp"
#include "tbad/run_config.hpp"

namespace tbad {

/// Library side of the `tbad` subcommands. Each function reads what it needs
/// from the run configuration and writes its artifacts below cfg.output_dir.

struct PhantomCommand {
  int n = 20;
  double flt_fraction = 0.68;
  std::uint64_t seed = 0;
  fs::path out = "data";
};

CohortManifest cmd_phantom(const PhantomCommand& cmd, std::ostream& log);

/// Scans the data source (generating the phantom cohort first when configured)
/// and writes manifest.json.
CohortManifest cmd_ingest(const RunConfig& cfg, std::ostream& log);

/// Clip, resample and crop every manifest case into preprocessed/.
void cmd_preprocess(const RunConfig& cfg, std::ostream& log);

SplitFile cmd_split(const RunConfig& cfg, std::ostream& log);

/// Stages trained for the configured pipeline kind, in dependency order.
struct StagePlan {
  std::string name;
  bool classifier = false;
  SegmenterConfig network;
  TargetKind target = TargetKind::four_class;
  int epochs = 0;
  /// Upstream stages whose frozen predictions feed this stage.
  std::vector<std::string> inputs;
};
std::vector<StagePlan> plan_stages(const RunConfig& cfg);

/// Trains every stage of the pipeline (or only `only_stage`) for one fold.
void cmd_train(const RunConfig& cfg, int fold, const std::optional<std::string>& only_stage, std::ostream& log);

/// Runs the pipeline on the fold's test cases and writes predictions,
/// metrics.json, dice_table.csv and hausdorff_table.csv.
AggregateReport cmd_evaluate(const RunConfig& cfg, int fold, std::ostream& log);

/// Collects every evaluated fold into tables and plots all training histories.
void cmd_report(const RunConfig& cfg, std::ostream& log);

/// Overlay of the ground truth and the fold's prediction for one case.
fs::path cmd_visualize(const RunConfig& cfg, int fold, const std::string& case_id, std::ostream& log);

/// Preprocessed case plus the geometry needed to undo the crop.
struct StoredCase {
  Volume volume;
  std::optional<LabelMap> label;
  CropBox box;
  GridGeometry resampled_grid;
};
StoredCase load_preprocessed(const RunConfig& cfg, const std::string& id);

std::string method_name(PipelineKind kind);

}  // namespace tbad
