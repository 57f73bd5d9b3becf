#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tbad/cohort.hpp"
#include "tbad/image.hpp"

namespace tbad {

/// Foreground classes reported in the tables, in column order.
inline constexpr std::array<LabelClass, 3> kReportedClasses{LabelClass::true_lumen, LabelClass::false_lumen,
                                                            LabelClass::thrombosis};
inline constexpr std::array<const char*, 3> kReportedClassNames{"TL", "FL", "FLT"};

/// 2|P n G| / (|P| + |G|); 1 when both are empty, 0 when exactly one is.
double dice_coefficient(const LabelMap& pred, const LabelMap& gt, std::uint8_t class_id);

/// Class voxels with at least one of their six face neighbours outside the
/// class (voxels on the grid border count as boundary).
Array3<std::uint8_t> boundary_mask(const LabelMap& label, std::uint8_t class_id);

/// Exact squared Euclidean distance (mm^2) from every voxel to the nearest set
/// voxel of `mask`; +inf everywhere when the mask is empty.
Array3<double> squared_distance_transform(const Array3<std::uint8_t>& mask, const Vec3& spacing);

struct HausdorffOptions {
  /// 100 gives the exact maximum; lower values give the percentile variant (e.g. 95).
  double percentile = 100.0;
};

/// Symmetric boundary Hausdorff distance in mm; nullopt when either class mask
/// is empty (the case is ineligible and is skipped by aggregation).
std::optional<double> hausdorff_mm(const LabelMap& pred, const LabelMap& gt, std::uint8_t class_id, const Vec3& spacing,
                                   const HausdorffOptions& options = {});

struct MeanStd {
  double mean = 0.0;
  /// Population standard deviation.
  double std = 0.0;
  std::size_t count = 0;
};

std::optional<MeanStd> summarize(std::span<const double> values);

struct CaseMetrics {
  std::string id;
  std::array<double, 3> dice{};
  std::array<std::optional<double>, 3> hd{};
  bool gt_has_flt = false;
  bool pred_has_flt = false;
};

CaseMetrics evaluate_case(const LabelMap& pred, const LabelMap& gt, const HausdorffOptions& options = {});

/// FLT Dice over FLT-positive cases only; nullopt for an empty subset.
std::optional<MeanStd> true_flt_dice(std::span<const CaseMetrics> cases);

struct ClassifierScores {
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
  std::size_t true_positive = 0;
  std::size_t false_positive = 0;
  std::size_t false_negative = 0;
  std::size_t true_negative = 0;
};

/// FLT-present is the positive class; undefined ratios are absent, not zero.
ClassifierScores classifier_metrics(const std::vector<bool>& predicted, const std::vector<bool>& actual);

struct AggregateReport {
  std::vector<CaseMetrics> cases;
  std::array<std::optional<MeanStd>, 3> dice;
  std::optional<MeanStd> true_flt;
  std::array<std::optional<MeanStd>, 3> hd;
  ClassifierScores classifier;
  std::vector<std::string> failed_cases;
};

/// One row per id in `ground_truths`; a missing prediction is recorded in
/// failed_cases and excluded. FLT presence comes from the manifest when the case
/// is listed there. `classifier_flags`, when given, replace the
/// segmentation-derived prediction flags for the classifier scores.
AggregateReport evaluate_cohort(const std::map<std::string, LabelMap>& predictions,
                                const std::map<std::string, LabelMap>& ground_truths, const CohortManifest& manifest,
                                const HausdorffOptions& options = {},
                                const std::map<std::string, bool>* classifier_flags = nullptr);

nlohmann::json report_to_json(const AggregateReport& report);

std::string format_mean_std(const std::optional<MeanStd>& value, int digits = 2);

/// Rows of the Dice table: Method, Phase, TL, FL, FLT, True FLT.
struct DiceTableRow {
  std::string method;
  std::string phase;
  const AggregateReport* report = nullptr;
};
std::string dice_table_csv(std::span<const DiceTableRow> rows);

/// Rows of the Hausdorff table: Phase, Method, TL, FL, FLT.
std::string hausdorff_table_csv(std::span<const DiceTableRow> rows);

}  // namespace tbad
