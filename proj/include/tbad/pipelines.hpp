#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "tbad/image.hpp"
#include "tbad/networks.hpp"

namespace tbad {

enum class PipelineKind { single_step, sequential, multitask, ensemble };

std::string to_string(PipelineKind k);
PipelineKind pipeline_kind_from(const std::string& s);

/// Patch-wise inference settings. Without a patch size the whole volume is
/// passed in one forward call (padded to the network's spatial multiple).
struct InferenceOptions {
  std::optional<Index3> patch_size;
  double overlap = 0.5;
};

struct PipelineConfig {
  PipelineKind kind = PipelineKind::single_step;
  /// Stage name -> checkpoint. Required names per kind are listed by required_stages().
  std::map<std::string, std::filesystem::path> checkpoints;
  bool bypass_classifier = true;
  double flt_probability_threshold = 0.5;
  /// Grid the classifier sees; the volume is trilinearly resized to it.
  Index3 classifier_input_shape{64, 64, 64};
  InferenceOptions inference;

  /// Throws config errors for incomplete stage sets. Ensemble members are the
  /// stages whose names start with "member".
  void validate() const;
  std::vector<std::string> required_stages() const;
};

void to_json(nlohmann::json& j, const PipelineConfig& c);
void from_json(const nlohmann::json& j, PipelineConfig& c);

/// Class probabilities on the grid of a Volume. probs is float64 (K, D, H, W).
struct ProbabilityMap {
  torch::Tensor probs;
  Vec3 spacing{1.0, 1.0, 1.0};
  Affine affine = diagonal_affine({1.0, 1.0, 1.0});
  std::string id;

  std::int64_t classes() const { return probs.size(0); }
  Index3 shape() const;
  /// Per-voxel argmax; ties go to the lower class index.
  LabelMap argmax() const;
  /// Probability of one class as a (D, H, W) tensor.
  torch::Tensor channel(std::int64_t k) const { return probs[k]; }
};

struct PipelineResult {
  LabelMap label;
  ProbabilityMap probs;
  /// sigmoid(classifier logit) when the classifier ran.
  std::optional<double> flt_probability;
};

/// {1,2,3} -> 1.
LabelMap derive_aorta_label(const LabelMap& label);
/// 3 -> 1, everything else 0.
LabelMap derive_flt_label(const LabelMap& label);
/// TL -> 1, FL -> 2; thrombosis joins the background.
LabelMap derive_tlfl_label(const LabelMap& label);

/// (1, D, H, W) float tensor of a Volume.
torch::Tensor image_channel(const Volume& image);

/// Softmax probabilities (K, D, H, W) float64 for a (C, D, H, W) input.
/// Overlapping windows advance by patch * (1 - overlap), the last window on
/// each axis is aligned to the far edge, and probabilities are averaged
/// uniformly where windows overlap.
torch::Tensor sliding_window_probs(const torch::Tensor& input, SegmentationModel& model,
                                   const InferenceOptions& options);

ProbabilityMap sliding_window_inference(const Volume& image, SegmentationModel& model, const Index3& patch_size,
                                        double overlap = 0.5);

ProbabilityMap probability_map_like(const Volume& image, torch::Tensor probs);

PipelineResult run_single_step(const Volume& image, SegmentationModel& segmenter, const InferenceOptions& options = {});

/// Stage-2 input: image plus stage-1 aorta probability, (2, D, H, W).
torch::Tensor sequential_input(const Volume& image, SegmentationModel& aorta_segmenter,
                               const InferenceOptions& options = {});

PipelineResult run_sequential(const Volume& image, SegmentationModel& aorta_segmenter,
                              SegmentationModel& refine_segmenter, const InferenceOptions& options = {});

/// (image, P(FLT), P(TL or FL)) as a (3, D, H, W) input of the fusion network.
torch::Tensor fusion_input(const Volume& image, const torch::Tensor& flt_channel, const torch::Tensor& tlfl_channel);

/// Fusion stage alone, so callers can inject arbitrary (e.g. oracle) channels.
PipelineResult fuse_multitask(const Volume& image, const torch::Tensor& flt_channel, const torch::Tensor& tlfl_channel,
                              SegmentationModel& fusion_segmenter, const InferenceOptions& options = {});

/// The two upstream channels computed by the FLT and TL/FL segmenters.
std::pair<torch::Tensor, torch::Tensor> multitask_channels(const Volume& image, SegmentationModel& flt_segmenter,
                                                           SegmentationModel& tlfl_segmenter,
                                                           const InferenceOptions& options = {});

/// sigmoid(classifier(resized image)).
double classifier_probability(const Volume& image, ClassificationModel& classifier, const Index3& input_shape);

/// `classifier` may be null only when cfg.bypass_classifier is set.
PipelineResult run_multitask(const Volume& image, ClassificationModel* classifier, SegmentationModel& flt_segmenter,
                             SegmentationModel& tlfl_segmenter, SegmentationModel& fusion_segmenter,
                             const PipelineConfig& cfg);

/// Mean of the members' softmax outputs.
PipelineResult run_ensemble(const Volume& image, const std::vector<SegmentationModel*>& members,
                            const InferenceOptions& options = {});

/// Networks of one pipeline, keyed by stage name as in PipelineConfig.
struct PipelineModels {
  std::map<std::string, SegmentationModel*> segmenters;
  ClassificationModel* classifier = nullptr;
};

PipelineResult run_pipeline(const Volume& image, const PipelineConfig& cfg, const PipelineModels& models);

}  // namespace tbad
