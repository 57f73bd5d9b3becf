#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "tbad/augment.hpp"
#include "tbad/cohort.hpp"
#include "tbad/losses.hpp"
#include "tbad/networks.hpp"
#include "tbad/pipelines.hpp"

namespace tbad {

namespace fs = std::filesystem;

struct TrainConfig {
  double initial_lr = 1e-4;
  double lr_decay_factor = 0.1;
  int lr_step_epochs = 30;
  double weight_decay = 1e-5;
  int batch_size = 1;
  int epochs_primary = 50;
  int epochs_cascade = 20;
  LossKind loss = LossKind::dcel;
  /// Only "adamw" (Adam with decoupled weight decay) is provided.
  std::string optimizer = "adamw";
  bool include_background = true;
  /// 0 prepares batches on the training thread; 1 prefetches them on a worker.
  /// Either way the batch contents are identical for a given seed.
  int prefetch_workers = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// initial_lr * decay^floor(epoch / step).
double lr_at(int epoch, const TrainConfig& cfg);

/// What the segmenter of a stage learns to predict.
enum class TargetKind {
  four_class,  // bg, TL, FL, FLT
  aorta,       // bg, aorta
  flt,         // rest, FLT
  tlfl,        // bg, TL, FL
};

std::string to_string(TargetKind k);
TargetKind target_kind_from(const std::string& s);
int target_classes(TargetKind k);
LabelMap derive_target(const LabelMap& four_class, TargetKind k);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  /// Mean validation Dice over the target's foreground classes. Classifier
  /// stages store validation accuracy here.
  double val_mean_dc = 0.0;
  std::optional<double> val_true_flt_dc;
  std::vector<double> val_class_dc;
  double lr = 0.0;
  double wall_time_s = 0.0;
};

class TrainingHistory {
 public:
  /// Epoch indices must increase.
  void append(const EpochRecord& r);
  const std::vector<EpochRecord>& records() const { return records_; }
  bool empty() const { return records_.empty(); }
  std::size_t size() const { return records_.size(); }
  const EpochRecord& back() const { return records_.back(); }

 private:
  std::vector<EpochRecord> records_;
};

void to_json(nlohmann::json& j, const TrainingHistory& h);
void from_json(const nlohmann::json& j, TrainingHistory& h);

/// Epoch maximising (val_mean_dc + val_true_flt_dc) / 2, or val_mean_dc alone
/// when the validation split has no FLT-positive case. Ties go to the earliest epoch.
int select_best(const TrainingHistory& history);

/// One sample of a stage: the preprocessed image, any upstream channels
/// (frozen predictions of earlier stages) and the stage target.
struct TrainingCase {
  Volume image;
  std::vector<Array3<float>> extra_channels;
  LabelMap target;
  bool has_flt = false;

  int channels() const { return 1 + static_cast<int>(extra_channels.size()); }
  /// (C, D, H, W) float tensor.
  torch::Tensor input_tensor() const;
};

/// Derives the target from a four-class label; no extra channels.
TrainingCase make_training_case(const Volume& image, const LabelMap& four_class, TargetKind target);

/// Appends (D, H, W) tensors as extra input channels.
TrainingCase with_channels(TrainingCase c, const std::vector<torch::Tensor>& channels);

struct StageSpec {
  std::string name = "segmenter";
  SegmenterConfig network;
  TargetKind target = TargetKind::four_class;
  int epochs = 50;
  AugmentConfig augment;
  /// Whole-volume validation inference settings.
  InferenceOptions validation;
  /// Checkpoint to continue from; training resumes at its epoch + 1.
  std::optional<fs::path> resume_from;
};

struct StageResult {
  fs::path stage_dir;
  std::vector<fs::path> checkpoints;
  int best_epoch = 0;
  fs::path best_checkpoint;
  TrainingHistory history;
};

/// Per-step observer (epoch, step, loss), mainly for progress output.
using StepCallback = std::function<void(int, int, double)>;

/// Trains one segmentation stage and writes <stage_dir>/<epoch>.ckpt, a
/// `best` pointer file naming the selected checkpoint, and history.json.
StageResult train_stage(const StageSpec& spec, const std::vector<TrainingCase>& train,
                        const std::vector<TrainingCase>& validation, const TrainConfig& cfg, const fs::path& stage_dir,
                        const StepCallback& on_step = {});

/// Selects train and validation cases of a fold from `cases` by id.
StageResult train_stage(const StageSpec& spec, const FoldSplit& fold, const std::map<std::string, TrainingCase>& cases,
                        const TrainConfig& cfg, const fs::path& stage_dir, const StepCallback& on_step = {});

struct ClassifierStageSpec {
  std::string name = "classifier";
  ClassifierConfig network;
  int epochs = 50;
  Index3 input_shape{64, 64, 64};
};

/// Binary FLT-presence training with a logistic loss on resized whole volumes.
StageResult train_classifier(const ClassifierStageSpec& spec, const std::vector<TrainingCase>& train,
                             const std::vector<TrainingCase>& validation, const TrainConfig& cfg,
                             const fs::path& stage_dir, const StepCallback& on_step = {});

/// Validation metrics of a segmenter on whole volumes, as stored in EpochRecord.
struct ValidationScores {
  double mean_dc = 0.0;
  std::optional<double> true_flt_dc;
  std::vector<double> class_dc;
};
ValidationScores validate_segmenter(SegmentationModel& model, const std::vector<TrainingCase>& cases,
                                    TargetKind target, const InferenceOptions& options);

inline constexpr int kCheckpointFormat = 1;

struct CheckpointMeta {
  int format_version = kCheckpointFormat;
  std::string kind;  // "segmenter" or "classifier"
  std::string stage;
  int epoch = 0;
  nlohmann::json network;
  nlohmann::json train;
  std::string target;
  TrainingHistory history;
};

struct LoadedSegmenter {
  std::unique_ptr<Segmenter> model;
  CheckpointMeta meta;
};

struct LoadedClassifier {
  std::unique_ptr<Classifier> model;
  CheckpointMeta meta;
};

CheckpointMeta read_checkpoint_meta(const fs::path& path);
LoadedSegmenter load_segmenter(const fs::path& path);
LoadedClassifier load_classifier(const fs::path& path);

/// Checkpoint named by <stage_dir>/best.
fs::path best_checkpoint(const fs::path& stage_dir);

/// <output>/runs/<run_id>/fold<k>-<stage>
fs::path stage_directory(const fs::path& output_dir, const std::string& run_id, int fold, const std::string& stage);

}  // namespace tbad
