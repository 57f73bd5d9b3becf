#pragma once

#include <memory>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace tbad {

/// Anything that maps (N, in_channels, D, H, W) to (N, out_classes, D, H, W)
/// logits. Pipelines only see this interface, so trained networks, stubs and
/// probes are interchangeable.
class SegmentationModel {
 public:
  virtual ~SegmentationModel() = default;
  virtual torch::Tensor forward(const torch::Tensor& input) = 0;
  virtual int in_channels() const = 0;
  virtual int out_classes() const = 0;
  /// Spatial extents must be multiples of this.
  virtual std::int64_t spatial_multiple() const { return 1; }
};

/// (N, in_channels, D, H, W) -> (N) logits; sigmoid(logit) = P(FLT present).
class ClassificationModel {
 public:
  virtual ~ClassificationModel() = default;
  virtual torch::Tensor forward(const torch::Tensor& input) = 0;
  virtual int in_channels() const = 0;
};

enum class SegmenterArch { unet3d, swin_unetr };
enum class ClassifierArch { densenet_small, densenet_large };

struct SegmenterConfig {
  SegmenterArch architecture = SegmenterArch::unet3d;
  int in_channels = 1;
  int out_classes = 4;
  int base_width = 16;
  /// Resolution levels, including full resolution.
  int depth = 4;
  /// Swin attention window edge, voxels.
  int window_size = 4;
  std::uint64_t seed = 0;

  void validate() const;
  std::int64_t spatial_multiple() const { return std::int64_t{1} << (depth - 1); }
};

struct ClassifierConfig {
  ClassifierArch architecture = ClassifierArch::densenet_small;
  int in_channels = 1;
  int growth_rate = 8;
  /// Layers per dense block; empty selects the architecture's toy preset.
  std::vector<int> block_config;
  std::uint64_t seed = 0;

  void validate() const;
  std::vector<int> blocks() const;
};

void to_json(nlohmann::json& j, const SegmenterConfig& c);
void from_json(const nlohmann::json& j, SegmenterConfig& c);
void to_json(nlohmann::json& j, const ClassifierConfig& c);
void from_json(const nlohmann::json& j, ClassifierConfig& c);

std::string to_string(SegmenterArch a);
SegmenterArch segmenter_arch_from(const std::string& s);
std::string to_string(ClassifierArch a);
ClassifierArch classifier_arch_from(const std::string& s);

/// Base class of the torch modules behind Segmenter.
struct SegmentationNet : torch::nn::Module {
  virtual torch::Tensor forward(torch::Tensor x) = 0;
};

class Segmenter final : public SegmentationModel {
 public:
  explicit Segmenter(const SegmenterConfig& cfg);

  torch::Tensor forward(const torch::Tensor& input) override;
  int in_channels() const override { return cfg_.in_channels; }
  int out_classes() const override { return cfg_.out_classes; }
  std::int64_t spatial_multiple() const override { return cfg_.spatial_multiple(); }

  const SegmenterConfig& config() const { return cfg_; }
  torch::nn::Module& module() { return *net_; }
  std::vector<torch::Tensor> parameters() const { return net_->parameters(); }

 private:
  SegmenterConfig cfg_;
  std::shared_ptr<SegmentationNet> net_;
};

struct ClassificationNet : torch::nn::Module {
  virtual torch::Tensor forward(torch::Tensor x) = 0;
};

class Classifier final : public ClassificationModel {
 public:
  explicit Classifier(const ClassifierConfig& cfg);

  torch::Tensor forward(const torch::Tensor& input) override;
  int in_channels() const override { return cfg_.in_channels; }

  const ClassifierConfig& config() const { return cfg_; }
  torch::nn::Module& module() { return *net_; }
  std::vector<torch::Tensor> parameters() const { return net_->parameters(); }

 private:
  ClassifierConfig cfg_;
  std::shared_ptr<ClassificationNet> net_;
};

std::unique_ptr<Segmenter> build_segmenter(const SegmenterConfig& cfg);
std::unique_ptr<Classifier> build_classifier(const ClassifierConfig& cfg);

/// Order-sensitive digest of all parameter values; equal for equal weights.
double parameter_checksum(const torch::nn::Module& module);

}  // namespace tbad
