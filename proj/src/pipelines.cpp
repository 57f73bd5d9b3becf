#include "tbad/pipelines.hpp"

#include <algorithm>

#include "tbad/error.hpp"
#include "tbad/tensor_bridge.hpp"

namespace tbad {

namespace F = torch::nn::functional;

std::string to_string(PipelineKind k) {
  switch (k) {
    case PipelineKind::single_step: return "single_step";
    case PipelineKind::sequential: return "sequential";
    case PipelineKind::multitask: return "multitask";
    case PipelineKind::ensemble: return "ensemble";
  }
  return "?";
}

PipelineKind pipeline_kind_from(const std::string& s) {
  for (auto k : {PipelineKind::single_step, PipelineKind::sequential, PipelineKind::multitask, PipelineKind::ensemble})
    if (to_string(k) == s) return k;
  fail(ErrorCode::config, "unknown pipeline kind '" + s + "'");
}

std::vector<std::string> PipelineConfig::required_stages() const {
  switch (kind) {
    case PipelineKind::single_step: return {"segmenter"};
    case PipelineKind::sequential: return {"aorta", "refine"};
    case PipelineKind::multitask: {
      std::vector<std::string> s{"flt", "tlfl", "fusion"};
      if (!bypass_classifier) s.insert(s.begin(), "classifier");
      return s;
    }
    case PipelineKind::ensemble: {
      std::vector<std::string> s;
      for (const auto& [name, path] : checkpoints)
        if (name.rfind("member", 0) == 0) s.push_back(name);
      return s;
    }
  }
  return {};
}

void PipelineConfig::validate() const {
  require(flt_probability_threshold >= 0.0 && flt_probability_threshold <= 1.0, ErrorCode::config,
          "flt_probability_threshold must lie in [0,1]");
  require(inference.overlap >= 0.0 && inference.overlap < 1.0, ErrorCode::config, "overlap must lie in [0,1)");
  const auto stages = required_stages();
  if (kind == PipelineKind::ensemble)
    require(!stages.empty(), ErrorCode::config, "ensemble needs at least one 'member*' stage");
  for (const auto& s : stages)
    require(checkpoints.count(s) == 1, ErrorCode::config, to_string(kind) + " pipeline is missing stage '" + s + "'");
}

void to_json(nlohmann::json& j, const PipelineConfig& c) {
  nlohmann::json ck = nlohmann::json::object();
  for (const auto& [k, v] : c.checkpoints) ck[k] = v.string();
  j = {{"kind", to_string(c.kind)},
       {"checkpoints", ck},
       {"bypass_classifier", c.bypass_classifier},
       {"flt_probability_threshold", c.flt_probability_threshold},
       {"classifier_input_shape", c.classifier_input_shape},
       {"overlap", c.inference.overlap}};
  if (c.inference.patch_size) j["patch_size"] = *c.inference.patch_size;
}

void from_json(const nlohmann::json& j, PipelineConfig& c) {
  c.kind = pipeline_kind_from(j.at("kind").get<std::string>());
  c.checkpoints.clear();
  for (const auto& [k, v] : j.at("checkpoints").items()) c.checkpoints[k] = v.get<std::string>();
  c.bypass_classifier = j.at("bypass_classifier").get<bool>();
  c.flt_probability_threshold = j.at("flt_probability_threshold").get<double>();
  c.classifier_input_shape = j.at("classifier_input_shape").get<Index3>();
  c.inference.overlap = j.at("overlap").get<double>();
  if (j.contains("patch_size"))
    c.inference.patch_size = j.at("patch_size").get<Index3>();
  else
    c.inference.patch_size.reset();
}

Index3 ProbabilityMap::shape() const { return shape_of(probs); }

LabelMap ProbabilityMap::argmax() const {
  LabelMap out;
  out.data = label_array_from(torch::argmax(probs, 0));
  out.spacing = spacing;
  out.affine = affine;
  out.id = id;
  return out;
}

namespace {

LabelMap map_labels(const LabelMap& label, const std::array<std::uint8_t, 4>& table) {
  LabelMap out = label;
  for (auto& v : out.data.values()) {
    require(v <= kMaxLabel, ErrorCode::corrupt_label, "label value " + std::to_string(v) + " is not a class code");
    v = table[v];
  }
  return out;
}

std::vector<std::int64_t> window_starts(std::int64_t extent, std::int64_t patch, double overlap) {
  if (extent <= patch) return {0};
  const auto step = std::max<std::int64_t>(1, static_cast<std::int64_t>(static_cast<double>(patch) * (1.0 - overlap)));
  std::vector<std::int64_t> starts;
  for (std::int64_t s = 0; s + patch < extent; s += step) starts.push_back(s);
  starts.push_back(extent - patch);
  return starts;
}

std::int64_t round_up(std::int64_t v, std::int64_t m) { return (v + m - 1) / m * m; }

torch::Tensor forward_probs(SegmentationModel& model, const torch::Tensor& patch) {
  auto logits = model.forward(patch.unsqueeze(0)).squeeze(0);
  return torch::softmax(logits.to(torch::kFloat64), 0);
}

void check_channels(const torch::Tensor& input, SegmentationModel& model, const char* what) {
  require(input.dim() == 4, ErrorCode::shape, std::string(what) + " input must be (C, D, H, W)");
  require(input.size(0) == model.in_channels(), ErrorCode::contract,
          std::string(what) + ": network expects " + std::to_string(model.in_channels()) + " channels, input has " +
              std::to_string(input.size(0)));
}

void check_classes(SegmentationModel& model, int expected, const char* what) {
  require(model.out_classes() == expected, ErrorCode::contract,
          std::string(what) + " must output " + std::to_string(expected) + " classes, not " +
              std::to_string(model.out_classes()));
}

PipelineResult result_from(const Volume& image, torch::Tensor probs) {
  PipelineResult r;
  r.probs = probability_map_like(image, std::move(probs));
  r.label = r.probs.argmax();
  return r;
}

}  // namespace

LabelMap derive_aorta_label(const LabelMap& label) { return map_labels(label, {0, 1, 1, 1}); }
LabelMap derive_flt_label(const LabelMap& label) { return map_labels(label, {0, 0, 0, 1}); }
LabelMap derive_tlfl_label(const LabelMap& label) { return map_labels(label, {0, 1, 2, 0}); }

torch::Tensor image_channel(const Volume& image) { return to_tensor(image.data).unsqueeze(0); }

ProbabilityMap probability_map_like(const Volume& image, torch::Tensor probs) {
  require(probs.dim() == 4 && shape_of(probs) == image.shape(), ErrorCode::shape,
          "probability map does not cover the image grid");
  ProbabilityMap m;
  m.probs = std::move(probs);
  m.spacing = image.spacing;
  m.affine = image.affine;
  m.id = image.id;
  return m;
}

torch::Tensor sliding_window_probs(const torch::Tensor& input, SegmentationModel& model,
                                   const InferenceOptions& options) {
  torch::NoGradGuard no_grad;
  check_channels(input, model, "sliding window");
  require(options.overlap >= 0.0 && options.overlap < 1.0, ErrorCode::contract, "overlap must lie in [0,1)");
  const std::array<std::int64_t, 3> dims{input.size(1), input.size(2), input.size(3)};
  const auto multiple = model.spatial_multiple();

  // Window extent per tensor axis (D, H, W); patch_size is given as (x, y, z).
  std::array<std::int64_t, 3> win{};
  for (int a = 0; a < 3; ++a) {
    if (options.patch_size) {
      win[a] = (*options.patch_size)[2 - a];
      require(win[a] >= 1 && win[a] % multiple == 0, ErrorCode::shape,
              "patch extent " + std::to_string(win[a]) + " is not a positive multiple of " + std::to_string(multiple));
    } else {
      win[a] = round_up(dims[a], multiple);
    }
  }

  // Pad undersized axes up to the window.
  std::array<std::int64_t, 3> padded{};
  for (int a = 0; a < 3; ++a) padded[a] = std::max(dims[a], win[a]);
  torch::Tensor x = input.to(torch::kFloat32);
  if (padded != dims)
    x = F::pad(x, F::PadFuncOptions({0, padded[2] - dims[2], 0, padded[1] - dims[1], 0, padded[0] - dims[0]}));

  const int k = model.out_classes();
  auto sum = torch::zeros({k, padded[0], padded[1], padded[2]}, torch::kFloat64);
  auto count = torch::zeros({1, padded[0], padded[1], padded[2]}, torch::kFloat64);
  for (auto d : window_starts(padded[0], win[0], options.overlap))
    for (auto h : window_starts(padded[1], win[1], options.overlap))
      for (auto w : window_starts(padded[2], win[2], options.overlap)) {
        using torch::indexing::Slice;
        auto patch = x.index({Slice(), Slice(d, d + win[0]), Slice(h, h + win[1]), Slice(w, w + win[2])});
        auto p = forward_probs(model, patch);
        sum.index({Slice(), Slice(d, d + win[0]), Slice(h, h + win[1]), Slice(w, w + win[2])}) += p;
        count.index({Slice(), Slice(d, d + win[0]), Slice(h, h + win[1]), Slice(w, w + win[2])}) += 1.0;
      }
  auto probs = sum / count;
  if (padded != dims) probs = probs.slice(1, 0, dims[0]).slice(2, 0, dims[1]).slice(3, 0, dims[2]).contiguous();
  return probs;
}

ProbabilityMap sliding_window_inference(const Volume& image, SegmentationModel& model, const Index3& patch_size,
                                        double overlap) {
  InferenceOptions options;
  options.patch_size = patch_size;
  options.overlap = overlap;
  return probability_map_like(image, sliding_window_probs(image_channel(image), model, options));
}

PipelineResult run_single_step(const Volume& image, SegmentationModel& segmenter, const InferenceOptions& options) {
  return result_from(image, sliding_window_probs(image_channel(image), segmenter, options));
}

torch::Tensor sequential_input(const Volume& image, SegmentationModel& aorta_segmenter,
                               const InferenceOptions& options) {
  check_classes(aorta_segmenter, 2, "aorta segmenter");
  const auto img = image_channel(image);
  const auto aorta = sliding_window_probs(img, aorta_segmenter, options)[1].to(torch::kFloat32);
  return torch::cat({img, aorta.unsqueeze(0)}, 0);
}

PipelineResult run_sequential(const Volume& image, SegmentationModel& aorta_segmenter,
                              SegmentationModel& refine_segmenter, const InferenceOptions& options) {
  check_classes(refine_segmenter, kNumClasses, "refinement segmenter");
  const auto input = sequential_input(image, aorta_segmenter, options);
  return result_from(image, sliding_window_probs(input, refine_segmenter, options));
}

torch::Tensor fusion_input(const Volume& image, const torch::Tensor& flt_channel, const torch::Tensor& tlfl_channel) {
  const auto img = image_channel(image);
  const std::vector<std::int64_t> spatial{img.size(1), img.size(2), img.size(3)};
  require(flt_channel.sizes() == spatial && tlfl_channel.sizes() == spatial, ErrorCode::contract,
          "fusion channels must match the image grid");
  return torch::cat({img, flt_channel.to(torch::kFloat32).unsqueeze(0), tlfl_channel.to(torch::kFloat32).unsqueeze(0)},
                    0);
}

PipelineResult fuse_multitask(const Volume& image, const torch::Tensor& flt_channel, const torch::Tensor& tlfl_channel,
                              SegmentationModel& fusion_segmenter, const InferenceOptions& options) {
  check_classes(fusion_segmenter, kNumClasses, "fusion segmenter");
  return result_from(image, sliding_window_probs(fusion_input(image, flt_channel, tlfl_channel), fusion_segmenter,
                                                 options));
}

std::pair<torch::Tensor, torch::Tensor> multitask_channels(const Volume& image, SegmentationModel& flt_segmenter,
                                                           SegmentationModel& tlfl_segmenter,
                                                           const InferenceOptions& options) {
  check_classes(flt_segmenter, 2, "FLT segmenter");
  check_classes(tlfl_segmenter, 3, "TL/FL segmenter");
  const auto img = image_channel(image);
  auto flt = sliding_window_probs(img, flt_segmenter, options)[1];
  auto tlfl = 1.0 - sliding_window_probs(img, tlfl_segmenter, options)[0];
  return {flt, tlfl};
}

double classifier_probability(const Volume& image, ClassificationModel& classifier, const Index3& input_shape) {
  torch::NoGradGuard no_grad;
  auto x = image_channel(image).unsqueeze(0);
  const auto target = spatial_sizes(input_shape);
  if (x.sizes().slice(2) != torch::IntArrayRef(target))
    x = F::interpolate(x, F::InterpolateFuncOptions().size(target).mode(torch::kTrilinear).align_corners(false));
  return torch::sigmoid(classifier.forward(x)).reshape({-1})[0].item<double>();
}

PipelineResult run_multitask(const Volume& image, ClassificationModel* classifier, SegmentationModel& flt_segmenter,
                             SegmentationModel& tlfl_segmenter, SegmentationModel& fusion_segmenter,
                             const PipelineConfig& cfg) {
  std::optional<double> p_flt;
  if (!cfg.bypass_classifier) {
    require(classifier != nullptr, ErrorCode::contract, "multitask pipeline needs a classifier unless it is bypassed");
    p_flt = classifier_probability(image, *classifier, cfg.classifier_input_shape);
  }
  auto [flt, tlfl] = multitask_channels(image, flt_segmenter, tlfl_segmenter, cfg.inference);
  if (p_flt && *p_flt < cfg.flt_probability_threshold) flt = torch::zeros_like(flt);
  auto r = fuse_multitask(image, flt, tlfl, fusion_segmenter, cfg.inference);
  r.flt_probability = p_flt;
  return r;
}

PipelineResult run_ensemble(const Volume& image, const std::vector<SegmentationModel*>& members,
                            const InferenceOptions& options) {
  require(!members.empty(), ErrorCode::contract, "ensemble has no members");
  const int k = members.front()->out_classes();
  const auto img = image_channel(image);
  torch::Tensor sum;
  for (auto* m : members) {
    require(m != nullptr, ErrorCode::contract, "null ensemble member");
    require(m->out_classes() == k, ErrorCode::contract, "ensemble members disagree on the class count");
    auto p = sliding_window_probs(img, *m, options);
    sum = sum.defined() ? sum + p : p;
  }
  return result_from(image, sum / static_cast<double>(members.size()));
}

PipelineResult run_pipeline(const Volume& image, const PipelineConfig& cfg, const PipelineModels& models) {
  auto seg = [&](const std::string& name) -> SegmentationModel& {
    auto it = models.segmenters.find(name);
    require(it != models.segmenters.end() && it->second != nullptr, ErrorCode::contract,
            "pipeline stage '" + name + "' is not loaded");
    return *it->second;
  };
  switch (cfg.kind) {
    case PipelineKind::single_step: return run_single_step(image, seg("segmenter"), cfg.inference);
    case PipelineKind::sequential: return run_sequential(image, seg("aorta"), seg("refine"), cfg.inference);
    case PipelineKind::multitask:
      return run_multitask(image, models.classifier, seg("flt"), seg("tlfl"), seg("fusion"), cfg);
    case PipelineKind::ensemble: {
      std::vector<SegmentationModel*> members;
      for (const auto& [name, m] : models.segmenters)
        if (name.rfind("member", 0) == 0) members.push_back(m);
      return run_ensemble(image, members, cfg.inference);
    }
  }
  fail(ErrorCode::contract, "unknown pipeline kind");
}

}  // namespace tbad
