#include "tbad/training.hpp"

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <mutex>
#include <numeric>
#include <thread>

#include "tbad/error.hpp"
#include "tbad/metrics.hpp"
#include "tbad/rng.hpp"
#include "tbad/tensor_bridge.hpp"

namespace tbad {

namespace F = torch::nn::functional;

void TrainConfig::validate() const {
  require(initial_lr > 0 && lr_decay_factor > 0 && lr_step_epochs > 0 && weight_decay >= 0, ErrorCode::config,
          "learning-rate settings must be positive");
  require(batch_size >= 1, ErrorCode::config, "batch_size must be >= 1");
  require(epochs_primary >= 1 && epochs_cascade >= 1, ErrorCode::config, "epoch counts must be >= 1");
  require(optimizer == "adamw", ErrorCode::config, "unsupported optimizer '" + optimizer + "'");
  require(prefetch_workers >= 0, ErrorCode::config, "prefetch_workers must be >= 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"initial_lr", c.initial_lr},
       {"lr_decay_factor", c.lr_decay_factor},
       {"lr_step_epochs", c.lr_step_epochs},
       {"weight_decay", c.weight_decay},
       {"batch_size", c.batch_size},
       {"epochs_primary", c.epochs_primary},
       {"epochs_cascade", c.epochs_cascade},
       {"loss", to_string(c.loss)},
       {"optimizer", c.optimizer},
       {"include_background", c.include_background},
       {"prefetch_workers", c.prefetch_workers},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.initial_lr = j.at("initial_lr").get<double>();
  c.lr_decay_factor = j.at("lr_decay_factor").get<double>();
  c.lr_step_epochs = j.at("lr_step_epochs").get<int>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.epochs_primary = j.at("epochs_primary").get<int>();
  c.epochs_cascade = j.at("epochs_cascade").get<int>();
  c.loss = loss_kind_from(j.at("loss").get<std::string>());
  c.optimizer = j.at("optimizer").get<std::string>();
  c.include_background = j.at("include_background").get<bool>();
  c.prefetch_workers = j.at("prefetch_workers").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
}

double lr_at(int epoch, const TrainConfig& cfg) {
  require(epoch >= 0, ErrorCode::contract, "epoch must be non-negative");
  return cfg.initial_lr * std::pow(cfg.lr_decay_factor, epoch / cfg.lr_step_epochs);
}

std::string to_string(TargetKind k) {
  switch (k) {
    case TargetKind::four_class: return "four_class";
    case TargetKind::aorta: return "aorta";
    case TargetKind::flt: return "flt";
    case TargetKind::tlfl: return "tlfl";
  }
  return "?";
}

TargetKind target_kind_from(const std::string& s) {
  for (auto k : {TargetKind::four_class, TargetKind::aorta, TargetKind::flt, TargetKind::tlfl})
    if (to_string(k) == s) return k;
  fail(ErrorCode::config, "unknown target kind '" + s + "'");
}

int target_classes(TargetKind k) {
  switch (k) {
    case TargetKind::four_class: return 4;
    case TargetKind::aorta: return 2;
    case TargetKind::flt: return 2;
    case TargetKind::tlfl: return 3;
  }
  return 0;
}

LabelMap derive_target(const LabelMap& four_class, TargetKind k) {
  switch (k) {
    case TargetKind::four_class: return four_class;
    case TargetKind::aorta: return derive_aorta_label(four_class);
    case TargetKind::flt: return derive_flt_label(four_class);
    case TargetKind::tlfl: return derive_tlfl_label(four_class);
  }
  return four_class;
}

void TrainingHistory::append(const EpochRecord& r) {
  require(records_.empty() || r.epoch > records_.back().epoch, ErrorCode::contract,
          "history epochs must increase");
  records_.push_back(r);
}

void to_json(nlohmann::json& j, const TrainingHistory& h) {
  j = nlohmann::json::array();
  for (const auto& r : h.records()) {
    nlohmann::json e = {{"epoch", r.epoch},
                        {"train_loss", r.train_loss},
                        {"val_mean_dc", r.val_mean_dc},
                        {"val_class_dc", r.val_class_dc},
                        {"lr", r.lr},
                        {"wall_time_s", r.wall_time_s}};
    e["val_true_flt_dc"] = r.val_true_flt_dc ? nlohmann::json(*r.val_true_flt_dc) : nlohmann::json(nullptr);
    j.push_back(e);
  }
}

void from_json(const nlohmann::json& j, TrainingHistory& h) {
  h = TrainingHistory{};
  for (const auto& e : j) {
    EpochRecord r;
    r.epoch = e.at("epoch").get<int>();
    r.train_loss = e.at("train_loss").get<double>();
    r.val_mean_dc = e.at("val_mean_dc").get<double>();
    r.val_class_dc = e.at("val_class_dc").get<std::vector<double>>();
    r.lr = e.at("lr").get<double>();
    r.wall_time_s = e.at("wall_time_s").get<double>();
    if (!e.at("val_true_flt_dc").is_null()) r.val_true_flt_dc = e.at("val_true_flt_dc").get<double>();
    h.append(r);
  }
}

int select_best(const TrainingHistory& history) {
  require(!history.empty(), ErrorCode::contract, "cannot select from an empty history");
  int best = history.records().front().epoch;
  double best_score = -std::numeric_limits<double>::infinity();
  for (const auto& r : history.records()) {
    const double score = r.val_true_flt_dc ? (r.val_mean_dc + *r.val_true_flt_dc) / 2.0 : r.val_mean_dc;
    if (score > best_score) {
      best_score = score;
      best = r.epoch;
    }
  }
  return best;
}

torch::Tensor TrainingCase::input_tensor() const {
  std::vector<torch::Tensor> parts{to_tensor(image.data).unsqueeze(0)};
  for (const auto& c : extra_channels) parts.push_back(to_tensor(c).unsqueeze(0));
  return torch::cat(parts, 0);
}

TrainingCase make_training_case(const Volume& image, const LabelMap& four_class, TargetKind target) {
  check_aligned(image, four_class);
  TrainingCase c;
  c.image = image;
  c.target = derive_target(four_class, target);
  c.has_flt = contains_class(four_class, LabelClass::thrombosis);
  return c;
}

TrainingCase with_channels(TrainingCase c, const std::vector<torch::Tensor>& channels) {
  for (const auto& t : channels) {
    require(t.dim() == 3 && shape_of(t) == c.image.shape(), ErrorCode::contract,
            "extra channel does not match the case grid");
    c.extra_channels.push_back(float_array_from(t.to(torch::kFloat32)));
  }
  return c;
}

fs::path stage_directory(const fs::path& output_dir, const std::string& run_id, int fold, const std::string& stage) {
  return output_dir / "runs" / run_id / ("fold" + std::to_string(fold) + "-" + stage);
}

// ---------------------------------------------------------------- checkpoints

namespace {

nlohmann::json meta_to_json(const CheckpointMeta& m) {
  nlohmann::json h;
  to_json(h, m.history);
  return {{"format_version", m.format_version}, {"kind", m.kind},       {"stage", m.stage},
          {"epoch", m.epoch},                   {"network", m.network}, {"train", m.train},
          {"target", m.target},                 {"history", h}};
}

CheckpointMeta meta_from_json(const nlohmann::json& j) {
  CheckpointMeta m;
  m.format_version = j.at("format_version").get<int>();
  require(m.format_version == kCheckpointFormat, ErrorCode::unsupported_format,
          "checkpoint format " + std::to_string(m.format_version) + " is not supported");
  m.kind = j.at("kind").get<std::string>();
  m.stage = j.at("stage").get<std::string>();
  m.epoch = j.at("epoch").get<int>();
  m.network = j.at("network");
  m.train = j.at("train");
  m.target = j.at("target").get<std::string>();
  from_json(j.at("history"), m.history);
  return m;
}

void save_checkpoint(const fs::path& path, const CheckpointMeta& meta, torch::nn::Module& module,
                     torch::optim::Optimizer& optimizer) {
  torch::serialize::OutputArchive archive;
  archive.write("meta", c10::IValue(meta_to_json(meta).dump()));
  torch::serialize::OutputArchive model_archive;
  module.save(model_archive);
  archive.write("model", model_archive);
  torch::serialize::OutputArchive optimizer_archive;
  optimizer.save(optimizer_archive);
  archive.write("optimizer", optimizer_archive);
  const fs::path tmp = path.string() + ".tmp";
  try {
    archive.save_to(tmp.string());
  } catch (const c10::Error& e) {
    fail(ErrorCode::io, "cannot write checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  fs::rename(tmp, path);
}

torch::serialize::InputArchive open_checkpoint(const fs::path& path) {
  require(fs::exists(path), ErrorCode::not_found, "checkpoint " + path.string() + " does not exist");
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path.string());
  } catch (const c10::Error& e) {
    fail(ErrorCode::unsupported_format, "cannot read checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  return archive;
}

CheckpointMeta read_meta(torch::serialize::InputArchive& archive) {
  c10::IValue v;
  archive.read("meta", v);
  return meta_from_json(nlohmann::json::parse(v.toStringRef()));
}

void load_module(torch::serialize::InputArchive& archive, torch::nn::Module& module) {
  torch::serialize::InputArchive model_archive;
  archive.read("model", model_archive);
  module.load(model_archive);
}

void load_optimizer(torch::serialize::InputArchive& archive, torch::optim::Optimizer& optimizer) {
  torch::serialize::InputArchive optimizer_archive;
  archive.read("optimizer", optimizer_archive);
  optimizer.load(optimizer_archive);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path.string());
  out << text;
}

fs::path checkpoint_path(const fs::path& dir, int epoch) { return dir / (std::to_string(epoch) + ".ckpt"); }

void set_lr(torch::optim::Optimizer& optimizer, double lr) {
  for (auto& group : optimizer.param_groups()) static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);
}

// Writes the checkpoint of `epoch`, refreshes history.json and the best pointer.
void record_epoch(const fs::path& dir, CheckpointMeta& meta, const EpochRecord& record, torch::nn::Module& module,
                  torch::optim::Optimizer& optimizer, StageResult& result) {
  meta.history.append(record);
  meta.epoch = record.epoch;
  const fs::path ckpt = checkpoint_path(dir, record.epoch);
  save_checkpoint(ckpt, meta, module, optimizer);
  result.checkpoints.push_back(ckpt);
  nlohmann::json h;
  to_json(h, meta.history);
  write_json_file(h, dir / "history.json");
  result.best_epoch = select_best(meta.history);
  result.best_checkpoint = checkpoint_path(dir, result.best_epoch);
  write_text(dir / "best", result.best_checkpoint.filename().string() + "\n");
  result.history = meta.history;
}

// ------------------------------------------------------------------- batches

struct Batch {
  torch::Tensor input;   // (N, C, D, H, W)
  torch::Tensor target;  // (N, D, H, W)
};

template <class T>
Array3<T> pad_to(const Array3<T>& a, const Index3& min_shape) {
  const Index3 s{std::max(a.shape()[0], min_shape[0]), std::max(a.shape()[1], min_shape[1]),
                 std::max(a.shape()[2], min_shape[2])};
  if (s == a.shape()) return a;
  Array3<T> out(s, T{});
  for (std::int64_t z = 0; z < a.shape()[2]; ++z)
    for (std::int64_t y = 0; y < a.shape()[1]; ++y)
      for (std::int64_t x = 0; x < a.shape()[0]; ++x) out(x, y, z) = a(x, y, z);
  return out;
}

// Cases smaller than the patch are zero-padded at the far end before sampling.
TrainingCase padded_to_patch(const TrainingCase& c, const Index3& patch) {
  if (c.image.shape()[0] >= patch[0] && c.image.shape()[1] >= patch[1] && c.image.shape()[2] >= patch[2]) return c;
  TrainingCase out = c;
  out.image.data = pad_to(c.image.data, patch);
  out.target.data = pad_to(c.target.data, patch);
  for (auto& e : out.extra_channels) e = pad_to(e, patch);
  return out;
}

std::pair<torch::Tensor, torch::Tensor> make_sample(const TrainingCase& c, const AugmentConfig& aug, Rng rng) {
  const TrainingCase p = padded_to_patch(c, aug.patch_size);
  const AugmentPlan plan = draw_augment_plan(p.target, aug, rng);
  std::vector<torch::Tensor> parts{to_tensor(apply_plan(p.image, plan).data).unsqueeze(0)};
  for (const auto& e : p.extra_channels) parts.push_back(to_tensor(apply_spatial(e, plan.spatial)).unsqueeze(0));
  return {torch::cat(parts, 0), to_tensor(apply_plan(p.target, plan).data)};
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::derive(seed, "order", static_cast<std::uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), rng.engine());
  return order;
}


// Produces the batches of one epoch in a fixed order, optionally on a worker
// thread with a bounded queue. The contents never depend on the threading mode.
class BatchSource {
 public:
  BatchSource(const std::vector<TrainingCase>& cases, const StageSpec& spec, const TrainConfig& cfg, int epoch)
      : cases_(cases), spec_(spec), cfg_(cfg), epoch_(epoch), order_(epoch_order(cases.size(), cfg.seed, epoch)) {
    for (std::size_t i = 0; i < order_.size(); i += static_cast<std::size_t>(cfg.batch_size)) ++batch_count_;
    if (cfg.prefetch_workers > 0) worker_ = std::thread([this] { produce(); });
  }

  ~BatchSource() {
    {
      std::lock_guard lock(mutex_);
      stop_ = true;
    }
    cv_.notify_all();
    if (worker_.joinable()) worker_.join();
  }

  std::size_t size() const { return batch_count_; }

  Batch next() {
    if (!worker_.joinable()) return build(next_index_++);
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [this] { return !queue_.empty() || error_; });
    if (error_) std::rethrow_exception(error_);
    Batch b = std::move(queue_.front());
    queue_.pop_front();
    cv_.notify_all();
    return b;
  }

 private:
  Batch build(std::size_t b) const {
    std::vector<torch::Tensor> inputs, targets;
    const auto bs = static_cast<std::size_t>(cfg_.batch_size);
    for (std::size_t i = b * bs; i < std::min(order_.size(), (b + 1) * bs); ++i) {
      const TrainingCase& c = cases_[order_[i]];
      Rng rng = Rng::derive(cfg_.seed ^ hash_string(c.image.id), "augment", static_cast<std::uint64_t>(epoch_));
      auto [x, y] = make_sample(c, spec_.augment, rng);
      inputs.push_back(x);
      targets.push_back(y);
    }
    return {torch::stack(inputs), torch::stack(targets)};
  }

  void produce() {
    try {
      for (std::size_t b = 0; b < batch_count_; ++b) {
        Batch batch = build(b);
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [this] { return queue_.size() < kCapacity || stop_; });
        if (stop_) return;
        queue_.push_back(std::move(batch));
        cv_.notify_all();
      }
    } catch (...) {
      std::lock_guard lock(mutex_);
      error_ = std::current_exception();
      cv_.notify_all();
    }
  }

  static constexpr std::size_t kCapacity = 4;
  const std::vector<TrainingCase>& cases_;
  const StageSpec& spec_;
  const TrainConfig& cfg_;
  int epoch_;
  std::vector<std::size_t> order_;
  std::size_t batch_count_ = 0;
  std::size_t next_index_ = 0;
  std::thread worker_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<Batch> queue_;
  std::exception_ptr error_;
  bool stop_ = false;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void check_cases(const std::vector<TrainingCase>& cases, int channels, int classes, const char* what) {
  for (const auto& c : cases) {
    require(c.channels() == channels, ErrorCode::contract,
            std::string(what) + " case '" + c.image.id + "' has " + std::to_string(c.channels()) +
                " channels, network expects " + std::to_string(channels));
    for (auto v : c.target.data.values())
      require(v < classes, ErrorCode::contract,
              std::string(what) + " case '" + c.image.id + "' has target values outside the stage classes");
  }
}

std::optional<int> flt_class(TargetKind k) {
  if (k == TargetKind::four_class) return 3;
  if (k == TargetKind::flt) return 1;
  return std::nullopt;
}

}  // namespace

// ------------------------------------------------------------------ training

ValidationScores validate_segmenter(SegmentationModel& model, const std::vector<TrainingCase>& cases,
                                    TargetKind target, const InferenceOptions& options) {
  ValidationScores s;
  const int k = target_classes(target);
  s.class_dc.assign(static_cast<std::size_t>(k - 1), 0.0);
  if (cases.empty()) return s;
  const auto flt = flt_class(target);
  double flt_sum = 0.0;
  int flt_n = 0;
  for (const auto& c : cases) {
    const auto probs = sliding_window_probs(c.input_tensor(), model, options);
    LabelMap pred = image_like<std::uint8_t>(c.target);
    pred.data = label_array_from(torch::argmax(probs, 0));
    for (int cls = 1; cls < k; ++cls) {
      const double d = dice_coefficient(pred, c.target, static_cast<std::uint8_t>(cls));
      s.class_dc[static_cast<std::size_t>(cls - 1)] += d;
      if (flt && cls == *flt && c.has_flt) {
        flt_sum += d;
        ++flt_n;
      }
    }
  }
  for (auto& v : s.class_dc) v /= static_cast<double>(cases.size());
  s.mean_dc = std::accumulate(s.class_dc.begin(), s.class_dc.end(), 0.0) / static_cast<double>(s.class_dc.size());
  if (flt_n > 0) s.true_flt_dc = flt_sum / flt_n;
  return s;
}

StageResult train_stage(const StageSpec& spec, const std::vector<TrainingCase>& train,
                        const std::vector<TrainingCase>& validation, const TrainConfig& cfg, const fs::path& stage_dir,
                        const StepCallback& on_step) {
  cfg.validate();
  spec.augment.validate();
  require(!train.empty(), ErrorCode::contract, "stage '" + spec.name + "' has no training cases");
  require(spec.epochs >= 1, ErrorCode::config, "stage epochs must be >= 1");
  require(spec.network.out_classes == target_classes(spec.target), ErrorCode::config,
          "stage '" + spec.name + "' network outputs " + std::to_string(spec.network.out_classes) +
              " classes but target " + to_string(spec.target) + " has " +
              std::to_string(target_classes(spec.target)));
  check_cases(train, spec.network.in_channels, spec.network.out_classes, "training");
  check_cases(validation, spec.network.in_channels, spec.network.out_classes, "validation");
  fs::create_directories(stage_dir);

  Segmenter model(spec.network);
  torch::optim::AdamW optimizer(model.parameters(),
                                torch::optim::AdamWOptions(cfg.initial_lr).weight_decay(cfg.weight_decay));

  CheckpointMeta meta;
  meta.kind = "segmenter";
  meta.stage = spec.name;
  to_json(meta.network, spec.network);
  to_json(meta.train, cfg);
  meta.target = to_string(spec.target);

  StageResult result;
  result.stage_dir = stage_dir;
  int start = 0;
  if (spec.resume_from) {
    auto archive = open_checkpoint(*spec.resume_from);
    CheckpointMeta prior = read_meta(archive);
    require(prior.kind == "segmenter" && prior.network == meta.network && prior.target == meta.target,
            ErrorCode::config, "checkpoint " + spec.resume_from->string() + " belongs to a different stage setup");
    load_module(archive, model.module());
    load_optimizer(archive, optimizer);
    meta.history = prior.history;
    result.history = prior.history;
    start = prior.epoch + 1;
  }

  for (int epoch = start; epoch < spec.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at(epoch, cfg);
    set_lr(optimizer, lr);
    model.module().train();
    BatchSource batches(train, spec, cfg, epoch);
    double loss_sum = 0.0;
    for (std::size_t step = 0; step < batches.size(); ++step) {
      Batch batch = batches.next();
      optimizer.zero_grad();
      LossInputs in;
      in.logits = model.forward(batch.input);
      in.target = batch.target;
      in.include_background = cfg.include_background;
      auto loss = compute_loss(cfg.loss, in);
      const double value = loss.item<double>();
      require(std::isfinite(value), ErrorCode::diverged_training,
              "non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                  (result.checkpoints.empty() && !spec.resume_from
                       ? std::string()
                       : "; last good checkpoint kept in " + stage_dir.string()));
      loss.backward();
      optimizer.step();
      loss_sum += value;
      if (on_step) on_step(epoch, static_cast<int>(step), value);
    }
    model.module().eval();
    const ValidationScores scores = validate_segmenter(model, validation, spec.target, spec.validation);

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(batches.size());
    record.val_mean_dc = scores.mean_dc;
    record.val_true_flt_dc = scores.true_flt_dc;
    record.val_class_dc = scores.class_dc;
    record.lr = lr;
    record.wall_time_s = seconds_since(t0);
    record_epoch(stage_dir, meta, record, model.module(), optimizer, result);
  }
  if (result.history.empty()) result.history = meta.history;
  if (!result.history.empty()) {
    result.best_epoch = select_best(result.history);
    result.best_checkpoint = checkpoint_path(stage_dir, result.best_epoch);
  }
  return result;
}

StageResult train_stage(const StageSpec& spec, const FoldSplit& fold, const std::map<std::string, TrainingCase>& cases,
                        const TrainConfig& cfg, const fs::path& stage_dir, const StepCallback& on_step) {
  auto pick = [&](const std::vector<std::string>& ids) {
    std::vector<TrainingCase> out;
    for (const auto& id : ids) {
      auto it = cases.find(id);
      require(it != cases.end(), ErrorCode::not_found, "case '" + id + "' of the fold is not materialized");
      out.push_back(it->second);
    }
    return out;
  };
  return train_stage(spec, pick(fold.train), pick(fold.validation), cfg, stage_dir, on_step);
}

namespace {

torch::Tensor classifier_input(const TrainingCase& c, const Index3& shape) {
  auto x = c.input_tensor().unsqueeze(0);
  const auto target = spatial_sizes(shape);
  if (x.sizes().slice(2) != torch::IntArrayRef(target))
    x = F::interpolate(x, F::InterpolateFuncOptions().size(target).mode(torch::kTrilinear).align_corners(false));
  return x;
}

}  // namespace

StageResult train_classifier(const ClassifierStageSpec& spec, const std::vector<TrainingCase>& train,
                             const std::vector<TrainingCase>& validation, const TrainConfig& cfg,
                             const fs::path& stage_dir, const StepCallback& on_step) {
  cfg.validate();
  require(!train.empty(), ErrorCode::contract, "classifier stage has no training cases");
  fs::create_directories(stage_dir);
  Classifier model(spec.network);
  torch::optim::AdamW optimizer(model.parameters(),
                                torch::optim::AdamWOptions(cfg.initial_lr).weight_decay(cfg.weight_decay));
  CheckpointMeta meta;
  meta.kind = "classifier";
  meta.stage = spec.name;
  to_json(meta.network, spec.network);
  to_json(meta.train, cfg);
  meta.target = "flt_presence";

  std::vector<torch::Tensor> train_inputs, val_inputs;
  for (const auto& c : train) train_inputs.push_back(classifier_input(c, spec.input_shape));
  for (const auto& c : validation) val_inputs.push_back(classifier_input(c, spec.input_shape));

  StageResult result;
  result.stage_dir = stage_dir;
  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at(epoch, cfg);
    set_lr(optimizer, lr);
    model.module().train();
    const auto order = epoch_order(train.size(), cfg.seed, epoch);
    double loss_sum = 0.0;
    int steps = 0;
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<torch::Tensor> xs;
      std::vector<float> ys;
      for (std::size_t j = i; j < std::min(order.size(), i + static_cast<std::size_t>(cfg.batch_size)); ++j) {
        xs.push_back(train_inputs[order[j]]);
        ys.push_back(train[order[j]].has_flt ? 1.0f : 0.0f);
      }
      optimizer.zero_grad();
      auto logits = model.forward(torch::cat(xs, 0));
      auto loss = F::binary_cross_entropy_with_logits(logits, torch::tensor(ys));
      const double value = loss.item<double>();
      require(std::isfinite(value), ErrorCode::diverged_training,
              "non-finite classifier loss at epoch " + std::to_string(epoch));
      loss.backward();
      optimizer.step();
      loss_sum += value;
      if (on_step) on_step(epoch, steps, value);
      ++steps;
    }
    model.module().eval();
    std::size_t correct = 0;
    {
      torch::NoGradGuard no_grad;
      for (std::size_t i = 0; i < validation.size(); ++i) {
        const bool predicted = torch::sigmoid(model.forward(val_inputs[i])).item<double>() >= 0.5;
        if (predicted == validation[i].has_flt) ++correct;
      }
    }
    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / steps;
    record.val_mean_dc = validation.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(validation.size());
    record.lr = lr;
    record.wall_time_s = seconds_since(t0);
    record_epoch(stage_dir, meta, record, model.module(), optimizer, result);
  }
  return result;
}

CheckpointMeta read_checkpoint_meta(const fs::path& path) {
  auto archive = open_checkpoint(path);
  return read_meta(archive);
}

LoadedSegmenter load_segmenter(const fs::path& path) {
  auto archive = open_checkpoint(path);
  LoadedSegmenter out;
  out.meta = read_meta(archive);
  require(out.meta.kind == "segmenter", ErrorCode::unsupported_format, path.string() + " is not a segmenter checkpoint");
  SegmenterConfig cfg;
  from_json(out.meta.network, cfg);
  out.model = build_segmenter(cfg);
  load_module(archive, out.model->module());
  out.model->module().eval();
  return out;
}

LoadedClassifier load_classifier(const fs::path& path) {
  auto archive = open_checkpoint(path);
  LoadedClassifier out;
  out.meta = read_meta(archive);
  require(out.meta.kind == "classifier", ErrorCode::unsupported_format,
          path.string() + " is not a classifier checkpoint");
  ClassifierConfig cfg;
  from_json(out.meta.network, cfg);
  out.model = build_classifier(cfg);
  load_module(archive, out.model->module());
  out.model->module().eval();
  return out;
}

fs::path best_checkpoint(const fs::path& stage_dir) {
  const fs::path pointer = stage_dir / "best";
  std::ifstream in(pointer);
  require(static_cast<bool>(in), ErrorCode::not_found, "no best pointer in " + stage_dir.string());
  std::string name;
  std::getline(in, name);
  require(!name.empty(), ErrorCode::io, pointer.string() + " is empty");
  const fs::path ckpt = stage_dir / name;
  require(fs::exists(ckpt), ErrorCode::not_found, "best checkpoint " + ckpt.string() + " is missing");
  return ckpt;
}

}  // namespace tbad
