#include "tbad/commands.hpp"

#include <fstream>
#include <iomanip>
#include <set>

#include "tbad/error.hpp"
#include "tbad/reports.hpp"
#include "tbad/tensor_bridge.hpp"

namespace tbad {

std::string method_name(PipelineKind kind) {
  switch (kind) {
    case PipelineKind::single_step: return "Method 1";
    case PipelineKind::sequential: return "Method 2";
    case PipelineKind::multitask: return "Method 3";
    case PipelineKind::ensemble: return "Method 4";
  }
  return "?";
}

CohortManifest cmd_phantom(const PhantomCommand& cmd, std::ostream& log) {
  CohortOptions options;
  options.n = cmd.n;
  options.flt_fraction = cmd.flt_fraction;
  options.seed = cmd.seed;
  fs::create_directories(cmd.out);
  CohortManifest m = generate_cohort(options, cmd.out);
  log << "wrote " << m.cases.size() << " phantom cases (" << m.flt_positive_count() << " with FLT) to "
      << cmd.out.string() << "\n";
  return m;
}

CohortManifest cmd_ingest(const RunConfig& cfg, std::ostream& log) {
  const fs::path dir = cfg.cases_dir();
  if (cfg.phantom && !fs::exists(dir / "manifest.json")) {
    PhantomCommand p;
    p.n = cfg.phantom->n;
    p.flt_fraction = cfg.phantom->flt_fraction;
    p.seed = cfg.phantom->seed;
    p.out = dir;
    cmd_phantom(p, log);
  }
  require(fs::is_directory(dir), ErrorCode::not_found, "data directory " + dir.string() + " does not exist");
  CohortManifest m = build_manifest(dir, cfg.label_remap);
  for (const auto& w : m.warnings) log << "warning: " << w << "\n";
  fs::create_directories(cfg.output_dir);
  write_manifest(m, cfg.manifest_path());
  log << "manifest: " << m.cases.size() << " labelled cases, " << m.flt_positive_count() << " with FLT, "
      << m.unlabeled.size() << " unlabelled\n";
  return m;
}

namespace {

nlohmann::json geometry_to_json(const CropBox& box, const GridGeometry& g) {
  return {{"box", {{"lo", box.lo}, {"hi", box.hi}}},
          {"grid", {{"shape", g.shape}, {"spacing", g.spacing}, {"affine", g.affine}}}};
}

fs::path geometry_path(const RunConfig& cfg, const std::string& id) {
  return cfg.preprocessed_dir() / (id + "_geometry.json");
}

std::vector<std::string> concat(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::string> out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

FoldSplit fold_of(const RunConfig& cfg, int fold) {
  const SplitFile splits = read_splits(cfg.splits_path());
  require(fold >= 0 && fold < static_cast<int>(splits.folds.size()), ErrorCode::config,
          "fold " + std::to_string(fold) + " is not in " + cfg.splits_path().string());
  return splits.folds[static_cast<std::size_t>(fold)];
}

}  // namespace

void cmd_preprocess(const RunConfig& cfg, std::ostream& log) {
  const CohortManifest m = read_manifest(cfg.manifest_path());
  fs::create_directories(cfg.preprocessed_dir());
  for (const auto& c : m.cases) {
    LoadedCase loaded = load_case(c.image_path, c.label_path, cfg.label_remap);
    loaded.volume.id = c.id;
    if (loaded.label) loaded.label->id = c.id;
    const PreprocessedCase p = preprocess_case(loaded.volume, loaded.label, cfg.preprocess);
    save_case(p.volume, p.label, cfg.preprocessed_dir());
    write_json_file(geometry_to_json(p.box, p.resampled_grid), geometry_path(cfg, c.id));
    log << c.id << ": " << to_string(c.shape) << " -> " << to_string(p.volume.shape()) << "\n";
  }
}

StoredCase load_preprocessed(const RunConfig& cfg, const std::string& id) {
  const fs::path dir = cfg.preprocessed_dir();
  LoadedCase loaded = load_case(image_path_for(dir, id), label_path_for(dir, id));
  const nlohmann::json g = read_json_file(geometry_path(cfg, id));
  StoredCase out;
  out.volume = std::move(loaded.volume);
  out.volume.id = id;
  out.label = std::move(loaded.label);
  if (out.label) out.label->id = id;
  out.box.lo = g.at("box").at("lo").get<Index3>();
  out.box.hi = g.at("box").at("hi").get<Index3>();
  out.resampled_grid.shape = g.at("grid").at("shape").get<Index3>();
  out.resampled_grid.spacing = g.at("grid").at("spacing").get<Vec3>();
  out.resampled_grid.affine = g.at("grid").at("affine").get<Affine>();
  return out;
}

SplitFile cmd_split(const RunConfig& cfg, std::ostream& log) {
  const CohortManifest m = read_manifest(cfg.manifest_path());
  SplitFile s;
  s.protocol = cfg.cohort.protocol;
  s.seed = cfg.cohort.seed;
  if (cfg.cohort.protocol == "kfold") {
    s.k = cfg.cohort.k;
    s.folds = stratified_folds(m, cfg.cohort.k, cfg.cohort.seed);
  } else {
    s.k = 1;
    s.folds = {holdout_split(m, cfg.cohort.n_train, cfg.cohort.n_val, cfg.cohort.n_test, cfg.cohort.seed)};
  }
  write_splits(s, cfg.splits_path());
  for (const auto& f : s.folds)
    log << "fold " << f.fold_index << ": " << f.train.size() << " train, " << f.validation.size() << " validation, "
        << f.test.size() << " test\n";
  return s;
}

std::vector<StagePlan> plan_stages(const RunConfig& cfg) {
  auto stage = [&](std::string name, TargetKind target, int in_channels, int epochs, std::vector<std::string> inputs,
                   SegmenterConfig net) {
    StagePlan p;
    p.name = std::move(name);
    p.network = net;
    p.network.in_channels = in_channels;
    p.network.out_classes = target_classes(target);
    p.target = target;
    p.epochs = epochs;
    p.inputs = std::move(inputs);
    return p;
  };
  const int primary = cfg.train.epochs_primary, cascade = cfg.train.epochs_cascade;
  std::vector<StagePlan> plan;
  switch (cfg.pipeline.kind) {
    case PipelineKind::single_step:
      plan.push_back(stage("segmenter", TargetKind::four_class, 1, primary, {}, cfg.network));
      break;
    case PipelineKind::sequential:
      plan.push_back(stage("aorta", TargetKind::aorta, 1, primary, {}, cfg.network));
      plan.push_back(stage("refine", TargetKind::four_class, 2, cascade, {"aorta"}, cfg.network));
      break;
    case PipelineKind::multitask:
      if (!cfg.pipeline.bypass_classifier) {
        StagePlan c;
        c.name = "classifier";
        c.classifier = true;
        c.epochs = primary;
        plan.push_back(c);
      }
      plan.push_back(stage("flt", TargetKind::flt, 1, primary, {}, cfg.network));
      plan.push_back(stage("tlfl", TargetKind::tlfl, 1, primary, {}, cfg.network));
      plan.push_back(stage("fusion", TargetKind::four_class, 3, cascade, {"flt", "tlfl"}, cfg.network));
      break;
    case PipelineKind::ensemble:
      plan.push_back(stage("member0", TargetKind::four_class, 1, primary, {}, cfg.network));
      plan.push_back(stage("member1", TargetKind::four_class, 1, primary, {}, cfg.ensemble_partner));
      break;
  }
  return plan;
}

namespace {

InferenceOptions inference_of(const RunConfig& cfg) {
  InferenceOptions o = cfg.pipeline.inference;
  if (!o.patch_size) o.patch_size = cfg.augment.patch_size;
  return o;
}

// Frozen upstream predictions as extra channels of a stage input.
std::vector<torch::Tensor> upstream_channels(const StagePlan& plan, const Volume& volume,
                                             std::map<std::string, LoadedSegmenter>& upstream,
                                             const InferenceOptions& options) {
  if (plan.inputs.empty()) return {};
  if (plan.name == "refine") {
    return {sequential_input(volume, *upstream.at("aorta").model, options)[1]};
  }
  auto [flt, tlfl] = multitask_channels(volume, *upstream.at("flt").model, *upstream.at("tlfl").model, options);
  return {flt, tlfl};
}

}  // namespace

void cmd_train(const RunConfig& cfg, int fold, const std::optional<std::string>& only_stage, std::ostream& log) {
  const FoldSplit split = fold_of(cfg, fold);
  const auto plan = plan_stages(cfg);
  if (only_stage) {
    bool found = false;
    for (const auto& p : plan) found = found || p.name == *only_stage;
    require(found, ErrorCode::config, "stage '" + *only_stage + "' is not part of the " +
                                          to_string(cfg.pipeline.kind) + " pipeline");
  }
  std::map<std::string, StoredCase> stored;
  for (const auto& id : concat(split.train, split.validation)) stored.emplace(id, load_preprocessed(cfg, id));
  const InferenceOptions options = inference_of(cfg);

  for (const auto& p : plan) {
    if (only_stage && p.name != *only_stage) continue;
    const fs::path dir = cfg.stage_dir(fold, p.name);
    std::map<std::string, LoadedSegmenter> upstream;
    for (const auto& in : p.inputs) upstream.emplace(in, load_segmenter(best_checkpoint(cfg.stage_dir(fold, in))));

    auto cases_for = [&](const std::vector<std::string>& ids) {
      std::vector<TrainingCase> out;
      for (const auto& id : ids) {
        const StoredCase& s = stored.at(id);
        require(s.label.has_value(), ErrorCode::contract, "case '" + id + "' has no label");
        TrainingCase c = make_training_case(s.volume, *s.label, p.target);
        out.push_back(with_channels(std::move(c), upstream_channels(p, s.volume, upstream, options)));
      }
      return out;
    };
    const auto train = cases_for(split.train);
    const auto validation = cases_for(split.validation);
    log << "training stage " << p.name << " (" << train.size() << " train, " << validation.size()
        << " validation) -> " << dir.string() << "\n";

    StageResult result;
    if (p.classifier) {
      ClassifierStageSpec spec;
      spec.name = p.name;
      spec.network = cfg.classifier;
      spec.epochs = p.epochs;
      spec.input_shape = cfg.pipeline.classifier_input_shape;
      result = train_classifier(spec, train, validation, cfg.train, dir);
    } else {
      StageSpec spec;
      spec.name = p.name;
      spec.network = p.network;
      spec.target = p.target;
      spec.epochs = p.epochs;
      spec.augment = cfg.augment;
      spec.validation = options;
      result = train_stage(spec, train, validation, cfg.train, dir);
    }
    for (const auto& r : result.history.records()) {
      log << "  epoch " << r.epoch << "  loss " << std::fixed << std::setprecision(4) << r.train_loss << "  val "
          << r.val_mean_dc;
      if (r.val_true_flt_dc) log << "  true-FLT " << *r.val_true_flt_dc;
      log << "  lr " << std::scientific << std::setprecision(1) << r.lr << std::defaultfloat << "\n";
    }
    log << "  best epoch " << result.best_epoch << "\n";
  }
}

AggregateReport cmd_evaluate(const RunConfig& cfg, int fold, std::ostream& log) {
  const FoldSplit split = fold_of(cfg, fold);
  const CohortManifest manifest = read_manifest(cfg.manifest_path());
  PipelineConfig pc = cfg.pipeline;
  pc.inference = inference_of(cfg);
  for (const auto& p : plan_stages(cfg))
    if (!pc.checkpoints.count(p.name)) pc.checkpoints[p.name] = best_checkpoint(cfg.stage_dir(fold, p.name));
  pc.validate();

  std::map<std::string, LoadedSegmenter> segmenters;
  std::optional<LoadedClassifier> classifier;
  PipelineModels models;
  for (const auto& name : pc.required_stages()) {
    if (name == "classifier") {
      classifier = load_classifier(pc.checkpoints.at(name));
      models.classifier = classifier->model.get();
    } else {
      auto [it, ok] = segmenters.emplace(name, load_segmenter(pc.checkpoints.at(name)));
      models.segmenters[name] = it->second.model.get();
    }
  }

  const fs::path out_dir = cfg.evaluation_dir(fold);
  fs::create_directories(out_dir / "predictions");
  std::map<std::string, LabelMap> predictions, truths;
  std::map<std::string, bool> classifier_flags;
  for (const auto& id : split.test) {
    const StoredCase s = load_preprocessed(cfg, id);
    require(s.label.has_value(), ErrorCode::contract, "test case '" + id + "' has no label");
    const PipelineResult r = run_pipeline(s.volume, pc, models);
    LabelMap pred = paste_back(r.label, s.box, s.resampled_grid);
    pred.id = id;
    LabelMap truth = paste_back(*s.label, s.box, s.resampled_grid);
    truth.id = id;
    write_label(pred, label_path_for(out_dir / "predictions", id));
    if (r.flt_probability) classifier_flags[id] = *r.flt_probability >= pc.flt_probability_threshold;
    predictions.emplace(id, std::move(pred));
    truths.emplace(id, std::move(truth));
    log << "evaluated " << id << "\n";
  }
  const AggregateReport report = evaluate_cohort(predictions, truths, manifest, {},
                                                 classifier_flags.empty() ? nullptr : &classifier_flags);
  nlohmann::json pj;
  to_json(pj, pc);
  pj.erase("checkpoints");  // absolute paths would make the file location-dependent
  nlohmann::json j = {{"run_id", cfg.run_id},
                      {"fold", fold},
                      {"method", method_name(pc.kind)},
                      {"pipeline", pj},
                      {"report", report_to_json(report)}};
  write_json_file(j, out_dir / "metrics.json");
  const std::vector<DiceTableRow> rows{{method_name(pc.kind), "Testing", &report}};
  {
    std::ofstream out(out_dir / "dice_table.csv", std::ios::binary | std::ios::trunc);
    out << dice_table_csv(rows);
  }
  {
    std::ofstream out(out_dir / "hausdorff_table.csv", std::ios::binary | std::ios::trunc);
    out << hausdorff_table_csv(rows);
  }
  log << "TL " << format_mean_std(report.dice[0]) << "  FL " << format_mean_std(report.dice[1]) << "  FLT "
      << format_mean_std(report.dice[2]) << "  True FLT " << format_mean_std(report.true_flt) << "\n";
  return report;
}

void cmd_report(const RunConfig& cfg, std::ostream& log) {
  const fs::path run_dir = cfg.output_dir / "runs" / cfg.run_id;
  require(fs::is_directory(run_dir), ErrorCode::not_found, "no runs found in " + run_dir.string());
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(run_dir))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());

  std::vector<NamedHistory> histories;
  std::string dice_csv, hd_csv;
  for (const auto& d : dirs) {
    if (fs::exists(d / "history.json")) {
      TrainingHistory h;
      from_json(read_json_file(d / "history.json"), h);
      histories.emplace_back(d.filename().string(), std::move(h));
    }
    if (fs::exists(d / "dice_table.csv")) {
      std::ifstream in(d / "dice_table.csv");
      std::string line;
      for (bool first = true; std::getline(in, line); first = false)
        if (!first || dice_csv.empty()) dice_csv += line + "\n";
      std::ifstream in2(d / "hausdorff_table.csv");
      for (bool first = true; std::getline(in2, line); first = false)
        if (!first || hd_csv.empty()) hd_csv += line + "\n";
    }
  }
  const fs::path out = run_dir / "report";
  fs::create_directories(out);
  if (!histories.empty()) {
    plot_history(histories, out / "training_history.svg");
    log << "wrote " << (out / "training_history.svg").string() << "\n";
  }
  if (!dice_csv.empty()) {
    std::ofstream(out / "dice_table.csv", std::ios::binary | std::ios::trunc) << dice_csv;
    std::ofstream(out / "hausdorff_table.csv", std::ios::binary | std::ios::trunc) << hd_csv;
    log << dice_csv;
  }
}

fs::path cmd_visualize(const RunConfig& cfg, int fold, const std::string& case_id, std::ostream& log) {
  const StoredCase s = load_preprocessed(cfg, case_id);
  std::vector<LabelMap> labels;
  if (s.label) labels.push_back(*s.label);
  const fs::path pred_path = label_path_for(cfg.evaluation_dir(fold) / "predictions", case_id);
  if (fs::exists(pred_path)) {
    // Predictions live on the resampled grid; bring them back into the crop.
    LabelMap pred = crop(read_label(pred_path), s.box);
    require(pred.shape() == s.volume.shape(), ErrorCode::alignment, "prediction does not match case " + case_id);
    // Header floats round the affine; the voxel grid is the same.
    pred.spacing = s.volume.spacing;
    pred.affine = s.volume.affine;
    labels.push_back(std::move(pred));
  }
  const fs::path out = cfg.evaluation_dir(fold) / "overlays" / (case_id + ".png");
  render_overlay(s.volume, labels, out);
  log << "wrote " << out.string() << "\n";
  return out;
}

}  // namespace tbad
