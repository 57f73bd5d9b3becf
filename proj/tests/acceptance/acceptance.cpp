// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,2,7] [--work DIR] [--epochs 30] [--swin-epochs 15] [--lr 1e-3]
//
// Criteria 7, 8 and 10 share one trained Method 1 model; asking for 8 or 10
// alone trains it first.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <torch/torch.h>

#include "tbad/cohort.hpp"
#include "tbad/losses.hpp"
#include "tbad/metrics.hpp"
#include "tbad/nifti_io.hpp"
#include "tbad/phantom.hpp"
#include "tbad/pipelines.hpp"
#include "tbad/preprocess.hpp"
#include "tbad/tensor_bridge.hpp"
#include "tbad/training.hpp"

using namespace tbad;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 3) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

template <class T>
bool same_values(const Array3<T>& a, const Array3<T>& b) {
  return a.shape() == b.shape() && std::ranges::equal(a.values(), b.values());
}

double minutes_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
}

struct Settings {
  fs::path work;
  int epochs = 30;
  int fusion_epochs = 20;
  int swin_epochs = 15;
  double lr = 1e-3;
  int patch = 48;
  int width = 8;
};

// ---------------------------------------------------------------- oracles

double dice_oracle(const LabelMap& p, const LabelMap& g, std::uint8_t c) {
  std::int64_t np = 0, ng = 0, both = 0;
  for (std::int64_t i = 0; i < p.data.size(); ++i) {
    np += p.data[i] == c;
    ng += g.data[i] == c;
    both += p.data[i] == c && g.data[i] == c;
  }
  return np + ng == 0 ? 1.0 : 2.0 * static_cast<double>(both) / static_cast<double>(np + ng);
}

std::vector<Vec3> boundary_points(const LabelMap& l, std::uint8_t c, const Vec3& sp) {
  const auto& s = l.shape();
  std::vector<Vec3> pts;
  for (std::int64_t z = 0; z < s[2]; ++z)
    for (std::int64_t y = 0; y < s[1]; ++y)
      for (std::int64_t x = 0; x < s[0]; ++x) {
        if (l.data(x, y, z) != c) continue;
        bool edge = false;
        const std::int64_t n[6][3] = {{x - 1, y, z}, {x + 1, y, z}, {x, y - 1, z},
                                      {x, y + 1, z}, {x, y, z - 1}, {x, y, z + 1}};
        for (const auto& q : n)
          edge = edge || !l.data.contains(q[0], q[1], q[2]) || l.data(q[0], q[1], q[2]) != c;
        if (edge) pts.push_back({x * sp[0], y * sp[1], z * sp[2]});
      }
  return pts;
}

std::optional<double> hausdorff_oracle(const LabelMap& p, const LabelMap& g, std::uint8_t c, const Vec3& sp) {
  const auto a = boundary_points(p, c, sp), b = boundary_points(g, c, sp);
  if (a.empty() || b.empty()) return std::nullopt;
  auto directed = [](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
    double worst = 0.0;
    for (const auto& u : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& v : to) {
        const double dx = u[0] - v[0], dy = u[1] - v[1], dz = u[2] - v[2];
        best = std::min(best, dx * dx + dy * dy + dz * dz);
      }
      worst = std::max(worst, best);
    }
    return worst;
  };
  return std::sqrt(std::max(directed(a, b), directed(b, a)));
}

// Random boxes painted over a background, or i.i.d. noise for odd indices.
LabelMap random_map(Rng& rng, int index, const Vec3& spacing) {
  LabelMap l;
  l.data = Array3<std::uint8_t>({12, 12, 12});
  l.spacing = spacing;
  l.affine = diagonal_affine(spacing);
  if (index % 2 == 1) {
    const double fill = rng.uniform(0.05, 0.9);
    for (auto& v : l.data.values()) v = rng.bernoulli(fill) ? static_cast<std::uint8_t>(rng.uniform_int(1, 3)) : 0;
    return l;
  }
  const int boxes = static_cast<int>(rng.uniform_int(1, 6));
  for (int b = 0; b < boxes; ++b) {
    Index3 lo, hi;
    for (int i = 0; i < 3; ++i) {
      lo[i] = rng.uniform_int(0, 11);
      hi[i] = std::min<std::int64_t>(11, lo[i] + rng.uniform_int(0, 7));
    }
    const auto c = static_cast<std::uint8_t>(rng.uniform_int(1, 3));
    for (auto z = lo[2]; z <= hi[2]; ++z)
      for (auto y = lo[1]; y <= hi[1]; ++y)
        for (auto x = lo[0]; x <= hi[0]; ++x) l.data(x, y, z) = c;
  }
  return l;
}

Outcome metric_oracles() {
  Rng rng(2024);
  double worst_hd = 0.0;
  int dice_mismatch = 0, presence_mismatch = 0, hd_checked = 0;
  for (int i = 0; i < 200; ++i) {
    const Vec3 sp{rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0), rng.uniform(0.5, 3.0)};
    const auto p = random_map(rng, i, sp), g = random_map(rng, i + (i % 4 == 0), sp);
    for (std::uint8_t c = 1; c <= 3; ++c) {
      dice_mismatch += dice_coefficient(p, g, c) != dice_oracle(p, g, c);
      const auto hd = hausdorff_mm(p, g, c, sp);
      const auto ref = hausdorff_oracle(p, g, c, sp);
      if (hd.has_value() != ref.has_value()) {
        ++presence_mismatch;
      } else if (hd) {
        worst_hd = std::max(worst_hd, std::abs(*hd - *ref));
        ++hd_checked;
      }
    }
  }
  return {dice_mismatch == 0 && presence_mismatch == 0 && worst_hd <= 1e-9,
          "200 pairs: Dice mismatches " + std::to_string(dice_mismatch) + ", max HD error " + sci(worst_hd) +
              " mm over " + std::to_string(hd_checked) + " class pairs"};
}

Outcome true_flt_semantics() {
  // Five FLT voxels per positive case; predictions overlap by 3 and 4 of them.
  auto make = [](const std::string& id) {
    LabelMap l;
    l.data = Array3<std::uint8_t>({10, 1, 1});
    l.id = id;
    return l;
  };
  std::map<std::string, LabelMap> gt, pred;
  CohortManifest manifest;
  auto add = [&](const std::string& id, std::vector<int> g, std::vector<int> p, bool flt) {
    auto a = make(id), b = make(id);
    for (int x : g) a.data(x, 0, 0) = 3;
    for (int x : p) b.data(x, 0, 0) = 3;
    gt[id] = a;
    pred[id] = b;
    CaseRecord r;
    r.id = id;
    r.has_flt = flt;
    manifest.cases.push_back(r);
  };
  add("pos_a", {0, 1, 2, 3, 4}, {2, 3, 4, 5, 6}, true);
  add("pos_b", {0, 1, 2, 3, 4}, {1, 2, 3, 4, 5}, true);
  add("neg", {}, {7, 8}, false);
  const auto report = evaluate_cohort(pred, gt, manifest);
  const double plain = report.dice[2]->mean;
  const double tflt = report.true_flt->mean;
  return {std::abs(plain - 1.4 / 3.0) <= 1e-12 && std::abs(tflt - 0.7) <= 1e-12,
          "plain FLT mean " + fmt(plain, 4) + " (expect 0.4667), True-FLT " + fmt(tflt, 12) + " (expect 0.7)"};
}

double gradient_error(LossKind kind, std::uint64_t seed) {
  auto g = torch::make_generator<at::CPUGeneratorImpl>(seed);
  const auto logits = torch::randn({2, 4, 4, 4}, g, torch::kFloat64);
  const auto target = torch::randint(0, 2, {4, 4, 4}, g, torch::kInt64);
  auto loss_of = [&](const torch::Tensor& x) {
    LossInputs in;
    in.logits = x;
    in.target = target;
    return compute_loss(kind, in);
  };
  auto x = logits.clone().requires_grad_(true);
  loss_of(x).backward();
  const auto analytic = x.grad();
  auto numeric = torch::zeros_like(logits);
  const double h = 1e-6;
  for (std::int64_t i = 0; i < logits.numel(); ++i) {
    auto plus = logits.clone(), minus = logits.clone();
    plus.view({-1})[i] += h;
    minus.view({-1})[i] -= h;
    numeric.view({-1})[i] = (loss_of(plus).item<double>() - loss_of(minus).item<double>()) / (2 * h);
  }
  const double scale = std::max(analytic.norm().item<double>(), numeric.norm().item<double>());
  return (analytic - numeric).norm().item<double>() / scale;
}

Outcome loss_gradients() {
  double worst_dcel = 0.0, worst_gdl = 0.0;
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    worst_dcel = std::max(worst_dcel, gradient_error(LossKind::dcel, seed));
    worst_gdl = std::max(worst_gdl, gradient_error(LossKind::gdl, seed));
  }
  return {worst_dcel < 1e-6 && worst_gdl < 1e-6,
          "20 problems: max relative error dcel " + sci(worst_dcel) + ", gdl " + sci(worst_gdl)};
}

Outcome lr_schedule() {
  TrainConfig cfg;
  auto near = [](double a, double b) { return std::abs(a - b) <= 1e-12 * b; };
  bool ok = near(lr_at(0, cfg), 1e-4) && near(lr_at(30, cfg), 1e-5) && near(lr_at(60, cfg), 1e-6);
  for (int e = 1; e <= 29; ++e) ok = ok && lr_at(e, cfg) == lr_at(0, cfg);
  for (int e = 31; e <= 59; ++e) ok = ok && lr_at(e, cfg) == lr_at(30, cfg);
  return {ok, "epochs 0/30/60 -> " + sci(lr_at(0, cfg)) + " / " + sci(lr_at(30, cfg)) + " / " + sci(lr_at(60, cfg)) +
                  ", constant within each step"};
}

Outcome stratification(const Settings& s) {
  CohortOptions opt;
  opt.n = 100;
  opt.flt_fraction = 0.68;
  opt.seed = 11;
  const fs::path dir = s.work / "cohort100";
  generate_cohort(opt, dir);
  const auto manifest = build_manifest(dir);
  const auto folds = stratified_folds(manifest, 5, 11);
  std::map<std::string, int> seen;
  bool counts_ok = manifest.flt_positive_count() == 68;
  std::string per_fold;
  for (const auto& f : folds) {
    int pos = 0, neg = 0;
    for (const auto& id : f.test) {
      ++seen[id];
      (manifest.find(id).has_flt ? pos : neg)++;
    }
    counts_ok = counts_ok && (pos == 13 || pos == 14) && (neg == 6 || neg == 7);
    per_fold += " " + std::to_string(pos) + "/" + std::to_string(neg);
  }
  bool partition = seen.size() == manifest.cases.size();
  for (const auto& [id, n] : seen) partition = partition && n == 1;
  fs::remove_all(dir);
  return {counts_ok && partition, std::to_string(manifest.flt_positive_count()) +
                                      " FLT-positive; test FLT+/FLT- per fold:" + per_fold +
                                      (partition ? "; folds partition the cohort" : "; NOT a partition")};
}

Outcome ensemble_invariants() {
  Rng rng(5);
  Volume img;
  img.data = Array3<float>({24, 20, 16});
  for (auto& v : img.data.values()) v = static_cast<float>(rng.uniform());
  SegmenterConfig a;
  a.base_width = 4;
  a.depth = 2;
  a.seed = 1;
  SegmenterConfig b = a;
  b.seed = 2;
  SegmenterConfig c = a;
  c.architecture = SegmenterArch::unet3d;
  c.base_width = 6;
  c.seed = 3;
  Segmenter ma(a), mb(b), mc(c), ma_twin(a);
  InferenceOptions opt;
  opt.patch_size = Index3{16, 16, 16};
  const auto pa = run_single_step(img, ma, opt).probs.probs;
  const auto pb = run_single_step(img, mb, opt).probs.probs;
  const auto pc = run_single_step(img, mc, opt).probs.probs;
  const auto mean = (pa + pb + pc) / 3.0;
  const auto ens = run_ensemble(img, {&ma, &mb, &mc}, opt);
  const double mean_err = (ens.probs.probs - mean).abs().max().item<double>();
  const auto same = run_ensemble(img, {&ma, &ma_twin}, opt);
  const double twin_err = (same.probs.probs - pa).abs().max().item<double>();
  const bool twin_label = same_values(same.label.data, run_single_step(img, ma, opt).label.data);
  bool perm_ok = true;
  std::vector<SegmentationModel*> order{&ma, &mb, &mc};
  std::sort(order.begin(), order.end());
  do {
    perm_ok = perm_ok && same_values(run_ensemble(img, order, opt).label.data, ens.label.data);
  } while (std::next_permutation(order.begin(), order.end()));
  return {mean_err <= 1e-12 && twin_err <= 1e-12 && twin_label && perm_ok,
          "mean-of-softmax error " + sci(mean_err) + ", identical-member error " + sci(twin_err) +
              (perm_ok ? ", labels stable under all 6 member orders" : ", labels change with member order")};
}

// ------------------------------------------------------------ phantom runs

struct PhantomSet {
  std::vector<TrainingCase> train, val, test;
  std::vector<LabelMap> test_labels;  // four-class, preprocessed grid
  std::vector<Volume> test_images;
  CohortManifest manifest;
};

PhantomSet phantom_set() {
  PhantomSet set;
  PreprocessConfig pp;
  for (int i = 0; i < 30; ++i) {
    const bool flt = i % 3 != 0;
    auto spec = randomized_spec(PhantomSpec{}, 7, i, flt);
    spec.id = "accept_" + std::to_string(i);
    const auto ph = generate_phantom(spec);
    auto hu = denormalize_to_hu(ph.volume, pp);
    hu.id = spec.id;
    auto pre = preprocess_case(hu, ph.label, pp);
    pre.volume.id = pre.label->id = spec.id;
    auto tc = make_training_case(pre.volume, *pre.label, TargetKind::four_class);
    if (i < 20) {
      set.train.push_back(tc);
    } else if (i < 25) {
      set.val.push_back(tc);
    } else {
      set.test.push_back(tc);
      set.test_images.push_back(pre.volume);
      set.test_labels.push_back(*pre.label);
      CaseRecord r;
      r.id = spec.id;
      r.has_flt = flt;
      set.manifest.cases.push_back(r);
    }
  }
  return set;
}

StageSpec base_stage(const Settings& s, const std::string& name, int epochs) {
  StageSpec spec;
  spec.name = name;
  spec.network.base_width = s.width;
  spec.epochs = epochs;
  spec.augment.patch_size = {s.patch, s.patch, s.patch};
  spec.validation.patch_size = Index3{s.patch, s.patch, s.patch};
  return spec;
}

TrainConfig base_train(const Settings& s) {
  TrainConfig cfg;
  cfg.initial_lr = s.lr;
  cfg.seed = 7;
  return cfg;
}

struct MethodOneRun {
  StageResult result;
  AggregateReport report;
  std::map<std::string, LabelMap> predictions;
  std::shared_ptr<Segmenter> model;
  double minutes = 0.0;
};

MethodOneRun train_method_one(const Settings& s, const PhantomSet& set, const fs::path& dir) {
  const auto t0 = std::chrono::steady_clock::now();
  MethodOneRun run;
  const auto spec = base_stage(s, "segmenter", s.epochs);
  run.result = train_stage(spec, set.train, set.val, base_train(s), dir, [&](int epoch, int step, double) {
    if (step == 0) std::cerr << "  " << dir.filename().string() << " epoch " << epoch << "\n";
  });
  run.model = std::shared_ptr<Segmenter>(load_segmenter(run.result.best_checkpoint).model.release());
  std::map<std::string, LabelMap> gt;
  for (std::size_t i = 0; i < set.test_images.size(); ++i) {
    const auto& img = set.test_images[i];
    run.predictions[img.id] = run_single_step(img, *run.model, spec.validation).label;
    gt[img.id] = set.test_labels[i];
  }
  run.report = evaluate_cohort(run.predictions, gt, set.manifest);
  run.minutes = minutes_since(t0);
  return run;
}

std::vector<double> test_metric_vector(const AggregateReport& r) {
  std::vector<double> v;
  for (const auto& c : r.cases)
    for (double d : c.dice) v.push_back(d);
  for (const auto& d : r.dice) v.push_back(d ? d->mean : -1.0);
  v.push_back(r.true_flt ? r.true_flt->mean : -1.0);
  return v;
}

Outcome end_to_end(const MethodOneRun& run) {
  const double tl = run.report.dice[0]->mean, fl = run.report.dice[1]->mean;
  const double tflt = run.report.true_flt ? run.report.true_flt->mean : 0.0;
  return {tl >= 0.70 && fl >= 0.70 && tflt >= 0.30,
          "test TL " + fmt(tl) + ", FL " + fmt(fl) + ", True-FLT " + fmt(tflt) + " (floors 0.70/0.70/0.30), best epoch " +
              std::to_string(run.result.best_epoch) + ", " + fmt(run.minutes, 1) + " min"};
}

torch::Tensor oracle_flt(const LabelMap& four_class) { return to_tensor(derive_flt_label(four_class).data).to(torch::kFloat32); }

Outcome oracle_multitask(const Settings& s, const PhantomSet& set, const MethodOneRun& m1) {
  const auto t0 = std::chrono::steady_clock::now();
  InferenceOptions opt;
  opt.patch_size = Index3{s.patch, s.patch, s.patch};
  auto tlfl_of = [&](const Volume& img) {
    const auto p = run_single_step(img, *m1.model, opt).probs.probs;
    return (p[1] + p[2]).to(torch::kFloat32);
  };
  auto with_oracle = [&](const std::vector<TrainingCase>& cases) {
    std::vector<TrainingCase> out;
    for (const auto& c : cases) out.push_back(with_channels(c, {oracle_flt(c.target), tlfl_of(c.image)}));
    return out;
  };
  auto spec = base_stage(s, "fusion", s.fusion_epochs);
  spec.network.in_channels = 3;
  const auto fused = train_stage(spec, with_oracle(set.train), with_oracle(set.val), base_train(s), s.work / "fusion",
                                 [](int epoch, int step, double) {
                                   if (step == 0) std::cerr << "  fusion epoch " << epoch << "\n";
                                 });
  auto fusion = load_segmenter(fused.best_checkpoint);
  std::map<std::string, LabelMap> pred, gt;
  for (std::size_t i = 0; i < set.test_images.size(); ++i) {
    const auto& img = set.test_images[i];
    pred[img.id] = fuse_multitask(img, oracle_flt(set.test_labels[i]), tlfl_of(img), *fusion.model, opt).label;
    gt[img.id] = set.test_labels[i];
  }
  const auto report = evaluate_cohort(pred, gt, set.manifest);
  const double m3 = report.true_flt ? report.true_flt->mean : 0.0;
  const double base = m1.report.true_flt ? m1.report.true_flt->mean : 0.0;
  return {m3 > base, "True-FLT Method 3 (oracle FLT channel) " + fmt(m3) + " vs Method 1 " + fmt(base) + ", " +
                         fmt(minutes_since(t0), 1) + " min"};
}

Outcome swin_losses(const Settings& s, const PhantomSet& set) {
  const auto t0 = std::chrono::steady_clock::now();
  double best[2] = {0.0, 0.0};
  const LossKind kinds[2] = {LossKind::dcel, LossKind::gdl};
  for (int i = 0; i < 2; ++i) {
    auto spec = base_stage(s, "swin_" + to_string(kinds[i]), s.swin_epochs);
    spec.network.architecture = SegmenterArch::swin_unetr;
    auto cfg = base_train(s);
    cfg.loss = kinds[i];
    const auto r = train_stage(spec, set.train, set.val, cfg, s.work / spec.name, [&](int epoch, int step, double) {
      if (step == 0) std::cerr << "  " << spec.name << " epoch " << epoch << "\n";
    });
    for (const auto& rec : r.history.records()) best[i] = std::max(best[i], rec.val_mean_dc);
  }
  return {best[0] >= best[1], "Swin-UnetR best validation mean DC over " + std::to_string(s.swin_epochs) +
                                  " epochs: DCEL " + fmt(best[0]) + ", GDL " + fmt(best[1]) + ", " +
                                  fmt(minutes_since(t0), 1) + " min"};
}

Outcome determinism(const MethodOneRun& first, const MethodOneRun& second) {
  const auto a = test_metric_vector(first.report), b = test_metric_vector(second.report);
  double worst = a.size() == b.size() ? 0.0 : std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  double loss_gap = 0.0;
  const auto& ha = first.result.history.records();
  const auto& hb = second.result.history.records();
  for (std::size_t i = 0; i < std::min(ha.size(), hb.size()); ++i)
    loss_gap = std::max(loss_gap, std::abs(ha[i].train_loss - hb[i].train_loss));
  return {worst <= 1e-6, "max test-metric difference " + sci(worst) + " over " + std::to_string(a.size()) +
                             " values; max train-loss difference " + sci(loss_gap)};
}

Outcome round_trips(const Settings& s) {
  // NIfTI: every voxel, the spacing and the affine survive save -> load.
  bool nifti_ok = true;
  for (int i = 0; i < 5; ++i) {
    auto spec = randomized_spec(PhantomSpec{}, 21, i, i % 2 == 0);
    spec.id = "rt_" + std::to_string(i);
    const auto ph = generate_phantom(spec);
    const auto saved = save_case(ph.volume, ph.label, s.work / "nifti");
    const auto loaded = load_case(saved.image, saved.label);
    nifti_ok = nifti_ok && same_values(loaded.volume.data, ph.volume.data) &&
               same_values(loaded.label->data, ph.label.data) && loaded.volume.spacing == ph.volume.spacing &&
               loaded.volume.affine == ph.volume.affine;
  }
  // Crop -> paste-back keeps every foreground voxel of the resampled label.
  PreprocessConfig pp;
  std::int64_t lost = 0, total = 0;
  for (int i = 0; i < 5; ++i) {
    auto spec = randomized_spec(PhantomSpec{}, 22, i, true);
    const auto ph = generate_phantom(spec);
    const auto hu = denormalize_to_hu(ph.volume, pp);
    const auto pre = preprocess_case(hu, ph.label, pp);
    const auto full = resample(ph.label, pp);
    const auto back = paste_back(*pre.label, pre.box, pre.resampled_grid);
    for (std::int64_t v = 0; v < full.data.size(); ++v) {
      if (full.data[v] == 0) continue;
      ++total;
      lost += back.data[v] != full.data[v];
    }
  }
  // Resume: 1 + 2 epochs reproduce 3 uninterrupted epochs.
  PhantomSpec small;
  small.shape = {40, 40, 40};
  std::vector<TrainingCase> cases;
  for (int i = 0; i < 3; ++i) {
    const auto ph = generate_phantom(randomized_spec(small, 8, i, i % 2 == 0));
    cases.push_back(make_training_case(ph.volume, ph.label, TargetKind::four_class));
  }
  auto stage = [](int epochs) {
    StageSpec st;
    st.network.base_width = 4;
    st.network.depth = 2;
    st.epochs = epochs;
    st.augment.patch_size = {16, 16, 16};
    st.validation.patch_size = Index3{16, 16, 16};
    return st;
  };
  TrainConfig cfg;
  cfg.seed = 5;
  const std::vector<TrainingCase> tr{cases[0], cases[1]}, va{cases[2]};
  const auto whole = train_stage(stage(3), tr, va, cfg, s.work / "resume_whole");
  const auto first = train_stage(stage(1), tr, va, cfg, s.work / "resume_part");
  auto cont = stage(3);
  cont.resume_from = first.checkpoints.back();
  const auto resumed = train_stage(cont, tr, va, cfg, s.work / "resume_part");
  double gap = std::numeric_limits<double>::infinity();
  if (resumed.history.size() == whole.history.size()) {
    gap = 0.0;
    for (std::size_t e = 0; e < whole.history.size(); ++e)
      gap = std::max(gap, std::abs(resumed.history.records()[e].train_loss - whole.history.records()[e].train_loss));
  }
  return {nifti_ok && lost == 0 && total > 0 && gap <= 1e-5,
          std::string("NIfTI ") + (nifti_ok ? "lossless" : "MISMATCH") + "; paste-back lost " + std::to_string(lost) +
              " of " + std::to_string(total) + " foreground voxels; resume loss gap " + sci(gap)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string only;
  Settings s;
  s.work = fs::temp_directory_path() / "tbad-acceptance";
  app.add_option("--only", only, "Comma-separated criterion numbers");
  app.add_option("--work", s.work, "Scratch directory");
  app.add_option("--epochs", s.epochs, "Method 1 epochs");
  app.add_option("--fusion-epochs", s.fusion_epochs, "Fusion stage epochs");
  app.add_option("--swin-epochs", s.swin_epochs, "Swin-UnetR epochs per loss");
  app.add_option("--lr", s.lr, "Initial learning rate of the phantom runs");
  CLI11_PARSE(app, argc, argv);

  std::set<int> wanted;
  if (only.empty()) {
    for (int i = 1; i <= 11; ++i) wanted.insert(i);
  } else {
    std::stringstream ss(only);
    for (std::string tok; std::getline(ss, tok, ',');) wanted.insert(std::stoi(tok));
  }
  torch::set_num_threads(1);
  fs::remove_all(s.work);
  fs::create_directories(s.work);

  std::optional<PhantomSet> set;
  auto phantoms = [&]() -> const PhantomSet& {
    if (!set) set = phantom_set();
    return *set;
  };
  std::optional<MethodOneRun> m1;
  auto method_one = [&]() -> const MethodOneRun& {
    if (!m1) m1 = train_method_one(s, phantoms(), s.work / "method1");
    return *m1;
  };

  const std::map<int, std::pair<std::string, std::function<Outcome()>>> criteria{
      {1, {"metric oracle equivalence", metric_oracles}},
      {2, {"True-FLT semantics", true_flt_semantics}},
      {3, {"loss gradient checks", loss_gradients}},
      {4, {"learning-rate schedule", lr_schedule}},
      {5, {"stratified folds", [&] { return stratification(s); }}},
      {6, {"ensemble invariants", ensemble_invariants}},
      {7, {"end-to-end phantom run", [&] { return end_to_end(method_one()); }}},
      {8, {"Method 3 beats Method 1 on True-FLT", [&] { return oracle_multitask(s, phantoms(), method_one()); }}},
      {9, {"DCEL >= GDL for Swin-UnetR", [&] { return swin_losses(s, phantoms()); }}},
      {10, {"determinism", [&] { return determinism(method_one(), train_method_one(s, phantoms(), s.work / "repeat")); }}},
      {11, {"round trips", [&] { return round_trips(s); }}},
  };

  int failed = 0;
  for (const auto& [id, entry] : criteria) {
    if (!wanted.count(id)) continue;
    Outcome o;
    try {
      o = entry.second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << ": " << entry.first << " -- " << o.detail
              << std::endl;
  }
  fs::remove_all(s.work);
  std::cout << (failed == 0 ? "all selected criteria passed" : std::to_string(failed) + " criterion(s) failed")
            << std::endl;
  return failed == 0 ? 0 : 1;
}
