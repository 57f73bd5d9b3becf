#include "tbad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace tbad {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// One pass of the Felzenszwalb-Huttenlocher lower envelope along a line with
// weight w = spacing^2: out[p] = min_q (w (p - q)^2 + f[q]).
void distance_1d(const std::vector<double>& f, double w, std::vector<double>& out, std::vector<std::int64_t>& v,
                 std::vector<double>& zb) {
  const auto n = static_cast<std::int64_t>(f.size());
  out.assign(f.size(), kInf);
  v.assign(f.size(), 0);
  zb.assign(f.size() + 1, 0.0);
  std::int64_t k = -1;
  for (std::int64_t q = 0; q < n; ++q) {
    if (!std::isfinite(f[q])) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      zb[0] = -kInf;
      zb[1] = kInf;
      continue;
    }
    double s = 0.0;
    while (true) {
      const auto p = v[k];
      s = ((f[q] + w * double(q) * double(q)) - (f[p] + w * double(p) * double(p))) / (2.0 * w * double(q - p));
      if (s > zb[k]) break;
      --k;  // zb[0] is -inf, so this never runs past the first parabola
    }
    ++k;
    v[k] = q;
    zb[k] = s;
    zb[k + 1] = kInf;
  }
  if (k < 0) return;
  std::int64_t j = 0;
  for (std::int64_t p = 0; p < n; ++p) {
    while (zb[j + 1] < double(p)) ++j;
    const double d = double(p - v[j]);
    out[p] = w * d * d + f[v[j]];
  }
}

double percentile_of(std::vector<double> values, double pct) {
  if (values.empty()) return 0.0;
  if (pct >= 100.0) return *std::max_element(values.begin(), values.end());
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(pct, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

}  // namespace

double dice_coefficient(const LabelMap& pred, const LabelMap& gt, std::uint8_t class_id) {
  require(pred.shape() == gt.shape(), ErrorCode::contract,
          "prediction grid " + to_string(pred.shape()) + " differs from ground truth " + to_string(gt.shape()));
  std::int64_t p = 0, g = 0, both = 0;
  const auto pv = pred.data.values();
  const auto gv = gt.data.values();
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const bool in_p = pv[i] == class_id;
    const bool in_g = gv[i] == class_id;
    p += in_p;
    g += in_g;
    both += in_p && in_g;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

Array3<std::uint8_t> boundary_mask(const LabelMap& label, std::uint8_t class_id) {
  const Index3 s = label.shape();
  Array3<std::uint8_t> out(s, 0);
  const auto& d = label.data;
  for (std::int64_t z = 0; z < s[2]; ++z)
    for (std::int64_t y = 0; y < s[1]; ++y)
      for (std::int64_t x = 0; x < s[0]; ++x) {
        if (d(x, y, z) != class_id) continue;
        const bool edge = x == 0 || y == 0 || z == 0 || x == s[0] - 1 || y == s[1] - 1 || z == s[2] - 1 ||
                          d(x - 1, y, z) != class_id || d(x + 1, y, z) != class_id || d(x, y - 1, z) != class_id ||
                          d(x, y + 1, z) != class_id || d(x, y, z - 1) != class_id || d(x, y, z + 1) != class_id;
        out(x, y, z) = edge ? 1 : 0;
      }
  return out;
}

Array3<double> squared_distance_transform(const Array3<std::uint8_t>& mask, const Vec3& spacing) {
  const Index3 s = mask.shape();
  Array3<double> dist(s, kInf);
  for (std::int64_t i = 0; i < mask.size(); ++i)
    if (mask[i]) dist[i] = 0.0;
  std::vector<double> line, out, zb;
  std::vector<std::int64_t> v;
  for (int axis = 0; axis < 3; ++axis) {
    const double w = spacing[axis] * spacing[axis];
    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
    line.resize(static_cast<std::size_t>(s[axis]));
    for (std::int64_t j = 0; j < s[a2]; ++j)
      for (std::int64_t i = 0; i < s[a1]; ++i) {
        Index3 idx{};
        idx[a1] = i;
        idx[a2] = j;
        for (std::int64_t t = 0; t < s[axis]; ++t) {
          idx[axis] = t;
          line[static_cast<std::size_t>(t)] = dist(idx[0], idx[1], idx[2]);
        }
        distance_1d(line, w, out, v, zb);
        for (std::int64_t t = 0; t < s[axis]; ++t) {
          idx[axis] = t;
          dist(idx[0], idx[1], idx[2]) = out[static_cast<std::size_t>(t)];
        }
      }
  }
  return dist;
}

std::optional<double> hausdorff_mm(const LabelMap& pred, const LabelMap& gt, std::uint8_t class_id, const Vec3& spacing,
                                   const HausdorffOptions& options) {
  require(pred.shape() == gt.shape(), ErrorCode::contract, "prediction and ground-truth grids differ");
  const auto bp = boundary_mask(pred, class_id);
  const auto bg = boundary_mask(gt, class_id);
  const auto nonempty = [](const Array3<std::uint8_t>& m) {
    return std::any_of(m.values().begin(), m.values().end(), [](std::uint8_t v) { return v != 0; });
  };
  if (!nonempty(bp) || !nonempty(bg)) return std::nullopt;
  const auto dt_p = squared_distance_transform(bp, spacing);
  const auto dt_g = squared_distance_transform(bg, spacing);
  std::vector<double> p_to_g, g_to_p;
  for (std::int64_t i = 0; i < bp.size(); ++i) {
    if (bp[i]) p_to_g.push_back(std::sqrt(dt_g[i]));
    if (bg[i]) g_to_p.push_back(std::sqrt(dt_p[i]));
  }
  return std::max(percentile_of(std::move(p_to_g), options.percentile),
                  percentile_of(std::move(g_to_p), options.percentile));
}

std::optional<MeanStd> summarize(std::span<const double> values) {
  if (values.empty()) return std::nullopt;
  MeanStd out;
  out.count = values.size();
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(ss / static_cast<double>(values.size()));
  return out;
}

CaseMetrics evaluate_case(const LabelMap& pred, const LabelMap& gt, const HausdorffOptions& options) {
  CaseMetrics m;
  m.id = gt.id;
  for (std::size_t c = 0; c < kReportedClasses.size(); ++c) {
    const auto cls = code(kReportedClasses[c]);
    m.dice[c] = dice_coefficient(pred, gt, cls);
    m.hd[c] = hausdorff_mm(pred, gt, cls, gt.spacing, options);
  }
  m.gt_has_flt = contains_class(gt, LabelClass::thrombosis);
  m.pred_has_flt = contains_class(pred, LabelClass::thrombosis);
  return m;
}

std::optional<MeanStd> true_flt_dice(std::span<const CaseMetrics> cases) {
  std::vector<double> values;
  for (const auto& c : cases)
    if (c.gt_has_flt) values.push_back(c.dice[2]);
  return summarize(values);
}

ClassifierScores classifier_metrics(const std::vector<bool>& predicted, const std::vector<bool>& actual) {
  require(predicted.size() == actual.size(), ErrorCode::contract, "prediction and label lists differ in length");
  ClassifierScores s;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] && actual[i]) ++s.true_positive;
    else if (predicted[i]) ++s.false_positive;
    else if (actual[i]) ++s.false_negative;
    else ++s.true_negative;
  }
  const auto tp = static_cast<double>(s.true_positive);
  const auto fp = static_cast<double>(s.false_positive);
  const auto fn = static_cast<double>(s.false_negative);
  if (tp + fp > 0) s.precision = tp / (tp + fp);
  if (tp + fn > 0) s.recall = tp / (tp + fn);
  if (2 * tp + fp + fn > 0) s.f1 = 2 * tp / (2 * tp + fp + fn);
  return s;
}

AggregateReport evaluate_cohort(const std::map<std::string, LabelMap>& predictions,
                                const std::map<std::string, LabelMap>& ground_truths, const CohortManifest& manifest,
                                const HausdorffOptions& options, const std::map<std::string, bool>* classifier_flags) {
  AggregateReport report;
  std::vector<bool> predicted_flags, actual_flags;
  for (const auto& [id, gt] : ground_truths) {
    const auto it = predictions.find(id);
    if (it == predictions.end()) {
      report.failed_cases.push_back(id);
      continue;
    }
    CaseMetrics m = evaluate_case(it->second, gt, options);
    m.id = id;
    const auto rec = std::find_if(manifest.cases.begin(), manifest.cases.end(),
                                  [&](const CaseRecord& r) { return r.id == id; });
    if (rec != manifest.cases.end()) m.gt_has_flt = rec->has_flt;
    bool flag = m.pred_has_flt;
    if (classifier_flags) {
      const auto f = classifier_flags->find(id);
      if (f != classifier_flags->end()) flag = f->second;
    }
    predicted_flags.push_back(flag);
    actual_flags.push_back(m.gt_has_flt);
    report.cases.push_back(std::move(m));
  }
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> dice, hd;
    for (const auto& m : report.cases) {
      dice.push_back(m.dice[c]);
      if (m.hd[c]) hd.push_back(*m.hd[c]);
    }
    report.dice[c] = summarize(dice);
    report.hd[c] = summarize(hd);
  }
  report.true_flt = true_flt_dice(report.cases);
  report.classifier = classifier_metrics(predicted_flags, actual_flags);
  return report;
}

namespace {

nlohmann::json stat_json(const std::optional<MeanStd>& s) {
  if (!s) return nullptr;
  return {{"mean", s->mean}, {"std", s->std}, {"count", s->count}};
}

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

nlohmann::json report_to_json(const AggregateReport& report) {
  nlohmann::json cases = nlohmann::json::array();
  for (const auto& m : report.cases) {
    nlohmann::json dice, hd;
    for (std::size_t c = 0; c < 3; ++c) {
      dice[kReportedClassNames[c]] = m.dice[c];
      hd[kReportedClassNames[c]] = opt_json(m.hd[c]);
    }
    cases.push_back({{"id", m.id},
                     {"dice", dice},
                     {"hd_mm", hd},
                     {"gt_has_flt", m.gt_has_flt},
                     {"pred_has_flt", m.pred_has_flt}});
  }
  nlohmann::json dice, hd;
  for (std::size_t c = 0; c < 3; ++c) {
    dice[kReportedClassNames[c]] = stat_json(report.dice[c]);
    hd[kReportedClassNames[c]] = stat_json(report.hd[c]);
  }
  const auto& k = report.classifier;
  return {{"cases", cases},
          {"aggregate",
           {{"dice", dice},
            {"true_flt_dice", stat_json(report.true_flt)},
            {"hd_mm", hd},
            {"classifier",
             {{"precision", opt_json(k.precision)},
              {"recall", opt_json(k.recall)},
              {"f1", opt_json(k.f1)},
              {"tp", k.true_positive},
              {"fp", k.false_positive},
              {"fn", k.false_negative},
              {"tn", k.true_negative}}}}},
          {"failed_cases", report.failed_cases}};
}

std::string format_mean_std(const std::optional<MeanStd>& value, int digits) {
  if (!value) return "n/a";
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << value->mean << " ± " << value->std;
  return os.str();
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string dice_table_csv(std::span<const DiceTableRow> rows) {
  std::ostringstream os;
  os << "Method,Phase,TL,FL,FLT,True FLT\n";
  for (const auto& r : rows) {
    os << csv_field(r.method) << ',' << csv_field(r.phase);
    for (std::size_t c = 0; c < 3; ++c) os << ',' << format_mean_std(r.report->dice[c]);
    os << ',' << format_mean_std(r.report->true_flt) << '\n';
  }
  return os.str();
}

std::string hausdorff_table_csv(std::span<const DiceTableRow> rows) {
  std::ostringstream os;
  os << "Phase,Method,TL,FL,FLT\n";
  for (const auto& r : rows) {
    os << csv_field(r.phase) << ',' << csv_field(r.method);
    for (std::size_t c = 0; c < 3; ++c) os << ',' << format_mean_std(r.report->hd[c]);
    os << '\n';
  }
  return os.str();
}

}  // namespace tbad
