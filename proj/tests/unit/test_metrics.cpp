#include <cmath>
#include <limits>

#include "test_util.hpp"
#include "tbad/metrics.hpp"

using namespace tbad;

namespace {

LabelMap blank(const Index3& shape) {
  LabelMap l;
  l.data = Array3<std::uint8_t>(shape);
  return l;
}

double brute_dice(const LabelMap& p, const LabelMap& g, std::uint8_t c) {
  double inter = 0, np = 0, ng = 0;
  for (std::int64_t i = 0; i < p.data.size(); ++i) {
    const bool a = p.data[i] == c, b = g.data[i] == c;
    inter += a && b;
    np += a;
    ng += b;
  }
  if (np + ng == 0) return 1.0;
  return 2.0 * inter / (np + ng);
}

std::vector<Index3> brute_boundary(const LabelMap& l, std::uint8_t c) {
  std::vector<Index3> out;
  const auto& s = l.shape();
  for (std::int64_t z = 0; z < s[2]; ++z)
    for (std::int64_t y = 0; y < s[1]; ++y)
      for (std::int64_t x = 0; x < s[0]; ++x) {
        if (l.data(x, y, z) != c) continue;
        bool edge = false;
        const int d[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
        for (auto& o : d) {
          const std::int64_t a = x + o[0], b = y + o[1], e = z + o[2];
          if (!l.data.contains(a, b, e) || l.data(a, b, e) != c) edge = true;
        }
        if (edge) out.push_back({x, y, z});
      }
  return out;
}

std::optional<double> brute_hd(const LabelMap& p, const LabelMap& g, std::uint8_t c, const Vec3& sp) {
  const auto bp = brute_boundary(p, c), bg = brute_boundary(g, c);
  if (bp.empty() || bg.empty()) return std::nullopt;
  auto directed = [&](const std::vector<Index3>& a, const std::vector<Index3>& b) {
    double worst = 0;
    for (const auto& u : a) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& v : b) {
        double d = 0;
        for (int i = 0; i < 3; ++i) d += std::pow((u[i] - v[i]) * sp[i], 2);
        best = std::min(best, d);
      }
      worst = std::max(worst, best);
    }
    return std::sqrt(worst);
  };
  return std::max(directed(bp, bg), directed(bg, bp));
}

CaseMetrics with_flt_dice(const std::string& id, double dice, bool gt_flt) {
  CaseMetrics m;
  m.id = id;
  m.dice = {1.0, 1.0, dice};
  m.gt_has_flt = gt_flt;
  return m;
}

}  // namespace

TEST_CASE("dice identities and the one-empty rule") {
  Rng rng(1);
  auto a = test::random_label({6, 6, 6}, rng);
  CHECK(dice_coefficient(a, a, 1) == 1.0);
  auto gt = blank({6, 6, 6});
  auto pred = blank({6, 6, 6});
  pred.data(1, 1, 1) = 3;
  CHECK(dice_coefficient(pred, gt, 3) == 0.0);
  CHECK(dice_coefficient(gt, gt, 3) == 1.0);
}

TEST_CASE("shifted cube dice is one half") {
  auto p = blank({6, 6, 6}), g = blank({6, 6, 6});
  for (int z = 0; z < 2; ++z)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) {
        p.data(x, y, z) = 1;
        g.data(x + 1, y, z) = 1;
      }
  CHECK(dice_coefficient(p, g, 1) == doctest::Approx(0.5));
}

TEST_CASE("dice against brute force, symmetry and permutation invariance") {
  Rng rng(2);
  for (int t = 0; t < 30; ++t) {
    auto p = test::random_label({7, 5, 6}, rng), g = test::random_label({7, 5, 6}, rng);
    for (std::uint8_t c = 1; c <= 3; ++c) {
      CHECK(dice_coefficient(p, g, c) == brute_dice(p, g, c));
      CHECK(dice_coefficient(p, g, c) == dice_coefficient(g, p, c));
    }
    // Reverse x in both maps.
    auto pr = p, gr = g;
    for (std::int64_t z = 0; z < 6; ++z)
      for (std::int64_t y = 0; y < 5; ++y)
        for (std::int64_t x = 0; x < 7; ++x) {
          pr.data(x, y, z) = p.data(6 - x, y, z);
          gr.data(x, y, z) = g.data(6 - x, y, z);
        }
    CHECK(dice_coefficient(pr, gr, 2) == doctest::Approx(dice_coefficient(p, g, 2)).epsilon(1e-15));
  }
}

TEST_CASE("grid mismatch is a contract error") {
  CHECK_ERROR(dice_coefficient(blank({2, 2, 2}), blank({2, 2, 3}), 1), ErrorCode::contract);
  CHECK_ERROR(hausdorff_mm(blank({2, 2, 2}), blank({2, 2, 3}), 1, {1, 1, 1}), ErrorCode::contract);
}

TEST_CASE("hausdorff basics") {
  auto p = blank({10, 3, 3}), g = blank({10, 3, 3});
  p.data(1, 1, 1) = 1;
  g.data(5, 1, 1) = 1;
  CHECK(*hausdorff_mm(p, g, 1, {1.5, 1.5, 1.5}) == doctest::Approx(6.0));
  CHECK(*hausdorff_mm(p, p, 1, {1.5, 1.5, 1.5}) == 0.0);
  CHECK_FALSE(hausdorff_mm(p, blank({10, 3, 3}), 1, {1, 1, 1}));
  CHECK_FALSE(hausdorff_mm(p, g, 2, {1, 1, 1}));
}

TEST_CASE("hausdorff against the all-pairs oracle on anisotropic grids") {
  Rng rng(3);
  const Vec3 sp{0.8, 1.3, 2.1};
  for (int t = 0; t < 25; ++t) {
    auto p = test::random_label({12, 12, 12}, rng, 4, 0.3), g = test::random_label({12, 12, 12}, rng, 4, 0.3);
    for (std::uint8_t c = 1; c <= 3; ++c) {
      const auto got = hausdorff_mm(p, g, c, sp);
      const auto want = brute_hd(p, g, c, sp);
      REQUIRE(got.has_value() == want.has_value());
      if (got) CHECK(std::abs(*got - *want) <= 1e-9);
    }
  }
}

TEST_CASE("hausdorff scales with spacing") {
  Rng rng(4);
  auto p = test::random_label({8, 8, 8}, rng, 2, 0.2), g = test::random_label({8, 8, 8}, rng, 2, 0.2);
  const auto base = *hausdorff_mm(p, g, 1, {1.0, 2.0, 0.5});
  CHECK(*hausdorff_mm(p, g, 1, {3.0, 6.0, 1.5}) == doctest::Approx(3.0 * base).epsilon(1e-12));
}

TEST_CASE("percentile option never exceeds the exact maximum") {
  Rng rng(5);
  auto p = test::random_label({10, 10, 10}, rng, 2, 0.3), g = test::random_label({10, 10, 10}, rng, 2, 0.3);
  const double full = *hausdorff_mm(p, g, 1, {1, 1, 1});
  const double p95 = *hausdorff_mm(p, g, 1, {1, 1, 1}, {95.0});
  CHECK(p95 <= full);
  CHECK(p95 >= 0.0);
}

TEST_CASE("boundary mask and distance transform") {
  auto l = blank({5, 5, 5});
  for (int z = 1; z < 4; ++z)
    for (int y = 1; y < 4; ++y)
      for (int x = 1; x < 4; ++x) l.data(x, y, z) = 2;
  const auto b = boundary_mask(l, 2);
  CHECK(b(2, 2, 2) == 0);
  CHECK(b(1, 2, 2) == 1);
  CHECK(b(0, 0, 0) == 0);
  Array3<std::uint8_t> m({4, 1, 1});
  m(0, 0, 0) = 1;
  const auto d = squared_distance_transform(m, {2.0, 1.0, 1.0});
  CHECK(d(3, 0, 0) == doctest::Approx(36.0));
  CHECK(std::isinf(squared_distance_transform(Array3<std::uint8_t>({2, 2, 2}), {1, 1, 1})(1, 1, 1)));
}

TEST_CASE("true FLT averages only positive cases") {
  std::vector<CaseMetrics> cohort{with_flt_dice("a", 0.6, true), with_flt_dice("b", 0.8, true),
                                  with_flt_dice("c", 0.0, false)};
  const auto t = true_flt_dice(cohort);
  REQUIRE(t);
  CHECK(t->mean == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(t->count == 2);
  CHECK(t->std == doctest::Approx(0.1));
  std::vector<double> all{0.6, 0.8, 0.0};
  CHECK(summarize(all)->mean == doctest::Approx(1.4 / 3.0));
  CHECK_FALSE(true_flt_dice(std::vector<CaseMetrics>{with_flt_dice("c", 0.0, false)}));

  std::vector<CaseMetrics> positives{with_flt_dice("a", 0.3, true), with_flt_dice("b", 0.9, true)};
  std::vector<double> flt{0.3, 0.9};
  CHECK(true_flt_dice(positives)->mean == summarize(flt)->mean);
}

TEST_CASE("plain FLT mean never exceeds true FLT when negatives score zero") {
  Rng rng(6);
  for (int t = 0; t < 50; ++t) {
    std::vector<CaseMetrics> cohort;
    std::vector<double> flt;
    const int n = static_cast<int>(rng.uniform_int(2, 12));
    for (int i = 0; i < n; ++i) {
      const bool pos = i == 0 || rng.bernoulli(0.6);
      const double d = pos ? rng.uniform() : 0.0;
      cohort.push_back(with_flt_dice(std::to_string(i), d, pos));
      flt.push_back(d);
    }
    CHECK(summarize(flt)->mean <= true_flt_dice(cohort)->mean + 1e-15);
  }
}

TEST_CASE("summary uses the population deviation") {
  std::vector<double> v{1.0, 3.0};
  const auto s = summarize(v);
  CHECK(s->mean == 2.0);
  CHECK(s->std == 1.0);
  CHECK(s->count == 2);
  CHECK_FALSE(summarize(std::vector<double>{}));
}

TEST_CASE("classifier scores") {
  auto perfect = classifier_metrics({true, false, true}, {true, false, true});
  CHECK(*perfect.precision == 1.0);
  CHECK(*perfect.recall == 1.0);
  CHECK(*perfect.f1 == 1.0);
  auto none = classifier_metrics({false, false}, {true, false});
  CHECK_FALSE(none.precision);
  CHECK(*none.recall == 0.0);
  // TP 3, FP 1, FN 2.
  auto s = classifier_metrics({true, true, true, true, false, false, false}, {true, true, true, false, true, true, false});
  CHECK(*s.precision == doctest::Approx(0.75));
  CHECK(*s.recall == doctest::Approx(0.6));
  CHECK(*s.f1 == doctest::Approx(2.0 / 3.0));
  CHECK(s.true_negative == 1);
  CHECK_ERROR(classifier_metrics({true}, {true, false}), ErrorCode::contract);
}

namespace {

struct ToyCohort {
  std::map<std::string, LabelMap> gt;
  CohortManifest manifest;
};

ToyCohort toy_cohort(int n, std::uint64_t seed) {
  ToyCohort t;
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    const std::string id = "c" + std::to_string(i);
    auto l = test::random_label({8, 8, 8}, rng, 3, 0.4);
    if (i % 3 != 0)
      for (int k = 0; k < 20; ++k) l.data(rng.uniform_int(0, 7), rng.uniform_int(0, 7), rng.uniform_int(0, 7)) = 3;
    l.id = id;
    t.gt[id] = l;
    CaseRecord r;
    r.id = id;
    r.has_flt = contains_class(l, LabelClass::thrombosis);
    t.manifest.cases.push_back(r);
  }
  return t;
}

}  // namespace

TEST_CASE("identical cohort scores perfectly") {
  auto t = toy_cohort(4, 7);
  const auto r = evaluate_cohort(t.gt, t.gt, t.manifest);
  for (int c = 0; c < 3; ++c) {
    CHECK(r.dice[c]->mean == 1.0);
    CHECK(r.hd[c]->mean == 0.0);
  }
  CHECK(r.true_flt->mean == 1.0);
  CHECK(r.failed_cases.empty());
}

TEST_CASE("all-background predictions") {
  auto t = toy_cohort(4, 8);
  std::map<std::string, LabelMap> pred;
  for (auto& [id, l] : t.gt) pred[id] = image_like<std::uint8_t>(l);
  const auto r = evaluate_cohort(pred, t.gt, t.manifest);
  CHECK(r.dice[0]->mean == 0.0);
  CHECK(r.dice[1]->mean == 0.0);
  CHECK(r.true_flt->mean == 0.0);
  for (int c = 0; c < 3; ++c) CHECK_FALSE(r.hd[c]);
  for (const auto& m : r.cases) CHECK_FALSE(m.pred_has_flt);
}

TEST_CASE("perturbed cohort matches per-case arithmetic") {
  auto t = toy_cohort(10, 9);
  Rng rng(10);
  std::map<std::string, LabelMap> pred;
  for (auto& [id, l] : t.gt) {
    auto p = l;
    for (int k = 0; k < 60; ++k) p.data[rng.uniform_int(0, p.data.size() - 1)] = static_cast<std::uint8_t>(rng.uniform_int(0, 3));
    pred[id] = p;
  }
  pred.erase("c4");
  const auto r = evaluate_cohort(pred, t.gt, t.manifest);
  CHECK(r.failed_cases == std::vector<std::string>{"c4"});
  REQUIRE(r.cases.size() == 9);
  for (int c = 0; c < 3; ++c) {
    double sum = 0, sq = 0, hd_sum = 0;
    int hd_n = 0;
    for (const auto& [id, p] : pred) {
      const double d = brute_dice(p, t.gt.at(id), static_cast<std::uint8_t>(c + 1));
      sum += d;
      sq += d * d;
      if (auto h = brute_hd(p, t.gt.at(id), static_cast<std::uint8_t>(c + 1), {1, 1, 1})) {
        hd_sum += *h;
        ++hd_n;
      }
    }
    const double mean = sum / 9.0;
    CHECK(r.dice[c]->mean == doctest::Approx(mean).epsilon(1e-12));
    CHECK(r.dice[c]->std == doctest::Approx(std::sqrt(sq / 9.0 - mean * mean)).epsilon(1e-9));
    CHECK(r.dice[c]->count == 9);
    REQUIRE(r.hd[c]);
    CHECK(r.hd[c]->mean == doctest::Approx(hd_sum / hd_n).epsilon(1e-12));
    CHECK(r.hd[c]->count == static_cast<std::size_t>(hd_n));
  }
  double tsum = 0;
  int tn = 0;
  for (const auto& [id, p] : pred)
    if (t.manifest.find(id).has_flt) {
      tsum += brute_dice(p, t.gt.at(id), 3);
      ++tn;
    }
  CHECK(r.true_flt->mean == doctest::Approx(tsum / tn).epsilon(1e-12));
  CHECK(r.true_flt->count == static_cast<std::size_t>(tn));
}

TEST_CASE("classifier flags override segmentation presence") {
  auto t = toy_cohort(3, 11);
  std::map<std::string, bool> flags{{"c0", true}, {"c1", false}, {"c2", false}};
  const auto r = evaluate_cohort(t.gt, t.gt, t.manifest, {}, &flags);
  // c0 has no FLT, c1 and c2 do.
  CHECK(r.classifier.false_positive == 1);
  CHECK(r.classifier.false_negative == 2);
}

TEST_CASE("tables and formatting") {
  auto t = toy_cohort(3, 12);
  const auto r = evaluate_cohort(t.gt, t.gt, t.manifest);
  CHECK(format_mean_std(MeanStd{0.456, 0.0789, 3}) == "0.46 ± 0.08");
  CHECK(format_mean_std(std::nullopt) == "n/a");
  std::vector<DiceTableRow> rows{{"Method 1", "Testing", &r}};
  const auto csv = dice_table_csv(rows);
  CHECK(csv.rfind("Method,Phase,TL,FL,FLT,True FLT\n", 0) == 0);
  CHECK(csv.find("Method 1,Testing,1.00 ± 0.00") != std::string::npos);
  const auto hd = hausdorff_table_csv(rows);
  CHECK(hd.rfind("Phase,Method,TL,FL,FLT\n", 0) == 0);
  const auto j = report_to_json(r);
  CHECK(j["cases"].size() == 3);
}
