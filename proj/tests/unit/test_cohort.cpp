#include <algorithm>
#include <fstream>
#include <set>

#include "test_util.hpp"
#include "tbad/cohort.hpp"
#include "tbad/phantom.hpp"

using namespace tbad;
using tbad::test::TempDir;

namespace {

CohortManifest synthetic_manifest(int n_pos, int n_neg) {
  CohortManifest m;
  for (int i = 0; i < n_pos + n_neg; ++i) {
    CaseRecord r;
    r.id = "case" + std::to_string(1000 + i);
    r.has_flt = i < n_pos;
    r.shape = {8, 8, 8};
    r.spacing = {1.5, 1.5, 1.5};
    m.cases.push_back(r);
  }
  return m;
}

std::set<std::string> flt_ids(const CohortManifest& m) {
  std::set<std::string> s;
  for (const auto& r : m.cases)
    if (r.has_flt) s.insert(r.id);
  return s;
}

int count_in(const std::vector<std::string>& ids, const std::set<std::string>& set) {
  return static_cast<int>(std::count_if(ids.begin(), ids.end(), [&](const auto& id) { return set.count(id) > 0; }));
}

}  // namespace

TEST_CASE("68/32 cohort gives 13-14 positive and 6-7 negative test cases per fold") {
  const auto m = synthetic_manifest(68, 32);
  const auto pos = flt_ids(m);
  const auto folds = stratified_folds(m, 5, 0);
  REQUIRE(folds.size() == 5);
  std::multiset<std::string> tested;
  for (const auto& f : folds) {
    const int p = count_in(f.test, pos);
    const int q = static_cast<int>(f.test.size()) - p;
    CHECK((p == 13 || p == 14));
    CHECK((q == 6 || q == 7));
    tested.insert(f.test.begin(), f.test.end());
    CHECK(f.train.size() + f.validation.size() + f.test.size() == 100);
    std::set<std::string> all(f.train.begin(), f.train.end());
    all.insert(f.validation.begin(), f.validation.end());
    all.insert(f.test.begin(), f.test.end());
    CHECK(all.size() == 100);
  }
  CHECK(tested.size() == 100);
  CHECK(std::set<std::string>(tested.begin(), tested.end()).size() == 100);
}

TEST_CASE("validation bucket is the next fold's test bucket") {
  const auto m = synthetic_manifest(13, 9);
  const auto folds = stratified_folds(m, 4, 3);
  for (int i = 0; i < 4; ++i) {
    auto v = folds[i].validation;
    auto t = folds[(i + 1) % 4].test;
    std::sort(v.begin(), v.end());
    std::sort(t.begin(), t.end());
    CHECK(v == t);
  }
}

TEST_CASE("k=2 on four cases puts one positive in each test set") {
  const auto m = synthetic_manifest(2, 2);
  const auto pos = flt_ids(m);
  for (std::uint64_t seed = 0; seed < 10; ++seed)
    for (const auto& f : stratified_folds(m, 2, seed)) CHECK(count_in(f.test, pos) == 1);
}

TEST_CASE("splitting is a pure function of its inputs") {
  const auto m = synthetic_manifest(30, 17);
  const auto a = stratified_folds(m, 5, 42);
  const auto b = stratified_folds(m, 5, 42);
  for (int i = 0; i < 5; ++i) {
    CHECK(a[i].test == b[i].test);
    CHECK(a[i].train == b[i].train);
  }
  const auto c = stratified_folds(m, 5, 43);
  bool differs = false;
  for (int i = 0; i < 5; ++i) differs |= a[i].test != c[i].test;
  CHECK(differs);
}

TEST_CASE("role FLT fractions stay within one case of the cohort fraction") {
  for (auto [np, nn] : {std::pair{68, 32}, std::pair{7, 23}, std::pair{40, 3}}) {
    const auto m = synthetic_manifest(np, nn);
    const auto pos = flt_ids(m);
    const double frac = static_cast<double>(np) / (np + nn);
    for (std::uint64_t seed = 0; seed < 5; ++seed)
      for (const auto& f : stratified_folds(m, 5, seed))
        for (const auto* role : {&f.test, &f.validation}) {
          const double n = static_cast<double>(role->size());
          CHECK(std::abs(count_in(*role, pos) / n - frac) <= 1.0 / n + 1e-12);
        }
  }
}

TEST_CASE("k larger than the cohort is infeasible") {
  CHECK_ERROR(stratified_folds(synthetic_manifest(2, 1), 5, 0), ErrorCode::infeasible_split);
}

TEST_CASE("holdout 80/10/10") {
  const auto m = synthetic_manifest(68, 32);
  const auto pos = flt_ids(m);
  const auto s = holdout_split(m, 80, 10, 10, 1);
  CHECK(s.train.size() == 80);
  CHECK(s.validation.size() == 10);
  CHECK(s.test.size() == 10);
  std::set<std::string> all(s.train.begin(), s.train.end());
  all.insert(s.validation.begin(), s.validation.end());
  all.insert(s.test.begin(), s.test.end());
  CHECK(all.size() == 100);
  // 10 * 68 / 100 = 6.8.
  const int p = count_in(s.test, pos);
  CHECK((p == 6 || p == 7));
  CHECK(count_in(s.train, pos) + count_in(s.validation, pos) + p == 68);
  CHECK_ERROR(holdout_split(m, 90, 10, 10, 1), ErrorCode::infeasible_split);
}

TEST_CASE("phantom cohort manifest counts FLT cases") {
  TempDir dir;
  CohortOptions opt;
  opt.n = 100;
  opt.flt_fraction = 0.68;
  opt.seed = 5;
  const auto written = generate_cohort(opt, dir.path());
  CHECK(written.flt_positive_count() == 68);
  const auto scanned = build_manifest(dir.path());
  CHECK(scanned.cases.size() == 100);
  CHECK(scanned.flt_positive_count() == 68);
  CHECK(scanned.warnings.empty());
  for (const auto& r : scanned.cases) CHECK(written.find(r.id).has_flt == r.has_flt);
  const auto folds = stratified_folds(scanned, 5, 0);
  const auto pos = flt_ids(scanned);
  for (const auto& f : folds) {
    const int p = count_in(f.test, pos);
    CHECK((p == 13 || p == 14));
  }
}

TEST_CASE("empty directory gives an empty manifest with a warning") {
  TempDir dir;
  const auto m = build_manifest(dir.path());
  CHECK(m.cases.empty());
  CHECK_FALSE(m.warnings.empty());
}

TEST_CASE("unlabelled image is listed and excluded") {
  TempDir dir;
  auto v = test::constant_volume({4, 4, 4}, 0.0f);
  v.id = "lonely";
  save_case(v, std::nullopt, dir.path());
  v.id = "paired";
  LabelMap l = image_like<std::uint8_t>(v);
  save_case(v, l, dir.path());
  const auto m = build_manifest(dir.path());
  REQUIRE(m.cases.size() == 1);
  CHECK(m.cases[0].id == "paired");
  CHECK_FALSE(m.cases[0].has_flt);
  CHECK(m.unlabeled == std::vector<std::string>{"lonely"});
  CHECK(m.warnings.size() == 1);
}

TEST_CASE("manifest and splits JSON round trip") {
  TempDir dir;
  auto m = synthetic_manifest(3, 2);
  m.cases[0].image_path = "/a/b_image.nii.gz";
  m.warnings = {"w"};
  write_manifest(m, dir / "manifest.json");
  const auto back = read_manifest(dir / "manifest.json");
  REQUIRE(back.cases.size() == 5);
  CHECK(back.cases[0].image_path == m.cases[0].image_path);
  CHECK(back.cases[0].has_flt);
  CHECK(back.warnings == m.warnings);

  SplitFile sf{"kfold", 5, 7, stratified_folds(m, 5, 7)};
  write_splits(sf, dir / "splits.json");
  const auto sb = read_splits(dir / "splits.json");
  CHECK(sb.protocol == "kfold");
  CHECK(sb.k == 5);
  REQUIRE(sb.folds.size() == 5);
  CHECK(sb.folds[2].test == sf.folds[2].test);

  std::ifstream a(dir / "splits.json");
  const std::string first((std::istreambuf_iterator<char>(a)), {});
  write_splits(sf, dir / "splits.json");
  std::ifstream b(dir / "splits.json");
  const std::string second((std::istreambuf_iterator<char>(b)), {});
  CHECK(first == second);
}

TEST_CASE("wrong schema version is unsupported") {
  TempDir dir;
  write_json_file(nlohmann::json{{"schema_version", 99}, {"cases", nlohmann::json::array()}}, dir / "m.json");
  CHECK_ERROR(read_manifest(dir / "m.json"), ErrorCode::unsupported_format);
}
