#include <cmath>

#include "test_util.hpp"
#include "tbad/phantom.hpp"

using namespace tbad;
using tbad::test::TempDir;

TEST_CASE("no thrombus gives labels {0,1,2}") {
  PhantomSpec spec;
  spec.seed = 1;
  const auto ph = generate_phantom(spec);
  CHECK(value_set(ph.label) == std::set<std::uint8_t>{0, 1, 2});
  CHECK_FALSE(ph.record.has_flt);
}

TEST_CASE("thrombus fraction of the false-lumen side") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    PhantomSpec spec;
    spec.seed = seed;
    spec.flt_present = true;
    spec.flt_arc_fraction = 0.3;
    const auto ph = generate_phantom(spec);
    const double flt = static_cast<double>(count_class(ph.label, 3));
    const double fl_side = flt + static_cast<double>(count_class(ph.label, 2));
    CHECK(flt / fl_side == doctest::Approx(0.3).epsilon(0.15));
    CHECK(ph.record.has_flt);
  }
}

TEST_CASE("thrombus is carved out of false-lumen territory") {
  PhantomSpec spec;
  spec.seed = 4;
  const auto without = generate_phantom(spec);
  spec.flt_present = true;
  const auto with = generate_phantom(spec);
  for (std::int64_t i = 0; i < with.label.data.size(); ++i) {
    if (with.label.data[i] == 3) CHECK(without.label.data[i] == 2);
    else CHECK(with.label.data[i] == without.label.data[i]);
  }
}

TEST_CASE("same seed is byte-identical") {
  PhantomSpec spec;
  spec.seed = 77;
  spec.flt_present = true;
  const auto a = generate_phantom(spec);
  const auto b = generate_phantom(spec);
  CHECK(a.volume.data == b.volume.data);
  CHECK(a.label.data == b.label.data);
  spec.seed = 78;
  CHECK(generate_phantom(spec).volume.data != a.volume.data);
}

TEST_CASE("class means follow the spec within three standard errors") {
  PhantomSpec spec;
  spec.seed = 9;
  spec.flt_present = true;
  const auto ph = generate_phantom(spec);
  const std::array<double, 4> targets{spec.background_intensity, spec.tl_intensity, spec.fl_intensity,
                                      spec.flt_intensity};
  std::array<double, 4> sum{}, n{};
  for (std::int64_t i = 0; i < ph.label.data.size(); ++i) {
    const auto c = ph.label.data[i];
    if (c == 0) continue;  // background mixes septum, air and soft tissue
    sum[c] += ph.volume.data[i];
    n[c] += 1;
  }
  for (int c = 1; c <= 3; ++c) {
    REQUIRE(n[c] > 0);
    CHECK(std::abs(sum[c] / n[c] - targets[c]) <= 3.0 * spec.noise_sigma / std::sqrt(n[c]) + 1e-6);
  }
  CHECK(sum[1] / n[1] > sum[3] / n[3]);
  CHECK(sum[2] / n[2] > sum[3] / n[3]);
  CHECK(sum[3] / n[3] > spec.background_intensity);
}

TEST_CASE("true lumen is the smaller channel") {
  PhantomSpec spec;
  spec.seed = 10;
  const auto ph = generate_phantom(spec);
  CHECK(count_class(ph.label, 1) < count_class(ph.label, 2));
}

TEST_CASE("vessel outside the grid is a spec error") {
  PhantomSpec spec;
  spec.vessel_radius = 60.0;
  CHECK_ERROR(generate_phantom(spec), ErrorCode::spec);
  spec = {};
  spec.flt_present = true;
  spec.flt_arc_fraction = 1.0;
  CHECK_ERROR(generate_phantom(spec), ErrorCode::spec);
}

TEST_CASE("randomised specs stay valid and keep the requested thrombus flag") {
  const PhantomSpec base;
  for (int i = 0; i < 40; ++i) {
    const bool flt = i % 3 != 0;
    auto s = randomized_spec(base, 123, i, flt);
    s.validate();
    CHECK(s.flt_present == flt);
    const auto ph = generate_phantom(s);
    CHECK(contains_class(ph.label, LabelClass::thrombosis) == flt);
    CHECK(contains_class(ph.label, LabelClass::true_lumen));
  }
}

TEST_CASE("cohort without thrombus and repeatable manifests") {
  TempDir a, b;
  CohortOptions opt;
  opt.n = 5;
  opt.flt_fraction = 0.0;
  opt.seed = 3;
  const auto ma = generate_cohort(opt, a.path());
  const auto mb = generate_cohort(opt, b.path());
  CHECK(ma.flt_positive_count() == 0);
  for (const auto& r : build_manifest(a.path()).cases) CHECK_FALSE(r.has_flt);
  REQUIRE(ma.cases.size() == mb.cases.size());
  for (std::size_t i = 0; i < ma.cases.size(); ++i) {
    CHECK(ma.cases[i].id == mb.cases[i].id);
    CHECK(ma.cases[i].has_flt == mb.cases[i].has_flt);
  }
  CHECK(read_json_file(a / "manifest.json")["cases"].size() == 5);
}
