#include "tbad/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "tbad/rng.hpp"

namespace tbad {
namespace {

struct V3 {
  double x = 0.0, y = 0.0, z = 0.0;
};

V3 operator-(const V3& a, const V3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
V3 operator+(const V3& a, const V3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
V3 operator*(double s, const V3& a) { return {s * a.x, s * a.y, s * a.z}; }
double dot(const V3& a, const V3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
V3 cross(const V3& a, const V3& b) { return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x}; }
double norm(const V3& a) { return std::sqrt(dot(a, a)); }

struct Centerline {
  double cx = 0.0, cy = 0.0;
  double z_bottom = 0.0, z_top = 0.0;
  double arc_radius = 0.0, sweep = 0.0;

  V3 arc_point(double theta) const {
    return {cx + arc_radius - arc_radius * std::cos(theta), cy, z_top + arc_radius * std::sin(theta)};
  }

  struct Foot {
    V3 point;
    V3 tangent;
    double distance = 0.0;
  };

  Foot nearest(const V3& p) const {
    Foot seg;
    seg.point = {cx, cy, std::clamp(p.z, z_bottom, z_top)};
    seg.tangent = {0.0, 0.0, 1.0};
    seg.distance = norm(p - seg.point);
    if (arc_radius <= 0.0 || sweep <= 0.0) return seg;
    const V3 centre{cx + arc_radius, cy, z_top};
    const V3 v = p - centre;
    double theta = std::atan2(v.z, -v.x);
    theta = std::clamp(theta, 0.0, sweep);
    Foot arc;
    arc.point = arc_point(theta);
    arc.tangent = {std::sin(theta), 0.0, std::cos(theta)};
    arc.distance = norm(p - arc.point);
    return arc.distance < seg.distance ? arc : seg;
  }
};

Centerline centerline_of(const PhantomSpec& s) {
  const double lx = static_cast<double>(s.shape[0] - 1) * s.spacing;
  const double ly = static_cast<double>(s.shape[1] - 1) * s.spacing;
  const double lz = static_cast<double>(s.shape[2] - 1) * s.spacing;
  Centerline c;
  c.cx = lx / 2.0 + s.center_offset_x;
  c.cy = ly / 2.0 + s.center_offset_y;
  c.z_bottom = s.straight_bottom_margin + s.vessel_radius;
  c.z_top = s.straight_top_fraction * lz;
  c.arc_radius = s.arc_radius;
  c.sweep = s.arc_sweep;
  return c;
}

bool inside_body(const PhantomSpec& s, double x, double y) {
  const double lx = static_cast<double>(s.shape[0] - 1) * s.spacing;
  const double ly = static_cast<double>(s.shape[1] - 1) * s.spacing;
  const double u = (x - lx / 2.0) / (s.body_semi_axis_x * lx);
  const double v = (y - ly / 2.0) / (s.body_semi_axis_y * ly);
  return u * u + v * v <= 1.0;
}

// Septum-normal coordinate beyond which false-lumen cross-section points are
// thrombus, so that the outer cap holds a `fraction` share of the false-lumen area.
double thrombus_cap_start(double radius, double septum_offset, double fraction) {
  constexpr int kSamples = 400;
  std::vector<double> depth;
  depth.reserve(kSamples * kSamples);
  const double plane = -septum_offset * radius;
  for (int i = 0; i < kSamples; ++i)
    for (int j = 0; j < kSamples; ++j) {
      const double u = -radius + (i + 0.5) * 2.0 * radius / kSamples;
      const double v = -radius + (j + 0.5) * 2.0 * radius / kSamples;
      if (std::hypot(u, v) <= radius && u >= plane) depth.push_back(u);
    }
  std::sort(depth.begin(), depth.end(), std::greater<>());
  const auto k = static_cast<std::size_t>(std::clamp(fraction, 0.0, 1.0) * static_cast<double>(depth.size()));
  return k == 0 ? radius : depth[std::min(k, depth.size()) - 1];
}

}  // namespace

void PhantomSpec::validate() const {
  for (auto n : shape) require(n >= 8, ErrorCode::spec, "phantom extents must be >= 8");
  require(spacing > 0.0 && vessel_radius > 0.0, ErrorCode::spec, "spacing and vessel radius must be positive");
  require(septum_offset >= 0.0 && septum_offset < 1.0, ErrorCode::spec, "septum_offset must lie in [0,1)");
  if (flt_present)
    require(flt_arc_fraction > 0.0 && flt_arc_fraction < 1.0, ErrorCode::spec, "flt_arc_fraction must lie in (0,1)");
  require(noise_sigma >= 0.0, ErrorCode::spec, "noise_sigma must be >= 0");

  const Centerline c = centerline_of(*this);
  require(c.z_top > c.z_bottom, ErrorCode::spec, "straight segment is empty");
  const double margin = spacing;
  std::vector<V3> samples;
  for (int i = 0; i <= 64; ++i) samples.push_back({c.cx, c.cy, c.z_bottom + (c.z_top - c.z_bottom) * i / 64.0});
  for (int i = 0; i <= 64; ++i) samples.push_back(c.arc_point(c.sweep * i / 64.0));
  const double ext[3] = {static_cast<double>(shape[0] - 1) * spacing, static_cast<double>(shape[1] - 1) * spacing,
                         static_cast<double>(shape[2] - 1) * spacing};
  for (const auto& p : samples) {
    const double q[3] = {p.x, p.y, p.z};
    for (int a = 0; a < 3; ++a)
      require(q[a] - vessel_radius >= margin && q[a] + vessel_radius <= ext[a] - margin, ErrorCode::spec,
              "vessel exceeds the volume bounds");
    for (double dx : {-vessel_radius, vessel_radius})
      for (double dy : {-vessel_radius, vessel_radius})
        require(inside_body(*this, p.x + dx, p.y + dy), ErrorCode::spec, "vessel leaves the body outline");
  }
}

PhantomCase generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  const Centerline line = centerline_of(spec);
  const double radius = spec.vessel_radius;
  const double plane = -spec.septum_offset * radius;
  const double cap = spec.flt_present ? thrombus_cap_start(radius, spec.septum_offset, spec.flt_arc_fraction)
                                      : std::numeric_limits<double>::infinity();
  const double ca = std::cos(spec.septum_angle), sa = std::sin(spec.septum_angle);

  PhantomCase out;
  const Vec3 spacing{spec.spacing, spec.spacing, spec.spacing};
  out.volume.id = out.label.id = spec.id;
  out.volume.spacing = out.label.spacing = spacing;
  out.volume.affine = out.label.affine = diagonal_affine(spacing);
  out.volume.data = Array3<float>(spec.shape, 0.0f);
  out.label.data = Array3<std::uint8_t>(spec.shape, 0);

  Rng rng = Rng::derive(spec.seed, "phantom/noise");
  std::normal_distribution<double> noise(0.0, 1.0);
  const V3 n0{0.0, 1.0, 0.0};
  for (std::int64_t z = 0; z < spec.shape[2]; ++z)
    for (std::int64_t y = 0; y < spec.shape[1]; ++y)
      for (std::int64_t x = 0; x < spec.shape[0]; ++x) {
        const V3 p{static_cast<double>(x) * spec.spacing, static_cast<double>(y) * spec.spacing,
                   static_cast<double>(z) * spec.spacing};
        if (!inside_body(spec, p.x, p.y)) continue;  // air stays exactly 0 (below the HU window)
        double mean = spec.background_intensity;
        std::uint8_t cls = code(LabelClass::background);
        const auto foot = line.nearest(p);
        if (foot.distance <= radius) {
          const V3 r = p - foot.point;
          const V3 binormal = cross(foot.tangent, n0);
          const V3 septum_normal = ca * n0 + sa * binormal;
          const double s = dot(r, septum_normal);
          if (s < plane) {
            cls = code(LabelClass::true_lumen);
            mean = spec.tl_intensity;
          } else if (s >= cap) {
            cls = code(LabelClass::thrombosis);
            mean = spec.flt_intensity;
          } else {
            cls = code(LabelClass::false_lumen);
            mean = spec.fl_intensity;
          }
          if (std::abs(s - plane) < spec.flap_thickness / 2.0) {
            // The intimal flap is vessel wall, not lumen.
            cls = code(LabelClass::background);
            mean = spec.flap_intensity;
          }
        }
        const double value = mean + spec.noise_sigma * noise(rng.engine());
        out.volume.data(x, y, z) = static_cast<float>(std::clamp(value, 0.0, 1.0));
        out.label.data(x, y, z) = cls;
      }

  const bool has_flt = contains_class(out.label, LabelClass::thrombosis);
  require(has_flt == spec.flt_present, ErrorCode::spec, "requested thrombus did not rasterise at this resolution");
  out.record.id = spec.id;
  out.record.has_flt = has_flt;
  out.record.shape = spec.shape;
  out.record.spacing = spacing;
  return out;
}

PhantomSpec randomized_spec(const PhantomSpec& base, std::uint64_t seed, int index, bool flt_present) {
  Rng rng = Rng::derive(seed, "phantom/spec", static_cast<std::uint64_t>(index));
  PhantomSpec s = base;
  const double scale = static_cast<double>(std::min({base.shape[0], base.shape[1], base.shape[2]}) - 1) *
                       base.spacing / 94.5;  // geometry ranges are tuned for a 64^3 grid at 1.5 mm
  s.vessel_radius = rng.uniform(10.0, 13.0) * scale;
  s.center_offset_x = rng.uniform(-4.0, 4.0) * scale;
  s.center_offset_y = rng.uniform(-4.0, 4.0) * scale;
  s.straight_top_fraction = rng.uniform(0.5, 0.58);
  s.arc_sweep = rng.uniform(1.0, 1.5);
  // The TL keeps a consistent side of the vessel, as in clinical TBAD anatomy.
  s.septum_angle = base.septum_angle + rng.uniform(-std::numbers::pi / 4.0, std::numbers::pi / 4.0);
  s.septum_offset = rng.uniform(0.2, 0.35);
  s.flt_arc_fraction = rng.uniform(0.25, 0.45);
  s.flt_present = flt_present;
  s.seed = mix64(seed + 0x51ED270B1ull * static_cast<std::uint64_t>(index + 1));
  // Largest arc that keeps the tube inside the top face of the grid.
  const double lz = static_cast<double>(base.shape[2] - 1) * base.spacing;
  const double room = lz - s.straight_top_fraction * lz - s.vessel_radius - 2.0 * base.spacing;
  s.arc_radius = std::min(rng.uniform(18.0, 26.0) * scale, room / std::sin(s.arc_sweep));
  return s;
}

CohortManifest generate_cohort(const CohortOptions& options, const fs::path& out_dir) {
  require(options.n >= 1, ErrorCode::spec, "cohort size must be >= 1");
  require(options.flt_fraction >= 0.0 && options.flt_fraction <= 1.0, ErrorCode::spec,
          "flt_fraction must lie in [0,1]");
  const auto n_pos = static_cast<int>(std::lround(options.n * options.flt_fraction));
  std::vector<int> order(static_cast<std::size_t>(options.n));
  for (int i = 0; i < options.n; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng = Rng::derive(options.seed, "phantom/flt-assignment");
  for (int i = options.n - 1; i > 0; --i) std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, i))]);
  std::vector<bool> positive(static_cast<std::size_t>(options.n), false);
  for (int i = 0; i < n_pos; ++i) positive[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = true;

  const int width = std::max(3, static_cast<int>(std::to_string(options.n - 1).size()));
  CohortManifest manifest;
  for (int i = 0; i < options.n; ++i) {
    PhantomSpec spec = randomized_spec(options.base, options.seed, i, positive[static_cast<std::size_t>(i)]);
    std::string digits = std::to_string(i);
    spec.id = "phantom_" + std::string(static_cast<std::size_t>(width) - digits.size(), '0') + digits;
    PhantomCase c = generate_phantom(spec);
    const auto saved = save_case(denormalize_to_hu(c.volume, options.window), c.label, out_dir);
    c.record.image_path = saved.image;
    c.record.label_path = *saved.label;
    manifest.cases.push_back(c.record);
  }
  write_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

}  // namespace tbad
