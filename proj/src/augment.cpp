#include "tbad/augment.hpp"

#include <algorithm>
#include <cmath>

namespace tbad {
namespace {

std::pair<int, int> plane_axes(RotationPlane p) {
  switch (p) {
    case RotationPlane::xy: return {0, 1};
    case RotationPlane::xz: return {0, 2};
    case RotationPlane::yz: return {1, 2};
  }
  return {0, 1};
}

}  // namespace

void AugmentConfig::validate() const {
  require(probability >= 0.0 && probability <= 1.0, ErrorCode::config, "augment probability must lie in [0,1]");
  for (auto s : patch_size) require(s >= 1, ErrorCode::config, "patch_size components must be >= 1");
  require(intensity_shift_max >= 0.0, ErrorCode::config, "intensity_shift_max must be >= 0");
}

Index3 SpatialPlan::source_of(const Index3& out) const {
  Index3 q = out;
  if (plane && quarter_turns % 4 != 0) {
    const auto [a, b] = plane_axes(*plane);
    const int turns = ((quarter_turns % 4) + 4) % 4;
    if (turns == 2) {
      q[a] = size[a] - 1 - q[a];
      q[b] = size[b] - 1 - q[b];
    } else {
      // Undo one forward turn (u, v) -> (n - 1 - v, u) at a time; planes are square here.
      for (int t = 0; t < turns; ++t) {
        const std::int64_t u = q[b];
        const std::int64_t v = size[a] - 1 - q[a];
        q[a] = u;
        q[b] = v;
      }
    }
  }
  Index3 src{};
  for (int i = 0; i < 3; ++i) src[i] = origin[i] + (flip[i] ? size[i] - 1 - q[i] : q[i]);
  return src;
}

template <class T>
Array3<T> apply_spatial(const Array3<T>& source, const SpatialPlan& plan) {
  for (int i = 0; i < 3; ++i)
    require(plan.origin[i] >= 0 && plan.origin[i] + plan.size[i] <= source.shape()[i], ErrorCode::patch_too_large,
            "patch exceeds source bounds");
  Array3<T> out(plan.size);
  for (std::int64_t z = 0; z < plan.size[2]; ++z)
    for (std::int64_t y = 0; y < plan.size[1]; ++y)
      for (std::int64_t x = 0; x < plan.size[0]; ++x) {
        const Index3 s = plan.source_of({x, y, z});
        out(x, y, z) = source(s[0], s[1], s[2]);
      }
  return out;
}

template Array3<float> apply_spatial(const Array3<float>&, const SpatialPlan&);
template Array3<std::uint8_t> apply_spatial(const Array3<std::uint8_t>&, const SpatialPlan&);

Index3 draw_patch_origin(const LabelMap& label, const Index3& patch_size, Rng& rng, bool bias_foreground) {
  const Index3& shape = label.shape();
  for (int i = 0; i < 3; ++i)
    require(patch_size[i] >= 1 && patch_size[i] <= shape[i], ErrorCode::patch_too_large,
            "patch " + to_string(patch_size) + " does not fit volume " + to_string(shape));
  if (bias_foreground && rng.bernoulli(0.5)) {
    const auto values = label.data.values();
    const auto n_fg = std::count_if(values.begin(), values.end(), [](std::uint8_t v) { return v != 0; });
    if (n_fg > 0) {
      std::int64_t k = rng.uniform_int(0, n_fg - 1);
      std::int64_t linear = 0;
      for (; linear < static_cast<std::int64_t>(values.size()); ++linear)
        if (values[static_cast<std::size_t>(linear)] != 0 && k-- == 0) break;
      const Index3 centre{linear % shape[0], (linear / shape[0]) % shape[1], linear / (shape[0] * shape[1])};
      Index3 origin{};
      for (int i = 0; i < 3; ++i)
        origin[i] = std::clamp<std::int64_t>(centre[i] - patch_size[i] / 2, 0, shape[i] - patch_size[i]);
      return origin;
    }
  }
  Index3 origin{};
  for (int i = 0; i < 3; ++i) origin[i] = rng.uniform_int(0, shape[i] - patch_size[i]);
  return origin;
}

namespace {

// Voxel-to-world map after the plan: world(o) = A * source_of(o), and
// source_of is an integer affine map (signed axis permutation plus offset).
Affine planned_affine(const Affine& affine, const SpatialPlan& plan) {
  const Index3 s0 = plan.source_of({0, 0, 0});
  Affine out{};
  for (int c = 0; c < 3; ++c) {
    Index3 unit{0, 0, 0};
    unit[c] = 1;
    Index3 s1 = plan.source_of(unit);
    if (plan.size[c] == 1) {
      // Degenerate axis: recover the direction from the untransformed column.
      s1 = s0;
      s1[c] += 1;
    }
    for (int r = 0; r < 3; ++r) {
      double v = 0.0;
      for (int k = 0; k < 3; ++k) v += affine[r][k] * static_cast<double>(s1[k] - s0[k]);
      out[r][c] = v;
    }
  }
  const Vec3 origin =
      apply_affine(affine, {static_cast<double>(s0[0]), static_cast<double>(s0[1]), static_cast<double>(s0[2])});
  for (int r = 0; r < 3; ++r) out[r][3] = origin[r];
  out[3][3] = 1.0;
  return out;
}

Vec3 column_norms(const Affine& a) {
  Vec3 out{};
  for (int c = 0; c < 3; ++c) out[c] = std::sqrt(a[0][c] * a[0][c] + a[1][c] * a[1][c] + a[2][c] * a[2][c]);
  return out;
}

template <class T>
Image<T> apply_spatial_image(const Image<T>& image, const SpatialPlan& plan) {
  Image<T> out;
  out.id = image.id;
  out.data = apply_spatial(image.data, plan);
  out.affine = planned_affine(image.affine, plan);
  // Axis permutations only reorder the spacing; keep the exact values.
  const Vec3 norms = column_norms(out.affine);
  for (int c = 0; c < 3; ++c) {
    out.spacing[c] = norms[c];
    for (int k = 0; k < 3; ++k)
      if (std::abs(norms[c] - image.spacing[k]) <= 1e-9 * image.spacing[k]) out.spacing[c] = image.spacing[k];
  }
  return out;
}

}  // namespace

Sample extract_patch(const Volume& volume, const LabelMap& label, const Index3& patch_size, Rng& rng,
                     bool bias_foreground) {
  check_aligned(volume, label);
  SpatialPlan plan;
  plan.origin = draw_patch_origin(label, patch_size, rng, bias_foreground);
  plan.size = patch_size;
  return {apply_spatial_image(volume, plan), apply_spatial_image(label, plan)};
}

AugmentPlan draw_augment_plan(const LabelMap& label, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  AugmentPlan plan;
  plan.spatial.origin = draw_patch_origin(label, cfg.patch_size, rng, cfg.bias_foreground);
  plan.spatial.size = cfg.patch_size;
  plan.augmented = rng.bernoulli(cfg.probability);
  if (!plan.augmented) return plan;

  const bool can_flip = std::any_of(cfg.flip_axes.begin(), cfg.flip_axes.end(), [](bool b) { return b; });
  const bool can_rotate = !cfg.rotations.empty();
  const bool can_shift = cfg.intensity_shift_max > 0.0;
  std::vector<int> masks;
  for (int m = 1; m < 8; ++m) {
    if ((m & 1) && !can_flip) continue;
    if ((m & 2) && !can_rotate) continue;
    if ((m & 4) && !can_shift) continue;
    masks.push_back(m);
  }
  if (masks.empty()) return plan;
  const int mask = masks[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(masks.size()) - 1))];

  if (mask & 1) {
    std::vector<int> enabled;
    for (int i = 0; i < 3; ++i)
      if (cfg.flip_axes[i]) {
        enabled.push_back(i);
        plan.spatial.flip[i] = rng.bernoulli(0.5);
      }
    if (std::none_of(plan.spatial.flip.begin(), plan.spatial.flip.end(), [](bool b) { return b; }))
      plan.spatial.flip[enabled[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(enabled.size()) - 1))]] = true;
  }
  if (mask & 2) {
    std::vector<RotationPlane> square;
    for (auto p : cfg.rotations) {
      const auto [a, b] = plane_axes(p);
      if (cfg.patch_size[a] == cfg.patch_size[b]) square.push_back(p);
    }
    if (!square.empty()) {
      plan.spatial.plane = square[static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(square.size()) - 1))];
      plan.spatial.quarter_turns = static_cast<int>(rng.uniform_int(1, 3));
    } else {
      // Non-square planes only admit the half turn without changing the patch shape.
      plan.spatial.plane =
          cfg.rotations[static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(cfg.rotations.size()) - 1))];
      plan.spatial.quarter_turns = 2;
    }
  }
  if (mask & 4) plan.intensity_shift = rng.uniform(-cfg.intensity_shift_max, cfg.intensity_shift_max);
  return plan;
}

Volume apply_plan(const Volume& volume, const AugmentPlan& plan) {
  Volume out = apply_spatial_image(volume, plan.spatial);
  const float shift = plan.intensity_shift ? static_cast<float>(*plan.intensity_shift) : 0.0f;
  for (auto& v : out.data.values()) v = std::clamp(v + shift, 0.0f, 1.0f);
  return out;
}

LabelMap apply_plan(const LabelMap& label, const AugmentPlan& plan) { return apply_spatial_image(label, plan.spatial); }

AugmentedSample augment_sample(const Volume& volume, const LabelMap& label, const AugmentConfig& cfg, Rng& rng) {
  check_aligned(volume, label);
  AugmentedSample out;
  out.plan = draw_augment_plan(label, cfg, rng);
  out.volume = apply_plan(volume, out.plan);
  out.label = apply_plan(label, out.plan);
  return out;
}

}  // namespace tbad
