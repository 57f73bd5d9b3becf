#include "tbad/image.hpp"

#include <algorithm>
#include <cmath>

namespace tbad {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::not_found: return "not-found";
    case ErrorCode::unsupported_format: return "unsupported-format";
    case ErrorCode::alignment: return "alignment";
    case ErrorCode::corrupt_label: return "corrupt-label";
    case ErrorCode::io: return "io";
    case ErrorCode::invalid_intensity: return "invalid-intensity";
    case ErrorCode::kind_mismatch: return "kind-mismatch";
    case ErrorCode::empty_foreground: return "empty-foreground";
    case ErrorCode::patch_too_large: return "patch-too-large";
    case ErrorCode::infeasible_split: return "infeasible-split";
    case ErrorCode::shape: return "shape";
    case ErrorCode::contract: return "contract";
    case ErrorCode::degenerate_target: return "degenerate-target";
    case ErrorCode::diverged_training: return "diverged-training";
    case ErrorCode::spec: return "spec";
    case ErrorCode::config: return "config";
  }
  return "unknown";
}

std::string to_string(const Index3& v) {
  return "(" + std::to_string(v[0]) + "," + std::to_string(v[1]) + "," + std::to_string(v[2]) + ")";
}

Affine diagonal_affine(const Vec3& spacing, const Vec3& origin) {
  Affine a{};
  for (int i = 0; i < 3; ++i) {
    a[i][i] = spacing[i];
    a[i][3] = origin[i];
  }
  a[3][3] = 1.0;
  return a;
}

Vec3 apply_affine(const Affine& affine, const Vec3& index) {
  Vec3 out{};
  for (int r = 0; r < 3; ++r) {
    out[r] = affine[r][3];
    for (int c = 0; c < 3; ++c) out[r] += affine[r][c] * index[c];
  }
  return out;
}

void validate_geometry(const Index3& shape, const Vec3& spacing, const Affine& affine) {
  for (int i = 0; i < 3; ++i) {
    require(shape[i] >= 1, ErrorCode::shape, "every extent must be >= 1, got " + to_string(shape));
    require(std::isfinite(spacing[i]) && spacing[i] > 0.0, ErrorCode::shape,
            "spacing must be positive and finite");
  }
  for (int c = 0; c < 3; ++c) {
    double norm = 0.0;
    for (int r = 0; r < 3; ++r) norm += affine[r][c] * affine[r][c];
    norm = std::sqrt(norm);
    require(std::abs(norm - spacing[c]) <= 1e-6 * spacing[c], ErrorCode::shape,
            "affine column " + std::to_string(c) + " norm " + std::to_string(norm) + " disagrees with spacing " +
                std::to_string(spacing[c]));
  }
}

void validate(const Volume& volume) { validate_geometry(volume.shape(), volume.spacing, volume.affine); }

void validate(const LabelMap& label) {
  validate_geometry(label.shape(), label.spacing, label.affine);
  const auto values = label.data.values();
  const auto bad = std::find_if(values.begin(), values.end(), [](std::uint8_t v) { return v > kMaxLabel; });
  require(bad == values.end(), ErrorCode::corrupt_label,
          "label value " + (bad == values.end() ? std::string() : std::to_string(int(*bad))) + " outside {0,1,2,3}");
}

bool same_grid(const Index3& shape_a, const Vec3& spacing_a, const Affine& affine_a, const Index3& shape_b,
               const Vec3& spacing_b, const Affine& affine_b) {
  return shape_a == shape_b && spacing_a == spacing_b && affine_a == affine_b;
}

std::set<std::uint8_t> value_set(const LabelMap& label) {
  std::array<bool, 256> seen{};
  for (auto v : label.data.values()) seen[v] = true;
  std::set<std::uint8_t> out;
  for (int v = 0; v < 256; ++v)
    if (seen[v]) out.insert(static_cast<std::uint8_t>(v));
  return out;
}

bool contains_class(const LabelMap& label, LabelClass c) {
  const auto values = label.data.values();
  return std::find(values.begin(), values.end(), code(c)) != values.end();
}

std::int64_t count_class(const LabelMap& label, std::uint8_t value) {
  const auto values = label.data.values();
  return std::count(values.begin(), values.end(), value);
}

}  // namespace tbad
