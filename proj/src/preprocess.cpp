#include "tbad/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace tbad {

void PreprocessConfig::validate() const {
  require(hu_min < hu_max, ErrorCode::config, "hu_min must be below hu_max");
  for (double s : target_spacing)
    require(std::isfinite(s) && s > 0.0, ErrorCode::config, "target_spacing must be positive");
  require(crop_margin >= 0, ErrorCode::config, "crop_margin must be >= 0");
  require(foreground_threshold >= 0.0 && foreground_threshold <= 1.0, ErrorCode::config,
          "foreground_threshold must lie in [0,1]");
}

Volume clip_and_normalize(const Volume& volume, const PreprocessConfig& cfg) {
  cfg.validate();
  Volume out = volume;
  const double range = cfg.hu_max - cfg.hu_min;
  for (auto& v : out.data.values()) {
    require(std::isfinite(v), ErrorCode::invalid_intensity, "non-finite voxel in " + volume.id);
    const double c = std::clamp(static_cast<double>(v), cfg.hu_min, cfg.hu_max);
    v = static_cast<float>((c - cfg.hu_min) / range);
  }
  return out;
}

Volume denormalize_to_hu(const Volume& normalized, const PreprocessConfig& cfg) {
  Volume out = normalized;
  const double range = cfg.hu_max - cfg.hu_min;
  for (auto& v : out.data.values()) v = static_cast<float>(cfg.hu_min + static_cast<double>(v) * range);
  return out;
}

Index3 resampled_shape(const Index3& shape, const Vec3& spacing, const Vec3& target) {
  Index3 out{};
  for (int i = 0; i < 3; ++i) {
    // Guard against 64 * 3.0 / 1.5 landing a hair above 128 in floating point.
    const double exact = static_cast<double>(shape[i]) * spacing[i] / target[i];
    const double rounded = std::round(exact);
    const double v = std::abs(exact - rounded) < 1e-9 * std::max(1.0, exact) ? rounded : std::ceil(exact);
    out[i] = std::max<std::int64_t>(1, static_cast<std::int64_t>(v));
  }
  return out;
}

namespace {

Affine rescaled_affine(const Affine& affine, const Vec3& old_spacing, const Vec3& new_spacing) {
  Affine out = affine;
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < 3; ++r) out[r][c] = affine[r][c] / old_spacing[c] * new_spacing[c];
  return out;
}

struct AxisSample {
  std::int64_t lo = 0;
  std::int64_t hi = 0;
  double frac = 0.0;
  std::int64_t nearest = 0;
};

std::vector<AxisSample> axis_samples(std::int64_t n_out, std::int64_t n_in, double ratio) {
  std::vector<AxisSample> samples(static_cast<std::size_t>(n_out));
  for (std::int64_t o = 0; o < n_out; ++o) {
    const double c = std::clamp(static_cast<double>(o) * ratio, 0.0, static_cast<double>(n_in - 1));
    AxisSample s;
    s.lo = static_cast<std::int64_t>(std::floor(c));
    s.hi = std::min(s.lo + 1, n_in - 1);
    s.frac = c - static_cast<double>(s.lo);
    s.nearest = std::min(static_cast<std::int64_t>(std::floor(c + 0.5)), n_in - 1);
    samples[static_cast<std::size_t>(o)] = s;
  }
  return samples;
}

template <class T>
Array3<T> nearest_resample(const Array3<T>& in, const Index3& out_shape, const Vec3& ratio) {
  const auto sx = axis_samples(out_shape[0], in.shape()[0], ratio[0]);
  const auto sy = axis_samples(out_shape[1], in.shape()[1], ratio[1]);
  const auto sz = axis_samples(out_shape[2], in.shape()[2], ratio[2]);
  Array3<T> out(out_shape);
  for (std::int64_t z = 0; z < out_shape[2]; ++z)
    for (std::int64_t y = 0; y < out_shape[1]; ++y)
      for (std::int64_t x = 0; x < out_shape[0]; ++x) out(x, y, z) = in(sx[x].nearest, sy[y].nearest, sz[z].nearest);
  return out;
}

Array3<float> trilinear_resample(const Array3<float>& in, const Index3& out_shape, const Vec3& ratio) {
  const auto sx = axis_samples(out_shape[0], in.shape()[0], ratio[0]);
  const auto sy = axis_samples(out_shape[1], in.shape()[1], ratio[1]);
  const auto sz = axis_samples(out_shape[2], in.shape()[2], ratio[2]);
  Array3<float> out(out_shape);
  for (std::int64_t z = 0; z < out_shape[2]; ++z) {
    const auto& a = sz[z];
    for (std::int64_t y = 0; y < out_shape[1]; ++y) {
      const auto& b = sy[y];
      for (std::int64_t x = 0; x < out_shape[0]; ++x) {
        const auto& c = sx[x];
        auto lerp_x = [&](std::int64_t yy, std::int64_t zz) {
          return (1.0 - c.frac) * in(c.lo, yy, zz) + c.frac * in(c.hi, yy, zz);
        };
        const double y0 = (1.0 - b.frac) * lerp_x(b.lo, a.lo) + b.frac * lerp_x(b.hi, a.lo);
        const double y1 = (1.0 - b.frac) * lerp_x(b.lo, a.hi) + b.frac * lerp_x(b.hi, a.hi);
        out(x, y, z) = static_cast<float>((1.0 - a.frac) * y0 + a.frac * y1);
      }
    }
  }
  return out;
}

Vec3 ratios(const Vec3& spacing, const Vec3& target) {
  return {target[0] / spacing[0], target[1] / spacing[1], target[2] / spacing[2]};
}

}  // namespace

Volume resample(const Volume& volume, const PreprocessConfig& cfg, SampleKind kind) {
  cfg.validate();
  validate(volume);
  const Index3 out_shape = resampled_shape(volume.shape(), volume.spacing, cfg.target_spacing);
  const Vec3 ratio = ratios(volume.spacing, cfg.target_spacing);
  Volume out;
  out.id = volume.id;
  out.spacing = cfg.target_spacing;
  out.affine = rescaled_affine(volume.affine, volume.spacing, cfg.target_spacing);
  if (kind == SampleKind::label) {
    for (float v : volume.data.values())
      require(std::isfinite(v) && v == std::round(v), ErrorCode::kind_mismatch,
              "label resampling requested on a float-valued grid");
    out.data = nearest_resample(volume.data, out_shape, ratio);
  } else {
    out.data = trilinear_resample(volume.data, out_shape, ratio);
  }
  return out;
}

LabelMap resample(const LabelMap& label, const PreprocessConfig& cfg, SampleKind kind) {
  cfg.validate();
  validate(label);
  require(kind == SampleKind::label, ErrorCode::kind_mismatch, "label maps can only be resampled with kind=label");
  LabelMap out;
  out.id = label.id;
  out.spacing = cfg.target_spacing;
  out.affine = rescaled_affine(label.affine, label.spacing, cfg.target_spacing);
  out.data = nearest_resample(label.data, resampled_shape(label.shape(), label.spacing, cfg.target_spacing),
                              ratios(label.spacing, cfg.target_spacing));
  return out;
}

template <class T>
Image<T> crop(const Image<T>& image, const CropBox& box) {
  for (int i = 0; i < 3; ++i)
    require(box.lo[i] >= 0 && box.lo[i] <= box.hi[i] && box.hi[i] < image.shape()[i], ErrorCode::contract,
            "crop box outside image bounds");
  Image<T> out;
  out.id = image.id;
  out.spacing = image.spacing;
  out.affine = image.affine;
  const Vec3 origin = apply_affine(image.affine, {static_cast<double>(box.lo[0]), static_cast<double>(box.lo[1]),
                                                  static_cast<double>(box.lo[2])});
  for (int r = 0; r < 3; ++r) out.affine[r][3] = origin[r];
  const Index3 ext = box.extent();
  out.data = Array3<T>(ext);
  for (std::int64_t z = 0; z < ext[2]; ++z)
    for (std::int64_t y = 0; y < ext[1]; ++y)
      for (std::int64_t x = 0; x < ext[0]; ++x)
        out.data(x, y, z) = image.data(x + box.lo[0], y + box.lo[1], z + box.lo[2]);
  return out;
}

template Image<float> crop(const Image<float>&, const CropBox&);
template Image<std::uint8_t> crop(const Image<std::uint8_t>&, const CropBox&);

CropResult crop_foreground(const Volume& volume, const std::optional<LabelMap>& label, const PreprocessConfig& cfg) {
  cfg.validate();
  if (label) check_aligned(volume, *label);
  const Index3 shape = volume.shape();
  Index3 lo{shape[0], shape[1], shape[2]};
  Index3 hi{-1, -1, -1};
  for (std::int64_t z = 0; z < shape[2]; ++z)
    for (std::int64_t y = 0; y < shape[1]; ++y)
      for (std::int64_t x = 0; x < shape[0]; ++x) {
        if (volume.data(x, y, z) > cfg.foreground_threshold) {
          const Index3 p{x, y, z};
          for (int i = 0; i < 3; ++i) {
            lo[i] = std::min(lo[i], p[i]);
            hi[i] = std::max(hi[i], p[i]);
          }
        }
      }
  require(hi[0] >= 0, ErrorCode::empty_foreground, "no voxel above the foreground threshold in " + volume.id);
  // Labelled voxels always stay inside the box, so paste_back restores them all.
  if (label) {
    for (std::int64_t z = 0; z < shape[2]; ++z)
      for (std::int64_t y = 0; y < shape[1]; ++y)
        for (std::int64_t x = 0; x < shape[0]; ++x) {
          if (label->data(x, y, z) == 0) continue;
          const Index3 p{x, y, z};
          for (int i = 0; i < 3; ++i) {
            lo[i] = std::min(lo[i], p[i]);
            hi[i] = std::max(hi[i], p[i]);
          }
        }
  }
  CropBox box;
  for (int i = 0; i < 3; ++i) {
    box.lo[i] = std::max<std::int64_t>(0, lo[i] - cfg.crop_margin);
    box.hi[i] = std::min<std::int64_t>(shape[i] - 1, hi[i] + cfg.crop_margin);
  }
  CropResult out;
  out.box = box;
  out.volume = crop(volume, box);
  if (label) out.label = crop(*label, box);
  return out;
}

LabelMap paste_back(const LabelMap& cropped, const CropBox& box, const GridGeometry& full_grid) {
  require(cropped.shape() == box.extent(), ErrorCode::alignment, "cropped label does not match crop box extent");
  for (int i = 0; i < 3; ++i)
    require(box.lo[i] >= 0 && box.hi[i] < full_grid.shape[i], ErrorCode::contract, "crop box exceeds full grid");
  LabelMap out;
  out.id = cropped.id;
  out.spacing = full_grid.spacing;
  out.affine = full_grid.affine;
  out.data = Array3<std::uint8_t>(full_grid.shape, 0);
  const Index3 ext = box.extent();
  for (std::int64_t z = 0; z < ext[2]; ++z)
    for (std::int64_t y = 0; y < ext[1]; ++y)
      for (std::int64_t x = 0; x < ext[0]; ++x)
        out.data(x + box.lo[0], y + box.lo[1], z + box.lo[2]) = cropped.data(x, y, z);
  return out;
}

LabelMap paste_back(const LabelMap& cropped, const CropBox& box, const LabelMap& full_grid) {
  return paste_back(cropped, box, GridGeometry{full_grid.shape(), full_grid.spacing, full_grid.affine});
}

PreprocessedCase preprocess_case(const Volume& volume, const std::optional<LabelMap>& label,
                                 const PreprocessConfig& cfg) {
  if (label) check_aligned(volume, *label);
  Volume normalized = clip_and_normalize(volume, cfg);
  Volume resampled = resample(normalized, cfg, SampleKind::image);
  std::optional<LabelMap> resampled_label;
  if (label) resampled_label = resample(*label, cfg, SampleKind::label);
  PreprocessedCase out;
  out.resampled_grid = {resampled.shape(), resampled.spacing, resampled.affine};
  CropResult cropped = crop_foreground(resampled, resampled_label, cfg);
  out.volume = std::move(cropped.volume);
  out.label = std::move(cropped.label);
  out.box = cropped.box;
  return out;
}

}  // namespace tbad
