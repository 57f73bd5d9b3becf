#pragma once

#include <cstdint>
#include <filesystem>

#include "tbad/cohort.hpp"
#include "tbad/image.hpp"
#include "tbad/preprocess.hpp"

namespace tbad {

/// Synthetic dissected descending aorta. The centreline is a straight segment
/// running along z that bends into a circular arc in the x-z plane at the top.
/// A planar septum (offset toward the true lumen, so TL is the smaller channel)
/// splits the tube; flap voxels are labelled background. With `flt_present`,
/// the outer cap of the false lumen (the part farthest from the septum) holding
/// `flt_arc_fraction` of its cross-section is thrombus.
///
/// All lengths are millimetres; intensities are normalized [0,1] units.
struct PhantomSpec {
  Index3 shape{64, 64, 64};
  double spacing = 1.5;
  double vessel_radius = 12.0;
  /// Straight-segment position in the x-y plane, relative to the grid centre.
  double center_offset_x = 0.0;
  double center_offset_y = 0.0;
  double straight_bottom_margin = 6.0;
  /// Height of the straight segment's top above the grid bottom, as a fraction of the z extent.
  double straight_top_fraction = 0.62;
  double arc_radius = 22.0;
  /// Arc sweep in radians; the arc bends toward +x.
  double arc_sweep = 1.4;
  double septum_angle = 0.0;
  /// Septum plane distance from the centreline toward the true lumen, in units of vessel_radius.
  double septum_offset = 0.2;
  double flap_thickness = 1.2;
  bool flt_present = false;
  double flt_arc_fraction = 0.3;

  double tl_intensity = 0.77;
  double fl_intensity = 0.65;
  double flt_intensity = 0.40;
  double flap_intensity = 0.45;
  double background_intensity = 0.27;
  /// Body outline: elliptical cylinder along z; air (0) outside.
  double body_semi_axis_x = 0.46;
  double body_semi_axis_y = 0.42;
  double noise_sigma = 0.04;
  std::uint64_t seed = 0;
  std::string id = "phantom_000";

  void validate() const;
};

struct PhantomCase {
  Volume volume;  // normalized units
  LabelMap label;
  CaseRecord record;
};

PhantomCase generate_phantom(const PhantomSpec& spec);

/// Geometry-only randomisation of a base spec for case `index` of a cohort.
PhantomSpec randomized_spec(const PhantomSpec& base, std::uint64_t seed, int index, bool flt_present);

struct CohortOptions {
  int n = 100;
  double flt_fraction = 0.68;
  std::uint64_t seed = 0;
  PhantomSpec base;
  /// Window used to store the normalized phantom intensities as HU.
  PreprocessConfig window;
};

/// Writes n cases as `<id>_image.nii.gz` (HU) and `<id>_label.nii.gz` plus
/// manifest.json into `out_dir`. Exactly round(n * flt_fraction) cases carry FLT.
CohortManifest generate_cohort(const CohortOptions& options, const fs::path& out_dir);

}  // namespace tbad
