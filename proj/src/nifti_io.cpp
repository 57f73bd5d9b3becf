#include "tbad/nifti_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <memory>
#include <vector>

namespace tbad {
namespace {

#pragma pack(push, 1)
struct Nifti1Header {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1;
  float intent_p2;
  float intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max;
  float cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax;
  std::int32_t glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code;
  std::int16_t sform_code;
  float quatern_b;
  float quatern_c;
  float quatern_d;
  float qoffset_x;
  float qoffset_y;
  float qoffset_z;
  float srow_x[4];
  float srow_y[4];
  float srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348);

enum NiftiType : std::int16_t {
  dt_uint8 = 2,
  dt_int16 = 4,
  dt_int32 = 8,
  dt_float32 = 16,
  dt_float64 = 64,
  dt_int8 = 256,
  dt_uint16 = 512,
  dt_uint32 = 768,
  dt_int64 = 1024,
  dt_uint64 = 1280,
};

int bytes_per_voxel(std::int16_t datatype) {
  switch (datatype) {
    case dt_uint8:
    case dt_int8: return 1;
    case dt_int16:
    case dt_uint16: return 2;
    case dt_int32:
    case dt_uint32:
    case dt_float32: return 4;
    case dt_float64:
    case dt_int64:
    case dt_uint64: return 8;
    default: return 0;
  }
}

template <class T>
void byteswap_inplace(T& v) {
  auto* p = reinterpret_cast<unsigned char*>(&v);
  std::reverse(p, p + sizeof(T));
}

template <class T, std::size_t N>
void byteswap_inplace(T (&arr)[N]) {
  for (auto& v : arr) byteswap_inplace(v);
}

void byteswap_header(Nifti1Header& h) {
  byteswap_inplace(h.sizeof_hdr);
  byteswap_inplace(h.extents);
  byteswap_inplace(h.session_error);
  byteswap_inplace(h.dim);
  byteswap_inplace(h.intent_p1);
  byteswap_inplace(h.intent_p2);
  byteswap_inplace(h.intent_p3);
  byteswap_inplace(h.intent_code);
  byteswap_inplace(h.datatype);
  byteswap_inplace(h.bitpix);
  byteswap_inplace(h.slice_start);
  byteswap_inplace(h.pixdim);
  byteswap_inplace(h.vox_offset);
  byteswap_inplace(h.scl_slope);
  byteswap_inplace(h.scl_inter);
  byteswap_inplace(h.slice_end);
  byteswap_inplace(h.cal_max);
  byteswap_inplace(h.cal_min);
  byteswap_inplace(h.slice_duration);
  byteswap_inplace(h.toffset);
  byteswap_inplace(h.glmax);
  byteswap_inplace(h.glmin);
  byteswap_inplace(h.qform_code);
  byteswap_inplace(h.sform_code);
  byteswap_inplace(h.quatern_b);
  byteswap_inplace(h.quatern_c);
  byteswap_inplace(h.quatern_d);
  byteswap_inplace(h.qoffset_x);
  byteswap_inplace(h.qoffset_y);
  byteswap_inplace(h.qoffset_z);
  byteswap_inplace(h.srow_x);
  byteswap_inplace(h.srow_y);
  byteswap_inplace(h.srow_z);
}

// Header floats are widened through their shortest decimal form so that a value
// written as 0.7 reads back as the double 0.7 rather than 0.699999988.
double widen(float f) {
  if (!std::isfinite(f)) return static_cast<double>(f);
  char buf[32];
  const auto end = std::to_chars(buf, buf + sizeof(buf), f).ptr;
  double d = 0.0;
  std::from_chars(buf, end, d);
  return d;
}

struct GzCloser {
  void operator()(gzFile_s* f) const {
    if (f) gzclose(f);
  }
};
using GzHandle = std::unique_ptr<gzFile_s, GzCloser>;

GzHandle open_for_read(const fs::path& path) {
  require(fs::exists(path), ErrorCode::not_found, "no such file: " + path.string());
  GzHandle f(gzopen(path.c_str(), "rb"));
  require(f != nullptr, ErrorCode::io, "cannot open " + path.string());
  return f;
}

void read_exact(gzFile_s* f, void* dst, std::size_t n, const fs::path& path) {
  auto* out = static_cast<unsigned char*>(dst);
  while (n > 0) {
    const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
    const int got = gzread(f, out, chunk);
    require(got > 0, ErrorCode::unsupported_format, "truncated NIfTI file " + path.string());
    out += got;
    n -= static_cast<std::size_t>(got);
  }
}

struct RawNifti {
  Nifti1Header header{};
  bool swapped = false;
  NiftiHeaderInfo info;
};

Affine qform_affine(const Nifti1Header& h, const Vec3& spacing) {
  double b = widen(h.quatern_b), c = widen(h.quatern_c), d = widen(h.quatern_d);
  double a = 1.0 - (b * b + c * c + d * d);
  if (a < 1e-7) {
    a = 1.0 / std::sqrt(b * b + c * c + d * d);
    b *= a;
    c *= a;
    d *= a;
    a = 0.0;
  } else {
    a = std::sqrt(a);
  }
  const double qfac = h.pixdim[0] < 0.0f ? -1.0 : 1.0;
  const double r[3][3] = {
      {a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)},
      {2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)},
      {2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b},
  };
  const Vec3 scale{spacing[0], spacing[1], qfac * spacing[2]};
  Affine out{};
  for (int row = 0; row < 3; ++row)
    for (int col = 0; col < 3; ++col) out[row][col] = r[row][col] * scale[col];
  out[0][3] = widen(h.qoffset_x);
  out[1][3] = widen(h.qoffset_y);
  out[2][3] = widen(h.qoffset_z);
  out[3][3] = 1.0;
  return out;
}

NiftiHeaderInfo interpret_header(const Nifti1Header& h, const fs::path& path) {
  require(std::memcmp(h.magic, "n+1", 4) == 0 || std::memcmp(h.magic, "ni1", 4) == 0,
          ErrorCode::unsupported_format, "not a NIfTI-1 file: " + path.string());
  require(std::memcmp(h.magic, "n+1", 4) == 0, ErrorCode::unsupported_format,
          "two-file (.hdr/.img) NIfTI is not supported: " + path.string());
  const int ndim = h.dim[0];
  require(ndim >= 3 && ndim <= 7, ErrorCode::unsupported_format,
          "expected a 3D volume, header declares " + std::to_string(ndim) + " dimensions");
  for (int i = 4; i <= ndim; ++i)
    require(h.dim[i] == 1, ErrorCode::unsupported_format,
            "4D or multi-channel data (dim[" + std::to_string(i) + "]=" + std::to_string(h.dim[i]) + ") unsupported");
  require(bytes_per_voxel(h.datatype) > 0, ErrorCode::unsupported_format,
          "unsupported NIfTI datatype " + std::to_string(h.datatype));
  require(bytes_per_voxel(h.datatype) * 8 == h.bitpix, ErrorCode::unsupported_format, "bitpix/datatype mismatch");

  NiftiHeaderInfo info;
  info.datatype = h.datatype;
  for (int i = 0; i < 3; ++i) {
    info.shape[i] = h.dim[i + 1];
    info.spacing[i] = std::abs(widen(h.pixdim[i + 1]));
  }
  if (h.sform_code > 0) {
    const float* rows[3] = {h.srow_x, h.srow_y, h.srow_z};
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) info.affine[r][c] = widen(rows[r][c]);
    info.affine[3] = {0.0, 0.0, 0.0, 1.0};
  } else if (h.qform_code > 0) {
    info.affine = qform_affine(h, info.spacing);
  } else {
    info.affine = diagonal_affine(info.spacing);
  }
  validate_geometry(info.shape, info.spacing, info.affine);
  return info;
}

RawNifti read_header(gzFile_s* f, const fs::path& path) {
  RawNifti raw;
  read_exact(f, &raw.header, sizeof(Nifti1Header), path);
  if (raw.header.sizeof_hdr != 348) {
    byteswap_header(raw.header);
    raw.swapped = true;
    require(raw.header.sizeof_hdr == 348, ErrorCode::unsupported_format, "not a NIfTI-1 header: " + path.string());
  }
  raw.info = interpret_header(raw.header, path);
  return raw;
}

template <class T>
void decode_as(const std::vector<unsigned char>& bytes, bool swapped, std::vector<double>& out) {
  const std::size_t n = bytes.size() / sizeof(T);
  out.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    T v;
    std::memcpy(&v, bytes.data() + i * sizeof(T), sizeof(T));
    if (swapped) byteswap_inplace(v);
    out[i] = static_cast<double>(v);
  }
}

// Voxel values in file order, scaled by scl_slope / scl_inter when present.
std::vector<double> read_voxels(const fs::path& path, NiftiHeaderInfo& info) {
  auto f = open_for_read(path);
  RawNifti raw = read_header(f.get(), path);
  info = raw.info;
  const auto& h = raw.header;
  const std::int64_t n = voxel_count(info.shape);
  const int bpv = bytes_per_voxel(h.datatype);

  const auto offset = static_cast<std::int64_t>(h.vox_offset);
  require(offset >= 348, ErrorCode::unsupported_format, "vox_offset before end of header");
  std::vector<unsigned char> skip(static_cast<std::size_t>(offset - 348));
  if (!skip.empty()) read_exact(f.get(), skip.data(), skip.size(), path);

  std::vector<unsigned char> bytes(static_cast<std::size_t>(n * bpv));
  read_exact(f.get(), bytes.data(), bytes.size(), path);

  std::vector<double> values;
  switch (h.datatype) {
    case dt_uint8: decode_as<std::uint8_t>(bytes, raw.swapped, values); break;
    case dt_int8: decode_as<std::int8_t>(bytes, raw.swapped, values); break;
    case dt_int16: decode_as<std::int16_t>(bytes, raw.swapped, values); break;
    case dt_uint16: decode_as<std::uint16_t>(bytes, raw.swapped, values); break;
    case dt_int32: decode_as<std::int32_t>(bytes, raw.swapped, values); break;
    case dt_uint32: decode_as<std::uint32_t>(bytes, raw.swapped, values); break;
    case dt_float32: decode_as<float>(bytes, raw.swapped, values); break;
    case dt_float64: decode_as<double>(bytes, raw.swapped, values); break;
    case dt_int64: decode_as<std::int64_t>(bytes, raw.swapped, values); break;
    case dt_uint64: decode_as<std::uint64_t>(bytes, raw.swapped, values); break;
    default: fail(ErrorCode::unsupported_format, "unsupported datatype");
  }
  const double slope = h.scl_slope;
  if (std::isfinite(slope) && slope != 0.0 && !(slope == 1.0 && h.scl_inter == 0.0)) {
    const double inter = std::isfinite(h.scl_inter) ? h.scl_inter : 0.0;
    for (auto& v : values) v = v * slope + inter;
  }
  return values;
}

// Shortest-form quaternion of the rotation part, following the NIfTI-1 reference algorithm.
void set_qform(Nifti1Header& h, const Affine& affine, const Vec3& spacing) {
  double r[3][3];
  for (int col = 0; col < 3; ++col)
    for (int row = 0; row < 3; ++row) r[row][col] = affine[row][col] / spacing[col];
  const double det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) -
                     r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0]) +
                     r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
  double qfac = 1.0;
  if (det < 0.0) {
    qfac = -1.0;
    for (auto& row : r) row[2] = -row[2];
  }
  double a = r[0][0] + r[1][1] + r[2][2] + 1.0, b, c, d;
  if (a > 0.5) {
    a = 0.5 * std::sqrt(a);
    b = 0.25 * (r[2][1] - r[1][2]) / a;
    c = 0.25 * (r[0][2] - r[2][0]) / a;
    d = 0.25 * (r[1][0] - r[0][1]) / a;
  } else {
    const double xd = 1.0 + r[0][0] - (r[1][1] + r[2][2]);
    const double yd = 1.0 + r[1][1] - (r[0][0] + r[2][2]);
    const double zd = 1.0 + r[2][2] - (r[0][0] + r[1][1]);
    if (xd > 1.0) {
      b = 0.5 * std::sqrt(xd);
      c = 0.25 * (r[0][1] + r[1][0]) / b;
      d = 0.25 * (r[0][2] + r[2][0]) / b;
      a = 0.25 * (r[2][1] - r[1][2]) / b;
    } else if (yd > 1.0) {
      c = 0.5 * std::sqrt(yd);
      b = 0.25 * (r[0][1] + r[1][0]) / c;
      d = 0.25 * (r[1][2] + r[2][1]) / c;
      a = 0.25 * (r[0][2] - r[2][0]) / c;
    } else {
      d = 0.5 * std::sqrt(zd);
      b = 0.25 * (r[0][2] + r[2][0]) / d;
      c = 0.25 * (r[1][2] + r[2][1]) / d;
      a = 0.25 * (r[1][0] - r[0][1]) / d;
    }
    if (a < 0.0) {
      b = -b;
      c = -c;
      d = -d;
    }
  }
  h.quatern_b = static_cast<float>(b);
  h.quatern_c = static_cast<float>(c);
  h.quatern_d = static_cast<float>(d);
  h.qoffset_x = static_cast<float>(affine[0][3]);
  h.qoffset_y = static_cast<float>(affine[1][3]);
  h.qoffset_z = static_cast<float>(affine[2][3]);
  h.pixdim[0] = static_cast<float>(qfac);
  h.qform_code = 1;
}

Nifti1Header make_header(const Index3& shape, const Vec3& spacing, const Affine& affine, std::int16_t datatype) {
  Nifti1Header h{};
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  for (int i = 0; i < 3; ++i) {
    require(shape[i] <= 32767, ErrorCode::unsupported_format, "extent exceeds NIfTI-1 limit");
    h.dim[i + 1] = static_cast<std::int16_t>(shape[i]);
    h.pixdim[i + 1] = static_cast<float>(spacing[i]);
  }
  for (int i = 4; i < 8; ++i) {
    h.dim[i] = 1;
    h.pixdim[i] = 1.0f;
  }
  h.datatype = datatype;
  h.bitpix = static_cast<std::int16_t>(bytes_per_voxel(datatype) * 8);
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.scl_inter = 0.0f;
  h.xyzt_units = 2;  // millimetres
  set_qform(h, affine, spacing);
  h.sform_code = 1;
  for (int c = 0; c < 4; ++c) {
    h.srow_x[c] = static_cast<float>(affine[0][c]);
    h.srow_y[c] = static_cast<float>(affine[1][c]);
    h.srow_z[c] = static_cast<float>(affine[2][c]);
  }
  std::memcpy(h.magic, "n+1", 4);
  return h;
}

bool is_gzip_path(const fs::path& path) { return path.extension() == ".gz"; }

void write_nifti(const fs::path& path, const Nifti1Header& header, const void* data, std::size_t bytes) {
  const auto parent = path.parent_path();
  std::error_code ec;
  if (!parent.empty()) fs::create_directories(parent, ec);
  GzHandle f(gzopen(path.c_str(), is_gzip_path(path) ? "wb6" : "wbT"));
  require(f != nullptr, ErrorCode::io, "cannot open " + path.string() + " for writing");
  const char extension[4] = {0, 0, 0, 0};
  bool ok = gzwrite(f.get(), &header, sizeof(header)) == static_cast<int>(sizeof(header));
  ok = ok && gzwrite(f.get(), extension, 4) == 4;
  const auto* p = static_cast<const unsigned char*>(data);
  while (ok && bytes > 0) {
    const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(bytes, 1u << 30));
    ok = gzwrite(f.get(), p, chunk) == static_cast<int>(chunk);
    p += chunk;
    bytes -= chunk;
  }
  const int close_status = gzclose(f.release());
  require(ok && close_status == Z_OK, ErrorCode::io, "failed writing " + path.string());
}

}  // namespace

NiftiHeaderInfo read_nifti_header(const fs::path& path) {
  auto f = open_for_read(path);
  return read_header(f.get(), path).info;
}

Volume read_volume(const fs::path& path) {
  NiftiHeaderInfo info;
  const auto values = read_voxels(path, info);
  Volume v;
  std::vector<float> data(values.size());
  std::transform(values.begin(), values.end(), data.begin(), [](double x) { return static_cast<float>(x); });
  v.data = Array3<float>(info.shape, std::move(data));
  v.spacing = info.spacing;
  v.affine = info.affine;
  return v;
}

LabelMap read_label(const fs::path& path, const LabelRemap& remap) {
  NiftiHeaderInfo info;
  const auto values = read_voxels(path, info);
  std::vector<std::uint8_t> data(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = values[i];
    require(std::isfinite(v) && v == std::round(v), ErrorCode::corrupt_label,
            "non-integer label value " + std::to_string(v) + " in " + path.string());
    const auto raw = static_cast<std::int64_t>(v);
    if (remap.empty()) {
      require(raw >= 0 && raw <= kMaxLabel, ErrorCode::corrupt_label,
              "label value " + std::to_string(raw) + " outside {0,1,2,3} in " + path.string());
      data[i] = static_cast<std::uint8_t>(raw);
    } else {
      const auto it = remap.table.find(raw);
      require(it != remap.table.end(), ErrorCode::corrupt_label,
              "label value " + std::to_string(raw) + " missing from remap table");
      require(it->second <= kMaxLabel, ErrorCode::corrupt_label, "remap target outside {0,1,2,3}");
      data[i] = it->second;
    }
  }
  LabelMap label;
  label.data = Array3<std::uint8_t>(info.shape, std::move(data));
  label.spacing = info.spacing;
  label.affine = info.affine;
  return label;
}

void write_volume(const Volume& volume, const fs::path& path) {
  validate(volume);
  const auto header = make_header(volume.shape(), volume.spacing, volume.affine, dt_float32);
  const auto values = volume.data.values();
  write_nifti(path, header, values.data(), values.size_bytes());
}

void write_label(const LabelMap& label, const fs::path& path) {
  validate(label);
  const auto header = make_header(label.shape(), label.spacing, label.affine, dt_uint8);
  const auto values = label.data.values();
  write_nifti(path, header, values.data(), values.size_bytes());
}

LoadedCase load_case(const fs::path& image_path, const std::optional<fs::path>& label_path,
                     const LabelRemap& remap) {
  LoadedCase out;
  out.volume = read_volume(image_path);
  out.volume.id = case_id_from_image_name(image_path.filename().string()).value_or(image_path.stem().string());
  if (label_path) {
    LabelMap label = read_label(*label_path, remap);
    require(label.shape() == out.volume.shape(), ErrorCode::alignment,
            "label shape " + to_string(label.shape()) + " differs from image shape " + to_string(out.volume.shape()));
    for (int r = 0; r < 3; ++r) {
      require(std::abs(label.spacing[r] - out.volume.spacing[r]) <= 1e-6 * out.volume.spacing[r],
              ErrorCode::alignment, "label spacing differs from image spacing");
      for (int c = 0; c < 4; ++c)
        require(std::abs(label.affine[r][c] - out.volume.affine[r][c]) <=
                    1e-6 * std::max(1.0, std::abs(out.volume.affine[r][c])),
                ErrorCode::alignment, "label affine differs from image affine");
    }
    // Within tolerance: adopt the image geometry so the pair is exactly aligned.
    label.spacing = out.volume.spacing;
    label.affine = out.volume.affine;
    label.id = out.volume.id;
    out.label = std::move(label);
  }
  return out;
}

fs::path image_path_for(const fs::path& dir, const std::string& id) { return dir / (id + "_image.nii.gz"); }
fs::path label_path_for(const fs::path& dir, const std::string& id) { return dir / (id + "_label.nii.gz"); }

std::optional<std::string> case_id_from_image_name(const std::string& filename) {
  for (const std::string suffix : {"_image.nii.gz", "_image.nii"}) {
    if (filename.size() > suffix.size() && filename.ends_with(suffix))
      return filename.substr(0, filename.size() - suffix.size());
  }
  return std::nullopt;
}

SavedCase save_case(const Volume& volume, const std::optional<LabelMap>& label, const fs::path& dir) {
  require(!volume.id.empty(), ErrorCode::contract, "volume id is required to name the output files");
  if (label) check_aligned(volume, *label);
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec && fs::is_directory(dir), ErrorCode::io, "cannot create output directory " + dir.string());
  SavedCase out;
  out.image = image_path_for(dir, volume.id);
  write_volume(volume, out.image);
  if (label) {
    out.label = label_path_for(dir, volume.id);
    write_label(*label, *out.label);
  }
  return out;
}

}  // namespace tbad
