#include "tbad/reports.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <sstream>

#include <png.h>

#include "tbad/error.hpp"

namespace tbad {

Rgb class_color(std::uint8_t class_id) {
  switch (class_id) {
    case 1: return {0, 200, 0};
    case 2: return {255, 220, 0};
    case 3: return {230, 0, 0};
    default: return {0, 0, 0};
  }
}

Rgb RgbImage::at(int x, int y) const {
  const auto i = static_cast<std::size_t>(3 * (y * width + x));
  return {pixels[i], pixels[i + 1], pixels[i + 2]};
}

namespace {

constexpr int kGap = 2;

// Slice geometry per column: (width axis, height axis, fixed axis). Coronal and
// sagittal views put superior (high z) at the top.
struct View {
  int u, v, fixed;
  bool flip_v;
};
constexpr std::array<View, 3> kViews{{{0, 1, 2, false}, {0, 2, 1, true}, {1, 2, 0, true}}};

int row_height(const Index3& s) { return static_cast<int>(std::max(s[1], s[2])); }

}  // namespace

std::pair<int, int> overlay_panel_origin(const Volume& image, int row, int column, int scale) {
  const auto& s = image.shape();
  int x = kGap;
  for (int c = 0; c < column; ++c) x += static_cast<int>(s[static_cast<std::size_t>(kViews[c].u)]) * scale + kGap;
  const int y = kGap + row * (row_height(s) * scale + kGap);
  return {x, y};
}

RgbImage compose_overlay(const Volume& image, const std::vector<LabelMap>& labels, int scale, double alpha) {
  require(scale >= 1, ErrorCode::contract, "overlay scale must be >= 1");
  for (const auto& l : labels)
    require(same_grid(image.shape(), image.spacing, image.affine, l.shape(), l.spacing, l.affine), ErrorCode::contract,
            "label '" + l.id + "' is not aligned with image '" + image.id + "'");
  const auto& s = image.shape();
  const int rows = std::max<int>(1, static_cast<int>(labels.size()));
  RgbImage out;
  out.width = kGap + static_cast<int>(s[0] + s[0] + s[1]) * scale + 3 * kGap;
  out.height = kGap + rows * (row_height(s) * scale + kGap);
  out.pixels.assign(static_cast<std::size_t>(3 * out.width * out.height), 0);

  // Window the image to its own [min, max] for display.
  float lo = std::numeric_limits<float>::infinity(), hi = -lo;
  for (float v : image.data.values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const float range = hi > lo ? hi - lo : 1.0f;
  const Index3 mid{s[0] / 2, s[1] / 2, s[2] / 2};

  for (int row = 0; row < rows; ++row) {
    const LabelMap* label = labels.empty() ? nullptr : &labels[static_cast<std::size_t>(row)];
    for (int col = 0; col < 3; ++col) {
      const View view = kViews[static_cast<std::size_t>(col)];
      const auto [ox, oy] = overlay_panel_origin(image, row, col, scale);
      const auto nu = s[static_cast<std::size_t>(view.u)], nv = s[static_cast<std::size_t>(view.v)];
      for (std::int64_t j = 0; j < nv; ++j)
        for (std::int64_t i = 0; i < nu; ++i) {
          Index3 p = mid;
          p[static_cast<std::size_t>(view.u)] = i;
          p[static_cast<std::size_t>(view.v)] = view.flip_v ? nv - 1 - j : j;
          const float g = std::clamp((image.data(p[0], p[1], p[2]) - lo) / range, 0.0f, 1.0f) * 255.0f;
          std::array<double, 3> rgb{g, g, g};
          if (label) {
            const auto cls = label->data(p[0], p[1], p[2]);
            if (cls != 0) {
              const Rgb c = class_color(cls);
              for (int k = 0; k < 3; ++k) rgb[k] = (1.0 - alpha) * rgb[k] + alpha * c[k];
            }
          }
          for (int dy = 0; dy < scale; ++dy)
            for (int dx = 0; dx < scale; ++dx) {
              const auto px = static_cast<std::size_t>(ox + static_cast<int>(i) * scale + dx);
              const auto py = static_cast<std::size_t>(oy + static_cast<int>(j) * scale + dy);
              const auto idx = 3 * (py * static_cast<std::size_t>(out.width) + px);
              for (int k = 0; k < 3; ++k) out.pixels[idx + k] = static_cast<std::uint8_t>(std::lround(rgb[k]));
            }
        }
    }
  }
  return out;
}

void write_png(const RgbImage& image, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.string().c_str(), "wb"), &std::fclose);
  require(fp != nullptr, ErrorCode::io, "cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::io, "libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::io, "libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y)
    png_write_row(png, image.pixels.data() + static_cast<std::size_t>(3 * y * image.width));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

RgbImage read_png(const fs::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.string().c_str(), "rb"), &std::fclose);
  require(fp != nullptr, ErrorCode::not_found, "cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::io, "libpng initialisation failed");
  }
  RgbImage out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::unsupported_format, path.string() + " is not a readable PNG");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.pixels.resize(static_cast<std::size_t>(3 * out.width * out.height));
  for (int y = 0; y < out.height; ++y)
    png_read_row(png, out.pixels.data() + static_cast<std::size_t>(3 * y * out.width), nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void render_overlay(const Volume& image, const std::vector<LabelMap>& labels, const fs::path& out_path) {
  write_png(compose_overlay(image, labels), out_path);
}

namespace {

constexpr std::array<const char*, 6> kPalette{"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string fmt(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << v;
  return s.str();
}

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string history_svg(const std::vector<NamedHistory>& histories) {
  require(!histories.empty(), ErrorCode::contract, "plot_history needs at least one history");
  constexpr double kPanelW = 360, kPanelH = 240, kLeft = 60, kTop = 40, kGapX = 80, kLegendH = 24;
  int max_epoch = 1;
  double max_loss = 0.0;
  for (const auto& [name, h] : histories)
    for (const auto& r : h.records()) {
      max_epoch = std::max(max_epoch, r.epoch);
      if (std::isfinite(r.train_loss)) max_loss = std::max(max_loss, r.train_loss);
    }
  if (max_loss <= 0.0) max_loss = 1.0;

  const double width = kLeft + 2 * kPanelW + kGapX + 20;
  const double height = kTop + kPanelH + 50 + kLegendH * static_cast<double>(histories.size());
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  struct Panel {
    const char* title;
    double x0;
    double y_max;
  };
  const std::array<Panel, 2> panels{{{"training loss", kLeft, max_loss}, {"validation DC", kLeft + kPanelW + kGapX, 1.0}}};
  for (const auto& p : panels) {
    svg << "<text x=\"" << p.x0 + kPanelW / 2 << "\" y=\"" << kTop - 12 << "\" text-anchor=\"middle\">" << p.title
        << "</text>\n";
    svg << "<rect x=\"" << p.x0 << "\" y=\"" << kTop << "\" width=\"" << kPanelW << "\" height=\"" << kPanelH
        << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
      const double y = kTop + kPanelH - kPanelH * t / 4.0;
      svg << "<text x=\"" << p.x0 - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << fmt(p.y_max * t / 4.0)
          << "</text>\n";
      const double x = p.x0 + kPanelW * t / 4.0;
      svg << "<text x=\"" << x << "\" y=\"" << kTop + kPanelH + 16 << "\" text-anchor=\"middle\">"
          << std::lround(max_epoch * t / 4.0) << "</text>\n";
    }
    svg << "<text x=\"" << p.x0 + kPanelW / 2 << "\" y=\"" << kTop + kPanelH + 34
        << "\" text-anchor=\"middle\">epoch</text>\n";
    svg << "<text x=\"" << p.x0 - 44 << "\" y=\"" << kTop + kPanelH / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 "
        << p.x0 - 44 << " " << kTop + kPanelH / 2 << ")\">value</text>\n";
  }
  for (std::size_t i = 0; i < histories.size(); ++i) {
    const auto& [name, h] = histories[i];
    const char* colour = kPalette[i % kPalette.size()];
    for (std::size_t pi = 0; pi < panels.size(); ++pi) {
      const auto& p = panels[pi];
      svg << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\" points=\"";
      for (const auto& r : h.records()) {
        const double v = pi == 0 ? r.train_loss : r.val_mean_dc;
        if (!std::isfinite(v)) continue;
        const double x = p.x0 + kPanelW * r.epoch / max_epoch;
        const double y = kTop + kPanelH - kPanelH * std::clamp(v / p.y_max, 0.0, 1.0);
        svg << fmt(x) << "," << fmt(y) << " ";
      }
      svg << "\"/>\n";
    }
    const double ly = kTop + kPanelH + 56 + kLegendH * static_cast<double>(i);
    svg << "<line x1=\"" << kLeft << "\" y1=\"" << ly - 4 << "\" x2=\"" << kLeft + 24 << "\" y2=\"" << ly - 4
        << "\" stroke=\"" << colour << "\" stroke-width=\"3\"/>\n";
    svg << "<text x=\"" << kLeft + 32 << "\" y=\"" << ly << "\">" << escape(name) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void plot_history(const std::vector<NamedHistory>& histories, const fs::path& out_path) {
  const std::string svg = history_svg(histories);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + out_path.string());
  out << svg;
}

}  // namespace tbad
