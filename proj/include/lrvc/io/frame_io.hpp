#pragma once

// Raw 8-bit YUV420 ingest, limited-range BT.709 / BT.601 conversion, geometry
// normalization (replicate padding or center cropping to 64-multiples), PNG
// read/write and the plain-text sequence descriptor.

#include <png.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "lrvc/core/tensor.hpp"
#include "lrvc/entropy/container.hpp"
#include "lrvc/model/config.hpp"

namespace lrvc {

enum class ColorMatrix { kBT709, kBT601 };
enum class GeometryMode { kPad64, kCenterCrop };
enum class ColorSpace { kRGB, kYUV420Source };

inline const char* matrix_name(ColorMatrix m) { return m == ColorMatrix::kBT709 ? "bt709" : "bt601"; }
inline const char* geometry_name(GeometryMode g) { return g == GeometryMode::kPad64 ? "pad64" : "center_crop"; }

inline ColorMatrix parse_matrix(const std::string& s) {
  if (s == "bt709" || s == "BT709") return ColorMatrix::kBT709;
  if (s == "bt601" || s == "BT601") return ColorMatrix::kBT601;
  throw std::invalid_argument("unknown matrix '" + s + "' (expected bt709 or bt601)");
}

inline GeometryMode parse_geometry(const std::string& s) {
  if (s == "pad64") return GeometryMode::kPad64;
  if (s == "center_crop") return GeometryMode::kCenterCrop;
  throw std::invalid_argument("unknown geometry_mode '" + s + "' (expected pad64 or center_crop)");
}

struct SequenceConfig {
  int width = 0;
  int height = 0;
  int frame_count = 1;
  int intra_period = 32;
  ColorMatrix matrix = ColorMatrix::kBT709;
  GeometryMode geometry = GeometryMode::kPad64;
  std::string path;  // raw YUV file (descriptor-relative paths are resolved)

  void validate() const {
    if (width <= 0 || height <= 0) throw std::invalid_argument("sequence: width and height must be positive");
    if (width % 2 || height % 2)
      throw std::invalid_argument("sequence: YUV420 needs even width and height, got " + std::to_string(width) + "x" +
                                  std::to_string(height));
    if (frame_count < 1) throw std::invalid_argument("sequence: frame_count must be >= 1");
    if (intra_period < 1) throw std::invalid_argument("sequence: intra_period must be >= 1");
  }

  /// Descriptor keys: path, width, height, frame_count, intra_period, matrix,
  /// geometry_mode.
  static SequenceConfig from_descriptor(const std::string& file) {
    const auto kv = read_kv_file(file);
    auto get = [&](const char* k) -> const std::string* {
      auto it = kv.find(k);
      return it == kv.end() ? nullptr : &it->second;
    };
    SequenceConfig c;
    if (auto* v = get("width")) c.width = std::stoi(*v);
    if (auto* v = get("height")) c.height = std::stoi(*v);
    if (auto* v = get("frame_count")) c.frame_count = std::stoi(*v);
    if (auto* v = get("intra_period")) c.intra_period = std::stoi(*v);
    if (auto* v = get("matrix")) c.matrix = parse_matrix(*v);
    if (auto* v = get("geometry_mode")) c.geometry = parse_geometry(*v);
    if (auto* v = get("path")) {
      c.path = *v;
      const auto slash = file.find_last_of('/');
      if (!c.path.empty() && c.path[0] != '/' && slash != std::string::npos) c.path = file.substr(0, slash + 1) + c.path;
    }
    c.validate();
    return c;
  }

  std::string to_text() const {
    return "path=" + path + "\nwidth=" + std::to_string(width) + "\nheight=" + std::to_string(height) +
           "\nframe_count=" + std::to_string(frame_count) + "\nintra_period=" + std::to_string(intra_period) +
           "\nmatrix=" + matrix_name(matrix) + "\ngeometry_mode=" + geometry_name(geometry) + "\n";
  }
};

/// One 8-bit planar 4:2:0 picture.
struct YuvFrame {
  int width = 0, height = 0;
  std::vector<uint8_t> y, u, v;  // u, v are (height/2) x (width/2)

  bool operator==(const YuvFrame&) const = default;
};

/// A picture in [0,1]. `planes` is (3, H, W); orig_h/orig_w record the size
/// before padding.
struct Frame {
  Tensor<float> planes;
  ColorSpace color_space = ColorSpace::kRGB;
  int temporal_index = 0;
  FrameType frame_type = FrameType::kIntra;
  int orig_h = 0, orig_w = 0;
};

inline size_t yuv420_frame_bytes(int w, int h) { return size_t(w) * h * 3 / 2; }

/// Reads cfg.frame_count frames. A short file is an error naming the byte
/// offset where the first incomplete frame starts.
inline std::vector<YuvFrame> read_yuv420_raw(const std::string& path, const SequenceConfig& cfg) {
  cfg.validate();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  const size_t fb = yuv420_frame_bytes(cfg.width, cfg.height);
  const size_t luma = size_t(cfg.width) * cfg.height, chroma = luma / 4;
  std::vector<YuvFrame> out;
  for (int t = 0; t < cfg.frame_count; ++t) {
    YuvFrame f;
    f.width = cfg.width;
    f.height = cfg.height;
    std::vector<uint8_t> buf(fb);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(fb));
    if (static_cast<size_t>(in.gcount()) != fb)
      throw FormatError(path + ": truncated at byte offset " + std::to_string(size_t(t) * fb + in.gcount()) +
                        " in frame " + std::to_string(t) + " (frame starts at byte " + std::to_string(size_t(t) * fb) +
                        ", needs " + std::to_string(fb) + " bytes)");
    f.y.assign(buf.begin(), buf.begin() + luma);
    f.u.assign(buf.begin() + luma, buf.begin() + luma + chroma);
    f.v.assign(buf.begin() + luma + chroma, buf.end());
    out.push_back(std::move(f));
  }
  return out;
}

inline void write_yuv420_raw(const std::string& path, const std::vector<YuvFrame>& frames) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& f : frames)
    for (const auto* p : {&f.y, &f.u, &f.v}) out.write(reinterpret_cast<const char*>(p->data()), p->size());
  if (!out) throw std::runtime_error("failed writing " + path);
}

/// Luma weights (Kr, Kb) of a conversion matrix.
inline std::pair<double, double> luma_weights(ColorMatrix m) {
  return m == ColorMatrix::kBT709 ? std::pair{0.2126, 0.0722} : std::pair{0.299, 0.114};
}

/// Limited-range Y'CbCr (8-bit code values) to R'G'B' in nominal [0,1],
/// before clipping.
inline std::array<double, 3> ycbcr_to_rgb_unclipped(double y, double cb, double cr, ColorMatrix m) {
  const auto [kr, kb] = luma_weights(m);
  const double yn = (y - 16.0) / 219.0, pb = (cb - 128.0) / 224.0, pr = (cr - 128.0) / 224.0;
  const double r = yn + 2.0 * (1.0 - kr) * pr;
  const double b = yn + 2.0 * (1.0 - kb) * pb;
  const double g = (yn - kr * r - kb * b) / (1.0 - kr - kb);
  return {r, g, b};
}

/// Inverse of ycbcr_to_rgb_unclipped (real-valued code values).
inline std::array<double, 3> rgb_to_ycbcr(double r, double g, double b, ColorMatrix m) {
  const auto [kr, kb] = luma_weights(m);
  const double yn = kr * r + (1.0 - kr - kb) * g + kb * b;
  return {16.0 + 219.0 * yn, 128.0 + 224.0 * (b - yn) / (2.0 * (1.0 - kb)),
          128.0 + 224.0 * (r - yn) / (2.0 * (1.0 - kr))};
}

/// Chroma is upsampled by nearest-neighbour duplication; output is clipped.
inline Frame yuv_to_rgb(const YuvFrame& f, ColorMatrix m, int temporal_index = 0) {
  Frame out;
  out.planes = Tensor<float>(3, f.height, f.width);
  out.temporal_index = temporal_index;
  out.orig_h = f.height;
  out.orig_w = f.width;
  const int cw = f.width / 2;
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x) {
      const size_t ci = size_t(y / 2) * cw + x / 2;
      const auto rgb = ycbcr_to_rgb_unclipped(f.y[size_t(y) * f.width + x], f.u[ci], f.v[ci], m);
      for (int c = 0; c < 3; ++c) out.planes.at(c, y, x) = static_cast<float>(std::clamp(rgb[c], 0.0, 1.0));
    }
  return out;
}

/// RGB to 8-bit 4:2:0 (chroma averaged over each 2x2 cell), for writing
/// reconstructions as raw YUV.
inline YuvFrame rgb_to_yuv420(const Tensor<float>& rgb, ColorMatrix m) {
  const int h = rgb.height(), w = rgb.width();
  if (h % 2 || w % 2) throw std::invalid_argument("rgb_to_yuv420: odd size");
  YuvFrame f;
  f.width = w;
  f.height = h;
  f.y.resize(size_t(w) * h);
  f.u.assign(size_t(w) * h / 4, 0);
  f.v.assign(size_t(w) * h / 4, 0);
  std::vector<double> cb(f.u.size(), 0), cr(f.v.size(), 0);
  auto q = [](double v) { return static_cast<uint8_t>(std::clamp(std::lround(v), 0L, 255L)); };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const auto ycc = rgb_to_ycbcr(rgb.at(0, y, x), rgb.at(1, y, x), rgb.at(2, y, x), m);
      f.y[size_t(y) * w + x] = q(ycc[0]);
      const size_t ci = size_t(y / 2) * (w / 2) + x / 2;
      cb[ci] += ycc[1] / 4;
      cr[ci] += ycc[2] / 4;
    }
  for (size_t i = 0; i < cb.size(); ++i) {
    f.u[i] = q(cb[i]);
    f.v[i] = q(cr[i]);
  }
  return f;
}

/// Reads and converts a raw YUV420 sequence.
inline std::vector<Frame> read_yuv420(const std::string& path, const SequenceConfig& cfg) {
  auto raw = read_yuv420_raw(path, cfg);
  std::vector<Frame> out;
  for (size_t t = 0; t < raw.size(); ++t) {
    out.push_back(yuv_to_rgb(raw[t], cfg.matrix, static_cast<int>(t)));
    out.back().frame_type = frame_type_at(static_cast<int>(t), cfg.intra_period);
  }
  return out;
}

inline int round_up(int v, int m) { return (v + m - 1) / m * m; }

/// Right/bottom replicate padding to multiples of m.
inline Tensor<float> pad_to_multiple(const Tensor<float>& x, int m = 64) {
  if (m < 1) throw std::invalid_argument("pad_to_multiple: m must be >= 1");
  const int c = x.channels(), h = x.height(), w = x.width(), ph = round_up(h, m), pw = round_up(w, m);
  if (ph == h && pw == w) return x;
  Tensor<float> out(c, ph, pw);
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < ph; ++y)
      for (int xx = 0; xx < pw; ++xx) out.at(ci, y, xx) = x.at(ci, std::min(y, h - 1), std::min(xx, w - 1));
  return out;
}

inline Frame pad_to_multiple(const Frame& f, int m = 64) {
  Frame out = f;
  out.planes = pad_to_multiple(f.planes, m);
  return out;
}

/// Top-left crop (undoes pad_to_multiple).
template <typename T>
Tensor<T> crop_top_left(const Tensor<T>& x, int h, int w) {
  if (h > x.height() || w > x.width()) throw std::invalid_argument("crop: target larger than source");
  Tensor<T> out(x.channels(), h, w);
  for (int c = 0; c < x.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) out.at(c, y, xx) = x.at(c, y, xx);
  return out;
}

/// Symmetric crop to (h, w); an odd margin loses its extra row/column at the
/// bottom/right.
template <typename T>
Tensor<T> center_crop(const Tensor<T>& x, int h, int w) {
  if (h > x.height() || w > x.width())
    throw std::invalid_argument("center_crop: target " + std::to_string(w) + "x" + std::to_string(h) +
                                " larger than source " + std::to_string(x.width()) + "x" + std::to_string(x.height()));
  const int top = (x.height() - h) / 2, left = (x.width() - w) / 2;
  Tensor<T> out(x.channels(), h, w);
  for (int c = 0; c < x.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) out.at(c, y, xx) = x.at(c, top + y, left + xx);
  return out;
}

inline Frame center_crop(const Frame& f, int h, int w) {
  Frame out = f;
  out.planes = center_crop(f.planes, h, w);
  out.orig_h = h;
  out.orig_w = w;
  return out;
}

/// Brings a frame to 64-multiples per the geometry mode. Center cropping keeps
/// the largest 64-multiple that fits and records it as the original size.
inline Frame normalize_geometry(const Frame& f, GeometryMode g) {
  const int h = f.planes.height(), w = f.planes.width();
  if (h > 65535 || w > 65535) throw std::invalid_argument("frame larger than 65535 pixels per side is not supported");
  if (g == GeometryMode::kPad64) return pad_to_multiple(f, 64);
  const int ch = h / 64 * 64, cw = w / 64 * 64;
  if (ch == 0 || cw == 0)
    throw std::invalid_argument("center_crop cannot handle " + std::to_string(w) + "x" + std::to_string(h) +
                                ": smaller than 64 pixels; use geometry_mode=pad64");
  return center_crop(f, ch, cw);
}

// ---------------------------------------------------------------------------
// PNG (8-bit RGB)

inline void write_png(const std::string& path, const Tensor<float>& rgb) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw std::runtime_error("cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("libpng error writing " + path);
  }
  const int h = rgb.height(), w = rgb.width();
  png_init_io(png, fp);
  png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<uint8_t> row(size_t(w) * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        row[size_t(x) * 3 + c] = static_cast<uint8_t>(std::lround(std::clamp(rgb.at(c, y, x), 0.0f, 1.0f) * 255.0f));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

inline Tensor<float> read_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw std::runtime_error("cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw FormatError("libpng error reading " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info)), h = static_cast<int>(png_get_image_height(png, info));
  const size_t rb = png_get_rowbytes(png, info);
  std::vector<uint8_t> row(rb);
  Tensor<float> out(3, h, w);
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = row[size_t(x) * 3 + c] / 255.0f;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return out;
}

}  // namespace lrvc
