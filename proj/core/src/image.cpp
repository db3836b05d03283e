#include "llie/image.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iostream>
#include <string>

#include "llie/errors.hpp"

namespace llie {

ImageU8::ImageU8(int w, int h, int c, std::uint8_t fill)
    : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

ImageF32::ImageF32(int w, int h, int c, float fill)
    : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

namespace {

std::string dims(int w, int h, int c) {
  return std::to_string(w) + "x" + std::to_string(h) + "x" + std::to_string(c);
}

template <typename Img>
void validate_impl(const Img& img, bool any_channels) {
  if (img.width < 0 || img.height < 0) throw ShapeError("negative image dimensions " + dims(img.width, img.height, img.channels));
  if (!any_channels && img.channels != 1 && img.channels != 3)
    throw ShapeError("unsupported channel count " + std::to_string(img.channels));
  if (any_channels && img.channels < 1) throw ShapeError("image must have at least one channel");
  if (img.data.size() != static_cast<std::size_t>(img.width) * img.height * img.channels)
    throw ShapeError("image buffer holds " + std::to_string(img.data.size()) + " values, expected " +
                     dims(img.width, img.height, img.channels));
}

// sRGB (D65) <-> XYZ. White point is taken as the row sums of the forward
// matrix so that RGB (1,1,1) lands exactly on a = b = 0.
constexpr std::array<std::array<double, 3>, 3> kRgbToXyz{{
    {0.4124564, 0.3575761, 0.1804375},
    {0.2126729, 0.7151522, 0.0721750},
    {0.0193339, 0.1191920, 0.9503041},
}};

struct ColorTables {
  std::array<std::array<double, 3>, 3> xyz_to_rgb{};
  std::array<double, 3> white{};

  ColorTables() {
    const auto& m = kRgbToXyz;
    for (int r = 0; r < 3; ++r) white[r] = m[r][0] + m[r][1] + m[r][2];
    const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                       m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                       m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    auto& inv = xyz_to_rgb;
    inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
    inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
    inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
    inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
    inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
    inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
    inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
    inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
    inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
  }
};

const ColorTables& color_tables() {
  static const ColorTables t;
  return t;
}

double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

double linear_to_srgb(double c) {
  return c <= 0.0031308 ? c * 12.92 : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

constexpr double kDelta = 6.0 / 29.0;

double lab_f(double t) {
  return t > kDelta * kDelta * kDelta ? std::cbrt(t) : t / (3.0 * kDelta * kDelta) + 4.0 / 29.0;
}

double lab_f_inv(double t) {
  return t > kDelta ? t * t * t : 3.0 * kDelta * kDelta * (t - 4.0 / 29.0);
}

}  // namespace

void validate(const ImageU8& img) { validate_impl(img, false); }
void validate(const ImageF32& img) { validate_impl(img, true); }

ImageF32 to_f32(const ImageU8& img) {
  validate(img);
  ImageF32 out(img.width, img.height, img.channels);
  for (std::size_t i = 0; i < img.data.size(); ++i) out.data[i] = static_cast<float>(img.data[i] / 255.0);
  return out;
}

std::uint8_t to_byte(float v) {
  if (std::isnan(v)) return 0;
  const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
  return static_cast<std::uint8_t>(std::round(c * 255.0));
}

ImageU8 to_u8(const ImageF32& img) {
  validate(img);
  ImageU8 out(img.width, img.height, img.channels);
  std::size_t nans = 0;
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    if (std::isnan(img.data[i])) ++nans;
    out.data[i] = to_byte(img.data[i]);
  }
  if (nans > 0) std::cerr << "warning: to_u8 mapped " << nans << " NaN value(s) to 0\n";
  return out;
}

ImageF32 rgb_to_gray(const ImageF32& img) {
  validate(img);
  if (img.channels == 1) throw ShapeError("rgb_to_gray: image is already grayscale");
  if (img.channels != 3) throw ShapeError("rgb_to_gray: expected 3 channels, got " + std::to_string(img.channels));
  ImageF32 out(img.width, img.height, 1);
  const std::size_t n = img.pixel_count();
  for (std::size_t i = 0; i < n; ++i) {
    const float* p = &img.data[i * 3];
    out.data[i] = kLumaR * p[0] + kLumaG * p[1] + kLumaB * p[2];
  }
  return out;
}

LabImage rgb_to_lab(const ImageF32& img) {
  validate(img);
  if (img.channels != 3) throw ShapeError("rgb_to_lab: expected 3 channels, got " + std::to_string(img.channels));
  const auto& t = color_tables();
  const auto& m = kRgbToXyz;
  LabImage lab;
  lab.width = img.width;
  lab.height = img.height;
  const std::size_t n = img.pixel_count();
  lab.L.resize(n);
  lab.a.resize(n);
  lab.b.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = srgb_to_linear(img.data[i * 3 + 0]);
    const double g = srgb_to_linear(img.data[i * 3 + 1]);
    const double b = srgb_to_linear(img.data[i * 3 + 2]);
    const double fx = lab_f((m[0][0] * r + m[0][1] * g + m[0][2] * b) / t.white[0]);
    const double fy = lab_f((m[1][0] * r + m[1][1] * g + m[1][2] * b) / t.white[1]);
    const double fz = lab_f((m[2][0] * r + m[2][1] * g + m[2][2] * b) / t.white[2]);
    lab.L[i] = static_cast<float>(116.0 * fy - 16.0);
    lab.a[i] = static_cast<float>(500.0 * (fx - fy));
    lab.b[i] = static_cast<float>(200.0 * (fy - fz));
  }
  return lab;
}

ImageF32 lab_to_rgb(const LabImage& lab) {
  const std::size_t n = static_cast<std::size_t>(lab.width) * lab.height;
  if (lab.L.size() != n || lab.a.size() != n || lab.b.size() != n)
    throw ShapeError("lab_to_rgb: plane sizes do not match " + std::to_string(lab.width) + "x" +
                     std::to_string(lab.height));
  const auto& t = color_tables();
  const auto& inv = t.xyz_to_rgb;
  ImageF32 out(lab.width, lab.height, 3);
  for (std::size_t i = 0; i < n; ++i) {
    const double fy = (lab.L[i] + 16.0) / 116.0;
    const double fx = fy + lab.a[i] / 500.0;
    const double fz = fy - lab.b[i] / 200.0;
    const double x = t.white[0] * lab_f_inv(fx);
    const double y = t.white[1] * lab_f_inv(fy);
    const double z = t.white[2] * lab_f_inv(fz);
    for (int c = 0; c < 3; ++c) {
      const double lin = inv[c][0] * x + inv[c][1] * y + inv[c][2] * z;
      const double s = linear_to_srgb(std::max(lin, 0.0));
      out.data[i * 3 + c] = static_cast<float>(std::clamp(s, 0.0, 1.0));
    }
  }
  return out;
}

ImageF32 extract_channels(const ImageF32& img, int first, int count) {
  validate(img);
  if (first < 0 || count < 1 || first + count > img.channels)
    throw ShapeError("extract_channels: range [" + std::to_string(first) + ", " + std::to_string(first + count) +
                     ") outside " + std::to_string(img.channels) + " channels");
  ImageF32 out(img.width, img.height, count);
  const std::size_t n = img.pixel_count();
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < count; ++c) out.data[i * count + c] = img.data[i * img.channels + first + c];
  return out;
}

ImageF32 stack_channels(std::span<const ImageF32* const> parts) {
  if (parts.empty()) throw ShapeError("stack_channels: nothing to stack");
  const int w = parts[0]->width;
  const int h = parts[0]->height;
  int total = 0;
  for (const ImageF32* p : parts) {
    validate(*p);
    if (p->width != w || p->height != h)
      throw ShapeError("stack_channels: " + dims(p->width, p->height, p->channels) + " does not match " +
                       dims(w, h, parts[0]->channels));
    total += p->channels;
  }
  ImageF32 out(w, h, total);
  const std::size_t n = out.pixel_count();
  int offset = 0;
  for (const ImageF32* p : parts) {
    for (std::size_t i = 0; i < n; ++i)
      for (int c = 0; c < p->channels; ++c) out.data[i * total + offset + c] = p->data[i * p->channels + c];
    offset += p->channels;
  }
  return out;
}

}  // namespace llie
