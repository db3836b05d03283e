#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace llie {

// Row-major interleaved 8-bit raster. Channels is 1 (gray) or 3 (RGB).
struct ImageU8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> data;

  ImageU8() = default;
  ImageU8(int w, int h, int c, std::uint8_t fill = 0);

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  std::uint8_t& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  std::uint8_t at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }

  bool operator==(const ImageU8&) const = default;
};

// Row-major interleaved float raster, nominal range [0,1]. Any channel
// count is representable (the 9-plane network input uses 9).
struct ImageF32 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;

  ImageF32() = default;
  ImageF32(int w, int h, int c, float fill = 0.0f);

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  float& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }

  bool operator==(const ImageF32&) const = default;
};

// Throws ShapeError when the buffer length or channel count is inconsistent.
void validate(const ImageU8& img);
void validate(const ImageF32& img);

ImageF32 to_f32(const ImageU8& img);

// Clamp to [0,1], scale by 255, round half away from zero. NaN maps to 0
// and is reported once per call on stderr.
ImageU8 to_u8(const ImageF32& img);

std::uint8_t to_byte(float v);

// Rec. 601 luma weights.
inline constexpr float kLumaR = 0.299f;
inline constexpr float kLumaG = 0.587f;
inline constexpr float kLumaB = 0.114f;

ImageF32 rgb_to_gray(const ImageF32& img);

// CIE Lab planes (D65, sRGB transfer). L in [0,100].
struct LabImage {
  int width = 0;
  int height = 0;
  std::vector<float> L;
  std::vector<float> a;
  std::vector<float> b;
};

LabImage rgb_to_lab(const ImageF32& img);
// Out-of-gamut results are clamped to [0,1].
ImageF32 lab_to_rgb(const LabImage& lab);

// Channel slicing / stacking over interleaved float images.
ImageF32 extract_channels(const ImageF32& img, int first, int count);
ImageF32 stack_channels(std::span<const ImageF32* const> parts);

// PNG codec (8-bit gray and RGB only).
ImageU8 decode_png(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png(const ImageU8& img);

ImageU8 read_png(const std::string& path);
void write_png(const std::string& path, const ImageU8& img);

}  // namespace llie
