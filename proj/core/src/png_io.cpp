#include <png.h>

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "llie/errors.hpp"
#include "llie/image.hpp"

namespace llie {

namespace {

constexpr std::array<std::uint8_t, 8> kSignature{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

std::uint32_t read_be32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

struct Header {
  std::uint32_t width;
  std::uint32_t height;
  int bit_depth;
  int color_type;
};

// libpng's simplified reader silently converts 16-bit, palette and alpha
// inputs, so the header is checked here first.
Header check_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 + 8 + 13 + 4) throw DataError("malformed PNG: file too short");
  if (!std::equal(kSignature.begin(), kSignature.end(), bytes.begin())) throw DataError("malformed PNG: bad signature");
  const std::uint8_t* ihdr = bytes.data() + 8;
  if (read_be32(ihdr) != 13 || std::memcmp(ihdr + 4, "IHDR", 4) != 0)
    throw DataError("malformed PNG: first chunk is not IHDR");
  Header h{read_be32(ihdr + 8), read_be32(ihdr + 12), ihdr[16], ihdr[17]};
  if (h.width == 0 || h.height == 0) throw DataError("malformed PNG: zero dimension");
  if (h.bit_depth != 8) throw DataError("unsupported bit depth " + std::to_string(h.bit_depth) + " (only 8-bit PNG)");
  if (h.color_type != PNG_COLOR_TYPE_GRAY && h.color_type != PNG_COLOR_TYPE_RGB)
    throw DataError("unsupported color type " + std::to_string(h.color_type) + " (only gray and RGB)");
  return h;
}

}  // namespace

ImageU8 decode_png(std::span<const std::uint8_t> bytes) {
  const Header header = check_header(bytes);

  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    throw DataError(std::string("malformed PNG: ") + image.message);

  const bool gray = header.color_type == PNG_COLOR_TYPE_GRAY;
  image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  ImageU8 out(static_cast<int>(image.width), static_cast<int>(image.height), gray ? 1 : 3);
  if (!png_image_finish_read(&image, nullptr, out.data.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw DataError("malformed PNG: " + msg);
  }
  return out;
}

std::vector<std::uint8_t> encode_png(const ImageU8& img) {
  validate(img);
  if (img.width == 0 || img.height == 0) throw ShapeError("encode_png: empty image");
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;

  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.data.data(), 0, nullptr))
    throw DataError(std::string("PNG encode failed: ") + image.message);
  std::vector<std::uint8_t> buf(size);
  if (!png_image_write_to_memory(&image, buf.data(), &size, 0, img.data.data(), 0, nullptr))
    throw DataError(std::string("PNG encode failed: ") + image.message);
  buf.resize(size);
  return buf;
}

ImageU8 read_png(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_png(bytes);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

void write_png(const std::string& path, const ImageU8& img) {
  const auto bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path);
}

}  // namespace llie
