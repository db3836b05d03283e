#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "llie/image.hpp"
#include "llie/tensor.hpp"

namespace llie {

struct GammaSpec {
  double gamma = 0.5;
  bool operator==(const GammaSpec&) const = default;
};

struct HistEqSpec {
  bool per_channel = false;  // default: luma CDF applied as an RGB gain
  bool operator==(const HistEqSpec&) const = default;
};

struct ClaheSpec {
  double clip_limit = 2.0;  // multiple of the mean bin count; +inf disables clipping
  int tiles = 8;            // tiles x tiles grid
  bool operator==(const ClaheSpec&) const = default;
};

// A trained 3-channel DwUNet checkpoint used as a frozen preprocessor.
struct ExternalSpec {
  std::string checkpoint;
  bool operator==(const ExternalSpec&) const = default;
};

using PreprocessorKind = std::variant<GammaSpec, HistEqSpec, ClaheSpec, ExternalSpec>;

// Accepted forms: gamma[:<g>], he[:channel], clahe[:<clip>[:<tiles>]], ext:<path>.
PreprocessorKind parse_preprocessor(std::string_view spec);
// Canonical spec string; parse_preprocessor(to_spec(p)) == p.
std::string to_spec(const PreprocessorKind& p);
// Throws ConfigError when gamma <= 0, clip_limit < 1 or tiles < 1.
void validate(const PreprocessorKind& p);

struct PreprocPair {
  PreprocessorKind first = GammaSpec{};
  PreprocessorKind second = ClaheSpec{};
  bool operator==(const PreprocPair&) const = default;
};

// "<spec>+<spec>"
PreprocPair parse_preproc_pair(std::string_view spec);
std::string to_spec(const PreprocPair& p);

ImageF32 apply_gamma(const ImageF32& img, double gamma);
ImageF32 apply_hist_eq(const ImageF32& img, bool per_channel = false);
ImageF32 apply_clahe(const ImageF32& img, double clip_limit = 2.0, int tiles = 8);
// CLAHE on a plane of 8-bit levels (row-major, width x height). Returns the
// remapped levels as floats in [0,255], bilinearly blended between tiles.
std::vector<float> clahe_levels(std::span<const std::uint8_t> levels, int width, int height, double clip_limit,
                                int tiles);

ImageF32 apply_preprocessor(const ImageF32& img, const PreprocessorKind& p);

// Planes [input1 | original | input2]; the network's global residual is
// read from residual_slot (0 = input1).
struct NineChannelInput {
  ImageF32 input1;
  ImageF32 original;
  ImageF32 input2;
  int residual_slot = 0;

  ImageF32 stacked() const;
};

NineChannelInput assemble_nine_channel(const ImageF32& low, const PreprocessorKind& p1, const PreprocessorKind& p2);
inline NineChannelInput assemble_nine_channel(const ImageF32& low, const PreprocPair& pair) {
  return assemble_nine_channel(low, pair.first, pair.second);
}

}  // namespace llie
