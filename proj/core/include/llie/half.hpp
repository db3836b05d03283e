#pragma once

#include <cstdint>

namespace llie {

// IEEE 754 binary16 conversion, round-to-nearest-even; overflow saturates to
// infinity and NaN stays NaN.
std::uint16_t float_to_half(float value);
float half_to_float(std::uint16_t bits);

}  // namespace llie
