#pragma once

#include "llie/tensor.hpp"

namespace llie {

// All ops record a backward node when recording is enabled and any input
// requires grad. Layout for image tensors is [N, C, H, W].

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul_scalar(const Tensor& a, float s);
// Gradient passes only where 0 < x < 1.
Tensor clamp01(const Tensor& x);

// Exact GELU, x * Phi(x).
Tensor gelu(const Tensor& x);

Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor slice_channels(const Tensor& x, std::int64_t first, std::int64_t count);
Tensor crop(const Tensor& x, std::int64_t top, std::int64_t left, std::int64_t height, std::int64_t width);
// Mirror padding without edge repeat; pads wider than the image fold back.
Tensor pad_reflect(const Tensor& x, std::int64_t top, std::int64_t bottom, std::int64_t left, std::int64_t right);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// mean(|pred - target|)
Tensor l1_loss(const Tensor& pred, const Tensor& target);

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

// Cross-correlation with zero padding. weight is [Cout, Cin/groups, kH, kW];
// bias may be undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions opt = {});

// While alive, convolutions on this thread accumulate in double and round
// once per output. Roughly 40% slower; meant for finite-difference checks,
// where float32 accumulation noise would otherwise swamp small gradients.
class PreciseConvGuard {
 public:
  PreciseConvGuard();
  ~PreciseConvGuard();
  PreciseConvGuard(const PreciseConvGuard&) = delete;
  PreciseConvGuard& operator=(const PreciseConvGuard&) = delete;

 private:
  bool previous_;
};
bool precise_conv();

inline constexpr float kGroupNormEps = 1e-5f;

// Per (sample, group) normalization with population variance, then a
// per-channel affine transform.
Tensor group_norm(const Tensor& x, int num_groups, const Tensor& gain, const Tensor& bias,
                  float eps = kGroupNormEps);

// Doubles H and W; output pixel i samples the input at (i + 0.5) / 2 - 0.5,
// clamped to the edge.
Tensor upsample_bilinear_x2(const Tensor& x);

}  // namespace llie
