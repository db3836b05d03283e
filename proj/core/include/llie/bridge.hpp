#pragma once

#include <span>

#include "llie/image.hpp"
#include "llie/tensor.hpp"

namespace llie {

// Interleaved HWC images <-> planar [N, C, H, W] tensors.
Tensor image_to_tensor(const ImageF32& img);
Tensor images_to_tensor(std::span<const ImageF32> batch);
ImageF32 tensor_to_image(const Tensor& t, std::int64_t index = 0);

}  // namespace llie
