#include "llie/bridge.hpp"

#include "llie/errors.hpp"

namespace llie {

Tensor image_to_tensor(const ImageF32& img) { return images_to_tensor(std::span<const ImageF32>(&img, 1)); }

Tensor images_to_tensor(std::span<const ImageF32> batch) {
  if (batch.empty()) throw ShapeError("images_to_tensor: empty batch");
  const auto& first = batch.front();
  const std::int64_t c = first.channels, h = first.height, w = first.width;
  Tensor t = Tensor::zeros({static_cast<std::int64_t>(batch.size()), c, h, w});
  auto out = t.mutable_data();
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const auto& img = batch[n];
    validate(img);
    if (img.channels != c || img.height != h || img.width != w)
      throw ShapeError("images_to_tensor: batch images differ in shape");
    const std::int64_t plane = h * w;
    float* base = out.data() + static_cast<std::int64_t>(n) * c * plane;
    for (std::int64_t i = 0; i < plane; ++i)
      for (std::int64_t k = 0; k < c; ++k) base[k * plane + i] = img.data[i * c + k];
  }
  return t;
}

ImageF32 tensor_to_image(const Tensor& t, std::int64_t index) {
  if (t.rank() != 4) throw ShapeError("tensor_to_image: expected [N, C, H, W], got " + shape_str(t.shape()));
  if (index < 0 || index >= t.dim(0)) throw ShapeError("tensor_to_image: batch index out of range");
  const std::int64_t c = t.dim(1), h = t.dim(2), w = t.dim(3);
  ImageF32 img(static_cast<int>(w), static_cast<int>(h), static_cast<int>(c));
  const std::int64_t plane = h * w;
  const float* base = t.data().data() + index * c * plane;
  for (std::int64_t i = 0; i < plane; ++i)
    for (std::int64_t k = 0; k < c; ++k) img.data[i * c + k] = base[k * plane + i];
  return img;
}

}  // namespace llie
