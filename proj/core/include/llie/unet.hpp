#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "llie/ops.hpp"
#include "llie/tensor.hpp"

namespace llie {

struct ModelConfig {
  int f1 = 22;          // base channel width
  int n_blocks = 2;     // blocks per encoder level, bottleneck and decoder level
  int in_channels = 9;
  int out_channels = 3;
  int expansion = 4;    // pointwise expansion inside each block
  int gn_groups = 2;

  static ModelConfig tiny() { return {22, 2}; }
  static ModelConfig mid() { return {32, 3}; }
  static ModelConfig large() { return {48, 4}; }
  // "tiny" | "mid" | "large"; throws ConfigError otherwise.
  static ModelConfig preset(std::string_view name);

  // Throws ConfigError on divisibility / range violations.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

// 3-level depthwise-separable U-Net with a global residual:
//
//   stem 3x3 (in -> f1) + GELU
//   enc1: N blocks @ f1   -> down 3x3/s2 (f1 -> 2f1)
//   enc2: N blocks @ 2f1  -> down 3x3/s2 (2f1 -> 4f1)
//   enc3: N blocks @ 4f1  (bottleneck)
//   dec2: up x2, 3x3 (4f1 -> 2f1), concat enc2, 1x1 fuse (4f1 -> 2f1), N blocks
//   dec1: up x2, 3x3 (2f1 -> f1),  concat enc1, 1x1 fuse (2f1 -> f1),  N blocks
//   head 3x3 (f1 -> out), zero-initialized, plus the residual input slot.
//
// Block: 1x1 expand -> GELU -> depthwise 3x3 -> GroupNorm -> GELU -> 1x1 project, + skip.
class DwUNet {
 public:
  // Kaiming-uniform (fan-in) conv weights, zero biases, GroupNorm gain 1 / bias 0,
  // all-zero head.
  static DwUNet build(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::vector<NamedTensor>& parameters() { return params_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  Tensor& parameter(std::string_view name);
  const Tensor& parameter(std::string_view name) const;

  std::int64_t parameter_count() const;

  // Training path: unclamped, records when parameters require grad.
  // input is [N, in_channels, H, W]; any H, W >= 1 (reflect-padded to a
  // multiple of 4 internally and cropped back). The residual is channels
  // [3 * residual_slot, 3 * residual_slot + out_channels).
  Tensor forward(const Tensor& input, int residual_slot = 0) const;

  // The head output before the residual add (same padding / cropping).
  Tensor forward_correction(const Tensor& input) const;

  // Inference path: no recording, output clamped to [0,1].
  Tensor infer(const Tensor& input, int residual_slot = 0) const;

  void set_requires_grad(bool on);
  void zero_grad();

 private:
  struct Conv {
    std::size_t weight = 0;
    std::size_t bias = 0;
    Conv2dOptions opt;
  };
  struct Block {
    Conv expand;
    Conv depthwise;
    std::size_t norm_gain = 0;
    std::size_t norm_bias = 0;
    Conv project;
  };
  struct DecoderLevel {
    Conv up;
    Conv fuse;
    std::vector<Block> blocks;
  };

  class Builder;

  Tensor run_conv(const Conv& c, const Tensor& x) const;
  Tensor run_block(const Block& b, const Tensor& x) const;
  Tensor run_blocks(const std::vector<Block>& blocks, Tensor x) const;

  ModelConfig config_;
  std::vector<NamedTensor> params_;
  Conv stem_;
  std::vector<Block> enc_[3];
  Conv down_[2];
  DecoderLevel dec_[2];  // dec_[0] at 2f1, dec_[1] at f1
  Conv head_;
};

struct ParamRow {
  std::string layer;
  std::int64_t count = 0;
};

struct ParamTable {
  std::vector<ParamRow> rows;
  std::int64_t total = 0;
};

// One row per layer (parameters grouped by name prefix), in build order.
ParamTable count_params(const DwUNet& model);

}  // namespace llie
