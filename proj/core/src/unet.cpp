#include "llie/unet.hpp"

#include <cmath>

#include "llie/errors.hpp"
#include "llie/rng.hpp"

namespace llie {

ModelConfig ModelConfig::preset(std::string_view name) {
  if (name == "tiny") return tiny();
  if (name == "mid") return mid();
  if (name == "large") return large();
  throw ConfigError("unknown model preset '" + std::string(name) + "' (expected tiny, mid or large)");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (f1 < 1) fail("f1 must be >= 1");
  if (n_blocks < 1) fail("n_blocks must be >= 1");
  if (expansion < 1) fail("expansion must be >= 1");
  if (gn_groups < 1) fail("gn_groups must be >= 1");
  if (in_channels < 1 || out_channels < 1) fail("channel counts must be >= 1");
  if (f1 % gn_groups != 0)
    fail("f1 = " + std::to_string(f1) + " is not divisible by gn_groups = " + std::to_string(gn_groups));
  if (in_channels < out_channels) fail("in_channels must cover at least one residual slot of out_channels");
}

class DwUNet::Builder {
 public:
  Builder(DwUNet& m, std::uint64_t seed) : m_(m), rng_(seed) {}

  Conv conv(const std::string& name, int cin, int cout, int k, int stride, int groups, bool zero = false) {
    Conv c;
    c.opt = {stride, k / 2, groups};
    const int fan_in = (cin / groups) * k * k;
    Tensor w = Tensor::zeros({cout, cin / groups, k, k}, true);
    if (!zero) {
      const double bound = std::sqrt(6.0 / fan_in);
      for (auto& v : w.mutable_data()) v = static_cast<float>(rng_.uniform(-bound, bound));
    }
    c.weight = add(name + ".weight", w);
    c.bias = add(name + ".bias", Tensor::zeros({cout}, true));
    return c;
  }

  Block block(const std::string& name, int c) {
    const int e = c * m_.config_.expansion;
    Block b;
    b.expand = conv(name + ".expand", c, e, 1, 1, 1);
    b.depthwise = conv(name + ".dw", e, e, 3, 1, e);
    b.norm_gain = add(name + ".norm.gain", Tensor::full({e}, 1.0f, true));
    b.norm_bias = add(name + ".norm.bias", Tensor::zeros({e}, true));
    b.project = conv(name + ".project", e, c, 1, 1, 1);
    return b;
  }

  std::vector<Block> blocks(const std::string& name, int c) {
    std::vector<Block> out;
    for (int i = 0; i < m_.config_.n_blocks; ++i) out.push_back(block(name + "." + std::to_string(i), c));
    return out;
  }

 private:
  std::size_t add(std::string name, Tensor t) {
    m_.params_.push_back({std::move(name), std::move(t)});
    return m_.params_.size() - 1;
  }

  DwUNet& m_;
  Rng rng_;
};

DwUNet DwUNet::build(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  DwUNet m;
  m.config_ = config;
  Builder b(m, seed);
  const int f1 = config.f1;
  const int widths[3] = {f1, 2 * f1, 4 * f1};

  m.stem_ = b.conv("stem", config.in_channels, f1, 3, 1, 1);
  m.enc_[0] = b.blocks("enc1", widths[0]);
  m.down_[0] = b.conv("down1", widths[0], widths[1], 3, 2, 1);
  m.enc_[1] = b.blocks("enc2", widths[1]);
  m.down_[1] = b.conv("down2", widths[1], widths[2], 3, 2, 1);
  m.enc_[2] = b.blocks("enc3", widths[2]);
  for (int lvl = 1; lvl >= 0; --lvl) {
    auto& d = m.dec_[1 - lvl];
    const std::string name = "dec" + std::to_string(lvl + 1);
    d.up = b.conv(name + ".up", widths[lvl + 1], widths[lvl], 3, 1, 1);
    d.fuse = b.conv(name + ".fuse", 2 * widths[lvl], widths[lvl], 1, 1, 1);
    d.blocks = b.blocks(name, widths[lvl]);
  }
  m.head_ = b.conv("head", f1, config.out_channels, 3, 1, 1, /*zero=*/true);
  return m;
}

Tensor& DwUNet::parameter(std::string_view name) {
  for (auto& p : params_)
    if (p.name == name) return p.value;
  throw ConfigError("no parameter named '" + std::string(name) + "'");
}

const Tensor& DwUNet::parameter(std::string_view name) const {
  return const_cast<DwUNet*>(this)->parameter(name);
}

std::int64_t DwUNet::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

void DwUNet::set_requires_grad(bool on) {
  for (auto& p : params_) p.value.set_requires_grad(on);
}

void DwUNet::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

Tensor DwUNet::run_conv(const Conv& c, const Tensor& x) const {
  return conv2d(x, params_[c.weight].value, params_[c.bias].value, c.opt);
}

Tensor DwUNet::run_block(const Block& b, const Tensor& x) const {
  Tensor y = gelu(run_conv(b.expand, x));
  y = run_conv(b.depthwise, y);
  y = group_norm(y, config_.gn_groups, params_[b.norm_gain].value, params_[b.norm_bias].value);
  y = gelu(y);
  y = run_conv(b.project, y);
  return add(x, y);
}

Tensor DwUNet::run_blocks(const std::vector<Block>& blocks, Tensor x) const {
  for (const auto& b : blocks) x = run_block(b, x);
  return x;
}

Tensor DwUNet::forward_correction(const Tensor& input) const {
  if (input.rank() != 4 || input.dim(1) != config_.in_channels)
    throw ShapeError("DwUNet: expected input [N, " + std::to_string(config_.in_channels) + ", H, W], got " +
                     shape_str(input.shape()));
  const std::int64_t h = input.dim(2);
  const std::int64_t w = input.dim(3);
  if (h < 1 || w < 1) throw ShapeError("DwUNet: empty spatial dims " + shape_str(input.shape()));
  const std::int64_t ph = (4 - h % 4) % 4;
  const std::int64_t pw = (4 - w % 4) % 4;
  Tensor x = (ph || pw) ? pad_reflect(input, 0, ph, 0, pw) : input;

  x = gelu(run_conv(stem_, x));
  Tensor skip1 = run_blocks(enc_[0], x);
  x = run_conv(down_[0], skip1);
  Tensor skip2 = run_blocks(enc_[1], x);
  x = run_conv(down_[1], skip2);
  x = run_blocks(enc_[2], x);

  const Tensor* skips[2] = {&skip2, &skip1};
  for (int i = 0; i < 2; ++i) {
    const auto& d = dec_[i];
    x = run_conv(d.up, upsample_bilinear_x2(x));
    x = run_conv(d.fuse, concat_channels(x, *skips[i]));
    x = run_blocks(d.blocks, x);
  }
  x = run_conv(head_, x);
  if (ph || pw) x = crop(x, 0, 0, h, w);
  return x;
}

Tensor DwUNet::forward(const Tensor& input, int residual_slot) const {
  const int first = residual_slot * config_.out_channels;
  if (residual_slot < 0 || first + config_.out_channels > config_.in_channels)
    throw ConfigError("residual slot " + std::to_string(residual_slot) + " outside " +
                      std::to_string(config_.in_channels) + " input channels");
  Tensor correction = forward_correction(input);
  return add(correction, slice_channels(input, first, config_.out_channels));
}

Tensor DwUNet::infer(const Tensor& input, int residual_slot) const {
  NoGradGuard guard;
  return clamp01(forward(input, residual_slot));
}

ParamTable count_params(const DwUNet& model) {
  ParamTable table;
  for (const auto& p : model.parameters()) {
    const auto dot = p.name.rfind('.');
    std::string layer = dot == std::string::npos ? p.name : p.name.substr(0, dot);
    if (table.rows.empty() || table.rows.back().layer != layer) table.rows.push_back({layer, 0});
    table.rows.back().count += p.value.numel();
    table.total += p.value.numel();
  }
  return table;
}

}  // namespace llie
