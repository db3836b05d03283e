#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include <llie/image.hpp>
#include <llie/ops.hpp>
#include <llie/rng.hpp>
#include <llie/tensor.hpp>
#include <llie/train.hpp>
#include <llie/unet.hpp>

namespace llie::testing {

namespace fs = std::filesystem;

// Removes itself on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "llie") {
    Rng rng(std::hash<std::string>{}(tag) ^ reinterpret_cast<std::uintptr_t>(this));
    for (;;) {
      path_ = fs::temp_directory_path() / (tag + "-" + std::to_string(rng.next_u64() % 1000000000));
      if (fs::create_directory(path_)) break;
    }
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  std::string str() const { return path_.string(); }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<float> v(static_cast<std::size_t>(numel_of(shape)));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return Tensor::from_vector(shape, std::move(v));
}

inline ImageU8 random_u8(int w, int h, int c, Rng& rng) {
  ImageU8 img(w, h, c);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

inline ImageU8 constant_u8(int w, int h, int c, std::uint8_t v) {
  return ImageU8(w, h, c, v);
}

// ---- synthetic paired data --------------------------------------------------

// A smooth colour pattern and a dark, colour-cast, gamma-bent copy of it,
// both quantized to bytes.
inline ImagePair synthetic_pair(int index, int size = 64) {
  const double ph = 0.7 * index;
  ImageU8 gt(size, size, 3);
  ImageU8 low = gt;
  const double cast[3] = {1.0, 0.85, 1.1};
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double u = double(x) / size, v = double(y) / size;
      for (int c = 0; c < 3; ++c) {
        const double g = 0.5 + 0.3 * std::sin(2 * std::numbers::pi * (u + 0.5 * v) + ph + 2.0 * c) +
                         0.15 * std::cos(2 * std::numbers::pi * (2 * v - u) + 0.5 * c);
        const double l = 0.2 * std::pow(g, 1.3) * cast[c];
        const std::size_t k = (std::size_t(y) * size + x) * 3 + c;
        gt.data[k] = static_cast<std::uint8_t>(std::lround(std::clamp(g, 0.0, 1.0) * 255));
        low.data[k] = static_cast<std::uint8_t>(std::lround(std::clamp(l, 0.0, 1.0) * 255));
      }
    }
  }
  return {"pair" + std::to_string(index) + ".png", to_f32(low), to_f32(gt)};
}

inline std::vector<ImagePair> synthetic_pairs(int n, int size = 64) {
  std::vector<ImagePair> out;
  for (int i = 0; i < n; ++i) out.push_back(synthetic_pair(i, size));
  return out;
}

// Writes root/low/*.png and root/gt/*.png.
inline void write_pairs(const fs::path& root, const std::vector<ImagePair>& pairs) {
  fs::create_directories(root / "low");
  fs::create_directories(root / "gt");
  for (const auto& p : pairs) {
    write_png((root / "low" / p.name).string(), to_u8(p.low));
    write_png((root / "gt" / p.name).string(), to_u8(p.gt));
  }
}

// ---- finite-difference gradient oracle ---------------------------------------

// Entries of one tensor to probe. An empty list means every entry.
struct Probe {
  std::string name;
  Tensor tensor;
  std::vector<std::int64_t> entries;
};

struct GradCheck {
  // max over probes of ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double rel_error = 0.0;
  // the same ratio with every probed entry pooled into one vector
  double pooled_rel_error = 0.0;
  std::string worst;
  std::size_t entries = 0;
};

// Compares reverse-mode gradients of L = sum(f() * R), R a fixed random
// projection, against central differences of L accumulated in double.
// f must read the probed tensors' current values on every call.
// Convolutions run in double-accumulation mode for both sides.
inline GradCheck gradcheck(const std::function<Tensor()>& f, std::vector<Probe> probes, Rng& rng,
                           double eps = 1e-3) {
  PreciseConvGuard precise;
  Tensor shape_probe;
  {
    NoGradGuard ng;
    shape_probe = f();
  }
  std::vector<double> r(static_cast<std::size_t>(shape_probe.numel()));
  for (auto& x : r) x = rng.uniform(-1.0, 1.0);

  auto project = [&r](const Tensor& out) {
    double acc = 0.0;
    auto d = out.data();
    for (std::size_t i = 0; i < r.size(); ++i) acc += double(d[i]) * r[i];
    return acc;
  };

  for (auto& p : probes) {
    p.tensor.set_requires_grad(true);
    p.tensor.zero_grad();
  }
  {
    std::vector<float> rf(r.begin(), r.end());
    const Tensor out = f();
    const Tensor loss = sum(mul(out, Tensor::from_vector(out.shape(), std::move(rf))));
    backward(loss);
  }

  GradCheck result;
  double all_d2 = 0.0, all_a2 = 0.0, all_n2 = 0.0;
  NoGradGuard ng;
  for (auto& p : probes) {
    std::vector<std::int64_t> idx = p.entries;
    if (idx.empty())
      for (std::int64_t i = 0; i < p.tensor.numel(); ++i) idx.push_back(i);
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    auto vals = p.tensor.mutable_data();
    const auto grad = p.tensor.grad();
    for (const auto i : idx) {
      const float orig = vals[i];
      const float hi = static_cast<float>(orig + eps);
      const float lo = static_cast<float>(orig - eps);
      vals[i] = hi;
      const double lp = project(f());
      vals[i] = lo;
      const double lm = project(f());
      vals[i] = orig;
      const double numeric = (lp - lm) / (double(hi) - double(lo));
      const double analytic = grad.empty() ? 0.0 : grad[i];
      diff2 += (analytic - numeric) * (analytic - numeric);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
    }
    all_d2 += diff2;
    all_a2 += a2;
    all_n2 += n2;
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
    const double rel = std::sqrt(diff2) / denom;
    result.entries += idx.size();
    if (rel >= result.rel_error) {
      result.rel_error = rel;
      result.worst = p.name;
    }
  }
  result.pooled_rel_error = std::sqrt(all_d2) / std::max({std::sqrt(all_a2), std::sqrt(all_n2), 1e-12});
  return result;
}

// ---- model helpers ------------------------------------------------------------

// Overwrites the zero-initialized head so the network output depends on
// every other parameter.
inline void randomize_head(DwUNet& model, Rng& rng, double scale = 0.05) {
  for (const char* n : {"head.weight", "head.bias"})
    for (auto& v : model.parameter(n).mutable_data()) v = static_cast<float>(rng.uniform(-scale, scale));
}

// Gradcheck of l1_loss(forward(x), target) against a sampled fraction of
// every parameter tensor (at least one entry each).
//
// The step is wider than for single ops: float32 activations put a rounding
// floor of roughly 3e-6 under the loss of the full network, and that floor
// divided by 2*eps is the bulk of the error. Measured on Tiny, the pooled
// error falls as 1/eps up to 1e-2 with no sign of truncation error; at 3e-2
// steps start crossing the L1 kinks.
inline GradCheck unet_gradcheck(DwUNet& model, const Tensor& x, double fraction, Rng& rng, double eps = 1e-2) {
  Tensor target;
  {
    NoGradGuard ng;
    target = model.forward(x).clone();
  }
  // keep the L1 kink out of reach of the finite differences
  for (auto& v : target.mutable_data()) v += rng.coin() ? 0.2f : -0.2f;

  std::vector<Probe> probes;
  for (auto& p : model.parameters()) {
    const auto n = p.value.numel();
    const auto k = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::llround(fraction * double(n))));
    std::vector<std::int64_t> idx;
    for (std::int64_t i = 0; i < k; ++i) idx.push_back(static_cast<std::int64_t>(rng.below(std::uint64_t(n))));
    probes.push_back({p.name, p.value, std::move(idx)});
  }
  return gradcheck([&] { return l1_loss(model.forward(x), target); }, std::move(probes), rng, eps);
}

}  // namespace llie::testing
