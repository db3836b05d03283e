#include "llie/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>

#include "llie/errors.hpp"

namespace llie {

using detail::accumulate_grad;
using detail::ensure_grad;
using detail::record;
using detail::should_record;

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_rank4(const Tensor& x, const char* op) {
  if (x.rank() != 4) throw ShapeError(std::string(op) + ": expected [N, C, H, W], got " + shape_str(x.shape()));
}

struct Dims4 {
  std::int64_t n, c, h, w;
};

Dims4 dims4(const Tensor& x) { return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)}; }

std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  auto o = out.mutable_data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (should_record({&a, &b})) {
    record(out, [a, b, out = out.impl()] {
      if (a.requires_grad()) accumulate_grad(*a.impl(), out->grad);
      if (b.requires_grad()) accumulate_grad(*b.impl(), out->grad);
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  auto o = out.mutable_data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  if (should_record({&a, &b})) {
    record(out, [a, b, out = out.impl()] {
      if (a.requires_grad()) accumulate_grad(*a.impl(), out->grad);
      if (b.requires_grad()) {
        auto& g = ensure_grad(*b.impl());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= out->grad[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  auto o = out.mutable_data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  if (should_record({&a, &b})) {
    record(out, [a, b, out = out.impl()] {
      const auto& go = out->grad;
      if (a.requires_grad()) {
        auto& g = ensure_grad(*a.impl());
        auto y = b.data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * y[i];
      }
      if (b.requires_grad()) {
        auto& g = ensure_grad(*b.impl());
        auto x = a.data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * x[i];
      }
    });
  }
  return out;
}

Tensor mul_scalar(const Tensor& a, float s) {
  Tensor out = Tensor::zeros(a.shape());
  auto o = out.mutable_data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * s;
  if (should_record({&a})) {
    record(out, [a, s, out = out.impl()] {
      auto& g = ensure_grad(*a.impl());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out->grad[i] * s;
    });
  }
  return out;
}

Tensor clamp01(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  auto o = out.mutable_data();
  auto v = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::clamp(v[i], 0.0f, 1.0f);
  if (should_record({&x})) {
    record(out, [x, out = out.impl()] {
      auto& g = ensure_grad(*x.impl());
      auto v = x.data();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (v[i] > 0.0f && v[i] < 1.0f) g[i] += out->grad[i];
    });
  }
  return out;
}

namespace {

// Eigen peels unaligned heads and tails of a mapped buffer onto scalar code,
// and its scalar and packet erf/exp differ in the last bits. Copying through
// aligned fixed-size blocks sends every element down the packet path, so the
// result no longer depends on where the allocator put the buffer.
constexpr Eigen::Index kGeluBlock = 256;
using GeluBlock = Eigen::Array<float, kGeluBlock, 1>;

template <class F>
void gelu_blocks(std::int64_t n, F&& f) {
  for (std::int64_t i = 0; i < n; i += kGeluBlock) f(i, std::min<std::int64_t>(kGeluBlock, n - i));
}

GeluBlock load_block(const float* p, std::int64_t len) {
  GeluBlock b = GeluBlock::Zero();
  std::copy_n(p, len, b.data());
  return b;
}

}  // namespace

Tensor gelu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const std::int64_t n = x.numel();
  constexpr float kInvSqrt2 = static_cast<float>(1.0 / std::numbers::sqrt2);
  // Phi(x), kept for the backward pass.
  auto cdf_buf = std::make_shared<detail::ScratchBuffer>(static_cast<std::size_t>(n));
  const float* src = x.data().data();
  float* dst = out.mutable_data().data();
  gelu_blocks(n, [&](std::int64_t i, std::int64_t len) {
    const GeluBlock v = load_block(src + i, len);
    const GeluBlock cdf = 0.5f * (1.0f + (v * kInvSqrt2).erf());
    const GeluBlock y = v * cdf;
    std::copy_n(cdf.data(), len, cdf_buf->data() + i);
    std::copy_n(y.data(), len, dst + i);
  });
  if (should_record({&x})) {
    record(out, [x, cdf_buf, out = out.impl()] {
      constexpr float kInvSqrt2Pi = static_cast<float>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
      auto& g = ensure_grad(*x.impl());
      const float* xs = x.data().data();
      const float* gy = out->grad.data();
      gelu_blocks(static_cast<std::int64_t>(g.size()), [&](std::int64_t i, std::int64_t len) {
        const GeluBlock t = load_block(xs + i, len);
        const GeluBlock d = load_block(gy + i, len) * (load_block(cdf_buf->data() + i, len) +
                                                        t * kInvSqrt2Pi * (-0.5f * t * t).exp());
        for (std::int64_t j = 0; j < len; ++j) g[i + j] += d[j];
      });
    });
  }
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank4(a, "concat_channels");
  require_rank4(b, "concat_channels");
  const auto da = dims4(a);
  const auto db = dims4(b);
  if (da.n != db.n || da.h != db.h || da.w != db.w)
    throw ShapeError("concat_channels: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::int64_t plane = da.h * da.w;
  const std::int64_t c = da.c + db.c;
  Tensor out = Tensor::zeros({da.n, c, da.h, da.w});
  auto o = out.mutable_data();
  auto x = a.data();
  auto y = b.data();
  for (std::int64_t n = 0; n < da.n; ++n) {
    std::copy_n(x.begin() + n * da.c * plane, da.c * plane, o.begin() + n * c * plane);
    std::copy_n(y.begin() + n * db.c * plane, db.c * plane, o.begin() + (n * c + da.c) * plane);
  }
  if (should_record({&a, &b})) {
    record(out, [a, b, da, db, plane, c, out = out.impl()] {
      const auto& go = out->grad;
      for (std::int64_t n = 0; n < da.n; ++n) {
        if (a.requires_grad()) {
          auto& g = ensure_grad(*a.impl());
          for (std::int64_t i = 0; i < da.c * plane; ++i) g[n * da.c * plane + i] += go[n * c * plane + i];
        }
        if (b.requires_grad()) {
          auto& g = ensure_grad(*b.impl());
          for (std::int64_t i = 0; i < db.c * plane; ++i) g[n * db.c * plane + i] += go[(n * c + da.c) * plane + i];
        }
      }
    });
  }
  return out;
}

Tensor slice_channels(const Tensor& x, std::int64_t first, std::int64_t count) {
  require_rank4(x, "slice_channels");
  const auto d = dims4(x);
  if (first < 0 || count < 1 || first + count > d.c)
    throw ShapeError("slice_channels: [" + std::to_string(first) + ", " + std::to_string(first + count) +
                     ") outside " + shape_str(x.shape()));
  const std::int64_t plane = d.h * d.w;
  Tensor out = Tensor::zeros({d.n, count, d.h, d.w});
  auto o = out.mutable_data();
  auto v = x.data();
  for (std::int64_t n = 0; n < d.n; ++n)
    std::copy_n(v.begin() + (n * d.c + first) * plane, count * plane, o.begin() + n * count * plane);
  if (should_record({&x})) {
    record(out, [x, d, first, count, plane, out = out.impl()] {
      auto& g = ensure_grad(*x.impl());
      for (std::int64_t n = 0; n < d.n; ++n)
        for (std::int64_t i = 0; i < count * plane; ++i) g[(n * d.c + first) * plane + i] += out->grad[n * count * plane + i];
    });
  }
  return out;
}

Tensor crop(const Tensor& x, std::int64_t top, std::int64_t left, std::int64_t height, std::int64_t width) {
  require_rank4(x, "crop");
  const auto d = dims4(x);
  if (top < 0 || left < 0 || height < 1 || width < 1 || top + height > d.h || left + width > d.w)
    throw ShapeError("crop: window (" + std::to_string(top) + ", " + std::to_string(left) + ", " +
                     std::to_string(height) + ", " + std::to_string(width) + ") outside " + shape_str(x.shape()));
  Tensor out = Tensor::zeros({d.n, d.c, height, width});
  auto o = out.mutable_data();
  auto v = x.data();
  for (std::int64_t nc = 0; nc < d.n * d.c; ++nc)
    for (std::int64_t y = 0; y < height; ++y)
      std::copy_n(v.begin() + (nc * d.h + top + y) * d.w + left, width, o.begin() + (nc * height + y) * width);
  if (should_record({&x})) {
    record(out, [x, d, top, left, height, width, out = out.impl()] {
      auto& g = ensure_grad(*x.impl());
      for (std::int64_t nc = 0; nc < d.n * d.c; ++nc)
        for (std::int64_t y = 0; y < height; ++y)
          for (std::int64_t xx = 0; xx < width; ++xx)
            g[(nc * d.h + top + y) * d.w + left + xx] += out->grad[(nc * height + y) * width + xx];
    });
  }
  return out;
}

Tensor pad_reflect(const Tensor& x, std::int64_t top, std::int64_t bottom, std::int64_t left, std::int64_t right) {
  require_rank4(x, "pad_reflect");
  if (top < 0 || bottom < 0 || left < 0 || right < 0) throw ShapeError("pad_reflect: negative padding");
  const auto d = dims4(x);
  if (d.h < 1 || d.w < 1) throw ShapeError("pad_reflect: empty input " + shape_str(x.shape()));
  const std::int64_t oh = d.h + top + bottom;
  const std::int64_t ow = d.w + left + right;
  std::vector<std::int64_t> row_src(static_cast<std::size_t>(oh));
  std::vector<std::int64_t> col_src(static_cast<std::size_t>(ow));
  for (std::int64_t y = 0; y < oh; ++y) row_src[y] = reflect_index(y - top, d.h);
  for (std::int64_t xx = 0; xx < ow; ++xx) col_src[xx] = reflect_index(xx - left, d.w);

  Tensor out = Tensor::zeros({d.n, d.c, oh, ow});
  auto o = out.mutable_data();
  auto v = x.data();
  for (std::int64_t nc = 0; nc < d.n * d.c; ++nc)
    for (std::int64_t y = 0; y < oh; ++y)
      for (std::int64_t xx = 0; xx < ow; ++xx) o[(nc * oh + y) * ow + xx] = v[(nc * d.h + row_src[y]) * d.w + col_src[xx]];
  if (should_record({&x})) {
    record(out, [x, d, oh, ow, row_src = std::move(row_src), col_src = std::move(col_src), out = out.impl()] {
      auto& g = ensure_grad(*x.impl());
      for (std::int64_t nc = 0; nc < d.n * d.c; ++nc)
        for (std::int64_t y = 0; y < oh; ++y)
          for (std::int64_t xx = 0; xx < ow; ++xx)
            g[(nc * d.h + row_src[y]) * d.w + col_src[xx]] += out->grad[(nc * oh + y) * ow + xx];
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  if (should_record({&x})) {
    record(out, [x, out = out.impl()] {
      auto& g = ensure_grad(*x.impl());
      const float go = out->grad[0];
      for (auto& e : g) e += go;
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean of empty tensor");
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  const double n = static_cast<double>(x.numel());
  Tensor out = Tensor::scalar(static_cast<float>(acc / n));
  if (should_record({&x})) {
    record(out, [x, n, out = out.impl()] {
      auto& g = ensure_grad(*x.impl());
      const float go = static_cast<float>(out->grad[0] / n);
      for (auto& e : g) e += go;
    });
  }
  return out;
}

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "l1_loss");
  if (pred.numel() == 0) throw ShapeError("l1_loss of empty tensors");
  auto p = pred.data();
  auto t = target.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(static_cast<double>(p[i]) - t[i]);
  const double n = static_cast<double>(p.size());
  Tensor out = Tensor::scalar(static_cast<float>(acc / n));
  if (should_record({&pred, &target})) {
    record(out, [pred, target, n, out = out.impl()] {
      const float scale = static_cast<float>(out->grad[0] / n);
      auto p = pred.data();
      auto t = target.data();
      auto sign = [](float d) { return d > 0.0f ? 1.0f : (d < 0.0f ? -1.0f : 0.0f); };
      if (pred.requires_grad()) {
        auto& g = ensure_grad(*pred.impl());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * sign(p[i] - t[i]);
      }
      if (target.requires_grad()) {
        auto& g = ensure_grad(*target.impl());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= scale * sign(p[i] - t[i]);
      }
    });
  }
  return out;
}

Tensor group_norm(const Tensor& x, int num_groups, const Tensor& gain, const Tensor& bias, float eps) {
  require_rank4(x, "group_norm");
  const auto d = dims4(x);
  if (num_groups < 1 || d.c % num_groups != 0)
    throw ConfigError("group_norm: " + std::to_string(d.c) + " channels not divisible into " +
                      std::to_string(num_groups) + " groups");
  if (gain.numel() != d.c || bias.numel() != d.c)
    throw ShapeError("group_norm: gain/bias must have " + std::to_string(d.c) + " entries, got " +
                     shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
  const std::int64_t cg = d.c / num_groups;
  const std::int64_t plane = d.h * d.w;
  const std::int64_t m = cg * plane;
  const std::int64_t n_stats = d.n * num_groups;

  std::vector<float> mean_v(static_cast<std::size_t>(n_stats));
  std::vector<float> rstd_v(static_cast<std::size_t>(n_stats));
  Tensor out = Tensor::zeros(x.shape());
  auto o = out.mutable_data();
  auto v = x.data();
  auto ga = gain.data();
  auto be = bias.data();
  for (std::int64_t s = 0; s < n_stats; ++s) {
    const float* base = v.data() + s * m;
    double acc = 0.0;
    for (std::int64_t i = 0; i < m; ++i) acc += base[i];
    const double mu = acc / static_cast<double>(m);
    double var = 0.0;
    for (std::int64_t i = 0; i < m; ++i) {
      const double dlt = base[i] - mu;
      var += dlt * dlt;
    }
    var /= static_cast<double>(m);
    const double rstd = 1.0 / std::sqrt(var + eps);
    mean_v[s] = static_cast<float>(mu);
    rstd_v[s] = static_cast<float>(rstd);
    const std::int64_t c0 = (s % num_groups) * cg;
    for (std::int64_t c = 0; c < cg; ++c) {
      // center before scaling; folding mu into the bias cancels badly
      // when the mean dominates the spread
      const float a = static_cast<float>(rstd) * ga[c0 + c];
      const float b = be[c0 + c];
      const float mu_f = static_cast<float>(mu);
      const float* src = base + c * plane;
      float* dst = o.data() + s * m + c * plane;
      for (std::int64_t i = 0; i < plane; ++i) dst[i] = (src[i] - mu_f) * a + b;
    }
  }

  if (should_record({&x, &gain, &bias})) {
    record(out, [x, gain, bias, d, num_groups, cg, plane, m, n_stats, mean_v = std::move(mean_v),
                 rstd_v = std::move(rstd_v), out = out.impl()] {
      const auto& go = out->grad;
      auto v = x.data();
      auto ga = gain.data();
      std::vector<float>* gx = x.requires_grad() ? &ensure_grad(*x.impl()) : nullptr;
      std::vector<float>* gg = gain.requires_grad() ? &ensure_grad(*gain.impl()) : nullptr;
      std::vector<float>* gb = bias.requires_grad() ? &ensure_grad(*bias.impl()) : nullptr;
      for (std::int64_t s = 0; s < n_stats; ++s) {
        const std::int64_t c0 = (s % num_groups) * cg;
        const double mu = mean_v[s];
        const double rstd = rstd_v[s];
        double sum_dxhat = 0.0;
        double sum_dxhat_xhat = 0.0;
        for (std::int64_t c = 0; c < cg; ++c) {
          const float* src = v.data() + s * m + c * plane;
          const float* g = go.data() + s * m + c * plane;
          double dgain = 0.0;
          double dbias = 0.0;
          for (std::int64_t i = 0; i < plane; ++i) {
            const double xhat = (src[i] - mu) * rstd;
            dgain += g[i] * xhat;
            dbias += g[i];
          }
          if (gg) (*gg)[c0 + c] += static_cast<float>(dgain);
          if (gb) (*gb)[c0 + c] += static_cast<float>(dbias);
          sum_dxhat += dbias * ga[c0 + c];
          sum_dxhat_xhat += dgain * ga[c0 + c];
        }
        if (!gx) continue;
        const double inv_m = 1.0 / static_cast<double>(m);
        for (std::int64_t c = 0; c < cg; ++c) {
          const float* src = v.data() + s * m + c * plane;
          const float* g = go.data() + s * m + c * plane;
          float* dst = gx->data() + s * m + c * plane;
          const double gam = ga[c0 + c];
          for (std::int64_t i = 0; i < plane; ++i) {
            const double xhat = (src[i] - mu) * rstd;
            const double dxhat = g[i] * gam;
            dst[i] += static_cast<float>(rstd * (dxhat - inv_m * sum_dxhat - xhat * inv_m * sum_dxhat_xhat));
          }
        }
      }
    });
  }
  return out;
}

namespace {

struct Tap {
  std::int64_t i0, i1;
  float w1;  // weight of i1; i0 gets 1 - w1
};

std::vector<Tap> upsample_taps(std::int64_t in, std::int64_t out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  for (std::int64_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) / 2.0 - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::int64_t>(std::floor(src));
    const std::int64_t i1 = std::min(i0 + 1, in - 1);
    taps[i] = {i0, i1, static_cast<float>(src - static_cast<double>(i0))};
  }
  return taps;
}

}  // namespace

Tensor upsample_bilinear_x2(const Tensor& x) {
  require_rank4(x, "upsample_bilinear_x2");
  const auto d = dims4(x);
  if (d.h < 1 || d.w < 1) throw ShapeError("upsample_bilinear_x2: empty input " + shape_str(x.shape()));
  const std::int64_t oh = d.h * 2;
  const std::int64_t ow = d.w * 2;
  auto ty = upsample_taps(d.h, oh);
  auto tx = upsample_taps(d.w, ow);
  Tensor out = Tensor::zeros({d.n, d.c, oh, ow});
  auto o = out.mutable_data();
  auto v = x.data();
  for (std::int64_t nc = 0; nc < d.n * d.c; ++nc) {
    const float* src = v.data() + nc * d.h * d.w;
    float* dst = o.data() + nc * oh * ow;
    for (std::int64_t y = 0; y < oh; ++y) {
      const Tap& a = ty[y];
      const float* r0 = src + a.i0 * d.w;
      const float* r1 = src + a.i1 * d.w;
      for (std::int64_t xx = 0; xx < ow; ++xx) {
        const Tap& b = tx[xx];
        const float top = r0[b.i0] * (1.0f - b.w1) + r0[b.i1] * b.w1;
        const float bot = r1[b.i0] * (1.0f - b.w1) + r1[b.i1] * b.w1;
        dst[y * ow + xx] = top * (1.0f - a.w1) + bot * a.w1;
      }
    }
  }
  if (should_record({&x})) {
    record(out, [x, d, oh, ow, ty = std::move(ty), tx = std::move(tx), out = out.impl()] {
      auto& g = ensure_grad(*x.impl());
      for (std::int64_t nc = 0; nc < d.n * d.c; ++nc) {
        float* dst = g.data() + nc * d.h * d.w;
        const float* go = out->grad.data() + nc * oh * ow;
        for (std::int64_t y = 0; y < oh; ++y) {
          const Tap& a = ty[y];
          for (std::int64_t xx = 0; xx < ow; ++xx) {
            const Tap& b = tx[xx];
            const float gv = go[y * ow + xx];
            dst[a.i0 * d.w + b.i0] += gv * (1.0f - a.w1) * (1.0f - b.w1);
            dst[a.i0 * d.w + b.i1] += gv * (1.0f - a.w1) * b.w1;
            dst[a.i1 * d.w + b.i0] += gv * a.w1 * (1.0f - b.w1);
            dst[a.i1 * d.w + b.i1] += gv * a.w1 * b.w1;
          }
        }
      }
    });
  }
  return out;
}

}  // namespace llie
