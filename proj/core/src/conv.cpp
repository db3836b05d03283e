#include <Eigen/Core>

#include <algorithm>

#include "llie/errors.hpp"
#include "llie/ops.hpp"

namespace llie {

using detail::ensure_grad;

namespace {

thread_local bool t_precise = false;

using MatR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

struct ConvGeom {
  std::int64_t n, cin, h, w;
  std::int64_t cout, kh, kw;
  std::int64_t oh, ow;
  int stride, pad, groups;

  std::int64_t cin_g() const { return cin / groups; }
  std::int64_t cout_g() const { return cout / groups; }
  std::int64_t out_plane() const { return oh * ow; }
  std::int64_t in_plane() const { return h * w; }
};

ConvGeom check_conv(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv2dOptions& opt) {
  auto fail = [&](const std::string& why) {
    std::string msg = "conv2d: " + why + " (input " + shape_str(x.shape()) + ", weight " +
                      (weight.defined() ? shape_str(weight.shape()) : "undefined");
    if (bias.defined()) msg += ", bias " + shape_str(bias.shape());
    msg += ", stride " + std::to_string(opt.stride) + ", padding " + std::to_string(opt.padding) + ", groups " +
           std::to_string(opt.groups) + ")";
    throw ShapeError(msg);
  };
  if (!weight.defined() || x.rank() != 4 || weight.rank() != 4) fail("expected rank-4 input and weight");
  if (opt.stride < 1 || opt.padding < 0 || opt.groups < 1) fail("invalid stride/padding/groups");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), weight.dim(3), 0, 0,
             opt.stride, opt.padding, opt.groups};
  if (g.cin % g.groups != 0 || g.cout % g.groups != 0) fail("channels not divisible by groups");
  if (weight.dim(1) != g.cin / g.groups) fail("weight input channels do not match input / groups");
  if (bias.defined() && bias.numel() != g.cout) fail("bias size does not match output channels");
  g.oh = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.ow = (g.w + 2 * g.pad - g.kw) / g.stride + 1;
  if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw || g.oh < 1 || g.ow < 1) fail("kernel larger than padded input");
  return g;
}

bool is_pointwise(const ConvGeom& g) {
  return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0 && g.groups == 1;
}

bool is_depthwise(const ConvGeom& g) { return g.groups == g.cin && g.cout == g.cin; }

// Range of output columns whose input column ox*stride - pad + k lies in [0, w).
std::pair<std::int64_t, std::int64_t> valid_range(std::int64_t k, const ConvGeom& g, std::int64_t in, std::int64_t out) {
  std::int64_t lo = 0;
  while (lo < out && lo * g.stride - g.pad + k < 0) ++lo;
  std::int64_t hi = out;
  while (hi > lo && (hi - 1) * g.stride - g.pad + k >= in) --hi;
  return {lo, hi};
}

// ---- depthwise ----------------------------------------------------------

// One double accumulator per output, seeded with what y already holds.
void depthwise_forward_precise(const ConvGeom& g, const float* x, const float* w, float* y) {
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t c = 0; c < g.cin; ++c) {
      const float* src = x + (n * g.cin + c) * g.in_plane();
      float* dst = y + (n * g.cout + c) * g.out_plane();
      const float* k = w + c * g.kh * g.kw;
      for (std::int64_t oy = 0; oy < g.oh; ++oy) {
        for (std::int64_t ox = 0; ox < g.ow; ++ox) {
          double acc = dst[oy * g.ow + ox];
          for (std::int64_t ky = 0; ky < g.kh; ++ky) {
            const std::int64_t iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.h) continue;
            for (std::int64_t kx = 0; kx < g.kw; ++kx) {
              const std::int64_t ix = ox * g.stride - g.pad + kx;
              if (ix < 0 || ix >= g.w) continue;
              acc += double(k[ky * g.kw + kx]) * src[iy * g.w + ix];
            }
          }
          dst[oy * g.ow + ox] = static_cast<float>(acc);
        }
      }
    }
  }
}

void depthwise_forward(const ConvGeom& g, const float* x, const float* w, float* y) {
  if (t_precise) return depthwise_forward_precise(g, x, w, y);
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t c = 0; c < g.cin; ++c) {
      const float* src = x + (n * g.cin + c) * g.in_plane();
      float* dst = y + (n * g.cout + c) * g.out_plane();
      const float* k = w + c * g.kh * g.kw;
      for (std::int64_t ky = 0; ky < g.kh; ++ky) {
        const auto [oy0, oy1] = valid_range(ky, g, g.h, g.oh);
        for (std::int64_t kx = 0; kx < g.kw; ++kx) {
          const float wv = k[ky * g.kw + kx];
          const auto [ox0, ox1] = valid_range(kx, g, g.w, g.ow);
          for (std::int64_t oy = oy0; oy < oy1; ++oy) {
            const float* row = src + (oy * g.stride - g.pad + ky) * g.w - g.pad + kx;
            float* out = dst + oy * g.ow;
            if (g.stride == 1) {
              for (std::int64_t ox = ox0; ox < ox1; ++ox) out[ox] += wv * row[ox];
            } else {
              for (std::int64_t ox = ox0; ox < ox1; ++ox) out[ox] += wv * row[ox * g.stride];
            }
          }
        }
      }
    }
  }
}

void depthwise_backward(const ConvGeom& g, const float* x, const float* w, const float* gy, float* gx, float* gw) {
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t c = 0; c < g.cin; ++c) {
      const float* src = x + (n * g.cin + c) * g.in_plane();
      float* dsrc = gx ? gx + (n * g.cin + c) * g.in_plane() : nullptr;
      const float* dy = gy + (n * g.cout + c) * g.out_plane();
      const float* k = w + c * g.kh * g.kw;
      for (std::int64_t ky = 0; ky < g.kh; ++ky) {
        const auto [oy0, oy1] = valid_range(ky, g, g.h, g.oh);
        for (std::int64_t kx = 0; kx < g.kw; ++kx) {
          const float wv = k[ky * g.kw + kx];
          const auto [ox0, ox1] = valid_range(kx, g, g.w, g.ow);
          double acc = 0.0;
          for (std::int64_t oy = oy0; oy < oy1; ++oy) {
            const std::int64_t off = (oy * g.stride - g.pad + ky) * g.w - g.pad + kx;
            const float* row = src + off;
            const float* drow = dy + oy * g.ow;
            float part = 0.0f;
            if (g.stride == 1) {
#pragma omp simd reduction(+ : part)
              for (std::int64_t ox = ox0; ox < ox1; ++ox) part += row[ox] * drow[ox];
              if (dsrc) {
                float* drs = dsrc + off;
                for (std::int64_t ox = ox0; ox < ox1; ++ox) drs[ox] += wv * drow[ox];
              }
            } else {
              for (std::int64_t ox = ox0; ox < ox1; ++ox) part += row[ox * g.stride] * drow[ox];
              if (dsrc) {
                float* drs = dsrc + off;
                for (std::int64_t ox = ox0; ox < ox1; ++ox) drs[ox * g.stride] += wv * drow[ox];
              }
            }
            acc += part;
          }
          if (gw) gw[c * g.kh * g.kw + ky * g.kw + kx] += static_cast<float>(acc);
        }
      }
    }
  }
}

// ---- im2col -------------------------------------------------------------

// col is [cin_g * kh * kw, (r1 - r0) * ow] for channels [c0, c0 + cin_g) and output rows [r0, r1).
void im2col(const ConvGeom& g, const float* x, std::int64_t c0, std::int64_t r0, std::int64_t r1, float* col) {
  const std::int64_t width = (r1 - r0) * g.ow;
  std::int64_t row = 0;
  for (std::int64_t c = 0; c < g.cin_g(); ++c) {
    const float* src = x + (c0 + c) * g.in_plane();
    for (std::int64_t ky = 0; ky < g.kh; ++ky) {
      auto [oy0, oy1] = valid_range(ky, g, g.h, g.oh);
      oy0 = std::max(oy0, r0);
      oy1 = std::max(oy0, std::min(oy1, r1));
      for (std::int64_t kx = 0; kx < g.kw; ++kx, ++row) {
        float* dst = col + row * width;
        const auto [ox0, ox1] = valid_range(kx, g, g.w, g.ow);
        std::fill(dst, dst + (oy0 - r0) * g.ow, 0.0f);
        for (std::int64_t oy = oy0; oy < oy1; ++oy) {
          const float* s = src + (oy * g.stride - g.pad + ky) * g.w - g.pad + kx;
          float* d = dst + (oy - r0) * g.ow;
          std::fill(d, d + ox0, 0.0f);
          if (g.stride == 1)
            std::copy(s + ox0, s + ox1, d + ox0);
          else
            for (std::int64_t ox = ox0; ox < ox1; ++ox) d[ox] = s[ox * g.stride];
          std::fill(d + ox1, d + g.ow, 0.0f);
        }
        std::fill(dst + (oy1 - r0) * g.ow, dst + width, 0.0f);
      }
    }
  }
}

void col2im(const ConvGeom& g, const float* col, std::int64_t c0, std::int64_t r0, std::int64_t r1, float* gx) {
  const std::int64_t width = (r1 - r0) * g.ow;
  std::int64_t row = 0;
  for (std::int64_t c = 0; c < g.cin_g(); ++c) {
    float* dst = gx + (c0 + c) * g.in_plane();
    for (std::int64_t ky = 0; ky < g.kh; ++ky) {
      auto [oy0, oy1] = valid_range(ky, g, g.h, g.oh);
      oy0 = std::max(oy0, r0);
      oy1 = std::min(oy1, r1);
      for (std::int64_t kx = 0; kx < g.kw; ++kx, ++row) {
        const float* src = col + row * width;
        const auto [ox0, ox1] = valid_range(kx, g, g.w, g.ow);
        for (std::int64_t oy = oy0; oy < oy1; ++oy) {
          float* d = dst + (oy * g.stride - g.pad + ky) * g.w - g.pad + kx;
          const float* s = src + (oy - r0) * g.ow;
          if (g.stride == 1)
            for (std::int64_t ox = ox0; ox < ox1; ++ox) d[ox] += s[ox];
          else
            for (std::int64_t ox = ox0; ox < ox1; ++ox) d[ox * g.stride] += s[ox];
        }
      }
    }
  }
}

// Output rows per im2col band, sized so the column block stays in L2.
std::int64_t band_rows(const ConvGeom& g) {
  constexpr std::int64_t kBandFloats = 1 << 17;
  const std::int64_t k = g.cin_g() * g.kh * g.kw;
  return std::clamp<std::int64_t>(kBandFloats / (k * g.ow), 1, g.oh);
}

using Strided = Eigen::OuterStride<>;
using SMapR = Eigen::Map<MatR, 0, Strided>;
using CSMapR = Eigen::Map<const MatR, 0, Strided>;

void gemm_forward(const ConvGeom& g, const float* x, const float* w, float* y) {
  const std::int64_t k = g.cin_g() * g.kh * g.kw;
  const std::int64_t plane = g.out_plane();
  const bool direct = is_pointwise(g);
  const std::int64_t band = direct ? g.oh : band_rows(g);
  detail::ScratchBuffer col(direct ? 0 : static_cast<std::size_t>(k * band * g.ow));
  for (std::int64_t n = 0; n < g.n; ++n) {
    const float* xn = x + n * g.cin * g.in_plane();
    for (std::int64_t grp = 0; grp < g.groups; ++grp) {
      CMapR wm(w + grp * g.cout_g() * k, g.cout_g(), k);
      float* yg = y + (n * g.cout + grp * g.cout_g()) * plane;
      for (std::int64_t r0 = 0; r0 < g.oh; r0 += band) {
        const std::int64_t r1 = std::min(r0 + band, g.oh);
        const std::int64_t width = (r1 - r0) * g.ow;
        const float* colp = xn + r0 * g.ow;
        std::int64_t col_stride = plane;
        if (!direct) {
          im2col(g, xn, grp * g.cin_g(), r0, r1, col.data());
          colp = col.data();
          col_stride = width;
        }
        CSMapR cm(colp, k, width, Strided(col_stride));
        SMapR ym(yg + r0 * g.ow, g.cout_g(), width, Strided(plane));
        if (t_precise)
          ym = (ym.cast<double>() + wm.cast<double>() * cm.cast<double>()).cast<float>();
        else
          ym.noalias() += wm * cm;
      }
    }
  }
}

void gemm_backward(const ConvGeom& g, const float* x, const float* w, const float* gy, float* gx, float* gw) {
  const std::int64_t k = g.cin_g() * g.kh * g.kw;
  const std::int64_t plane = g.out_plane();
  const bool direct = is_pointwise(g);
  if (direct) {
    for (std::int64_t n = 0; n < g.n; ++n) {
      CMapR dym(gy + n * g.cout * plane, g.cout, plane);
      if (gw) {
        CMapR cm(x + n * g.cin * g.in_plane(), k, plane);
        MapR dwm(gw, g.cout, k);
        if (t_precise)
          dwm = (dwm.cast<double>() + dym.cast<double>() * cm.cast<double>().transpose()).cast<float>();
        else
          dwm.noalias() += dym * cm.transpose();
      }
      if (gx) {
        CMapR wm(w, g.cout, k);
        MapR dxm(gx + n * g.cin * g.in_plane(), k, plane);
        if (t_precise)
          dxm = (dxm.cast<double>() + wm.cast<double>().transpose() * dym.cast<double>()).cast<float>();
        else
          dxm.noalias() += wm.transpose() * dym;
      }
    }
    return;
  }
  const std::int64_t band = band_rows(g);
  detail::ScratchBuffer col(gw ? static_cast<std::size_t>(k * band * g.ow) : 0);
  detail::ScratchBuffer dcol(gx ? static_cast<std::size_t>(k * band * g.ow) : 0);
  for (std::int64_t n = 0; n < g.n; ++n) {
    const float* xn = x + n * g.cin * g.in_plane();
    for (std::int64_t grp = 0; grp < g.groups; ++grp) {
      CMapR wm(w + grp * g.cout_g() * k, g.cout_g(), k);
      const float* dyg = gy + (n * g.cout + grp * g.cout_g()) * plane;
      for (std::int64_t r0 = 0; r0 < g.oh; r0 += band) {
        const std::int64_t r1 = std::min(r0 + band, g.oh);
        const std::int64_t width = (r1 - r0) * g.ow;
        CSMapR dym(dyg + r0 * g.ow, g.cout_g(), width, Strided(plane));
        if (gw) {
          im2col(g, xn, grp * g.cin_g(), r0, r1, col.data());
          CMapR cm(col.data(), k, width);
          MapR dwm(gw + grp * g.cout_g() * k, g.cout_g(), k);
          if (t_precise)
            dwm = (dwm.cast<double>() + dym.cast<double>() * cm.cast<double>().transpose()).cast<float>();
          else
            dwm.noalias() += dym * cm.transpose();
        }
        if (gx) {
          MapR dcm(dcol.data(), k, width);
          if (t_precise)
            dcm = (wm.cast<double>().transpose() * dym.cast<double>()).cast<float>();
          else
            dcm.noalias() = wm.transpose() * dym;
          col2im(g, dcol.data(), grp * g.cin_g(), r0, r1, gx + n * g.cin * g.in_plane());
        }
      }
    }
  }
}

}  // namespace

PreciseConvGuard::PreciseConvGuard() : previous_(t_precise) { t_precise = true; }
PreciseConvGuard::~PreciseConvGuard() { t_precise = previous_; }
bool precise_conv() { return t_precise; }

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions opt) {
  const ConvGeom g = check_conv(x, weight, bias, opt);
  Tensor out = Tensor::zeros({g.n, g.cout, g.oh, g.ow});
  float* y = out.mutable_data().data();
  const std::int64_t plane = g.out_plane();
  if (bias.defined()) {
    auto b = bias.data();
    for (std::int64_t n = 0; n < g.n; ++n)
      for (std::int64_t c = 0; c < g.cout; ++c) std::fill_n(y + (n * g.cout + c) * plane, plane, b[c]);
  }
  const bool dw = is_depthwise(g) && !is_pointwise(g);
  if (dw) {
    depthwise_forward(g, x.data().data(), weight.data().data(), y);
  } else {
    gemm_forward(g, x.data().data(), weight.data().data(), y);
  }

  if (detail::should_record({&x, &weight, &bias})) {
    detail::record(out, [x, weight, bias, g, dw, out = out.impl()] {
      const float* gy = out->grad.data();
      float* gx = x.requires_grad() ? ensure_grad(*x.impl()).data() : nullptr;
      float* gw = weight.requires_grad() ? ensure_grad(*weight.impl()).data() : nullptr;
      if (bias.defined() && bias.requires_grad()) {
        auto& gb = ensure_grad(*bias.impl());
        const std::int64_t plane = g.out_plane();
        for (std::int64_t c = 0; c < g.cout; ++c) {
          double acc = 0.0;
          for (std::int64_t n = 0; n < g.n; ++n) {
            const float* row = gy + (n * g.cout + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) acc += row[i];
          }
          gb[c] += static_cast<float>(acc);
        }
      }
      if (!gx && !gw) return;
      if (dw) {
        depthwise_backward(g, x.data().data(), weight.data().data(), gy, gx, gw);
      } else {
        gemm_backward(g, x.data().data(), weight.data().data(), gy, gx, gw);
      }
    });
  }
  return out;
}

}  // namespace llie
