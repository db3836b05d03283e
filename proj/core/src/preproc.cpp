#include "llie/preproc.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>

#include "llie/bridge.hpp"
#include "llie/checkpoint.hpp"
#include "llie/errors.hpp"

namespace llie {

namespace {

std::string format_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::array<char, 64> buf{};
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

double parse_number(std::string_view s, std::string_view spec) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError("preprocessor spec '" + std::string(spec) + "': '" + std::string(s) + "' is not a number");
  return v;
}

int parse_int(std::string_view s, std::string_view spec) {
  int v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError("preprocessor spec '" + std::string(spec) + "': '" + std::string(s) + "' is not an integer");
  return v;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t pos = 0;
  while (true) {
    const auto next = s.find(sep, pos);
    parts.push_back(s.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return parts;
}

void require_rgb(const ImageF32& img, const char* op) {
  validate(img);
  if (img.channels != 3)
    throw ShapeError(std::string(op) + ": expected 3-channel RGB, got " + std::to_string(img.channels) + " channels");
}

// Histogram-equalization level mapping:
//   v' = round((cdf(v) - cdf_min) / (n - cdf_min) * 255)
// where cdf_min is the cdf at the lowest occupied bin. Returns false when
// every count sits in one bin.
bool equalize(std::span<const double> hist, double n, std::array<float, 256>& map) {
  std::array<double, 256> cdf{};
  double run = 0.0;
  double cdf_min = -1.0;
  for (int v = 0; v < 256; ++v) {
    run += hist[v];
    cdf[v] = run;
    if (cdf_min < 0.0 && hist[v] > 0.0) cdf_min = run;
  }
  const double denom = n - cdf_min;
  if (cdf_min < 0.0 || denom <= 0.0) return false;
  for (int v = 0; v < 256; ++v)
    map[v] = static_cast<float>(std::round(std::max(0.0, cdf[v] - cdf_min) / denom * 255.0));
  return true;
}

struct ExternalCache {
  std::mutex mu;
  std::map<std::string, std::shared_ptr<const DwUNet>> models;

  std::shared_ptr<const DwUNet> get(const std::string& path) {
    std::lock_guard lock(mu);
    auto it = models.find(path);
    if (it != models.end()) return it->second;
    auto ck = load_checkpoint(path);
    if (ck.model.config().in_channels != 3 || ck.model.config().out_channels != 3)
      throw ConfigError("external preprocessor " + path + " must map 3 channels to 3 channels");
    auto model = std::make_shared<const DwUNet>(std::move(ck.model));
    models.emplace(path, model);
    return model;
  }
};

ExternalCache& external_cache() {
  static ExternalCache cache;
  return cache;
}

}  // namespace

PreprocessorKind parse_preprocessor(std::string_view spec) {
  const auto colon = spec.find(':');
  const std::string_view head = spec.substr(0, colon);
  const std::string_view rest = colon == std::string_view::npos ? std::string_view{} : spec.substr(colon + 1);
  const bool has_args = colon != std::string_view::npos;
  PreprocessorKind out;
  if (head == "gamma") {
    GammaSpec g;
    if (has_args) g.gamma = parse_number(rest, spec);
    out = g;
  } else if (head == "he") {
    HistEqSpec h;
    if (has_args) {
      if (rest != "channel") throw ConfigError("preprocessor spec '" + std::string(spec) + "': expected he or he:channel");
      h.per_channel = true;
    }
    out = h;
  } else if (head == "clahe") {
    ClaheSpec c;
    if (has_args) {
      const auto parts = split(rest, ':');
      if (parts.size() > 2) throw ConfigError("preprocessor spec '" + std::string(spec) + "': expected clahe:<clip>:<tiles>");
      c.clip_limit = parse_number(parts[0], spec);
      if (parts.size() == 2) c.tiles = parse_int(parts[1], spec);
    }
    out = c;
  } else if (head == "ext") {
    if (rest.empty()) throw ConfigError("preprocessor spec '" + std::string(spec) + "': expected ext:<checkpoint>");
    out = ExternalSpec{std::string(rest)};
  } else {
    throw ConfigError("unknown preprocessor '" + std::string(spec) +
                      "' (expected gamma:<g>, he, clahe:<clip>:<tiles> or ext:<path>)");
  }
  validate(out);
  return out;
}

std::string to_spec(const PreprocessorKind& p) {
  return std::visit(
      [](const auto& s) -> std::string {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, GammaSpec>) {
          return "gamma:" + format_number(s.gamma);
        } else if constexpr (std::is_same_v<T, HistEqSpec>) {
          return s.per_channel ? "he:channel" : "he";
        } else if constexpr (std::is_same_v<T, ClaheSpec>) {
          return "clahe:" + format_number(s.clip_limit) + ":" + std::to_string(s.tiles);
        } else {
          return "ext:" + s.checkpoint;
        }
      },
      p);
}

void validate(const PreprocessorKind& p) {
  if (const auto* g = std::get_if<GammaSpec>(&p)) {
    if (!(g->gamma > 0.0) || !std::isfinite(g->gamma))
      throw ConfigError("gamma must be a positive finite exponent, got " + format_number(g->gamma));
  } else if (const auto* c = std::get_if<ClaheSpec>(&p)) {
    if (!(c->clip_limit >= 1.0)) throw ConfigError("CLAHE clip limit must be >= 1, got " + format_number(c->clip_limit));
    if (c->tiles < 1) throw ConfigError("CLAHE tile grid must be >= 1, got " + std::to_string(c->tiles));
  }
}

PreprocPair parse_preproc_pair(std::string_view spec) {
  const auto plus = spec.find('+');
  if (plus == std::string_view::npos)
    throw ConfigError("preprocessor pair '" + std::string(spec) + "' must have the form <spec>+<spec>");
  return {parse_preprocessor(spec.substr(0, plus)), parse_preprocessor(spec.substr(plus + 1))};
}

std::string to_spec(const PreprocPair& p) { return to_spec(p.first) + "+" + to_spec(p.second); }

ImageF32 apply_gamma(const ImageF32& img, double gamma) {
  validate(img);
  validate(PreprocessorKind{GammaSpec{gamma}});
  ImageF32 out = img;
  for (auto& v : out.data) v = static_cast<float>(std::pow(std::clamp(static_cast<double>(v), 0.0, 1.0), gamma));
  return out;
}

ImageF32 apply_hist_eq(const ImageF32& img, bool per_channel) {
  require_rgb(img, "apply_hist_eq");
  const std::size_t n = img.pixel_count();
  ImageF32 out = img;
  if (n == 0) return out;

  if (per_channel) {
    for (int c = 0; c < 3; ++c) {
      std::array<double, 256> hist{};
      for (std::size_t i = 0; i < n; ++i) hist[to_byte(img.data[i * 3 + c])] += 1.0;
      std::array<float, 256> map{};
      if (!equalize(hist, static_cast<double>(n), map)) continue;
      for (std::size_t i = 0; i < n; ++i) out.data[i * 3 + c] = map[to_byte(img.data[i * 3 + c])] / 255.0f;
    }
    return out;
  }

  std::vector<std::uint8_t> luma(n);
  std::array<double, 256> hist{};
  for (std::size_t i = 0; i < n; ++i) {
    const float* p = &img.data[i * 3];
    luma[i] = to_byte(kLumaR * p[0] + kLumaG * p[1] + kLumaB * p[2]);
    hist[luma[i]] += 1.0;
  }
  std::array<float, 256> map{};
  if (!equalize(hist, static_cast<double>(n), map)) return out;
  for (std::size_t i = 0; i < n; ++i) {
    const float gain = luma[i] == 0 ? 0.0f : map[luma[i]] / static_cast<float>(luma[i]);
    for (int c = 0; c < 3; ++c) out.data[i * 3 + c] = std::clamp(img.data[i * 3 + c] * gain, 0.0f, 1.0f);
  }
  return out;
}

std::vector<float> clahe_levels(std::span<const std::uint8_t> levels, int width, int height, double clip_limit,
                                int tiles) {
  validate(PreprocessorKind{ClaheSpec{clip_limit, tiles}});
  if (width < 2 || height < 2)
    throw ShapeError("apply_clahe: image " + std::to_string(width) + "x" + std::to_string(height) +
                     " is smaller than 2x2");
  if (levels.size() != static_cast<std::size_t>(width) * height) throw ShapeError("clahe_levels: buffer size mismatch");

  // Ceil-divided tiles; trailing tiles may be smaller.
  const int th = (height + tiles - 1) / tiles;
  const int tw = (width + tiles - 1) / tiles;
  const int ny = (height + th - 1) / th;
  const int nx = (width + tw - 1) / tw;

  std::vector<std::array<float, 256>> maps(static_cast<std::size_t>(ny) * nx);
  for (int ty = 0; ty < ny; ++ty) {
    for (int tx = 0; tx < nx; ++tx) {
      const int y0 = ty * th, y1 = std::min(height, y0 + th);
      const int x0 = tx * tw, x1 = std::min(width, x0 + tw);
      std::array<double, 256> hist{};
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) hist[levels[static_cast<std::size_t>(y) * width + x]] += 1.0;
      const double n = static_cast<double>(y1 - y0) * (x1 - x0);
      if (std::isfinite(clip_limit)) {
        const double limit = clip_limit * n / 256.0;
        double excess = 0.0;
        for (auto& h : hist) {
          if (h > limit) {
            excess += h - limit;
            h = limit;
          }
        }
        // Single pass: pooled excess spread evenly, secondary overflow ignored.
        for (auto& h : hist) h += excess / 256.0;
      }
      auto& map = maps[static_cast<std::size_t>(ty) * nx + tx];
      if (!equalize(hist, n, map))
        for (int v = 0; v < 256; ++v) map[v] = static_cast<float>(v);
    }
  }

  auto centers = [](int count, int size, int extent) {
    std::vector<double> c(static_cast<std::size_t>(count));
    for (int t = 0; t < count; ++t) c[t] = (t * size + std::min(extent, (t + 1) * size) - 1) / 2.0;
    return c;
  };
  const auto cy = centers(ny, th, height);
  const auto cx = centers(nx, tw, width);

  struct Blend {
    int t0, t1;
    float w1;
  };
  auto blends = [](const std::vector<double>& c, int extent) {
    std::vector<Blend> out(static_cast<std::size_t>(extent));
    const int n = static_cast<int>(c.size());
    for (int p = 0; p < extent; ++p) {
      int t0 = 0;
      while (t0 + 1 < n && c[t0 + 1] <= p) ++t0;
      if (p <= c[0] || t0 == n - 1) {
        out[p] = {t0, t0, 0.0f};
      } else {
        out[p] = {t0, t0 + 1, static_cast<float>((p - c[t0]) / (c[t0 + 1] - c[t0]))};
      }
    }
    return out;
  };
  const auto by = blends(cy, height);
  const auto bx = blends(cx, width);

  std::vector<float> out(levels.size());
  for (int y = 0; y < height; ++y) {
    const Blend& a = by[y];
    for (int x = 0; x < width; ++x) {
      const Blend& b = bx[x];
      const std::size_t i = static_cast<std::size_t>(y) * width + x;
      const std::uint8_t v = levels[i];
      const float m00 = maps[static_cast<std::size_t>(a.t0) * nx + b.t0][v];
      const float m01 = maps[static_cast<std::size_t>(a.t0) * nx + b.t1][v];
      const float m10 = maps[static_cast<std::size_t>(a.t1) * nx + b.t0][v];
      const float m11 = maps[static_cast<std::size_t>(a.t1) * nx + b.t1][v];
      const float top = m00 * (1.0f - b.w1) + m01 * b.w1;
      const float bot = m10 * (1.0f - b.w1) + m11 * b.w1;
      out[i] = top * (1.0f - a.w1) + bot * a.w1;
    }
  }
  return out;
}

ImageF32 apply_clahe(const ImageF32& img, double clip_limit, int tiles) {
  require_rgb(img, "apply_clahe");
  validate(PreprocessorKind{ClaheSpec{clip_limit, tiles}});
  if (img.width < 2 || img.height < 2)
    throw ShapeError("apply_clahe: image " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                     " is smaller than 2x2");
  LabImage lab = rgb_to_lab(img);
  std::vector<std::uint8_t> q(lab.L.size());
  for (std::size_t i = 0; i < q.size(); ++i)
    q[i] = static_cast<std::uint8_t>(std::clamp(std::round(lab.L[i] / 100.0 * 255.0), 0.0, 255.0));
  if (std::all_of(q.begin(), q.end(), [&](std::uint8_t v) { return v == q[0]; })) return img;

  const auto mapped = clahe_levels(q, img.width, img.height, clip_limit, tiles);
  for (std::size_t i = 0; i < q.size(); ++i) lab.L[i] = mapped[i] * (100.0f / 255.0f);
  return lab_to_rgb(lab);
}

ImageF32 apply_preprocessor(const ImageF32& img, const PreprocessorKind& p) {
  return std::visit(
      [&](const auto& s) -> ImageF32 {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, GammaSpec>) {
          return apply_gamma(img, s.gamma);
        } else if constexpr (std::is_same_v<T, HistEqSpec>) {
          return apply_hist_eq(img, s.per_channel);
        } else if constexpr (std::is_same_v<T, ClaheSpec>) {
          return apply_clahe(img, s.clip_limit, s.tiles);
        } else {
          require_rgb(img, "external preprocessor");
          const auto model = external_cache().get(s.checkpoint);
          return tensor_to_image(model->infer(image_to_tensor(img), 0));
        }
      },
      p);
}

ImageF32 NineChannelInput::stacked() const {
  const ImageF32* parts[3] = {&input1, &original, &input2};
  return stack_channels(parts);
}

NineChannelInput assemble_nine_channel(const ImageF32& low, const PreprocessorKind& p1, const PreprocessorKind& p2) {
  require_rgb(low, "assemble_nine_channel");
  return {apply_preprocessor(low, p1), low, apply_preprocessor(low, p2), 0};
}

}  // namespace llie
