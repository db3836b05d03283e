#include "llie/metrics.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "llie/errors.hpp"
#include "llie/folder.hpp"

namespace llie {

namespace {

void require_same_dims(const ImageU8& a, const ImageU8& b, const char* op) {
  validate(a);
  validate(b);
  if (a.width != b.width || a.height != b.height || a.channels != b.channels)
    throw ShapeError(std::string(op) + ": dimension mismatch " + std::to_string(a.width) + "x" +
                     std::to_string(a.height) + "x" + std::to_string(a.channels) + " vs " + std::to_string(b.width) +
                     "x" + std::to_string(b.height) + "x" + std::to_string(b.channels));
}

std::vector<double> plane(const ImageU8& img, SsimMode mode, int channel) {
  const std::size_t n = img.pixel_count();
  std::vector<double> p(n);
  if (img.channels == 1) {
    for (std::size_t i = 0; i < n; ++i) p[i] = img.data[i];
  } else if (mode == SsimMode::Luma) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto* px = &img.data[i * 3];
      p[i] = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) p[i] = img.data[i * 3 + channel];
  }
  return p;
}

// Valid-mode separable filter: (h - k + 1) x (w - k + 1) output.
std::vector<double> filter_valid(const std::vector<double>& src, int w, int h, const std::vector<double>& k) {
  const int ks = static_cast<int>(k.size());
  const int ow = w - ks + 1;
  const int oh = h - ks + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < ks; ++i) acc += k[i] * src[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < ks; ++i) acc += k[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  return out;
}

double ssim_plane(const std::vector<double>& x, const std::vector<double>& y, int w, int h) {
  constexpr double kC1 = (0.01 * 255.0) * (0.01 * 255.0);
  constexpr double kC2 = (0.03 * 255.0) * (0.03 * 255.0);
  const auto k = gaussian_window();
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, w, h, k);
  const auto my = filter_valid(y, w, h, k);
  const auto sxx = filter_valid(xx, w, h, k);
  const auto syy = filter_valid(yy, w, h, k);
  const auto sxy = filter_valid(xy, w, h, k);
  double acc = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i];
    const double vy = syy[i] - my[i] * my[i];
    const double cov = sxy[i] - mx[i] * my[i];
    acc += ((2.0 * mx[i] * my[i] + kC1) * (2.0 * cov + kC2)) /
           ((mx[i] * mx[i] + my[i] * my[i] + kC1) * (vx + vy + kC2));
  }
  return acc / static_cast<double>(mx.size());
}

std::string format_metric(double v) {
  if (std::isinf(v)) return "inf";
  std::ostringstream os;
  os.precision(8);
  os << v;
  return os.str();
}

}  // namespace

double psnr(const ImageU8& a, const ImageU8& b) {
  require_same_dims(a, b, "psnr");
  if (a.data.empty()) throw ShapeError("psnr: empty images");
  double se = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    se += d * d;
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  const double mse = se / static_cast<double>(a.data.size());
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    k[i] = std::exp(-((i - c) * (i - c)) / (2.0 * sigma * sigma));
    total += k[i];
  }
  for (auto& v : k) v /= total;
  return k;
}

double ssim(const ImageU8& a, const ImageU8& b, SsimMode mode) {
  require_same_dims(a, b, "ssim");
  if (a.width < kSsimWindow || a.height < kSsimWindow)
    throw ShapeError("ssim: image " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                     " is smaller than the 11x11 window");
  if (a.channels == 1 || mode == SsimMode::Luma)
    return ssim_plane(plane(a, mode, 0), plane(b, mode, 0), a.width, a.height);
  double acc = 0.0;
  for (int c = 0; c < 3; ++c) acc += ssim_plane(plane(a, mode, c), plane(b, mode, c), a.width, a.height);
  return acc / 3.0;
}

MetricReport make_report(std::vector<MetricRow> rows) {
  MetricReport r;
  r.rows = std::move(rows);
  if (r.rows.empty()) return r;
  double p = 0.0, s = 0.0;
  for (const auto& row : r.rows) {
    p += row.psnr;
    s += row.ssim;
  }
  r.mean_psnr = p / static_cast<double>(r.rows.size());
  r.mean_ssim = s / static_cast<double>(r.rows.size());
  return r;
}

std::string MetricReport::to_csv() const {
  std::string out = "filename,psnr,ssim\n";
  for (const auto& row : rows) out += row.filename + "," + format_metric(row.psnr) + "," + format_metric(row.ssim) + "\n";
  out += "MEAN," + format_metric(mean_psnr) + "," + format_metric(mean_ssim) + "\n";
  return out;
}

MetricReport evaluate_folder(const std::filesystem::path& pred, const std::filesystem::path& gt, SsimMode mode) {
  const auto pred_files = list_pngs(pred);
  const auto gt_files = list_pngs(gt);
  if (pred_files.empty()) throw DataError("no PNG files in " + pred.string());
  for (const auto& g : gt_files)
    if (!std::filesystem::exists(pred / g.filename()))
      throw DataError("missing prediction for " + g.filename().string() + " in " + pred.string());
  std::vector<MetricRow> rows;
  for (const auto& p : pred_files) {
    const auto g = gt / p.filename();
    if (!std::filesystem::exists(g)) throw DataError("missing ground truth for " + p.filename().string() + " in " + gt.string());
    const ImageU8 a = read_png(p.string());
    const ImageU8 b = read_png(g.string());
    rows.push_back({p.filename().string(), psnr(a, b), ssim(a, b, mode)});
  }
  return make_report(std::move(rows));
}

}  // namespace llie
