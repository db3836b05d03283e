#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "llie/image.hpp"

namespace llie {

// 10 log10(255^2 / MSE) over every channel and pixel; +inf for identical
// images.
double psnr(const ImageU8& a, const ImageU8& b);

enum class SsimMode {
  Luma,         // single plane, Rec. 601 luma
  ChannelMean,  // SSIM per RGB channel, averaged
};

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
std::vector<double> gaussian_window(int size = kSsimWindow, double sigma = kSsimSigma);

// Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), C1 = (0.01*255)^2,
// C2 = (0.03*255)^2, evaluated only where the window fits (no padding) and
// averaged. Images must be at least 11x11.
double ssim(const ImageU8& a, const ImageU8& b, SsimMode mode = SsimMode::Luma);

struct MetricRow {
  std::string filename;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  double mean_psnr = 0.0;  // +inf if any row is +inf
  double mean_ssim = 0.0;

  // "filename,psnr,ssim" rows followed by a MEAN row; infinities print as inf.
  std::string to_csv() const;
};

MetricReport make_report(std::vector<MetricRow> rows);

// Pairs files by name. No rescaling of predictions is applied.
MetricReport evaluate_folder(const std::filesystem::path& pred, const std::filesystem::path& gt,
                             SsimMode mode = SsimMode::Luma);

}  // namespace llie
