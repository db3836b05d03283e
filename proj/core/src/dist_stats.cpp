#include "llie/dist_stats.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "llie/errors.hpp"
#include "llie/folder.hpp"

namespace llie {

namespace {

struct MeanStd {
  double mean;
  double std;
};

MeanStd population(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  const double mean = acc / static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / static_cast<double>(v.size()))};
}

}  // namespace

ImageStats image_stats(const ImageU8& img) {
  validate(img);
  const std::size_t n = img.pixel_count();
  if (n == 0) throw DataError("image_stats: image has no pixels");
  std::vector<double> gray(n);
  if (img.channels == 1) {
    for (std::size_t i = 0; i < n; ++i) gray[i] = img.data[i];
  } else {
    const ImageU8 g = to_u8(rgb_to_gray(to_f32(img)));
    for (std::size_t i = 0; i < n; ++i) gray[i] = g.data[i];
  }
  const auto ms = population(gray);
  return {ms.mean, ms.std};
}

DatasetStats aggregate_stats(const std::vector<ImageStats>& per_image) {
  if (per_image.empty()) throw DataError("dataset statistics need at least one image");
  std::vector<double> mus, sigmas;
  for (const auto& s : per_image) {
    mus.push_back(s.mu);
    sigmas.push_back(s.sigma);
  }
  const auto m = population(mus);
  const auto s = population(sigmas);
  return {m.mean, m.std, s.mean, s.std, per_image.size()};
}

FolderStats dataset_stats(const std::filesystem::path& folder, const std::optional<PreprocessorKind>& preproc) {
  const auto files = list_pngs(folder);
  if (files.empty()) throw DataError("no PNG files in " + folder.string());
  FolderStats out;
  for (const auto& f : files) {
    ImageU8 img = read_png(f.string());
    if (preproc) {
      if (img.channels == 1) {
        // preprocessors work on RGB; a gray image goes in as three equal channels
        ImageU8 rgb(img.width, img.height, 3);
        for (std::size_t i = 0; i < img.data.size(); ++i) std::fill_n(&rgb.data[i * 3], 3, img.data[i]);
        img = std::move(rgb);
      }
      img = to_u8(apply_preprocessor(to_f32(img), *preproc));
    }
    out.filenames.push_back(f.filename().string());
    out.per_image.push_back(image_stats(img));
  }
  out.dataset = aggregate_stats(out.per_image);
  return out;
}

std::string stats_csv_header() { return "variant,mu_bar,sigma_inter,sigma_bar,sigma_intra,n"; }

std::string stats_csv_row(const std::string& variant, const DatasetStats& s) {
  std::ostringstream os;
  os.precision(10);
  os << variant << ',' << s.mu_bar << ',' << s.sigma_inter << ',' << s.sigma_bar << ',' << s.sigma_intra << ','
     << s.n_images;
  return os.str();
}

}  // namespace llie
