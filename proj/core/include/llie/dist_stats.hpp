#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "llie/image.hpp"
#include "llie/preproc.hpp"

namespace llie {

// Mean and population std of the grayscale byte values.
struct ImageStats {
  double mu = 0.0;
  double sigma = 0.0;
};

// Aggregates over per-image stats, all with population (divide-by-N) std:
//   mu_bar = mean(mu), sigma_inter = std(mu),
//   sigma_bar = mean(sigma), sigma_intra = std(sigma).
struct DatasetStats {
  double mu_bar = 0.0;
  double sigma_inter = 0.0;
  double sigma_bar = 0.0;
  double sigma_intra = 0.0;
  std::size_t n_images = 0;
};

// 3-channel inputs are reduced to Rec. 601 luma and quantized to bytes.
ImageStats image_stats(const ImageU8& img);

DatasetStats aggregate_stats(const std::vector<ImageStats>& per_image);

struct FolderStats {
  DatasetStats dataset;
  std::vector<std::string> filenames;
  std::vector<ImageStats> per_image;
};

// Applies the optional preprocessor (on floats, then re-quantized to bytes)
// to each PNG in lexicographic order before measuring.
FolderStats dataset_stats(const std::filesystem::path& folder, const std::optional<PreprocessorKind>& preproc = {});

// CSV header "variant,mu_bar,sigma_inter,sigma_bar,sigma_intra,n" and one row.
std::string stats_csv_header();
std::string stats_csv_row(const std::string& variant, const DatasetStats& s);

}  // namespace llie
