#include <doctest.h>

#include <cmath>

#include <llie/dist_stats.hpp>
#include <llie/errors.hpp>

#include "support.hpp"

using namespace llie;
using llie::testing::constant_u8;
using llie::testing::TempDir;

namespace {

ImageU8 gray(int w, int h, std::vector<std::uint8_t> v) {
  ImageU8 img(w, h, 1);
  img.data = std::move(v);
  return img;
}

}  // namespace

TEST_CASE("single image statistics") {
  const ImageStats c = image_stats(constant_u8(4, 4, 1, 100));
  CHECK(c.mu == 100.0);
  CHECK(c.sigma == 0.0);

  const ImageStats two = image_stats(gray(2, 1, {0, 200}));
  CHECK(two.mu == 100.0);
  CHECK(two.sigma == 100.0);

  const ImageStats checker = image_stats(gray(2, 2, {0, 255, 255, 0}));
  CHECK(checker.mu == 127.5);
  CHECK(checker.sigma == 127.5);

  CHECK_THROWS_AS(image_stats(ImageU8(0, 0, 1)), DataError);
}

TEST_CASE("colour images are measured on quantized luma") {
  ImageU8 rgb(1, 1, 3);
  rgb.data = {255, 0, 0};
  // 0.299 * 255 = 76.245 -> 76
  CHECK(image_stats(rgb).mu == 76.0);
}

TEST_CASE("aggregation by definition") {
  const DatasetStats one = aggregate_stats({{100, 0}});
  CHECK(one.mu_bar == 100.0);
  CHECK(one.sigma_inter == 0.0);
  CHECK(one.sigma_bar == 0.0);
  CHECK(one.sigma_intra == 0.0);

  const DatasetStats two = aggregate_stats({image_stats(constant_u8(3, 3, 1, 0)), image_stats(constant_u8(3, 3, 1, 200))});
  CHECK(two.mu_bar == 100.0);
  CHECK(two.sigma_inter == 100.0);
  CHECK(two.sigma_bar == 0.0);
  CHECK(two.sigma_intra == 0.0);
  CHECK(two.n_images == 2);
}

TEST_CASE("folder statistics, order and duplication invariance") {
  TempDir dir("stats");
  Rng rng(12);
  std::vector<ImageU8> imgs;
  for (int i = 0; i < 5; ++i) imgs.push_back(llie::testing::random_u8(9, 7, 3, rng));
  for (int i = 0; i < 5; ++i) write_png((dir / ("img" + std::to_string(i) + ".png")).string(), imgs[i]);

  const FolderStats base = dataset_stats(dir.path());
  CHECK(base.dataset.n_images == 5);
  CHECK(base.filenames.front() == "img0.png");

  std::vector<ImageStats> rev(base.per_image.rbegin(), base.per_image.rend());
  const DatasetStats r = aggregate_stats(rev);
  CHECK(r.mu_bar == doctest::Approx(base.dataset.mu_bar).epsilon(1e-12));
  CHECK(r.sigma_intra == doctest::Approx(base.dataset.sigma_intra).epsilon(1e-12));

  for (int i = 0; i < 5; ++i) write_png((dir / ("img" + std::to_string(i) + "_dup.png")).string(), imgs[i]);
  const FolderStats dup = dataset_stats(dir.path());
  CHECK(dup.dataset.n_images == 10);
  CHECK(dup.dataset.mu_bar == doctest::Approx(base.dataset.mu_bar).epsilon(1e-12));
  CHECK(dup.dataset.sigma_inter == doctest::Approx(base.dataset.sigma_inter).epsilon(1e-12));
  CHECK(dup.dataset.sigma_bar == doctest::Approx(base.dataset.sigma_bar).epsilon(1e-12));
  CHECK(dup.dataset.sigma_intra == doctest::Approx(base.dataset.sigma_intra).epsilon(1e-12));
}

TEST_CASE("preprocessed statistics stay in byte units") {
  TempDir dir("stats_pre");
  write_png((dir / "a.png").string(), constant_u8(8, 8, 3, 16));
  write_png((dir / "b.png").string(), constant_u8(8, 8, 3, 64));
  const FolderStats g = dataset_stats(dir.path(), PreprocessorKind{GammaSpec{0.5}});
  // sqrt(16/255)*255 = 63.87 -> 64 ; sqrt(64/255)*255 = 127.75 -> 128
  CHECK(g.per_image[0].mu == 64.0);
  CHECK(g.per_image[1].mu == 128.0);
  for (const char* s : {"he", "clahe"}) {
    const FolderStats st = dataset_stats(dir.path(), parse_preprocessor(s));
    CHECK(st.dataset.mu_bar >= 0.0);
    CHECK(st.dataset.mu_bar <= 255.0);
  }
}

TEST_CASE("csv layout") {
  CHECK(stats_csv_header() == "variant,mu_bar,sigma_inter,sigma_bar,sigma_intra,n");
  const std::string row = stats_csv_row("low", aggregate_stats({{100, 0}, {0, 0}}));
  CHECK(row.rfind("low,50,50,0,0,2", 0) == 0);
}

TEST_CASE("missing folder") { CHECK_THROWS_AS(dataset_stats("/nonexistent/llie"), DataError); }
