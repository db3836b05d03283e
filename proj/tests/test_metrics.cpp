#include <doctest.h>

#include <cmath>

#include <llie/errors.hpp>
#include <llie/metrics.hpp>

#include "support.hpp"

using namespace llie;
using llie::testing::constant_u8;
using llie::testing::random_u8;
using llie::testing::TempDir;

namespace {

ImageU8 plus(const ImageU8& a, int d) {
  ImageU8 b = a;
  for (auto& v : b.data) v = static_cast<std::uint8_t>(std::clamp(int(v) + d, 0, 255));
  return b;
}

ImageU8 hflip(const ImageU8& a) {
  ImageU8 b = a;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x)
      for (int c = 0; c < a.channels; ++c) b.at(x, y, c) = a.at(a.width - 1 - x, y, c);
  return b;
}

}  // namespace

TEST_CASE("PSNR oracles") {
  Rng rng(1);
  const ImageU8 a = random_u8(16, 16, 3, rng);
  CHECK(std::isinf(psnr(a, a)));

  const ImageU8 mid = constant_u8(16, 16, 3, 100);
  // MSE = 1 -> 20 log10(255)
  CHECK(psnr(mid, plus(mid, 1)) == doctest::Approx(20.0 * std::log10(255.0)).epsilon(1e-12));
  CHECK(std::abs(psnr(mid, plus(mid, 1)) - 48.1308) < 1e-3);
  CHECK(psnr(constant_u8(8, 8, 1, 0), constant_u8(8, 8, 1, 255)) == doctest::Approx(0.0));

  CHECK_THROWS_AS(psnr(a, random_u8(16, 15, 3, rng)), ShapeError);
}

TEST_CASE("PSNR falls as noise grows") {
  Rng rng(2);
  const ImageU8 base = constant_u8(32, 32, 3, 128);
  double prev = std::numeric_limits<double>::infinity();
  for (int amp : {1, 4, 16}) {
    ImageU8 noisy = base;
    for (auto& v : noisy.data) v = static_cast<std::uint8_t>(int(v) + int(rng.below(2 * amp + 1)) - amp);
    const double p = psnr(base, noisy);
    CHECK(p < prev);
    prev = p;
  }
}

TEST_CASE("Gaussian window") {
  const auto w = gaussian_window();
  REQUIRE(w.size() == 11);
  double s = 0.0;
  for (double v : w) s += v;
  CHECK(std::abs(s - 1.0) < 1e-12);
  // the 2-D window is the outer product, so it sums to 1 as well
  CHECK(std::abs(s * s - 1.0) < 1e-12);
  CHECK(w[5] > w[4]);
  CHECK(w[0] == doctest::Approx(w[10]));
}

TEST_CASE("SSIM oracles") {
  Rng rng(3);
  const ImageU8 a = random_u8(24, 20, 3, rng);
  CHECK(ssim(a, a) == 1.0);
  CHECK(ssim(a, a, SsimMode::ChannelMean) == 1.0);

  // constant images reduce to the luminance term
  const double c1 = (0.01 * 255) * (0.01 * 255);
  const double expect = (2 * 100 * 50 + c1) / (100.0 * 100 + 50.0 * 50 + c1);
  CHECK(expect == doctest::Approx(10006.5025 / 12506.5025));
  const double got = ssim(constant_u8(16, 16, 3, 100), constant_u8(16, 16, 3, 50));
  CHECK(std::abs(got - 0.8001) < 1e-3);
  CHECK(got == doctest::Approx(expect).epsilon(1e-9));

  const ImageU8 b = random_u8(24, 20, 3, rng);
  CHECK(ssim(a, b) == ssim(b, a));
  CHECK(ssim(a, b) == doctest::Approx(ssim(hflip(a), hflip(b))).epsilon(1e-9));
  CHECK(ssim(a, b) < 1.0);
  CHECK(ssim(a, b) >= -1.0);

  CHECK_THROWS_AS(ssim(random_u8(10, 20, 3, rng), random_u8(10, 20, 3, rng)), ShapeError);
  CHECK_THROWS_AS(ssim(a, random_u8(24, 21, 3, rng)), ShapeError);
}

TEST_CASE("folder evaluation") {
  TempDir pred("pred"), gt("gt");
  Rng rng(4);
  const ImageU8 x = random_u8(16, 16, 3, rng);
  write_png((gt / "a.png").string(), x);

  SUBCASE("identical folders") {
    write_png((pred / "a.png").string(), x);
    const MetricReport r = evaluate_folder(pred.path(), gt.path());
    CHECK(r.mean_ssim == 1.0);
    CHECK(std::isinf(r.mean_psnr));
    CHECK(r.to_csv() == "filename,psnr,ssim\na.png,inf,1\nMEAN,inf,1\n");
  }
  SUBCASE("one pair differing by one") {
    const ImageU8 y = plus(constant_u8(16, 16, 3, 90), 1);
    write_png((gt / "a.png").string(), constant_u8(16, 16, 3, 90));
    write_png((pred / "a.png").string(), y);
    const MetricReport r = evaluate_folder(pred.path(), gt.path());
    REQUIRE(r.rows.size() == 1);
    CHECK(r.mean_psnr == psnr(y, constant_u8(16, 16, 3, 90)));
    CHECK(r.mean_ssim == ssim(y, constant_u8(16, 16, 3, 90)));
  }
  SUBCASE("missing counterpart") {
    write_png((pred / "a.png").string(), x);
    write_png((pred / "b.png").string(), x);
    try {
      evaluate_folder(pred.path(), gt.path());
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("b.png") != std::string::npos);
    }
  }
}
