#include <filesystem>
#include <numbers>
#include <fstream>
#include <random>
#include <unistd.h>

#include "doctest.h"
#include "ptn/equivariance.hpp"
#include "ptn/errors.hpp"

using namespace ptn;
namespace fs = std::filesystem;

namespace {

Tensor<double> noise(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0, 1);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = g(rng);
  return t;
}

// Direct wrap-padded 3x3 correlation, single channel, used as an independent reference.
double wrap_conv_at(const Tensor<double>& img, const Tensor<double>& k, long y, long x) {
  const long h = long(img.dim(2)), w = long(img.dim(3));
  double s = 0;
  for (long a = -1; a <= 1; ++a)
    for (long b = -1; b <= 1; ++b) {
      const long yy = ((y + a) % h + h) % h, xx = x + b;
      if (xx < 0 || xx >= w) continue;
      s += k.at(0, 0, a + 1, b + 1) * img.at(0, 0, yy, xx);
    }
  return s;
}

}  // namespace

TEST_CASE("wrap-padded conv commutes with row shifts over random pairs") {
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    auto kernel = noise({2, 3, 3, 3}, 100 + trial);
    auto image = noise({1, 3, 12, 10}, 500 + trial);
    const long k = long(trial % 12);
    auto recs = check_shift_equivariance(kernel, image, {{k, 0}});
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].claim == "conv-shift-wrap");
    CHECK(recs[0].value <= 1e-5);
    CHECK(recs[0].pass);
    CHECK(recs[1].pass);
  }
}

TEST_CASE("wrap padding agrees with a direct reference") {
  auto kernel = noise({1, 1, 3, 3}, 1);
  auto image = noise({1, 1, 7, 6}, 2);
  Tape<double> tape;
  tape.set_recording(false);
  auto out = conv2d(tape, Var<double>(image), Var<double>(kernel), 1, PaddingMode::wrap_rows()).value();
  for (long y = 0; y < 7; ++y)
    for (long x = 0; x < 6; ++x) CHECK(out.at(0, 0, y, x) == doctest::Approx(wrap_conv_at(image, kernel, y, x)));
}

TEST_CASE("shift records: one per requested pair and padding") {
  auto recs = check_shift_equivariance(noise({1, 1, 3, 3}, 3), noise({1, 1, 16, 16}, 4), {{1, 0}, {2, 3}, {0, -2}});
  CHECK(recs.size() == 4);
  for (const auto& r : recs) CHECK(r.pass);
}

TEST_CASE("delta responses") {
  CHECK(check_delta_response(9, 3, 4, 4, 1, 1).value == 0.0);
  CHECK(check_delta_response(9, 3, 4, 4, 0, 2).pass);
  CHECK(check_delta_response(11, 5, 1, 9, 4, 0).pass);
}

TEST_CASE("polar rotation and dilation claims on a smooth image") {
  const auto img = smooth_test_image(28, 5);
  for (const auto& r : check_polar_rotation(img, 13.0, 14.5, {1, 7, 14})) {
    CHECK(r.value <= 0.05);
    CHECK(r.pass);
  }
  for (const auto& r : check_polar_dilation(img, 13.0, 14.5, {1, 4})) CHECK(r.pass);
  auto f = check_polar_dilation_factor(img, 13.0, 14.5, 1.5);
  CHECK(f.pass);
  CHECK(f.params.find("rounded") != std::string::npos);
}

TEST_CASE("rotation-invariant disk") {
  const double c = 13.5;
  auto recs = check_polar_rotation(disk_image(28, 6.5), c, c, {7, 14, 21}, 1e-6);
  for (const auto& r : recs) CHECK(r.value <= 1e-6);
}

TEST_CASE("the MAD metric separates shifted from unshifted polar images") {
  const auto img = smooth_test_image(28, 6);
  const double c = 13.5;
  Tape<double> tape;
  tape.set_recording(false);
  Tensor<double> origin({1, 2});
  origin[0] = c;
  origin[1] = c;
  auto polar = [&](const Tensor<double>& x) {
    return polar_transform(tape, Var<double>(x), Var<double>(origin), 28, 28).value();
  };
  const auto base = polar(img);
  const auto turned = polar(warp_about(img, 2 * std::numbers::pi * 7 / 28, 1.0, c, c));
  double aligned = 0, unaligned = 0;
  const auto expected = circshift_rows(base, 7);
  for (std::size_t i = 0; i < base.size(); ++i) {
    aligned += std::abs(turned[i] - expected[i]);
    unaligned += std::abs(turned[i] - base[i]);
  }
  aligned /= double(base.size());
  unaligned /= double(base.size());
  CHECK(aligned <= 0.05);
  CHECK(unaligned > 0.05);
}

TEST_CASE("gaussian blur keeps mass and smooths") {
  Tensor<double> d({1, 1, 15, 15});
  d.at(0, 0, 7, 7) = 1.0;
  auto b = gaussian_blur(d, 1.0);
  double s = 0;
  for (auto v : b.data()) s += v;
  CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(b.at(0, 0, 7, 7) < 0.2);
  CHECK(b.at(0, 0, 7, 8) == doctest::Approx(b.at(0, 0, 8, 7)));
}

TEST_CASE("library report is complete and passes") {
  auto report = library_report(1);
  // 6 shifts (4 row-only) + 2 deltas + 4 rotations + 3 dilations + 1 factor + 1 disk.
  CHECK(report.records.size() == 10 + 2 + 4 + 3 + 1 + 1);
  for (const auto& r : report.records) CHECK_MESSAGE(r.pass, r.claim << " " << r.params << " " << r.value);
  CHECK(report.all_pass());

  const auto dir = fs::temp_directory_path() / ("ptn-eq-" + std::to_string(::getpid()));
  fs::create_directories(dir);
  report.write_csv(dir / "r.csv");
  std::ifstream in(dir / "r.csv");
  std::size_t lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  CHECK(lines == report.records.size() + 1);
  CHECK(report.summary().find("PASS") != std::string::npos);
  fs::remove_all(dir);

  auto digit = smooth_test_image(28, 9);
  CHECK(library_report(1, &digit).records.size() == report.records.size() + 1);
}

TEST_CASE("model checks on an untrained network") {
  auto model = build<float>(NetworkConfig::make(Variant::ptn_s, 28), 4);
  Dataset d;
  d.height = d.width = 28;
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> px(0, 255);
  for (int i = 0; i < 6; ++i) {
    for (int k = 0; k < 784; ++k) {
      const int y = k / 28, x = k % 28;
      const bool inside = y > 8 && y < 20 && x > 8 && x < 20;
      d.pixels.push_back(inside ? static_cast<std::uint8_t>(px(rng)) : 0);
    }
    d.labels.push_back(i % 10);
  }
  ModelCheckOptions opt;
  opt.samples = 6;
  auto recs = check_model_equivariance(model, d, opt);
  REQUIRE(recs.size() >= 3);
  bool saw_logits = false;
  for (const auto& r : recs) {
    if (r.claim.find("logit") != std::string::npos) {
      saw_logits = true;
      CHECK(r.value <= 1e-4);
    }
    if (r.claim.find("identity") != std::string::npos) CHECK(r.value == doctest::Approx(1.0));
  }
  CHECK(saw_logits);
  auto ccnn = build<float>(NetworkConfig::make(Variant::ccnn_s, 28), 4);
  CHECK_THROWS_AS(check_model_equivariance(ccnn, d, opt), ConfigError);
}
