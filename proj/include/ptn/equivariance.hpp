#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ptn/datasets.hpp"
#include "ptn/network.hpp"

namespace ptn {

struct EquivarianceRecord {
  std::string claim;
  std::string params;
  std::string metric;  // "max-abs", "mad", "correlation", "agreement"
  double value = 0;
  double threshold = 0;
  bool pass = false;
};

struct EquivarianceReport {
  std::vector<EquivarianceRecord> records;

  void add(std::vector<EquivarianceRecord> more);
  bool all_pass() const;
  void write_csv(const std::filesystem::path& path) const;
  std::string summary() const;
};

/// conv(shift(I)) against shift(conv(I)) at stride 1 for (dy, dx) shifts. With wrap
/// padding, pure row shifts are compared on the full map; zero padding compares the
/// interior that border effects cannot reach. One record per (padding, shift).
std::vector<EquivarianceRecord> check_shift_equivariance(const Tensor<double>& kernel, const Tensor<double>& image,
                                                         const std::vector<std::pair<long, long>>& shifts,
                                                         double threshold = 1e-5);

/// Delta image at (y, x) through a delta kernel at (ky, kx) lands at the summed offset.
EquivarianceRecord check_delta_response(std::size_t size, std::size_t ksize, long y, long x, long ky, long kx);

/// MAD between polar(rotate(I, 2 pi k / H)) and polar(I) shifted down k rows.
std::vector<EquivarianceRecord> check_polar_rotation(const Tensor<double>& image, double ox, double oy,
                                                     const std::vector<long>& k_list, double threshold = 0.05);

/// MAD between polar(dilate(I, r^(m/W))) and polar(I) shifted right m columns,
/// over columns m..W-1.
std::vector<EquivarianceRecord> check_polar_dilation(const Tensor<double>& image, double ox, double oy,
                                                     const std::vector<long>& m_list, double threshold = 0.05);

/// Dilation by an arbitrary factor: reports the (rounded) column shift it maps to.
EquivarianceRecord check_polar_dilation_factor(const Tensor<double>& image, double ox, double oy, double factor,
                                               double threshold = 0.05);

struct ModelCheckOptions {
  std::size_t samples = 200;
  long shift = 5;                    // translations by (+-shift, +-shift)
  double correlation_threshold = 0.9;
  double agreement_threshold = 0.95;
  double logit_threshold = 1e-4;
};

/// Trained-model checks: 180-degree feature correlation, translation agreement,
/// fixed-origin logit invariance under polar row shifts.
std::vector<EquivarianceRecord> check_model_equivariance(Model<float>& model, const Dataset& data,
                                                         const ModelCheckOptions& options = {});

/// Synthetic smooth image (sum of Gaussian bumps) with values in [0, 1].
Tensor<double> smooth_test_image(std::size_t size, std::uint64_t seed);
/// Soft-edged disk centered on the image center.
Tensor<double> disk_image(std::size_t size, double radius);
/// Separable Gaussian blur of an NCHW image.
Tensor<double> gaussian_blur(const Tensor<double>& image, double sigma);

/// Library-level checks that need no trained model.
EquivarianceReport library_report(std::uint64_t seed, const Tensor<double>* digit = nullptr);

}  // namespace ptn
