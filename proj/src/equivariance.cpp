#include "ptn/equivariance.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "ptn/errors.hpp"
#include "ptn/ops.hpp"

namespace ptn {

namespace {

std::string describe(std::initializer_list<std::pair<const char*, double>> kv) {
  std::ostringstream os;
  os.precision(6);
  bool first = true;
  for (auto& [k, v] : kv) {
    if (!first) os << ' ';
    os << k << '=' << v;
    first = false;
  }
  return os.str();
}

EquivarianceRecord below(std::string claim, std::string params, std::string metric, double value, double threshold) {
  return {std::move(claim), std::move(params), std::move(metric), value, threshold, value <= threshold};
}

EquivarianceRecord above(std::string claim, std::string params, std::string metric, double value, double threshold) {
  return {std::move(claim), std::move(params), std::move(metric), value, threshold, value >= threshold};
}

template <typename T>
Tensor<T> conv_plain(const Tensor<T>& image, const Tensor<T>& kernel, PaddingMode padding) {
  Tape<T> tape;
  tape.set_recording(false);
  return conv2d(tape, Var<T>(image), Var<T>(kernel), 1, padding).value();
}

// Shift by (dy, dx) with zero fill.
template <typename T>
Tensor<T> shift2d(const Tensor<T>& x, long dy, long dx) {
  Tensor<T> out(x.shape());
  const long h = static_cast<long>(x.dim(2)), w = static_cast<long>(x.dim(3));
  const std::size_t planes = x.dim(0) * x.dim(1);
  for (std::size_t p = 0; p < planes; ++p)
    for (long y = 0; y < h; ++y)
      for (long xx = 0; xx < w; ++xx) {
        const long sy = y - dy, sx = xx - dx;
        if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
        out[(p * h + y) * w + xx] = x[(p * h + sy) * w + sx];
      }
  return out;
}

bool is_center(const Tensor<double>& image, double ox, double oy) {
  return std::abs(ox - (image.dim(3) - 1.0) / 2.0) < 1e-12 && std::abs(oy - (image.dim(2) - 1.0) / 2.0) < 1e-12;
}

Tensor<double> rotate_about(const Tensor<double>& image, double angle, double ox, double oy) {
  // About the center, multiples of 90 degrees take the exact permutation path.
  if (is_center(image, ox, oy)) return similarity_warp(image, Sim2Params{angle, 1.0, 0.0, 0.0});
  return warp_about(image, angle, 1.0, ox, oy);
}

template <typename T>
Tensor<T> polar_of(const Tensor<T>& image, double ox, double oy, std::size_t h, std::size_t w, double radius = 0.0) {
  Tape<T> tape;
  tape.set_recording(false);
  const std::size_t n = image.dim(0);
  Tensor<T> o({n, 2});
  for (std::size_t i = 0; i < n; ++i) o[i * 2] = static_cast<T>(ox), o[i * 2 + 1] = static_cast<T>(oy);
  return polar_transform(tape, Var<T>(image), Var<T>(o), h, w, radius).value();
}

double mad_from_column(const Tensor<double>& a, const Tensor<double>& b, std::size_t first) {
  double s = 0;
  std::size_t count = 0;
  const std::size_t planes = a.dim(0) * a.dim(1), h = a.dim(2), w = a.dim(3);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = first; x < w; ++x, ++count) s += std::abs(a[(p * h + y) * w + x] - b[(p * h + y) * w + x]);
  return count ? s / static_cast<double>(count) : 0.0;
}

double pearson(const float* a, const float* b, std::size_t n) {
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < n; ++i) ma += a[i], mb += b[i];
  ma /= static_cast<double>(n), mb /= static_cast<double>(n);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db, saa += da * da, sbb += db * db;
  }
  if (saa == 0 || sbb == 0) return saa == sbb ? 1.0 : 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

void EquivarianceReport::add(std::vector<EquivarianceRecord> more) {
  records.insert(records.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
}

bool EquivarianceReport::all_pass() const {
  return std::all_of(records.begin(), records.end(), [](const auto& r) { return r.pass; });
}

void EquivarianceReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "claim,params,metric,value,threshold,pass\n";
  out.precision(9);
  for (const auto& r : records)
    out << r.claim << ",\"" << r.params << "\"," << r.metric << ',' << r.value << ',' << r.threshold << ','
        << (r.pass ? "true" : "false") << '\n';
}

std::string EquivarianceReport::summary() const {
  std::ostringstream os;
  os.precision(4);
  std::size_t passed = 0;
  for (const auto& r : records) {
    passed += r.pass;
    os << (r.pass ? "PASS  " : "FAIL  ") << r.claim << "  [" << r.params << "]  " << r.metric << ' '
       << std::scientific << r.value << (r.metric == "correlation" || r.metric == "agreement" ? " >= " : " <= ")
       << r.threshold << std::defaultfloat << '\n';
  }
  os << passed << '/' << records.size() << " checks passed\n";
  return os.str();
}

std::vector<EquivarianceRecord> check_shift_equivariance(const Tensor<double>& kernel, const Tensor<double>& image,
                                                         const std::vector<std::pair<long, long>>& shifts,
                                                         double threshold) {
  std::vector<EquivarianceRecord> out;
  const long h = static_cast<long>(image.dim(2)), w = static_cast<long>(image.dim(3));
  const long pad = static_cast<long>(kernel.dim(2) / 2);
  const auto base_zero = conv_plain(image, kernel, PaddingMode::zeros());
  const auto base_wrap = conv_plain(image, kernel, PaddingMode::wrap_rows());
  for (auto [dy, dx] : shifts) {
    const auto params = describe({{"dy", double(dy)}, {"dx", double(dx)}});
    if (dx == 0) {
      auto lhs = conv_plain(circshift_rows(image, dy), kernel, PaddingMode::wrap_rows());
      out.push_back(below("conv-shift-wrap", params, "max-abs", max_abs_diff(lhs, circshift_rows(base_wrap, dy)),
                          threshold));
    }
    auto lhs = conv_plain(shift2d(image, dy, dx), kernel, PaddingMode::zeros());
    auto rhs = shift2d(base_zero, dy, dx);
    const long my = pad + std::abs(dy), mx = pad + std::abs(dx);
    double worst = 0;
    for (std::size_t p = 0; p < lhs.dim(0) * lhs.dim(1); ++p)
      for (long y = my; y < h - my; ++y)
        for (long x = mx; x < w - mx; ++x) {
          const std::size_t i = (p * h + y) * w + x;
          worst = std::max(worst, std::abs(lhs[i] - rhs[i]));
        }
    out.push_back(below("conv-shift-zero-interior", params, "max-abs", worst, threshold));
  }
  return out;
}

EquivarianceRecord check_delta_response(std::size_t size, std::size_t ksize, long y, long x, long ky, long kx) {
  Tensor<double> image({1, 1, size, size});
  Tensor<double> kernel({1, 1, ksize, ksize});
  image.at(0, 0, y, x) = 1.0;
  kernel.at(0, 0, ky, kx) = 1.0;
  const long p = static_cast<long>(ksize / 2);
  Tensor<double> expected({1, 1, size, size});
  // Correlation places the response at (y - ky + p, x - kx + p).
  const long ey = y - ky + p, ex = x - kx + p;
  if (ey >= 0 && ey < long(size) && ex >= 0 && ex < long(size)) expected.at(0, 0, ey, ex) = 1.0;
  const double err = max_abs_diff(conv_plain(image, kernel, PaddingMode::zeros()), expected);
  return below("conv-delta", describe({{"y", double(y)}, {"x", double(x)}, {"ky", double(ky)}, {"kx", double(kx)}}),
               "max-abs", err, 1e-12);
}

std::vector<EquivarianceRecord> check_polar_rotation(const Tensor<double>& image, double ox, double oy,
                                                     const std::vector<long>& k_list, double threshold) {
  const std::size_t h = image.dim(2), w = image.dim(3);
  const auto base = polar_of(image, ox, oy, h, w);
  std::vector<EquivarianceRecord> out;
  for (long k : k_list) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(h);
    auto rotated = polar_of(rotate_about(image, angle, ox, oy), ox, oy, h, w);
    out.push_back(below("polar-rotation-row-shift", describe({{"k", double(k)}, {"ox", ox}, {"oy", oy}}), "mad",
                        mean_abs_diff(rotated, circshift_rows(base, k)), threshold));
  }
  return out;
}

std::vector<EquivarianceRecord> check_polar_dilation(const Tensor<double>& image, double ox, double oy,
                                                     const std::vector<long>& m_list, double threshold) {
  const std::size_t h = image.dim(2), w = image.dim(3);
  const double r = PolarGridSpec::default_max_radius(h, w);
  const auto base = polar_of(image, ox, oy, h, w);
  std::vector<EquivarianceRecord> out;
  for (long m : m_list) {
    const double s = std::pow(r, static_cast<double>(m) / static_cast<double>(w));
    auto dilated = polar_of(warp_about(image, 0.0, s, ox, oy), ox, oy, h, w);
    out.push_back(below("polar-dilation-column-shift", describe({{"m", double(m)}, {"scale", s}}), "mad",
                        mad_from_column(dilated, shift_columns(base, m), static_cast<std::size_t>(std::max(0L, m))),
                        threshold));
  }
  return out;
}

EquivarianceRecord check_polar_dilation_factor(const Tensor<double>& image, double ox, double oy, double factor,
                                               double threshold) {
  if (!(factor > 0)) throw ArgumentError("dilation factor must be positive");
  const std::size_t h = image.dim(2), w = image.dim(3);
  const double r = PolarGridSpec::default_max_radius(h, w);
  const double exact = static_cast<double>(w) * std::log(factor) / std::log(r);
  const long m = std::lround(exact);
  const auto base = polar_of(image, ox, oy, h, w);
  auto dilated = polar_of(warp_about(image, 0.0, factor, ox, oy), ox, oy, h, w);
  return below("polar-dilation-factor", describe({{"factor", factor}, {"shift", exact}, {"rounded", double(m)}}), "mad",
               mad_from_column(dilated, shift_columns(base, m), static_cast<std::size_t>(std::max(0L, m))), threshold);
}

std::vector<EquivarianceRecord> check_model_equivariance(Model<float>& model, const Dataset& data,
                                                         const ModelCheckOptions& opt) {
  if (!is_ptn(model.config.variant)) throw ConfigError("model checks need a PTN checkpoint");
  if (data.height != model.config.input_size) throw ConfigError("dataset does not match the model input size");
  const std::size_t n = std::min(opt.samples, data.size());
  if (n == 0) throw ArgumentError("model checks need at least one sample");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  const auto images = data.images(idx);
  const std::size_t size = data.height;

  Tape<float> tape;
  tape.set_recording(false);
  auto base = forward_ptn(tape, model, Var<float>(images), Mode::eval);
  const auto& feats = base.last_features.value();
  const std::size_t fc = feats.dim(1), fh = feats.dim(2), fw = feats.dim(3), per = fc * fh * fw;

  std::vector<EquivarianceRecord> out;
  {
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) total += pearson(feats.raw() + i * per, feats.raw() + i * per, per);
    out.push_back(above("model-feature-identity", "angle=0", "correlation", total / double(n), 0.999999));
  }
  {
    Tensor<float> rotated(images.shape());
    const std::size_t px = size * size;
    for (std::size_t i = 0; i < n; ++i) {
      Tensor<float> one({1, 1, size, size});
      std::copy_n(images.raw() + i * px, px, one.raw());
      auto r = similarity_warp(one, Sim2Params{std::numbers::pi, 1.0, 0.0, 0.0});
      std::copy_n(r.raw(), px, rotated.raw() + i * px);
    }
    auto turned = forward_ptn(tape, model, Var<float>(rotated), Mode::eval);
    const auto expected = circshift_rows(feats, static_cast<long>(fh / 2));
    double total = 0;
    for (std::size_t i = 0; i < n; ++i)
      total += pearson(turned.last_features.value().raw() + i * per, expected.raw() + i * per, per);
    out.push_back(above("model-rotation-feature-shift",
                        describe({{"angle_deg", 180.0}, {"row_shift", double(fh / 2)}, {"samples", double(n)}}),
                        "correlation", total / double(n), opt.correlation_threshold));
  }
  {
    const auto pred = argmax_rows(base.logits.value());
    std::size_t agree = 0, total = 0;
    const long s = opt.shift, sz = static_cast<long>(size);
    for (auto [dy, dx] : {std::pair{s, s}, std::pair{s, -s}, std::pair{-s, s}, std::pair{-s, -s}}) {
      std::vector<std::size_t> keep;
      for (std::size_t i = 0; i < n; ++i) {
        long x0 = sz, x1 = -1, y0 = sz, y1 = -1;
        for (long y = 0; y < sz; ++y)
          for (long x = 0; x < sz; ++x)
            if (images[(i * size + y) * size + x] > 0) x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
        if (x1 < 0) continue;
        if (x0 + dx >= 0 && x1 + dx < sz && y0 + dy >= 0 && y1 + dy < sz) keep.push_back(i);
      }
      if (keep.empty()) continue;
      auto moved = shift2d(data.images(std::vector<std::size_t>(keep.begin(), keep.end())), dy, dx);
      auto logits = forward_ptn(tape, model, Var<float>(moved), Mode::eval).logits;
      const auto p2 = argmax_rows(logits.value());
      for (std::size_t j = 0; j < keep.size(); ++j) agree += p2[j] == pred[keep[j]];
      total += keep.size();
    }
    const double frac = total ? static_cast<double>(agree) / static_cast<double>(total) : 0.0;
    out.push_back(above("model-translation-agreement", describe({{"shift", double(s)}, {"pairs", double(total)}}),
                        "agreement", frac, opt.agreement_threshold));
  }
  {
    const long sp = model.config.classifier_stride_product();
    const long ph = static_cast<long>(model.config.polar_height);
    const long k = (ph % (2 * sp) == 0) ? ph / 2 : sp;
    auto shifted = circshift_rows(base.polar.value(), k);
    auto logits = forward_classifier(tape, model, Var<float>(shifted), Mode::eval).logits;
    double worst = 0;
    for (std::size_t i = 0; i < logits.value().size(); ++i)
      worst = std::max(worst, static_cast<double>(std::abs(logits.value()[i] - base.logits.value()[i])));
    out.push_back(below("model-fixed-origin-logit-invariance", describe({{"row_shift", double(k)}}), "max-abs", worst,
                        opt.logit_threshold));
  }
  return out;
}

Tensor<double> smooth_test_image(std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(0.3 * size, 0.7 * size), sig(0.065 * size, 0.125 * size);
  Tensor<double> img({1, 1, size, size});
  for (int b = 0; b < 3; ++b) {
    const double cx = pos(rng), cy = pos(rng), sx = sig(rng), sy = sig(rng);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x)
        img.at(0, 0, y, x) += std::exp(-0.5 * (std::pow((x - cx) / sx, 2) + std::pow((y - cy) / sy, 2)));
  }
  double m = 0;
  for (auto v : img.data()) m = std::max(m, v);
  for (auto& v : img.data()) v /= m;
  return img;
}

Tensor<double> disk_image(std::size_t size, double radius) {
  Tensor<double> img({1, 1, size, size});
  const double c = (static_cast<double>(size) - 1.0) / 2.0;
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x)
      img.at(0, 0, y, x) = std::clamp(radius + 0.5 - std::hypot(x - c, y - c), 0.0, 1.0);
  return img;
}

Tensor<double> gaussian_blur(const Tensor<double>& image, double sigma) {
  if (!(sigma > 0)) return image;
  const long r = static_cast<long>(std::ceil(3 * sigma));
  std::vector<double> k(2 * r + 1);
  double total = 0;
  for (long i = -r; i <= r; ++i) total += k[i + r] = std::exp(-0.5 * double(i * i) / (sigma * sigma));
  for (auto& v : k) v /= total;
  const long h = static_cast<long>(image.dim(2)), w = static_cast<long>(image.dim(3));
  const std::size_t planes = image.dim(0) * image.dim(1);
  Tensor<double> tmp(image.shape()), out(image.shape());
  for (std::size_t p = 0; p < planes; ++p) {
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x) {
        double s = 0;
        for (long i = -r; i <= r; ++i)
          if (x + i >= 0 && x + i < w) s += k[i + r] * image[(p * h + y) * w + x + i];
        tmp[(p * h + y) * w + x] = s;
      }
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x) {
        double s = 0;
        for (long i = -r; i <= r; ++i)
          if (y + i >= 0 && y + i < h) s += k[i + r] * tmp[(p * h + y + i) * w + x];
        out[(p * h + y) * w + x] = s;
      }
  }
  return out;
}

EquivarianceReport library_report(std::uint64_t seed, const Tensor<double>* digit) {
  EquivarianceReport report;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Tensor<double> kernel({3, 2, 3, 3}), image({1, 2, 16, 16});
  for (auto& v : kernel.data()) v = g(rng);
  for (auto& v : image.data()) v = g(rng);
  report.add(check_shift_equivariance(kernel, image, {{0, 0}, {1, 0}, {5, 0}, {8, 0}, {2, 3}, {-3, 1}}));
  report.records.push_back(check_delta_response(9, 3, 4, 4, 0, 2));
  report.records.push_back(check_delta_response(9, 5, 2, 6, 4, 1));

  const std::size_t n = 28;
  const auto smooth = smooth_test_image(n, seed);
  const double ox = 13.3, oy = 14.1;
  report.add(check_polar_rotation(smooth, ox, oy, {0, 1, long(n / 4), long(n / 2)}));
  report.add(check_polar_dilation(smooth, ox, oy, {0, 1, 4}));
  report.records.push_back(check_polar_dilation_factor(smooth, ox, oy, 2.4, 0.05));

  const double c = (n - 1.0) / 2.0;
  auto disk = check_polar_rotation(disk_image(n, 7.0), c, c, {long(n / 4)}, 1e-6);
  disk[0].claim = "polar-rotation-disk";
  report.add(disk);
  if (digit) {
    auto blurred = gaussian_blur(*digit, 1.0);
    auto rec = check_polar_rotation(blurred, (digit->dim(3) - 1.0) / 2.0, (digit->dim(2) - 1.0) / 2.0,
                                    {long(digit->dim(2) / 2)});
    rec[0].claim = "polar-rotation-blurred-digit";
    report.add(rec);
  }
  return report;
}

}  // namespace ptn
