#include "ptn/datasets.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "ptn/errors.hpp"
#include "ptn/parallel.hpp"

namespace ptn {

namespace {

constexpr std::size_t kMaxRank = 8;

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t at) {
  return (std::uint32_t(b[at]) << 24) | (std::uint32_t(b[at + 1]) << 16) | (std::uint32_t(b[at + 2]) << 8) |
         std::uint32_t(b[at + 3]);
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Per-item stream: independent of how items are scheduled.
struct ItemRng {
  std::uint64_t state;
  ItemRng(std::uint64_t seed, std::size_t split, std::size_t index)
      : state(splitmix64(splitmix64(seed) ^ splitmix64((std::uint64_t(split) << 40) ^ index))) {}
  double uniform() {  // [0, 1)
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return static_cast<double>(z >> 11) * 0x1.0p-53;
  }
};

std::uint8_t quantize(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

struct Extent {
  long x0, x1, y0, y1;
  bool empty;
};

Extent nonzero_extent(const Tensor<float>& img) {
  const std::size_t h = img.dim(2), w = img.dim(3);
  Extent e{0, -1, 0, -1, true};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      if (img[y * w + x] > 0.0f) {
        const long lx = static_cast<long>(x), ly = static_cast<long>(y);
        if (e.empty) e = {lx, lx, ly, ly, false};
        e.x0 = std::min(e.x0, lx);
        e.x1 = std::max(e.x1, lx);
        e.y0 = std::min(e.y0, ly);
        e.y1 = std::max(e.y1, ly);
      }
  return e;
}

}  // namespace

IdxArray parse_idx_bytes(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw FormatError("idx: header truncated at byte offset " + std::to_string(bytes.size()));
  if (bytes[0] != 0 || bytes[1] != 0) throw FormatError("idx: bad magic at byte offset 0");
  if (bytes[2] != 0x08)
    throw FormatError("idx: unsupported element type 0x" + std::to_string(bytes[2]) + " at byte offset 2");
  const std::size_t rank = bytes[3];
  if (rank == 0 || rank > kMaxRank) throw FormatError("idx: bad rank " + std::to_string(rank) + " at byte offset 3");
  const std::size_t header = 4 + 4 * rank;
  if (bytes.size() < header)
    throw FormatError("idx: dimension table truncated at byte offset " + std::to_string(bytes.size()));
  IdxArray out;
  std::size_t total = 1;
  for (std::size_t d = 0; d < rank; ++d) {
    const std::size_t extent = read_be32(bytes, 4 + 4 * d);
    if (extent != 0 && total > (std::size_t(1) << 40) / extent)
      throw FormatError("idx: extent too large at byte offset " + std::to_string(4 + 4 * d));
    total *= extent;
    out.shape.push_back(extent);
  }
  const std::size_t available = bytes.size() - header;
  if (available < total)
    throw FormatError("idx: data truncated at byte offset " + std::to_string(bytes.size()) + " (expected " +
                      std::to_string(header + total) + " bytes)");
  if (available > total) throw FormatError("idx: trailing bytes at byte offset " + std::to_string(header + total));
  out.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return out;
}

Tensor<float> parse_idx(std::span<const std::uint8_t> bytes) {
  auto arr = parse_idx_bytes(bytes);
  Tensor<float> t(arr.shape);
  for (std::size_t i = 0; i < arr.data.size(); ++i) t[i] = static_cast<float>(arr.data[i]) / 255.0f;
  return t;
}

std::vector<std::uint8_t> encode_idx(const Shape& shape, std::span<const std::uint8_t> data) {
  if (shape.empty() || shape.size() > kMaxRank) throw DimensionError("idx: rank must be 1.." + std::to_string(kMaxRank));
  if (shape_size(shape) != data.size()) throw DimensionError("idx: data size does not match " + shape_string(shape));
  std::vector<std::uint8_t> out{0, 0, 0x08, static_cast<std::uint8_t>(shape.size())};
  for (auto e : shape) {
    if (e > 0xffffffffULL) throw DimensionError("idx: extent exceeds 32 bits");
    put_be32(out, static_cast<std::uint32_t>(e));
  }
  out.insert(out.end(), data.begin(), data.end());
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

Tensor<float> Dataset::images(std::span<const std::size_t> indices) const {
  const std::size_t per = height * width;
  Tensor<float> out({indices.size(), 1, height, width});
  float* dst = out.raw();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= size()) throw ArgumentError("dataset index out of range");
    const std::uint8_t* src = pixels.data() + indices[k] * per;
    for (std::size_t i = 0; i < per; ++i) dst[k * per + i] = static_cast<float>(src[i]) / 255.0f;
  }
  return out;
}

Tensor<float> Dataset::image(std::size_t index) const {
  const std::size_t idx[] = {index};
  return images(idx);
}

Dataset Dataset::slice(std::size_t begin, std::size_t count) const {
  if (begin + count > size()) throw ArgumentError("dataset slice out of range");
  const std::size_t per = height * width;
  Dataset d;
  d.height = height;
  d.width = width;
  d.pixels.assign(pixels.begin() + static_cast<std::ptrdiff_t>(begin * per),
                  pixels.begin() + static_cast<std::ptrdiff_t>((begin + count) * per));
  d.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(begin),
                  labels.begin() + static_cast<std::ptrdiff_t>(begin + count));
  if (!provenance.empty())
    d.provenance.assign(provenance.begin() + static_cast<std::ptrdiff_t>(begin),
                        provenance.begin() + static_cast<std::ptrdiff_t>(begin + count));
  if (!placement.empty())
    d.placement.assign(placement.begin() + static_cast<std::ptrdiff_t>(begin),
                       placement.begin() + static_cast<std::ptrdiff_t>(begin + count));
  return d;
}

void Dataset::append(const Dataset& other) {
  if (size() == 0 && pixels.empty()) {
    height = other.height;
    width = other.width;
  }
  if (other.height != height || other.width != width) throw DimensionError("cannot append images of another size");
  pixels.insert(pixels.end(), other.pixels.begin(), other.pixels.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
  provenance.insert(provenance.end(), other.provenance.begin(), other.provenance.end());
  placement.insert(placement.end(), other.placement.begin(), other.placement.end());
}

Dataset parse_amat(const std::string& text) {
  constexpr std::size_t kPixels = 28 * 28;
  Dataset d;
  d.height = d.width = 28;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++line_no;
    values.clear();
    const char* p = line.data();
    const char* end = p + line.size();
    while (p < end) {
      while (p < end && std::isspace(static_cast<unsigned char>(*p))) ++p;
      if (p >= end) break;
      const char* tok = p;
      while (p < end && !std::isspace(static_cast<unsigned char>(*p))) ++p;
      double v = 0;
      auto [ptr, ec] = std::from_chars(tok, p, v);
      if (ec != std::errc() || ptr != p || !std::isfinite(v))
        throw FormatError("amat: line " + std::to_string(line_no) + ": bad number '" + std::string(tok, p) + "'");
      values.push_back(v);
    }
    if (values.empty()) continue;
    if (values.size() != kPixels + 1)
      throw FormatError("amat: line " + std::to_string(line_no) + ": expected " + std::to_string(kPixels + 1) +
                        " columns, found " + std::to_string(values.size()));
    const double label = values.back();
    if (label != std::floor(label) || label < 0 || label > 9)
      throw FormatError("amat: line " + std::to_string(line_no) + ": bad label " + format_double(label));
    for (std::size_t i = 0; i < kPixels; ++i) d.pixels.push_back(quantize(static_cast<float>(values[i])));
    d.labels.push_back(static_cast<int>(label));
  }
  return d;
}

Dataset MnistPool::all() const {
  Dataset d = train;
  d.append(test);
  return d;
}

namespace {

Dataset load_idx_pair(const std::filesystem::path& images, const std::filesystem::path& labels) {
  auto img = parse_idx_bytes(read_file(images));
  auto lab = parse_idx_bytes(read_file(labels));
  if (img.shape.size() != 3) throw FormatError(images.string() + ": expected a rank-3 image array");
  if (lab.shape.size() != 1 || lab.shape[0] != img.shape[0])
    throw FormatError(labels.string() + ": label count does not match " + images.string());
  Dataset d;
  d.height = img.shape[1];
  d.width = img.shape[2];
  d.pixels = std::move(img.data);
  for (auto v : lab.data) {
    if (v > 9) throw FormatError(labels.string() + ": label " + std::to_string(v) + " out of range");
    d.labels.push_back(v);
  }
  return d;
}

}  // namespace

MnistPool load_mnist(const std::filesystem::path& dir) {
  return {load_idx_pair(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte"),
          load_idx_pair(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte")};
}

DatasetSpec DatasetSpec::preset(const std::string& name) {
  constexpr double pi = std::numbers::pi;
  DatasetSpec s;
  s.name = name;
  if (name == "rotmnist") {
    s.train = 10000, s.val = 2000, s.test = 50000;
    s.angle_max = 2 * pi;
  } else if (name == "mnist-r") {
    s.train = 60000, s.test = 10000, s.pooled = false;
    s.angle_min = -pi / 2, s.angle_max = pi / 2;
  } else if (name == "mnist-rts") {
    s.train = 60000, s.test = 10000, s.pooled = false;
    s.canvas = 42;
    s.angle_min = -pi / 4, s.angle_max = pi / 4;
    s.scale_min = 0.7, s.scale_max = 1.2;
    s.placement = Placement::anywhere;
  } else if (name == "sim2mnist") {
    s.train = 10000, s.val = 5000, s.test = 50000;
    s.canvas = 96;
    s.angle_max = 2 * pi;
    s.scale_min = 1.0, s.scale_max = 2.4;
    s.placement = Placement::anywhere;
  } else {
    throw ConfigError("unknown dataset '" + name + "' (expected rotmnist, mnist-r, mnist-rts or sim2mnist)");
  }
  return s;
}

Dataset generate_split(const DatasetSpec& spec, const Dataset& base, std::size_t split_id, std::size_t first,
                       std::size_t count) {
  if (first + count > base.size())
    throw GenerationError("split needs base digits up to " + std::to_string(first + count) + ", pool has " +
                          std::to_string(base.size()));
  if (spec.scale_min <= 0 || spec.scale_max < spec.scale_min || spec.angle_max < spec.angle_min)
    throw ConfigError("dataset '" + spec.name + "': bad angle or scale range");
  const std::size_t c = spec.canvas;
  Dataset out;
  out.height = out.width = c;
  out.pixels.assign(count * c * c, 0);
  out.labels.resize(count);
  out.provenance.resize(count);
  out.placement.resize(count);

  const double diag = std::hypot(static_cast<double>(base.height), static_cast<double>(base.width));
  std::size_t ext = std::max<std::size_t>(c, static_cast<std::size_t>(std::ceil(spec.scale_max * diag)) + 4);
  if ((ext - c) % 2) ++ext;
  const long off = static_cast<long>((ext - c) / 2);

  std::vector<std::string> failures(count);
  parallel_for(count, [&](std::size_t i) {
    ItemRng rng(spec.seed, split_id, i);
    Sim2Params p;
    p.angle = spec.angle_min + rng.uniform() * (spec.angle_max - spec.angle_min);
    p.scale = spec.scale_min + rng.uniform() * (spec.scale_max - spec.scale_min);
    const double ux = rng.uniform(), uy = rng.uniform();
    const auto digit = base.image(first + i);

    // Support at zero shift, in canvas coordinates.
    auto wide = similarity_warp(digit, Sim2Params{p.angle, p.scale, 0.0, 0.0}, ext, ext);
    auto e = nonzero_extent(wide);
    if (!e.empty) {
      e.x0 -= off, e.x1 -= off, e.y0 -= off, e.y1 -= off;
      if (spec.placement == Placement::centered) {
        // Fixed placement keeps the benchmark's own behavior: rotated corners may
        // leave the frame, but the scaled digit itself must fit.
        const auto own = nonzero_extent(digit);
        const double extent = p.scale * static_cast<double>(std::max(own.x1 - own.x0, own.y1 - own.y0) + 1);
        if (extent > static_cast<double>(c)) {
          failures[i] = "item " + std::to_string(i) + " at scale " + format_double(p.scale) +
                        " is larger than the " + std::to_string(c) + "px canvas";
          return;
        }
      } else {
        // Sampled support can miss a rotated corner reaching up to one pixel past
        // it, and a fractional shift adds one more; keep two pixels clear.
        const double lx = 2.0 - e.x0, hx = static_cast<double>(c) - 3.0 - e.x1;
        const double ly = 2.0 - e.y0, hy = static_cast<double>(c) - 3.0 - e.y1;
        if (lx > hx || ly > hy) {
          failures[i] = "item " + std::to_string(i) + " at scale " + format_double(p.scale) +
                        " is larger than the " + std::to_string(c) + "px canvas";
          return;
        }
        p.dx = lx + ux * (hx - lx);
        p.dy = ly + uy * (hy - ly);
        out.placement[i] = {ux, uy};
      }
    }
    auto img = similarity_warp(digit, p, c, c);
    std::transform(img.raw(), img.raw() + img.size(), out.pixels.begin() + static_cast<std::ptrdiff_t>(i * c * c),
                   quantize);
    out.labels[i] = base.labels[first + i];
    out.provenance[i] = p;
  });
  for (const auto& f : failures)
    if (!f.empty()) throw GenerationError("dataset '" + spec.name + "': " + f);
  return out;
}

GeneratedDataset generate(const DatasetSpec& spec, const MnistPool& mnist) {
  GeneratedDataset g;
  if (spec.pooled) {
    const Dataset pool = mnist.all();
    g.train = generate_split(spec, pool, 0, 0, spec.train);
    g.val = generate_split(spec, pool, 1, spec.train, spec.val);
    g.test = generate_split(spec, pool, 2, spec.train + spec.val, spec.test);
  } else {
    g.train = generate_split(spec, mnist.train, 0, 0, spec.train);
    if (spec.val) g.val = generate_split(spec, mnist.train, 1, spec.train, spec.val);
    g.test = generate_split(spec, mnist.test, 2, 0, spec.test);
  }
  return g;
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir, const std::string& prefix) {
  std::filesystem::create_directories(dir);
  write_file(dir / (prefix + "-images-idx3-ubyte"), encode_idx({data.size(), data.height, data.width}, data.pixels));
  std::vector<std::uint8_t> labels(data.labels.begin(), data.labels.end());
  write_file(dir / (prefix + "-labels-idx1-ubyte"), encode_idx({data.size()}, labels));
  if (data.provenance.empty()) return;
  std::ofstream csv(dir / (prefix + "-provenance.csv"));
  if (!csv) throw IoError("cannot write provenance for " + prefix);
  csv << "index,label,angle_rad,scale,dx,dy\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& p = data.provenance[i];
    csv << i << ',' << data.labels[i] << ',' << format_double(p.angle) << ',' << format_double(p.scale) << ','
        << format_double(p.dx) << ',' << format_double(p.dy) << '\n';
  }
}

Dataset load_dataset(const std::filesystem::path& dir, const std::string& prefix) {
  Dataset d = load_idx_pair(dir / (prefix + "-images-idx3-ubyte"), dir / (prefix + "-labels-idx1-ubyte"));
  const auto csv_path = dir / (prefix + "-provenance.csv");
  std::ifstream csv(csv_path);
  if (!csv) return d;
  std::string line;
  std::getline(csv, line);
  std::size_t line_no = 1;
  while (std::getline(csv, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(row, cell, ',')) {
      try {
        v.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw FormatError(csv_path.string() + ": line " + std::to_string(line_no) + ": bad value '" + cell + "'");
      }
    }
    if (v.size() != 6) throw FormatError(csv_path.string() + ": line " + std::to_string(line_no) + ": expected 6 columns");
    d.provenance.push_back({v[2], v[3], v[4], v[5]});
  }
  if (d.provenance.size() != d.size()) throw FormatError(csv_path.string() + ": row count does not match the images");
  return d;
}

double ks_uniform(std::vector<double> sample, double lo, double hi) {
  if (sample.empty() || hi <= lo) throw ArgumentError("ks_uniform needs samples and hi > lo");
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = std::clamp((sample[i] - lo) / (hi - lo), 0.0, 1.0);
    d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  return d;
}

}  // namespace ptn
