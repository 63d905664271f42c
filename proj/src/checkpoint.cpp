#include "ptn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <map>

#include "ptn/datasets.hpp"
#include "ptn/errors.hpp"

namespace ptn {

namespace {

constexpr char kMagic[] = "PTNCKPT1";
constexpr std::size_t kMagicSize = 8;
constexpr std::uint32_t kMaxRank = 16;

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}

  template <typename U>
  U le(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n)
      throw FormatError(std::string("checkpoint: truncated ") + what + " at byte offset " + std::to_string(pos_));
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const NamedTensors& tensors) {
  std::vector<std::uint8_t> out(kMagic, kMagic + kMagicSize);
  for (const auto& [name, t] : tensors) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put_le<std::uint64_t>(out, e);
    for (float v : t.data()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

NamedTensors decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.take(kMagicSize, "magic");
  if (std::memcmp(magic.data(), kMagic, kMagicSize) != 0) throw FormatError("checkpoint: bad magic at byte offset 0");
  NamedTensors out;
  while (!r.done()) {
    const std::size_t record = r.pos();
    const auto len = r.le<std::uint32_t>("name length");
    auto name_bytes = r.take(len, "name");
    std::string name(name_bytes.begin(), name_bytes.end());
    const auto rank = r.le<std::uint32_t>("rank");
    if (rank > kMaxRank)
      throw FormatError("checkpoint: rank " + std::to_string(rank) + " of '" + name + "' at byte offset " +
                        std::to_string(record));
    Shape shape;
    std::size_t count = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto e = r.le<std::uint64_t>("extent");
      if (e > (std::uint64_t(1) << 32) || (e && count > (std::size_t(1) << 34) / e))
        throw FormatError("checkpoint: extent too large at byte offset " + std::to_string(r.pos() - 8));
      shape.push_back(static_cast<std::size_t>(e));
      count *= static_cast<std::size_t>(e);
    }
    if (count > r.remaining() / 4)
      throw FormatError("checkpoint: truncated data of '" + name + "' at byte offset " + std::to_string(r.pos()));
    Tensor<float> t(shape);
    for (auto& v : t.data()) v = std::bit_cast<float>(r.le<std::uint32_t>("data"));
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
  const auto tmp = path.string() + ".tmp";
  write_file(tmp, encode_checkpoint(tensors));
  std::filesystem::rename(tmp, path);
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path.string());
  return decode_checkpoint(read_file(path));
}

template <typename T>
void save_model(const std::filesystem::path& path, const Model<T>& model) {
  NamedTensors named;
  for (auto& [name, t] : model.state()) named.emplace_back(name, t.template cast<float>());
  save_checkpoint(path, named);
}

template <typename T>
Model<T> load_model(const std::filesystem::path& path, const NetworkConfig& config) {
  auto named = load_checkpoint(path);
  std::map<std::string, Tensor<T>> by_name;
  for (auto& [name, t] : named)
    if (!by_name.emplace(name, t.template cast<T>()).second) throw FormatError("checkpoint: duplicate tensor " + name);
  auto model = build<T>(config, 0);
  model.load_state(by_name);
  return model;
}

template void save_model<float>(const std::filesystem::path&, const Model<float>&);
template void save_model<double>(const std::filesystem::path&, const Model<double>&);
template Model<float> load_model<float>(const std::filesystem::path&, const NetworkConfig&);
template Model<double> load_model<double>(const std::filesystem::path&, const NetworkConfig&);

}  // namespace ptn
