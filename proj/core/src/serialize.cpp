#include "fedguard/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "fedguard/errors.hpp"

namespace fedguard {
namespace {

constexpr char kMagic[4] = {'F', 'G', 'P', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }

  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  double f64() {
    need(8, "f64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError("parameter stream truncated at byte " + std::to_string(pos_) + " reading " + what +
                        " (need " + std::to_string(n) + " bytes, " + std::to_string(bytes_.size() - pos_) +
                        " left)");
    }
  }

  std::size_t pos() const { return pos_; }
  void skip(std::size_t n) { pos_ += n; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_params(const ModelParams& params) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  out.reserve(4 + params.element_count() * 8 + params.tensors.size() * 20);
  for (const auto& t : params.tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.value.rank()));
    for (std::size_t d : t.value.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.value.values()) put_f64(out, v);
  }
  return out;
}

std::vector<Tensor> decode_tensors(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("parameter stream does not start with magic FGP1");
  }
  Reader in(bytes.subspan(4));
  std::vector<Tensor> tensors;
  while (!in.done()) {
    const std::uint32_t rank = in.u32();
    Shape shape(rank);
    for (auto& d : shape) d = in.u32();
    const std::size_t n = shape_size(shape);
    in.need(n * 8, "tensor data");
    std::vector<double> data(n);
    for (auto& v : data) v = in.f64();
    tensors.emplace_back(std::move(shape), std::move(data));
  }
  return tensors;
}

ModelParams decode_params(std::span<const std::uint8_t> bytes, const ModelSpec& spec) {
  auto tensors = decode_tensors(bytes);
  ModelParams params = zero_params(spec);
  if (tensors.size() != params.tensors.size()) {
    throw FormatError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                      std::to_string(params.tensors.size()));
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].shape() != params.tensors[i].value.shape()) {
      throw FormatError("checkpoint tensor " + std::to_string(i) + " has shape " +
                        shape_to_string(tensors[i].shape()) + ", model expects " +
                        shape_to_string(params.tensors[i].value.shape()));
    }
    params.tensors[i].value = std::move(tensors[i]);
  }
  return params;
}

void save_params(const std::filesystem::path& path, const ModelParams& params) {
  const auto bytes = encode_params(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

ModelParams load_params(const std::filesystem::path& path, const ModelSpec& spec) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_params(bytes, spec);
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t params_checksum(const ModelParams& params) { return fnv1a64(encode_params(params)); }

}  // namespace fedguard
