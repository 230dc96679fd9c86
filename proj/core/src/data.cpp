#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "fedguard/data.hpp"
#include "fedguard/errors.hpp"

namespace fedguard {
namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return (static_cast<std::uint32_t>(bytes[offset]) << 24) | (static_cast<std::uint32_t>(bytes[offset + 1]) << 16) |
         (static_cast<std::uint32_t>(bytes[offset + 2]) << 8) | static_cast<std::uint32_t>(bytes[offset + 3]);
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void require_header(std::span<const std::uint8_t> bytes, std::size_t header_bytes, std::uint32_t magic,
                    const char* kind) {
  if (bytes.size() < header_bytes) {
    throw FormatError(std::string("IDX ") + kind + " stream too short for its " + std::to_string(header_bytes) +
                      "-byte header (got " + std::to_string(bytes.size()) + " bytes)");
  }
  const std::uint32_t got = read_be32(bytes, 0);
  if (got != magic) {
    throw FormatError(std::string("IDX ") + kind + " magic mismatch: expected " + std::to_string(magic) + ", got " +
                      std::to_string(got));
  }
}

constexpr std::size_t kCanvas = 28;
constexpr std::size_t kBlobsPerClass = 3;
constexpr double kPixelNoise = 0.25;

std::vector<std::vector<double>> class_templates(std::size_t classes, Rng& rng) {
  std::uniform_real_distribution<double> centre(5.0, 23.0);
  std::uniform_real_distribution<double> width(2.0, 3.5);
  std::vector<std::vector<double>> templates(classes, std::vector<double>(kCanvas * kCanvas, 0.0));
  for (auto& t : templates) {
    for (std::size_t blob = 0; blob < kBlobsPerClass; ++blob) {
      const double cx = centre(rng), cy = centre(rng), s = width(rng);
      for (std::size_t y = 0; y < kCanvas; ++y) {
        for (std::size_t x = 0; x < kCanvas; ++x) {
          const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
          t[y * kCanvas + x] += std::exp(-(dx * dx + dy * dy) / (2.0 * s * s));
        }
      }
    }
    const double peak = *std::max_element(t.begin(), t.end());
    for (double& v : t) v /= peak;
  }
  return templates;
}

Dataset render(const std::vector<std::vector<double>>& templates, std::size_t n, Rng& rng) {
  const std::size_t classes = templates.size();
  Dataset ds{Tensor({n, 1, kCanvas, kCanvas}), std::vector<int>(n), classes};
  for (std::size_t i = 0; i < n; ++i) ds.labels[i] = static_cast<int>(i % classes);
  std::shuffle(ds.labels.begin(), ds.labels.end(), rng);

  std::uniform_real_distribution<double> amplitude(0.7, 1.0);
  std::normal_distribution<double> noise(0.0, kPixelNoise);
  const std::size_t stride = kCanvas * kCanvas;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = templates[static_cast<std::size_t>(ds.labels[i])];
    const double a = amplitude(rng);
    double* px = ds.images.data() + i * stride;
    for (std::size_t j = 0; j < stride; ++j) {
      const double v = std::clamp(a * t[j] + noise(rng), 0.0, 1.0);
      px[j] = std::round(v * 255.0) / 255.0;  // byte-quantised like real IDX pixels
    }
  }
  return ds;
}

}  // namespace

void Dataset::validate() const {
  if (labels.empty()) throw DomainError("dataset is empty");
  if (images.rank() != 4 || images.dim(0) != labels.size()) {
    throw DomainError("dataset images " + shape_to_string(images.shape()) + " do not match " +
                      std::to_string(labels.size()) + " labels");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw DomainError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
  for (double v : images.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("pixel value outside [0, 1]");
  }
}

Dataset Dataset::head(std::size_t n) const {
  n = std::min(n, size());
  const std::size_t stride = images.size() / std::max<std::size_t>(images.dim(0), 1);
  Shape shape = images.shape();
  shape[0] = n;
  std::vector<double> data(images.values().begin(), images.values().begin() + static_cast<std::ptrdiff_t>(n * stride));
  return Dataset{Tensor(std::move(shape), std::move(data)), std::vector<int>(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n)),
                 classes};
}

std::vector<std::uint8_t> maybe_gunzip(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 0x1f || bytes[1] != 0x8b) {
    return std::vector<std::uint8_t>(bytes.begin(), bytes.end());
  }
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw FormatError("cannot initialise gzip decoder");
  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> chunk(1 << 16);
  zs.next_in = const_cast<Bytef*>(bytes.data());
  zs.avail_in = static_cast<uInt>(bytes.size());
  int rc = Z_OK;
  do {
    zs.next_out = chunk.data();
    zs.avail_out = static_cast<uInt>(chunk.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw FormatError("corrupt gzip stream (zlib code " + std::to_string(rc) + ")");
    }
    out.insert(out.end(), chunk.begin(), chunk.begin() + static_cast<std::ptrdiff_t>(chunk.size() - zs.avail_out));
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw FormatError("truncated gzip stream");
    }
  } while (rc != Z_STREAM_END);
  inflateEnd(&zs);
  return out;
}

Tensor load_idx_images(std::span<const std::uint8_t> raw) {
  const auto bytes = maybe_gunzip(raw);
  require_header(bytes, 16, kIdxImageMagic, "image");
  const std::size_t n = read_be32(bytes, 4), rows = read_be32(bytes, 8), cols = read_be32(bytes, 12);
  const std::size_t expected = 16 + n * rows * cols;
  if (bytes.size() < expected) {
    throw FormatError("IDX image payload truncated: expected " + std::to_string(expected) + " bytes, got " +
                      std::to_string(bytes.size()));
  }
  Tensor images({n, 1, rows, cols});
  for (std::size_t i = 0; i < images.size(); ++i) images[i] = static_cast<double>(bytes[16 + i]) / 255.0;
  return images;
}

std::vector<int> load_idx_labels(std::span<const std::uint8_t> raw) {
  const auto bytes = maybe_gunzip(raw);
  require_header(bytes, 8, kIdxLabelMagic, "label");
  const std::size_t n = read_be32(bytes, 4);
  if (bytes.size() < 8 + n) {
    throw FormatError("IDX label payload truncated: expected " + std::to_string(8 + n) + " bytes, got " +
                      std::to_string(bytes.size()));
  }
  return std::vector<int>(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(n));
}

std::vector<std::uint8_t> encode_idx_images(const Tensor& images) {
  if (images.rank() != 4 || images.dim(1) != 1) {
    throw ShapeError("IDX images must be [N,1,rows,cols], got " + shape_to_string(images.shape()));
  }
  std::vector<std::uint8_t> out;
  out.reserve(16 + images.size());
  put_be32(out, kIdxImageMagic);
  put_be32(out, static_cast<std::uint32_t>(images.dim(0)));
  put_be32(out, static_cast<std::uint32_t>(images.dim(2)));
  put_be32(out, static_cast<std::uint32_t>(images.dim(3)));
  for (double v : images.values()) {
    out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  }
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(std::span<const int> labels) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + labels.size());
  put_be32(out, kIdxLabelMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (int y : labels) {
    if (y < 0 || y > 255) throw DomainError("label " + std::to_string(y) + " does not fit an IDX byte");
    out.push_back(static_cast<std::uint8_t>(y));
  }
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

Dataset load_idx_dataset(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                         std::optional<std::size_t> limit, std::size_t classes) {
  Dataset ds{load_idx_images(read_file(images_path)), load_idx_labels(read_file(labels_path)), classes};
  if (ds.images.dim(0) != ds.labels.size()) {
    throw FormatError(images_path.string() + " holds " + std::to_string(ds.images.dim(0)) + " images but " +
                      labels_path.string() + " holds " + std::to_string(ds.labels.size()) + " labels");
  }
  if (limit && *limit < ds.size()) ds = ds.head(*limit);
  ds.validate();
  return ds;
}

Dataset synthetic_dataset(std::size_t n, std::size_t classes, Rng& rng) {
  if (classes == 0) throw DomainError("synthetic dataset needs at least one class");
  if (n < classes) {
    throw DomainError("synthetic dataset needs n >= classes (n=" + std::to_string(n) +
                      ", classes=" + std::to_string(classes) + ")");
  }
  const auto templates = class_templates(classes, rng);
  return render(templates, n, rng);
}

TrainTest synthetic_train_test(std::size_t n_train, std::size_t n_test, std::size_t classes, Rng& rng) {
  if (classes == 0) throw DomainError("synthetic dataset needs at least one class");
  if (n_train < classes || n_test < classes) {
    throw DomainError("synthetic train and test sets each need at least `classes` samples");
  }
  const auto templates = class_templates(classes, rng);
  Dataset train = render(templates, n_train, rng);
  Dataset test = render(templates, n_test, rng);
  return {std::move(train), std::move(test)};
}

}  // namespace fedguard
