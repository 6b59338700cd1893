#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "coreselect/binary_io.hpp"
#include "coreselect/error.hpp"
#include "coreselect/rng.hpp"

namespace coreselect {

struct ImageShape {
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const { return channels * height * width; }
  std::size_t plane() const { return height * width; }
  bool operator==(const ImageShape&) const = default;
};

enum class Split { train, test };

// A single image viewed inside a Dataset. Pixels are channel-major.
struct Example {
  std::span<const double> pixels;
  ImageShape shape;
  std::size_t index = 0;
  std::optional<int> label;
};

struct Dataset {
  std::string name;
  Split split = Split::train;
  ImageShape shape;
  std::vector<double> pixels;  // size() * shape.size(), example-major
  std::optional<std::vector<int>> labels;
  int num_classes = 0;

  std::size_t size() const { return shape.size() == 0 ? 0 : pixels.size() / shape.size(); }
  bool has_labels() const { return labels.has_value(); }

  std::span<const double> image(std::size_t k) const {
    return {pixels.data() + k * shape.size(), shape.size()};
  }
  Example example(std::size_t k) const {
    Example e{image(k), shape, k, std::nullopt};
    if (labels) e.label = (*labels)[k];
    return e;
  }
  int label(std::size_t k) const {
    if (!labels) throw ConfigError("dataset '" + name + "' has no labels");
    return (*labels)[k];
  }
};

// Keeps the first `limit` examples (0 keeps everything).
inline Dataset take_first(Dataset ds, std::size_t limit) {
  if (limit == 0 || limit >= ds.size()) return ds;
  ds.pixels.resize(limit * ds.shape.size());
  if (ds.labels) ds.labels->resize(limit);
  return ds;
}

// ---------------------------------------------------------------------------
// IDX (MNIST family). Big-endian headers; images 0x00000803, labels 0x00000801.

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

inline Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto image_bytes = io::read_file(images_path);
  io::Reader img(image_bytes, images_path.string());
  const auto magic = img.u32_be("magic");
  if (magic != kIdxImageMagic) throw FormatError(images_path.string() + ": bad magic for IDX images");
  const std::size_t count = img.u32_be("image count");
  const std::size_t rows = img.u32_be("rows");
  const std::size_t cols = img.u32_be("cols");
  const std::size_t payload = count * rows * cols;
  if (img.remaining() != payload)
    throw FormatError(images_path.string() + ": image payload is " + std::to_string(img.remaining()) +
                      " bytes but header declares " + std::to_string(payload));

  Dataset ds;
  ds.name = images_path.filename().string();
  ds.shape = {1, rows, cols};
  ds.pixels.resize(payload);
  const std::uint8_t* px = img.take(payload, "pixels");
  for (std::size_t i = 0; i < payload; ++i) ds.pixels[i] = px[i] / 255.0;

  if (!labels_path.empty()) {
    const auto label_bytes = io::read_file(labels_path);
    io::Reader lab(label_bytes, labels_path.string());
    if (lab.u32_be("magic") != kIdxLabelMagic)
      throw FormatError(labels_path.string() + ": bad magic for IDX labels");
    const std::size_t label_count = lab.u32_be("label count");
    if (label_count != count)
      throw FormatError(labels_path.string() + ": label count " + std::to_string(label_count) +
                        " does not match image count " + std::to_string(count));
    if (lab.remaining() != label_count)
      throw FormatError(labels_path.string() + ": label payload is " + std::to_string(lab.remaining()) +
                        " bytes but header declares " + std::to_string(label_count));
    const std::uint8_t* lb = lab.take(label_count, "labels");
    std::vector<int> labels(lb, lb + label_count);
    ds.num_classes = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
    ds.labels = std::move(labels);
  }
  return ds;
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline void write_idx(const Dataset& ds, const std::filesystem::path& images_path,
                      const std::filesystem::path& labels_path) {
  if (ds.shape.channels != 1) throw ConfigError("IDX export needs single-channel images");
  io::Writer img;
  img.u32_be(kIdxImageMagic);
  img.u32_be(static_cast<std::uint32_t>(ds.size()));
  img.u32_be(static_cast<std::uint32_t>(ds.shape.height));
  img.u32_be(static_cast<std::uint32_t>(ds.shape.width));
  for (double v : ds.pixels) img.u8(to_byte(v));
  io::write_file(images_path, img.data());
  if (!labels_path.empty()) {
    io::Writer lab;
    lab.u32_be(kIdxLabelMagic);
    lab.u32_be(static_cast<std::uint32_t>(ds.size()));
    for (std::size_t k = 0; k < ds.size(); ++k) lab.u8(static_cast<std::uint8_t>(ds.label(k)));
    io::write_file(labels_path, lab.data());
  }
}

// ---------------------------------------------------------------------------
// CIFAR binary: 1 label byte + 3x32x32 channel-major pixel bytes per record.

inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;
inline constexpr std::size_t kCifarRecord = kCifarPixels + 1;

inline Dataset load_cifar_binary(const std::vector<std::filesystem::path>& files) {
  Dataset ds;
  ds.name = files.empty() ? "cifar" : files.front().filename().string();
  ds.shape = {3, kCifarSide, kCifarSide};
  ds.num_classes = 10;
  std::vector<int> labels;
  for (const auto& path : files) {
    const auto bytes = io::read_file(path);
    if (bytes.size() % kCifarRecord != 0)
      throw FormatError(path.string() + ": length " + std::to_string(bytes.size()) +
                        " is not a multiple of the 3073-byte record size");
    for (std::size_t off = 0; off < bytes.size(); off += kCifarRecord) {
      labels.push_back(bytes[off]);
      for (std::size_t i = 0; i < kCifarPixels; ++i) ds.pixels.push_back(bytes[off + 1 + i] / 255.0);
    }
  }
  for (int l : labels)
    if (l >= ds.num_classes) throw DataError(ds.name + ": label " + std::to_string(l) + " out of range");
  ds.labels = std::move(labels);
  return ds;
}

inline void write_cifar_binary(const Dataset& ds, const std::filesystem::path& path) {
  if (!(ds.shape == ImageShape{3, kCifarSide, kCifarSide}))
    throw ConfigError("CIFAR export needs 3x32x32 images");
  io::Writer w;
  for (std::size_t k = 0; k < ds.size(); ++k) {
    w.u8(static_cast<std::uint8_t>(ds.label(k)));
    for (double v : ds.image(k)) w.u8(to_byte(v));
  }
  io::write_file(path, w.data());
}

// ---------------------------------------------------------------------------
// Synthetic images with planted "hard" examples.
//
// Normal examples carry one class texture (period lines at one of four
// orientations) over the whole image plus per-example noise. Hard examples
// carry their class texture on a band of primary_width columns at the left or
// right edge and a different class texture on the rest, so crops from the two
// sides disagree. The label is the texture on the larger band.

struct SyntheticSpec {
  std::size_t n = 2000;
  std::size_t image_size = 16;
  std::size_t channels = 1;
  int num_classes = 4;
  double hard_fraction = 0.1;
  std::uint64_t seed = 1;
};

struct SyntheticMeta {
  int primary = 0;        // label texture
  int secondary = -1;     // right-region texture, -1 for normal examples
  std::size_t primary_width = 0;  // columns carrying the primary texture
  bool primary_left = true;
  double noise = 0.0;

  bool is_primary_column(std::size_t x, std::size_t side) const {
    return primary_left ? x < primary_width : x >= side - primary_width;
  }
};

struct SyntheticDataset {
  Dataset dataset;
  std::vector<std::size_t> hard_indices;  // ascending
  std::vector<SyntheticMeta> meta;
};

inline std::size_t synthetic_primary_width(std::size_t image_size) {
  return image_size / 2 + std::max<std::size_t>(1, image_size / 16);
}

inline double texture_value(int cls, std::size_t y, std::size_t x, std::size_t phase) {
  const std::size_t period = 4 + static_cast<std::size_t>(cls / 4);
  std::size_t u = 0;
  switch (cls % 4) {
    case 0: u = y; break;
    case 1: u = x; break;
    case 2: u = x + y; break;
    default: u = x + period * 64 - (y % (period * 64)); break;
  }
  return (u + phase) % period == 0 ? 1.0 : 0.0;
}

inline SyntheticDataset make_synthetic(const SyntheticSpec& spec, Split split = Split::train) {
  if (!(spec.hard_fraction > 0.0 && spec.hard_fraction < 1.0))
    throw ConfigError("synthetic.hard_fraction must be in (0, 1)");
  if (spec.image_size < 8) throw ConfigError("synthetic.image_size must be >= 8");
  if (spec.num_classes < 2) throw ConfigError("synthetic.num_classes must be >= 2");
  if (spec.channels == 0) throw ConfigError("synthetic.channels must be >= 1");
  if (spec.n == 0) throw ConfigError("synthetic.n must be >= 1");

  const std::uint64_t split_id = split == Split::train ? 0 : 1;
  CounterRng rng(spec.seed, Stream::synthetic, split_id);

  const std::size_t n = spec.n;
  const std::size_t side = spec.image_size;
  const auto n_hard = static_cast<std::size_t>(std::llround(spec.hard_fraction * static_cast<double>(n)));

  SyntheticDataset out;
  Dataset& ds = out.dataset;
  ds.name = "synthetic";
  ds.split = split;
  ds.shape = {spec.channels, side, side};
  ds.num_classes = spec.num_classes;
  ds.pixels.assign(n * ds.shape.size(), 0.0);

  // Balanced labels: label = position in a random permutation mod classes.
  const auto label_perm = random_permutation(n, rng);
  std::vector<int> labels(n);
  for (std::size_t k = 0; k < n; ++k) labels[k] = static_cast<int>(label_perm[k] % spec.num_classes);

  auto hard_perm = random_permutation(n, rng);
  out.hard_indices.assign(hard_perm.begin(), hard_perm.begin() + static_cast<std::ptrdiff_t>(n_hard));
  std::sort(out.hard_indices.begin(), out.hard_indices.end());
  std::vector<bool> is_hard(n, false);
  for (auto k : out.hard_indices) is_hard[k] = true;

  const std::size_t hard_width = synthetic_primary_width(side);
  out.meta.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    CounterRng ex(spec.seed, Stream::synthetic, split_id, 1 + k);
    SyntheticMeta& m = out.meta[k];
    m.primary = labels[k];
    m.primary_width = side;
    if (is_hard[k]) {
      m.secondary = static_cast<int>((labels[k] + 1 + ex.below(spec.num_classes - 1)) % spec.num_classes);
      m.primary_width = hard_width;
      m.primary_left = ex.bernoulli(0.5);
    }
    m.noise = ex.uniform(0.02, 0.10);
    const std::size_t period_a = 4 + static_cast<std::size_t>(m.primary / 4);
    const std::size_t phase_a = ex.below(period_a);
    const double amp_a = ex.uniform(0.5, 1.0);
    std::size_t phase_b = 0;
    double amp_b = 0.0;
    if (m.secondary >= 0) {
      phase_b = ex.below(4 + static_cast<std::size_t>(m.secondary / 4));
      amp_b = ex.uniform(0.9, 1.0);
    }
    double* img = ds.pixels.data() + k * ds.shape.size();
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        const double base = m.is_primary_column(x, side) ? amp_a * texture_value(m.primary, y, x, phase_a)
                                        : amp_b * texture_value(m.secondary, y, x, phase_b);
        for (std::size_t c = 0; c < spec.channels; ++c)
          img[c * side * side + y * side + x] = std::clamp(base + m.noise * ex.normal(), 0.0, 1.0);
      }
    }
  }
  ds.labels = std::move(labels);
  return out;
}

// ---------------------------------------------------------------------------
// Per-channel normalization.

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

inline ChannelStats channel_stats(const Dataset& ds) {
  const std::size_t c_count = ds.shape.channels;
  const std::size_t plane = ds.shape.plane();
  ChannelStats st{std::vector<double>(c_count, 0.0), std::vector<double>(c_count, 0.0)};
  const double count = static_cast<double>(ds.size() * plane);
  if (count == 0) throw ConfigError("cannot compute statistics of an empty dataset");
  for (std::size_t c = 0; c < c_count; ++c) {
    double sum = 0.0;
    for (std::size_t k = 0; k < ds.size(); ++k)
      for (std::size_t i = 0; i < plane; ++i) sum += ds.pixels[k * ds.shape.size() + c * plane + i];
    const double mean = sum / count;
    double sq = 0.0;
    for (std::size_t k = 0; k < ds.size(); ++k)
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = ds.pixels[k * ds.shape.size() + c * plane + i] - mean;
        sq += d * d;
      }
    st.mean[c] = mean;
    st.stddev[c] = std::sqrt(sq / count);
  }
  return st;
}

inline void validate_stats(const ChannelStats& stats, std::size_t channels) {
  if (stats.mean.size() != channels || stats.stddev.size() != channels)
    throw ConfigError("normalization statistics do not match channel count");
  for (std::size_t c = 0; c < channels; ++c)
    if (!(stats.stddev[c] > 1e-12))
      throw ConfigError("channel " + std::to_string(c) + " has zero standard deviation");
}

inline void normalize_pixels(std::span<double> pixels, const ImageShape& shape, const ChannelStats& stats) {
  const std::size_t plane = shape.plane();
  for (std::size_t off = 0; off < pixels.size(); off += shape.size())
    for (std::size_t c = 0; c < shape.channels; ++c) {
      const double m = stats.mean[c];
      const double s = stats.stddev[c];
      for (std::size_t i = 0; i < plane; ++i) {
        double& v = pixels[off + c * plane + i];
        v = (v - m) / s;
      }
    }
}

inline Dataset normalize(Dataset ds, const ChannelStats& stats) {
  validate_stats(stats, ds.shape.channels);
  normalize_pixels(ds.pixels, ds.shape, stats);
  return ds;
}

}  // namespace coreselect
