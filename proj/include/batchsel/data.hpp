#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <zlib.h>

#include "batchsel/random.hpp"

namespace batchsel {

enum class Split { kTrain, kTest };

// Immutable once built; inputs are row-major N x dim.
struct Dataset {
  std::vector<double> inputs;
  std::vector<std::int32_t> labels;
  std::size_t dim = 0;
  std::size_t num_classes = 0;
  Split split = Split::kTrain;
  std::string name;
  std::string note;  // loader metadata, e.g. achieved subset counts

  std::size_t size() const { return labels.size(); }
  const double* row(std::size_t i) const { return inputs.data() + i * dim; }

  void validate() const {
    if (labels.size() * dim != inputs.size()) {
      throw std::runtime_error("Dataset: inputs/labels size mismatch");
    }
    if (num_classes < 1) throw std::runtime_error("Dataset: no classes");
    for (const std::int32_t y : labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
        throw std::runtime_error("Dataset: label out of range");
      }
    }
    for (const double v : inputs) {
      if (!std::isfinite(v)) {
        throw std::runtime_error("Dataset: non-finite feature");
      }
    }
  }
};

struct TrainTest {
  Dataset train;
  Dataset test;
};

class idx_parse_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::vector<unsigned char> read_file_bytes(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw idx_parse_error("cannot open file: " + path.string());
  }
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                    std::istreambuf_iterator<char>());
}

inline std::vector<unsigned char> gunzip(
    const std::vector<unsigned char>& compressed) {
  z_stream strm{};
  if (inflateInit2(&strm, 15 + 32) != Z_OK) {  // accept gzip or zlib headers
    throw idx_parse_error("gzip: inflateInit failed");
  }
  std::vector<unsigned char> out;
  std::vector<unsigned char> buffer(1 << 16);
  strm.next_in = const_cast<unsigned char*>(compressed.data());
  strm.avail_in = static_cast<uInt>(compressed.size());
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    strm.next_out = buffer.data();
    strm.avail_out = static_cast<uInt>(buffer.size());
    rc = inflate(&strm, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&strm);
      throw idx_parse_error("gzip: corrupt stream");
    }
    out.insert(out.end(), buffer.data(),
               buffer.data() + (buffer.size() - strm.avail_out));
  }
  inflateEnd(&strm);
  return out;
}

// Raw file bytes, transparently gunzipped when the 2-byte gzip magic is
// present.
inline std::vector<unsigned char> read_maybe_gzipped(
    const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) {
    return gunzip(bytes);
  }
  return bytes;
}

inline std::uint32_t read_be32(const unsigned char* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

}  // namespace detail

// IDX binary pair: big-endian headers, magic 0x00000803 for images (then
// count, rows, cols) and 0x00000801 for labels (then count), unsigned byte
// payloads. Pixels are scaled to [0, 1] by dividing by 255.
inline Dataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path) {
  const auto img = detail::read_maybe_gzipped(images_path);
  const auto lbl = detail::read_maybe_gzipped(labels_path);

  if (img.size() < 16) {
    throw idx_parse_error("idx images: truncated header in " +
                          images_path.string());
  }
  if (detail::read_be32(img.data()) != 0x00000803u) {
    throw idx_parse_error("idx images: bad magic in " + images_path.string());
  }
  const std::uint64_t n = detail::read_be32(img.data() + 4);
  const std::uint64_t rows = detail::read_be32(img.data() + 8);
  const std::uint64_t cols = detail::read_be32(img.data() + 12);
  const std::uint64_t payload = n * rows * cols;
  if (img.size() != 16 + payload) {
    throw idx_parse_error("idx images: truncated payload in " +
                          images_path.string());
  }

  if (lbl.size() < 8) {
    throw idx_parse_error("idx labels: truncated header in " +
                          labels_path.string());
  }
  if (detail::read_be32(lbl.data()) != 0x00000801u) {
    throw idx_parse_error("idx labels: bad magic in " + labels_path.string());
  }
  const std::uint64_t n_labels = detail::read_be32(lbl.data() + 4);
  if (lbl.size() != 8 + n_labels) {
    throw idx_parse_error("idx labels: truncated payload in " +
                          labels_path.string());
  }
  if (n != n_labels) {
    throw idx_parse_error("idx: image/label count mismatch (" +
                          std::to_string(n) + " vs " +
                          std::to_string(n_labels) + ")");
  }

  Dataset ds;
  ds.dim = static_cast<std::size_t>(rows * cols);
  ds.inputs.resize(static_cast<std::size_t>(payload));
  for (std::size_t i = 0; i < payload; ++i) {
    ds.inputs[i] = static_cast<double>(img[16 + i]) / 255.0;
  }
  ds.labels.resize(static_cast<std::size_t>(n));
  std::int32_t max_label = 0;
  for (std::size_t i = 0; i < n_labels; ++i) {
    ds.labels[i] = static_cast<std::int32_t>(lbl[8 + i]);
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = static_cast<std::size_t>(max_label) + 1;
  ds.name = images_path.stem().string();
  return ds;
}

// k Gaussian clusters at seed-derived centers, 80/20 train/test split per
// class. Fully reproducible from the seed.
inline TrainTest synth_blobs(std::size_t num_per_class, std::size_t k,
                             std::size_t d, double spread,
                             std::uint64_t seed) {
  if (num_per_class == 0 || k == 0 || d == 0 || !(spread >= 0.0)) {
    throw std::invalid_argument("synth_blobs: parameters must be positive");
  }
  std::mt19937_64 rng(seed);
  std::vector<double> centers(k * d);
  for (double& c : centers) c = 4.0 * uniform53(rng) - 2.0;

  const std::size_t train_per_class = num_per_class * 4 / 5;
  const std::size_t test_per_class = num_per_class - train_per_class;

  TrainTest out;
  auto init = [&](Dataset& ds, std::size_t per_class, Split split,
                  const char* tag) {
    ds.dim = d;
    ds.num_classes = k;
    ds.split = split;
    ds.name = std::string("synth-") + tag;
    ds.inputs.reserve(per_class * k * d);
    ds.labels.reserve(per_class * k);
  };
  init(out.train, train_per_class, Split::kTrain, "train");
  init(out.test, test_per_class, Split::kTest, "test");

  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t s = 0; s < num_per_class; ++s) {
      Dataset& ds = (s < train_per_class) ? out.train : out.test;
      for (std::size_t j = 0; j < d; ++j) {
        ds.inputs.push_back(centers[c * d + j] + spread * gaussian(rng));
      }
      ds.labels.push_back(static_cast<std::int32_t>(c));
    }
  }
  return out;
}

// Uniform class-stratified subset of n samples: n/k per class, the remainder
// spread over the lowest class indices; classes short on samples give their
// deficit to later classes. Achieved counts land in the note field.
inline Dataset subset(const Dataset& ds, std::size_t n, std::uint64_t seed) {
  if (n > ds.size()) {
    throw std::invalid_argument("subset: n exceeds dataset size");
  }
  if (n == ds.size()) {
    Dataset copy = ds;
    copy.note = "subset=identity";
    return copy;
  }
  const std::size_t k = ds.num_classes;
  std::vector<std::vector<std::size_t>> by_class(k);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  }

  std::vector<std::size_t> want(k, 0);
  const std::size_t base = n / k;
  const std::size_t rem = n % k;
  for (std::size_t c = 0; c < k; ++c) {
    want[c] = std::min(base + (c < rem ? 1 : 0), by_class[c].size());
  }
  std::size_t assigned = std::accumulate(want.begin(), want.end(),
                                         std::size_t{0});
  // Redistribute any deficit round-robin to classes with spare samples.
  while (assigned < n) {
    bool progressed = false;
    for (std::size_t c = 0; c < k && assigned < n; ++c) {
      if (want[c] < by_class[c].size()) {
        ++want[c];
        ++assigned;
        progressed = true;
      }
    }
    if (!progressed) break;
  }

  std::mt19937_64 rng(seed);
  Dataset out;
  out.dim = ds.dim;
  out.num_classes = ds.num_classes;
  out.split = ds.split;
  out.name = ds.name + "-subset" + std::to_string(n);
  out.inputs.reserve(n * ds.dim);
  out.labels.reserve(n);
  std::string counts;
  for (std::size_t c = 0; c < k; ++c) {
    auto& pool = by_class[c];
    // Partial Fisher-Yates: the first want[c] slots become the selection.
    for (std::size_t i = 0; i < want[c]; ++i) {
      const std::size_t j = i + bounded(rng, pool.size() - i);
      std::swap(pool[i], pool[j]);
    }
    std::sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(want[c]));
    for (std::size_t i = 0; i < want[c]; ++i) {
      const double* r = ds.row(pool[i]);
      out.inputs.insert(out.inputs.end(), r, r + ds.dim);
      out.labels.push_back(ds.labels[pool[i]]);
    }
    counts += (c ? ":" : "") + std::to_string(want[c]);
  }
  out.note = "per_class=" + counts;
  return out;
}

// Internal binary checkpoint: exact round trip of the matrices.
inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_dataset: cannot open " + path.string());
  const char magic[4] = {'B', 'S', 'D', 'S'};
  out.write(magic, 4);
  auto put_u64 = [&](std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
  };
  put_u64(ds.size());
  put_u64(ds.dim);
  put_u64(ds.num_classes);
  put_u64(ds.split == Split::kTrain ? 0 : 1);
  put_u64(ds.name.size());
  out.write(ds.name.data(), static_cast<std::streamsize>(ds.name.size()));
  static_assert(sizeof(double) == 8);
  out.write(reinterpret_cast<const char*>(ds.labels.data()),
            static_cast<std::streamsize>(ds.labels.size() * 4));
  out.write(reinterpret_cast<const char*>(ds.inputs.data()),
            static_cast<std::streamsize>(ds.inputs.size() * 8));
  if (!out) throw std::runtime_error("save_dataset: write failed");
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_dataset: cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "BSDS", 4) != 0) {
    throw std::runtime_error("load_dataset: bad magic");
  }
  auto get_u64 = [&]() {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
    return v;
  };
  Dataset ds;
  const std::uint64_t n = get_u64();
  ds.dim = static_cast<std::size_t>(get_u64());
  ds.num_classes = static_cast<std::size_t>(get_u64());
  ds.split = get_u64() == 0 ? Split::kTrain : Split::kTest;
  ds.name.resize(static_cast<std::size_t>(get_u64()));
  in.read(ds.name.data(), static_cast<std::streamsize>(ds.name.size()));
  ds.labels.resize(static_cast<std::size_t>(n));
  in.read(reinterpret_cast<char*>(ds.labels.data()),
          static_cast<std::streamsize>(n * 4));
  ds.inputs.resize(static_cast<std::size_t>(n) * ds.dim);
  in.read(reinterpret_cast<char*>(ds.inputs.data()),
          static_cast<std::streamsize>(ds.inputs.size() * 8));
  if (!in) throw std::runtime_error("load_dataset: truncated file");
  return ds;
}

}  // namespace batchsel
