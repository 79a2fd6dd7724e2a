#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "guq/errors.hpp"
#include "guq/random.hpp"
#include "guq/tensor.hpp"

namespace guq {

/// Label used for out-of-distribution points; never a valid class.
inline constexpr int kOodLabel = -1;

struct Dataset {
  std::string name;
  std::vector<Tensor> inputs;
  std::vector<int> labels;

  std::size_t size() const { return inputs.size(); }
  bool empty() const { return inputs.empty(); }

  void push_back(Tensor x, int label) {
    inputs.push_back(std::move(x));
    labels.push_back(label);
  }

  /// Throws unless every label lies in 0..classes-1.
  void require_labels(std::size_t classes) const {
    if (labels.size() != inputs.size()) {
      throw DomainError("dataset '" + name + "' has mismatched lengths");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
        throw DomainError("dataset '" + name + "' sample " + std::to_string(i) +
                          " has label " + std::to_string(labels[i]) +
                          " outside 0.." + std::to_string(classes - 1));
      }
    }
  }

  Dataset subset(const std::vector<std::size_t>& indices,
                 std::string subset_name = {}) const {
    Dataset out;
    out.name = subset_name.empty() ? name : std::move(subset_name);
    for (std::size_t i : indices) out.push_back(inputs.at(i), labels.at(i));
    return out;
  }

  void append(const Dataset& other) {
    for (std::size_t i = 0; i < other.size(); ++i) {
      push_back(other.inputs[i], other.labels[i]);
    }
  }
};

/// Labeled isotropic Gaussian blobs; class c is centered at means[c].
inline Dataset gen_gaussian_clusters(const std::vector<std::vector<double>>& means,
                                     std::size_t n_per_class, double stddev,
                                     std::uint64_t seed) {
  if (means.size() < 2) throw DomainError("need at least two cluster means");
  if (n_per_class == 0) throw DomainError("n_per_class must be positive");
  if (!(stddev > 0.0)) throw DomainError("cluster stddev must be positive");
  const std::size_t dim = means.front().size();
  for (std::size_t a = 0; a < means.size(); ++a) {
    if (means[a].size() != dim || dim == 0) {
      throw DomainError("cluster means must share a positive dimension");
    }
    for (std::size_t b = 0; b < a; ++b) {
      if (means[a] == means[b]) {
        throw DomainError("cluster means " + std::to_string(b) + " and " +
                          std::to_string(a) + " coincide");
      }
    }
  }
  Rng rng(seed);
  Dataset d;
  d.name = "gaussian_clusters";
  for (std::size_t i = 0; i < n_per_class; ++i) {
    for (std::size_t c = 0; c < means.size(); ++c) {
      std::vector<double> x(dim);
      for (std::size_t k = 0; k < dim; ++k) x[k] = rng.normal(means[c][k], stddev);
      d.push_back(Tensor::vector(std::move(x)), static_cast<int>(c));
    }
  }
  return d;
}

/// Two classes centered at (-spread, 0) and (+spread, 0).
inline Dataset gen_two_clusters(std::size_t n_per_class, double spread,
                                double stddev, std::uint64_t seed) {
  return gen_gaussian_clusters({{-spread, 0.0}, {spread, 0.0}}, n_per_class,
                               stddev, seed);
}

/// Unlabeled 2-D points around a circle of the given radius. The noise
/// vector is isotropic Gaussian with its length clipped at 3 * noise_std,
/// so every point lies within radius +/- 3 * noise_std of the origin.
inline Dataset gen_ood_ring(double radius, std::size_t n, double noise_std,
                            std::uint64_t seed) {
  if (!(radius > 0.0)) throw DomainError("ring radius must be positive");
  if (n == 0) throw DomainError("ring size must be positive");
  if (noise_std < 0.0) throw DomainError("ring noise must be non-negative");
  Rng rng(seed);
  Dataset d;
  d.name = "ood_ring";
  for (std::size_t i = 0; i < n; ++i) {
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    double nx = rng.normal() * noise_std;
    double ny = rng.normal() * noise_std;
    const double len = std::hypot(nx, ny);
    const double cap = 3.0 * noise_std;
    if (len > cap) {
      nx *= cap / len;
      ny *= cap / len;
    }
    d.push_back(Tensor::vector({radius * std::cos(angle) + nx,
                                radius * std::sin(angle) + ny}),
                kOodLabel);
  }
  return d;
}

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b,
                               std::size_t offset, const std::string& file) {
  if (offset + 4 > b.size()) {
    throw FormatError(file + ": truncated header at offset " +
                      std::to_string(offset));
  }
  return (std::uint32_t{b[offset]} << 24) | (std::uint32_t{b[offset + 1]} << 16) |
         (std::uint32_t{b[offset + 2]} << 8) | std::uint32_t{b[offset + 3]};
}

}  // namespace detail

/// IDX images (magic 0x00000803, [n, rows, cols] unsigned bytes) and labels
/// (magic 0x00000801, [n] unsigned bytes). Pixels are scaled to [0, 1] and
/// each image becomes a [1 x rows x cols] tensor.
inline Dataset parse_idx(const std::vector<unsigned char>& images,
                         const std::vector<unsigned char>& labels) {
  const std::uint32_t img_magic = detail::read_be32(images, 0, "images");
  if (img_magic != 0x00000803u) {
    throw FormatError("images: bad magic at offset 0");
  }
  const std::uint32_t lbl_magic = detail::read_be32(labels, 0, "labels");
  if (lbl_magic != 0x00000801u) {
    throw FormatError("labels: bad magic at offset 0");
  }
  const std::size_t n = detail::read_be32(images, 4, "images");
  const std::size_t rows = detail::read_be32(images, 8, "images");
  const std::size_t cols = detail::read_be32(images, 12, "images");
  const std::size_t n_labels = detail::read_be32(labels, 4, "labels");
  if (n != n_labels) {
    throw FormatError("labels: count " + std::to_string(n_labels) +
                      " at offset 4 does not match image count " +
                      std::to_string(n));
  }
  if (rows == 0 || cols == 0) throw FormatError("images: zero dimension at offset 8");
  const std::size_t pixels = rows * cols;
  if (images.size() < 16 + n * pixels) {
    throw FormatError("images: payload truncated at offset " +
                      std::to_string(images.size()));
  }
  if (labels.size() < 8 + n) {
    throw FormatError("labels: payload truncated at offset " +
                      std::to_string(labels.size()));
  }
  Dataset d;
  d.name = "idx";
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> px(pixels);
    for (std::size_t p = 0; p < pixels; ++p) {
      px[p] = images[16 + i * pixels + p] / 255.0;
    }
    d.push_back(Tensor({1, rows, cols}, std::move(px)), labels[8 + i]);
  }
  return d;
}

inline Dataset load_idx(const std::filesystem::path& images,
                        const std::filesystem::path& labels) {
  return parse_idx(detail::read_file(images), detail::read_file(labels));
}

/// CSV with header "x0,...,xk,label"; one sample per row.
inline Dataset parse_csv(const std::string& text, std::string name = "csv") {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("csv: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 2 || header.back() != "label") {
    throw FormatError("csv: header must be x0,...,xk,label");
  }
  for (std::size_t i = 0; i + 1 < header.size(); ++i) {
    if (header[i] != "x" + std::to_string(i)) {
      throw FormatError("csv: header column " + std::to_string(i) +
                        " must be 'x" + std::to_string(i) + "'");
    }
  }
  const std::size_t dim = header.size() - 1;
  Dataset d;
  d.name = std::move(name);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> x;
    int label = 0;
    std::size_t col = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        if (col < dim) {
          x.push_back(std::stod(cell, &used));
        } else {
          label = std::stoi(cell, &used);
        }
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw FormatError("csv: line " + std::to_string(line_no) + " column " +
                          std::to_string(col) + ": cannot parse '" + cell + "'");
      }
      ++col;
    }
    if (col != dim + 1) {
      throw FormatError("csv: line " + std::to_string(line_no) + " has " +
                        std::to_string(col) + " columns, expected " +
                        std::to_string(dim + 1));
    }
    d.push_back(Tensor::vector(std::move(x)), label);
  }
  return d;
}

inline Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), path.stem().string());
}

inline std::string to_csv(const Dataset& d) {
  std::ostringstream out;
  out.precision(17);
  const std::size_t dim = d.empty() ? 0 : d.inputs.front().size();
  for (std::size_t k = 0; k < dim; ++k) out << 'x' << k << ',';
  out << "label\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (double v : d.inputs[i].data()) out << v << ',';
    out << d.labels[i] << '\n';
  }
  return out.str();
}

/// Half-open index range [begin, end).
struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool overlaps(const IndexRange& o) const {
    return size() > 0 && o.size() > 0 && begin < o.end && o.begin < end;
  }
};

/// Initial labeled set drawn class-balanced from `train`, validation data
/// taken verbatim from `val`, and the unlabeled pool from `pool`.
struct SplitSpec {
  IndexRange train;
  std::size_t initial_count = 0;  // m1; m1 / C samples per class
  IndexRange val;
  IndexRange pool;
  std::uint64_t seed = 0;
};

struct Split {
  Dataset train;
  Dataset val;
  Dataset pool;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> val_indices;
  std::vector<std::size_t> pool_indices;
};

inline Split split(const Dataset& data, const SplitSpec& spec,
                   std::size_t classes) {
  for (const IndexRange* r : {&spec.train, &spec.val, &spec.pool}) {
    if (r->begin > r->end || r->end > data.size()) {
      throw DomainError("split range [" + std::to_string(r->begin) + ", " +
                        std::to_string(r->end) + ") outside dataset of size " +
                        std::to_string(data.size()));
    }
  }
  if (spec.train.overlaps(spec.val) || spec.train.overlaps(spec.pool) ||
      spec.val.overlaps(spec.pool)) {
    throw DomainError("split ranges overlap");
  }
  if (classes < 2 || spec.initial_count % classes != 0 ||
      spec.initial_count == 0) {
    throw DomainError("initial count must be a positive multiple of the class count");
  }
  const std::size_t per_class = spec.initial_count / classes;
  Rng rng(spec.seed);
  std::vector<std::size_t> order;
  for (std::size_t i = spec.train.begin; i < spec.train.end; ++i) order.push_back(i);
  rng.shuffle(order);
  std::vector<std::size_t> taken(classes, 0);
  Split out;
  for (std::size_t i : order) {
    const int y = data.labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) continue;
    if (taken[y] < per_class) {
      ++taken[y];
      out.train_indices.push_back(i);
    }
  }
  for (std::size_t c = 0; c < classes; ++c) {
    if (taken[c] < per_class) {
      throw DomainError("class " + std::to_string(c) + " has only " +
                        std::to_string(taken[c]) + " samples in the train range, need " +
                        std::to_string(per_class));
    }
  }
  std::sort(out.train_indices.begin(), out.train_indices.end());
  for (std::size_t i = spec.val.begin; i < spec.val.end; ++i) out.val_indices.push_back(i);
  for (std::size_t i = spec.pool.begin; i < spec.pool.end; ++i) out.pool_indices.push_back(i);

  std::set<std::size_t> seen;
  for (const auto* v : {&out.train_indices, &out.val_indices, &out.pool_indices}) {
    for (std::size_t i : *v) {
      if (!seen.insert(i).second) {
        throw DomainError("split placed sample " + std::to_string(i) + " twice");
      }
    }
  }
  out.train = data.subset(out.train_indices, data.name + ":train");
  out.val = data.subset(out.val_indices, data.name + ":val");
  out.pool = data.subset(out.pool_indices, data.name + ":pool");
  return out;
}

}  // namespace guq
