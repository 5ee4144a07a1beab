#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sbfn/errors.hpp"
#include "sbfn/random.hpp"

namespace sbfn {

inline constexpr double kStdFloor = 1e-12;

// Per-feature z-score transform fitted on one split and applied to others.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;

  static Standardizer fit(const Eigen::MatrixXd& x) {
    Standardizer s;
    const double n = static_cast<double>(x.rows());
    s.mean = x.colwise().mean().transpose();
    s.std = ((x.rowwise() - s.mean.transpose()).array().square().colwise().sum() / n).sqrt().transpose();
    s.std = s.std.cwiseMax(kStdFloor);
    return s;
  }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
    if (x.cols() != mean.size()) throw ShapeError("Standardizer: column count mismatch");
    return (x.rowwise() - mean.transpose()).array().rowwise() / std.transpose().array();
  }
};

struct Dataset {
  Eigen::MatrixXd features;  // N x d
  Eigen::VectorXd targets;   // real targets, or class indices stored exactly
  std::vector<std::string> feature_names;
  int num_classes = 0;  // 0 for regression
  std::size_t dropped_rows = 0;
  std::optional<Standardizer> standardization;

  Eigen::Index size() const { return features.rows(); }
  bool is_classification() const { return num_classes > 0; }

  std::vector<int> labels() const {
    std::vector<int> out(static_cast<std::size_t>(targets.size()));
    for (Eigen::Index i = 0; i < targets.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<int>(targets[i]);
    return out;
  }

  Dataset subset(std::span<const Eigen::Index> rows) const {
    Dataset d;
    d.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
    d.targets.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      d.features.row(static_cast<Eigen::Index>(i)) = features.row(rows[i]);
      d.targets[static_cast<Eigen::Index>(i)] = targets[rows[i]];
    }
    d.feature_names = feature_names;
    d.num_classes = num_classes;
    return d;
  }
};

// Fits the standardizer on `train` and applies it to both splits.
inline void standardize_split(Dataset& train, Dataset& test) {
  const Standardizer s = Standardizer::fit(train.features);
  train.features = s.apply(train.features);
  test.features = s.apply(test.features);
  train.standardization = s;
  test.standardization = s;
}

inline Dataset standardize(Dataset d) {
  const Standardizer s = Standardizer::fit(d.features);
  d.features = s.apply(d.features);
  d.standardization = s;
  return d;
}

struct CsvOptions {
  std::string target_column;
  char delimiter = ',';
  std::vector<std::string> missing_markers{"", "NA", "NaN", "nan"};
  std::vector<std::string> ignore_columns;
  bool classification = false;
};

namespace detail {

inline std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  s = s.substr(first, last - first + 1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

inline std::vector<std::string> split(const std::string& line, char delim) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, delim)) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == delim) cells.emplace_back();
  return cells;
}

inline std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* begin = s.data();
  if (*begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline bool is_missing(const std::string& cell, const std::vector<std::string>& markers) {
  for (const auto& m : markers) {
    if (cell == m) return true;
    const auto a = parse_double(cell), b = parse_double(m);
    if (a && b && *a == *b) return true;
  }
  return false;
}

}  // namespace detail

// Reads a headered numeric CSV. Rows containing a missing marker are dropped.
// Features are returned in original units; standardization is fold-aware and
// happens later (see standardize_split).
inline Dataset load_csv(std::istream& in, const CsvOptions& options) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("load_csv: missing header row");
  const auto header = detail::split(line, options.delimiter);
  int target = -1;
  std::vector<int> feature_cols;
  Dataset d;
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    if (header[static_cast<std::size_t>(c)] == options.target_column) {
      target = c;
      continue;
    }
    if (std::find(options.ignore_columns.begin(), options.ignore_columns.end(), header[static_cast<std::size_t>(c)]) !=
        options.ignore_columns.end())
      continue;
    feature_cols.push_back(c);
    d.feature_names.push_back(header[static_cast<std::size_t>(c)]);
  }
  if (target < 0) throw ConfigError("load_csv: unknown target column '" + options.target_column + "'");

  std::vector<std::vector<double>> rows;
  std::vector<double> ys;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split(line, options.delimiter);
    if (cells.size() != header.size())
      throw FormatError("load_csv: row " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                        " cells, header has " + std::to_string(header.size()));
    bool missing = false;
    std::vector<double> row;
    double y = 0.0;
    for (int c = 0; c < static_cast<int>(cells.size()); ++c) {
      const bool used = c == target || std::find(feature_cols.begin(), feature_cols.end(), c) != feature_cols.end();
      if (!used) continue;
      const auto& cell = cells[static_cast<std::size_t>(c)];
      if (detail::is_missing(cell, options.missing_markers)) {
        missing = true;
        break;
      }
      const auto v = detail::parse_double(cell);
      if (!v || !std::isfinite(*v))
        throw FormatError("load_csv: non-numeric cell '" + cell + "' at row " + std::to_string(line_no) + ", column " +
                          header[static_cast<std::size_t>(c)]);
      if (c == target)
        y = *v;
      else
        row.push_back(*v);
    }
    if (missing) {
      ++d.dropped_rows;
      continue;
    }
    rows.push_back(std::move(row));
    ys.push_back(y);
  }

  d.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(feature_cols.size()));
  d.targets.resize(static_cast<Eigen::Index>(ys.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < rows[i].size(); ++c)
      d.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
    d.targets[static_cast<Eigen::Index>(i)] = ys[i];
  }
  if (options.classification) {
    for (double y : ys)
      if (y < 0 || y != std::floor(y)) throw FormatError("load_csv: class labels must be non-negative integers");
    d.num_classes = ys.empty() ? 0 : static_cast<int>(*std::max_element(ys.begin(), ys.end())) + 1;
  }
  return d;
}

inline Dataset load_csv(const std::string& path, const CsvOptions& options) {
  std::ifstream in(path);
  if (!in) throw IoError("load_csv: cannot open " + path);
  return load_csv(in, options);
}

// Writes features followed by the target column, 17 significant digits.
inline void write_csv(std::ostream& out, const Dataset& d, const std::string& target_name = "target") {
  for (Eigen::Index c = 0; c < d.features.cols(); ++c)
    out << (static_cast<std::size_t>(c) < d.feature_names.size() ? d.feature_names[static_cast<std::size_t>(c)]
                                                                  : "x" + std::to_string(c))
        << ',';
  out << target_name << '\n';
  out.precision(17);
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    for (Eigen::Index c = 0; c < d.features.cols(); ++c) out << d.features(i, c) << ',';
    out << d.targets[i] << '\n';
  }
}

struct FoldPlan {
  int k = 1;
  std::vector<int> assignments;

  std::vector<Eigen::Index> test_indices(int fold) const {
    std::vector<Eigen::Index> out;
    for (std::size_t i = 0; i < assignments.size(); ++i)
      if (assignments[i] == fold) out.push_back(static_cast<Eigen::Index>(i));
    return out;
  }

  std::vector<Eigen::Index> train_indices(int fold) const {
    std::vector<Eigen::Index> out;
    for (std::size_t i = 0; i < assignments.size(); ++i)
      if (assignments[i] != fold) out.push_back(static_cast<Eigen::Index>(i));
    return out;
  }
};

// Random permutation cut into k contiguous folds; the first n % k folds get one extra index.
inline FoldPlan kfold(int n, int k, std::uint64_t seed) {
  if (n < 1 || k < 1) throw ConfigError("kfold: n and k must be positive");
  if (k > n) throw ConfigError("kfold: k=" + std::to_string(k) + " exceeds n=" + std::to_string(n));
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  FoldPlan plan;
  plan.k = k;
  plan.assignments.assign(static_cast<std::size_t>(n), 0);
  const int base = n / k, extra = n % k;
  int pos = 0;
  for (int f = 0; f < k; ++f) {
    const int size = base + (f < extra ? 1 : 0);
    for (int s = 0; s < size; ++s) plan.assignments[static_cast<std::size_t>(perm[static_cast<std::size_t>(pos++)])] = f;
  }
  return plan;
}

// Random holdout split: returns (train, test) index lists.
inline std::pair<std::vector<Eigen::Index>, std::vector<Eigen::Index>> holdout_split(int n, double test_fraction,
                                                                                    std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("holdout: test fraction must be in (0, 1)");
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  Rng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(test_fraction * n)));
  if (n_test >= perm.size()) throw ConfigError("holdout: split leaves no training rows");
  std::vector<Eigen::Index> test(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<Eigen::Index> train(perm.begin() + static_cast<std::ptrdiff_t>(n_test), perm.end());
  return {std::move(train), std::move(test)};
}

namespace detail {

inline Dataset sine_samples(int n, double noise_std, Rng& rng) {
  std::uniform_real_distribution<double> unif(-3.0, 3.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset d;
  d.features.resize(n, 2);
  d.targets.resize(n);
  d.feature_names = {"x1", "x2"};
  for (int i = 0; i < n; ++i) {
    const double x1 = unif(rng);
    const double x2 = unif(rng);
    d.features(i, 0) = x1;
    d.features(i, 1) = x2;
    const double e = noise(rng);
    d.targets[i] = std::sin(x1) + std::cos(x2) + (noise_std > 0.0 ? noise_std * e : 0.0);
  }
  return d;
}

}  // namespace detail

// y = sin(x1) + cos(x2) + Normal(0, noise_std), x ~ Uniform[-3, 3]^2.
inline std::pair<Dataset, Dataset> synth_sine(int n_train = 300, int n_test = 1000, double noise_std = 0.1,
                                              std::uint64_t seed = 0) {
  if (n_train < 1 || n_test < 1) throw ConfigError("synth_sine: sample counts must be >= 1");
  if (!(noise_std >= 0.0)) throw ConfigError("synth_sine: noise_std must be >= 0");
  Rng rng(seed);
  Dataset train = detail::sine_samples(n_train, noise_std, rng);
  Dataset test = detail::sine_samples(n_test, noise_std, rng);
  return {std::move(train), std::move(test)};
}

// Appends `count` pure-noise Normal(0, 1) columns.
inline Dataset add_distractors(Dataset d, int count, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto d0 = d.features.cols();
  d.features.conservativeResize(Eigen::NoChange, d0 + count);
  for (Eigen::Index c = d0; c < d0 + count; ++c) {
    for (Eigen::Index i = 0; i < d.size(); ++i) d.features(i, c) = normal(rng);
    d.feature_names.push_back("noise" + std::to_string(c - d0));
  }
  return d;
}

// Isotropic Gaussian clusters, one per class, centres spaced on a circle.
inline Dataset gaussian_blobs(int n, int num_classes, int dim, double spread, std::uint64_t seed) {
  if (n < num_classes || num_classes < 2 || dim < 2) throw ConfigError("gaussian_blobs: invalid shape");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd centres = Eigen::MatrixXd::Zero(num_classes, dim);
  for (int c = 0; c < num_classes; ++c) {
    const double angle = 2.0 * 3.14159265358979323846 * c / num_classes;
    centres(c, 0) = 2.0 * std::cos(angle);
    centres(c, 1) = 2.0 * std::sin(angle);
  }
  Dataset d;
  d.num_classes = num_classes;
  d.features.resize(n, dim);
  d.targets.resize(n);
  for (int i = 0; i < n; ++i) {
    const int c = i % num_classes;
    d.targets[i] = c;
    for (int k = 0; k < dim; ++k) d.features(i, k) = centres(c, k) + spread * normal(rng);
  }
  for (int k = 0; k < dim; ++k) d.feature_names.push_back("x" + std::to_string(k));
  return d;
}

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

inline std::vector<unsigned char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_idx: cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset, const std::string& path) {
  if (offset + 4 > bytes.size())
    throw FormatError("load_idx: " + path + " truncated at byte offset " + std::to_string(offset));
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline void put_be32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  out.write(b, 4);
}

}  // namespace detail

// IDX image/label pair. Pixels are scaled to [0, 1] and average-pooled by an
// integer factor (trailing rows/columns that do not fill a block are dropped).
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path, int downsample_factor = 1) {
  if (downsample_factor < 1) throw ConfigError("load_idx: downsample factor must be >= 1");
  const auto img = detail::read_bytes(images_path);
  const auto lab = detail::read_bytes(labels_path);
  const auto img_magic = detail::read_be32(img, 0, images_path);
  if (img_magic != kIdxImageMagic)
    throw FormatError("load_idx: bad image magic at byte offset 0 of " + images_path);
  const auto lab_magic = detail::read_be32(lab, 0, labels_path);
  if (lab_magic != kIdxLabelMagic)
    throw FormatError("load_idx: bad label magic at byte offset 0 of " + labels_path);
  const std::size_t n = detail::read_be32(img, 4, images_path);
  const std::size_t rows = detail::read_be32(img, 8, images_path);
  const std::size_t cols = detail::read_be32(img, 12, images_path);
  const std::size_t n_labels = detail::read_be32(lab, 4, labels_path);
  if (n_labels != n) throw FormatError("load_idx: image count and label count differ");
  constexpr std::size_t kImgHeader = 16, kLabHeader = 8;
  if (img.size() < kImgHeader + n * rows * cols)
    throw FormatError("load_idx: " + images_path + " truncated at byte offset " + std::to_string(img.size()));
  if (lab.size() < kLabHeader + n)
    throw FormatError("load_idx: " + labels_path + " truncated at byte offset " + std::to_string(lab.size()));

  const std::size_t f = static_cast<std::size_t>(downsample_factor);
  const std::size_t out_r = rows / f, out_c = cols / f;
  if (out_r == 0 || out_c == 0) throw ConfigError("load_idx: downsample factor larger than the image");
  Dataset d;
  d.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(out_r * out_c));
  d.targets.resize(static_cast<Eigen::Index>(n));
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* px = img.data() + kImgHeader + i * rows * cols;
    for (std::size_t r = 0; r < out_r; ++r)
      for (std::size_t c = 0; c < out_c; ++c) {
        double acc = 0.0;
        for (std::size_t dr = 0; dr < f; ++dr)
          for (std::size_t dc = 0; dc < f; ++dc) acc += px[(r * f + dr) * cols + c * f + dc];
        d.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(r * out_c + c)) =
            acc / (255.0 * static_cast<double>(f * f));
      }
    const int label = lab[kLabHeader + i];
    d.targets[static_cast<Eigen::Index>(i)] = label;
    max_label = std::max(max_label, label);
  }
  d.num_classes = std::max(2, max_label + 1);
  for (std::size_t k = 0; k < out_r * out_c; ++k) d.feature_names.push_back("px" + std::to_string(k));
  return d;
}

// Writers for the same layout; images are n x rows x cols bytes.
inline void write_idx_images(const std::string& path, const std::vector<unsigned char>& pixels, std::uint32_t n,
                             std::uint32_t rows, std::uint32_t cols) {
  if (pixels.size() != static_cast<std::size_t>(n) * rows * cols) throw ShapeError("write_idx_images: size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  detail::put_be32(out, kIdxImageMagic);
  detail::put_be32(out, n);
  detail::put_be32(out, rows);
  detail::put_be32(out, cols);
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

inline void write_idx_labels(const std::string& path, const std::vector<unsigned char>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  detail::put_be32(out, kIdxLabelMagic);
  detail::put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

}  // namespace sbfn
