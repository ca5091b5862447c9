#include "reed/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "reed/error.hpp"

namespace reed::data {

void LabeledDataset::validate() const {
  if (y_clean.size() != x.rows() || y_noisy.size() != x.rows())
    throw ConfigError("dataset: label vectors must have one entry per row");
  if (num_classes < 1) throw ConfigError("dataset: class count must be positive");
  auto in_range = [this](Label y) { return y >= 0 && y < num_classes; };
  if (!std::all_of(y_clean.begin(), y_clean.end(), in_range) ||
      !std::all_of(y_noisy.begin(), y_noisy.end(), in_range))
    throw ConfigError("dataset: label outside [0, C)");
  if (!x.all_finite()) throw NumericError("dataset: non-finite feature");
}

double LabeledDataset::noise_rate() const {
  if (size() == 0) return 0.0;
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < size(); ++i) flipped += y_clean[i] != y_noisy[i];
  return static_cast<double>(flipped) / static_cast<double>(size());
}

LabeledDataset make_blobs(const BlobSpec& spec, std::uint64_t seed) {
  if (spec.classes < 2) throw ConfigError("make_blobs: need at least 2 classes");
  if (spec.dim < 2) throw ConfigError("make_blobs: need at least 2 dimensions");
  if (spec.per_class <= 0) throw ConfigError("make_blobs: n_per_class must be positive");
  if (!(spec.separation > 0.0)) throw ConfigError("make_blobs: separation must be positive");
  if (!(spec.sigma >= 0.0)) throw ConfigError("make_blobs: sigma must be non-negative");

  const auto c_count = static_cast<std::size_t>(spec.classes);
  const auto d = static_cast<std::size_t>(spec.dim);
  Rng center_rng(derive_seed(seed, 1));
  Matrix centers(c_count, d);
  for (std::size_t c = 0; c < c_count; ++c) {
    double norm = 0.0;
    while (!(norm > 1e-9)) {
      norm = 0.0;
      for (auto& v : centers.row(c)) {
        v = center_rng.normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
    }
    for (auto& v : centers.row(c)) v = spec.separation * v / norm;
  }

  Rng sample_rng(derive_seed(seed, 2));
  const std::size_t n = c_count * static_cast<std::size_t>(spec.per_class);
  std::vector<std::size_t> order = sample_rng.permutation(n);
  LabeledDataset ds;
  ds.num_classes = spec.classes;
  ds.x = Matrix(n, d);
  ds.y_clean.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t c = k % c_count;
    const std::size_t row = order[k];
    ds.y_clean[row] = static_cast<Label>(c);
    auto r = ds.x.row(row);
    for (std::size_t j = 0; j < d; ++j) r[j] = centers(c, j) + spec.sigma * sample_rng.normal();
  }
  ds.y_noisy = ds.y_clean;
  return ds;
}

NoiseKind parse_noise_kind(const std::string& name) {
  if (name == "none") return NoiseKind::none;
  if (name == "symmetric" || name == "sym") return NoiseKind::symmetric;
  if (name == "asymmetric" || name == "asym") return NoiseKind::asymmetric;
  throw ConfigError("unknown noise kind '" + name + "'");
}

std::string to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::none: return "none";
    case NoiseKind::symmetric: return "symmetric";
    case NoiseKind::asymmetric: return "asymmetric";
  }
  return "none";
}

std::vector<int> default_pair_map(int num_classes) {
  std::vector<int> map(static_cast<std::size_t>(num_classes), -1);
  for (int c = 0; c < num_classes; c += 2) map[c] = (c + 1) % num_classes;
  return map;
}

namespace {

void check_ratio(double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("noise ratio must be in [0, 1]");
}

}  // namespace

LabeledDataset inject_symmetric_noise(LabeledDataset ds, double ratio, Rng& rng,
                                      bool exclude_true_class) {
  check_ratio(ratio);
  const auto c = static_cast<std::size_t>(ds.num_classes);
  if (exclude_true_class && c < 2) throw ConfigError("symmetric noise: need 2 classes to exclude the true one");
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!rng.bernoulli(ratio)) continue;
    if (exclude_true_class) {
      auto k = static_cast<Label>(rng.index(c - 1));
      ds.y_noisy[i] = k >= ds.y_clean[i] ? k + 1 : k;
    } else {
      ds.y_noisy[i] = static_cast<Label>(rng.index(c));
    }
  }
  return ds;
}

LabeledDataset inject_asymmetric_noise(LabeledDataset ds, double ratio,
                                       std::span<const int> pair_map, Rng& rng) {
  check_ratio(ratio);
  if (pair_map.size() != static_cast<std::size_t>(ds.num_classes))
    throw ConfigError("asymmetric noise: pair_map must have one entry per class");
  for (std::size_t c = 0; c < pair_map.size(); ++c) {
    const int t = pair_map[c];
    if (t == -1) continue;
    if (t == static_cast<int>(c)) throw ConfigError("asymmetric noise: pair_map maps a class to itself");
    if (t < 0 || t >= ds.num_classes) throw ConfigError("asymmetric noise: pair_map target out of range");
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const int t = pair_map[static_cast<std::size_t>(ds.y_clean[i])];
    if (t == -1) continue;
    if (rng.bernoulli(ratio)) ds.y_noisy[i] = t;
  }
  return ds;
}

LabeledDataset apply_noise(LabeledDataset ds, const NoiseSpec& spec) {
  Rng rng(spec.seed);
  switch (spec.kind) {
    case NoiseKind::none: return ds;
    case NoiseKind::symmetric:
      return inject_symmetric_noise(std::move(ds), spec.ratio, rng, spec.exclude_true_class);
    case NoiseKind::asymmetric: {
      auto map = spec.pair_map.empty() ? default_pair_map(ds.num_classes) : spec.pair_map;
      return inject_asymmetric_noise(std::move(ds), spec.ratio, map, rng);
    }
  }
  return ds;
}

void AugmentationSpec::validate() const {
  if (!(jitter_sigma >= 0.0)) throw ConfigError("augmentation: jitter_sigma must be >= 0");
  if (!(scale_lo > 0.0 && scale_lo <= 1.0 && scale_hi >= 1.0))
    throw ConfigError("augmentation: scale range must satisfy 0 < lo <= 1 <= hi");
  if (!(drop_prob >= 0.0 && drop_prob < 1.0)) throw ConfigError("augmentation: drop_prob must be in [0, 1)");
}

std::vector<double> augment(std::span<const double> x, const AugmentationSpec& spec, Rng& rng) {
  const double s = rng.uniform(spec.scale_lo, spec.scale_hi);
  std::vector<double> out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double eps = spec.jitter_sigma > 0.0 ? rng.normal(0.0, spec.jitter_sigma) : 0.0;
    const bool keep = spec.drop_prob == 0.0 || !rng.bernoulli(spec.drop_prob);
    out[j] = keep ? s * x[j] + eps : 0.0;
  }
  return out;
}

Matrix augment_rows(const Matrix& x, const AugmentationSpec& spec, Rng& rng) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto v = augment(x.row(i), spec, rng);
    std::copy(v.begin(), v.end(), out.row(i).begin());
  }
  return out;
}

LabeledDataset subset(const LabeledDataset& ds, std::span<const std::size_t> indices) {
  LabeledDataset out;
  out.num_classes = ds.num_classes;
  out.x = nn::gather_rows(ds.x, indices);
  for (std::size_t i : indices) {
    out.y_clean.push_back(ds.y_clean[i]);
    out.y_noisy.push_back(ds.y_noisy[i]);
  }
  return out;
}

Split train_test_split(const LabeledDataset& ds, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError("train_test_split: test_fraction must be in (0, 1)");
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes));
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.y_clean[i])].push_back(i);

  Rng rng(derive_seed(seed, 3));
  std::vector<bool> is_test(ds.size(), false);
  for (auto& members : by_class) {
    if (members.empty()) continue;
    if (members.size() < 2) throw ConfigError("train_test_split: a class has fewer than 2 samples");
    rng.shuffle(members);
    auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(members.size())));
    n_test = std::clamp<std::size_t>(n_test, 1, members.size() - 1);
    for (std::size_t k = 0; k < n_test; ++k) is_test[members[k]] = true;
  }
  Split s;
  for (std::size_t i = 0; i < ds.size(); ++i) (is_test[i] ? s.test_indices : s.train_indices).push_back(i);
  s.train = subset(ds, s.train_indices);
  s.test = subset(ds, s.test_indices);
  return s;
}

void write_csv(const LabeledDataset& ds, std::ostream& out) {
  for (std::size_t j = 0; j < ds.dim(); ++j) out << "x_" << j << ',';
  out << "y_clean,y_noisy\n";
  char buf[64];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.x.row(i)) {
      auto r = std::to_chars(buf, buf + sizeof(buf), v);
      out.write(buf, r.ptr - buf);
      out << ',';
    }
    out << ds.y_clean[i] << ',' << ds.y_noisy[i] << '\n';
  }
}

namespace {

template <class T>
T parse_number(std::string_view s, std::size_t line, const char* what) {
  T v{};
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw FormatError(what, "line " + std::to_string(line) + ": cannot parse '" + std::string(s) + "'");
  return v;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t p = line.find(',', start);
    out.push_back(line.substr(start, p == std::string_view::npos ? line.npos : p - start));
    if (p == std::string_view::npos) break;
    start = p + 1;
  }
  return out;
}

}  // namespace

LabeledDataset read_csv(std::istream& in, int num_classes) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("header", "empty dataset file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_commas(line);
  if (header.size() < 3 || header[header.size() - 2] != "y_clean" || header.back() != "y_noisy")
    throw FormatError("header", "expected x_0..x_{d-1},y_clean,y_noisy");
  const std::size_t d = header.size() - 2;
  for (std::size_t j = 0; j < d; ++j)
    if (header[j] != "x_" + std::to_string(j)) throw FormatError("header", "expected column x_" + std::to_string(j));

  std::vector<double> values;
  LabeledDataset ds;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != d + 2)
      throw FormatError("row", "line " + std::to_string(line_no) + ": wrong number of columns");
    for (std::size_t j = 0; j < d; ++j) values.push_back(parse_number<double>(cells[j], line_no, "x"));
    ds.y_clean.push_back(parse_number<Label>(cells[d], line_no, "y_clean"));
    ds.y_noisy.push_back(parse_number<Label>(cells[d + 1], line_no, "y_noisy"));
  }
  const std::size_t n = ds.y_clean.size();
  ds.x = Matrix(n, d, std::move(values));
  int max_label = -1;
  for (std::size_t i = 0; i < n; ++i) max_label = std::max({max_label, ds.y_clean[i], ds.y_noisy[i]});
  ds.num_classes = num_classes > 0 ? num_classes : max_label + 1;
  ds.validate();
  return ds;
}

void save_csv(const LabeledDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  write_csv(ds, out);
}

LabeledDataset load_csv(const std::string& path, int num_classes) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  return read_csv(in, num_classes);
}

}  // namespace reed::data
