#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "reed/matrix.hpp"
#include "reed/mlp.hpp"
#include "reed/random.hpp"

namespace reed::data {

using nn::Label;
using nn::Matrix;

/// Features with hidden clean labels and the observed (possibly noisy) labels.
struct LabeledDataset {
  Matrix x;
  std::vector<Label> y_clean;
  std::vector<Label> y_noisy;
  int num_classes = 0;

  std::size_t size() const noexcept { return x.rows(); }
  std::size_t dim() const noexcept { return x.cols(); }
  /// Throws ConfigError when lengths disagree or labels fall outside [0, C).
  void validate() const;
  /// Fraction of samples whose observed label differs from the clean one.
  double noise_rate() const;
};

struct BlobSpec {
  int classes = 10;
  int per_class = 500;
  int dim = 16;
  double separation = 4.0;
  double sigma = 1.0;
};

/// Isotropic Gaussian blobs centred at separation * u_c, with u_c random
/// points on the unit sphere. Rows are shuffled; y_noisy starts equal to
/// y_clean.
LabeledDataset make_blobs(const BlobSpec& spec, std::uint64_t seed);

enum class NoiseKind { none, symmetric, asymmetric };

NoiseKind parse_noise_kind(const std::string& name);
std::string to_string(NoiseKind kind);

struct NoiseSpec {
  NoiseKind kind = NoiseKind::none;
  double ratio = 0.0;
  /// pair_map[c] is the "similar" class of c, or -1 when c is not mapped.
  /// Empty means default_pair_map(C).
  std::vector<int> pair_map;
  /// Symmetric only: draw the replacement from the other C-1 classes.
  bool exclude_true_class = false;
  std::uint64_t seed = 0;
};

/// c -> (c + 1) mod C for even c; odd classes unmapped.
std::vector<int> default_pair_map(int num_classes);

/// Each sample is selected with probability `ratio`; a selected sample gets a
/// label drawn uniformly over all C classes (or over the other C-1 classes
/// when `exclude_true_class`). y_clean and x are untouched.
LabeledDataset inject_symmetric_noise(LabeledDataset ds, double ratio, Rng& rng,
                                      bool exclude_true_class = false);

/// Each sample of a mapped class c moves to pair_map[c] with probability
/// `ratio`. Throws ConfigError if pair_map[c] == c for a mapped c.
LabeledDataset inject_asymmetric_noise(LabeledDataset ds, double ratio,
                                       std::span<const int> pair_map, Rng& rng);

LabeledDataset apply_noise(LabeledDataset ds, const NoiseSpec& spec);

/// x' = mask * (s * x + eps): eps ~ N(0, jitter^2 I), s ~ U(scale_lo, scale_hi),
/// each coordinate dropped with probability drop_prob.
struct AugmentationSpec {
  double jitter_sigma = 0.5;
  double scale_lo = 0.8;
  double scale_hi = 1.2;
  double drop_prob = 0.1;

  void validate() const;
  bool is_identity() const noexcept {
    return jitter_sigma == 0.0 && scale_lo == 1.0 && scale_hi == 1.0 && drop_prob == 0.0;
  }
};

std::vector<double> augment(std::span<const double> x, const AugmentationSpec& spec, Rng& rng);
/// Independent augmentation of every row.
Matrix augment_rows(const Matrix& x, const AugmentationSpec& spec, Rng& rng);

struct Split {
  LabeledDataset train;
  LabeledDataset test;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
};

/// Stratified by clean class; per class round(n_c * test_fraction) samples go
/// to the test side. Both sides keep the original row order.
Split train_test_split(const LabeledDataset& ds, double test_fraction, std::uint64_t seed);

LabeledDataset subset(const LabeledDataset& ds, std::span<const std::size_t> indices);

/// CSV with header x_0..x_{d-1},y_clean,y_noisy; values printed round-trip exact.
void write_csv(const LabeledDataset& ds, std::ostream& out);
/// num_classes <= 0 infers C as max label + 1.
LabeledDataset read_csv(std::istream& in, int num_classes = 0);
void save_csv(const LabeledDataset& ds, const std::string& path);
LabeledDataset load_csv(const std::string& path, int num_classes = 0);

}  // namespace reed::data
