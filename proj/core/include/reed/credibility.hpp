#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "reed/data.hpp"
#include "reed/mlp.hpp"

namespace reed::cred {

using data::LabeledDataset;
using nn::Label;
using nn::LayerStack;
using nn::Matrix;
using nn::Var;

inline constexpr double kDefaultTauClean = 0.5;
inline constexpr double kDefaultTauRight = 0.5;

/// Two-component 1-D Gaussian mixture, components ordered by mean.
struct Gmm1D {
  std::array<double, 2> means{0.0, 1.0};
  std::array<double, 2> variances{1.0, 1.0};
  std::array<double, 2> weights{0.5, 0.5};

  void validate() const;
  /// Mean log-density of `values` under the mixture.
  double mean_log_likelihood(std::span<const double> values) const;
  friend bool operator==(const Gmm1D&, const Gmm1D&) = default;
};

enum class Component { low_mean, high_mean };

struct EmOptions {
  double tol = 1e-6;
  int max_iter = 200;
  double variance_floor = 1e-6;
  /// Extra EM runs started from random pairs of data points; the fit with
  /// the highest final log-likelihood wins.
  int restarts = 8;
  std::uint64_t seed = 0;
};

struct GmmFit {
  Gmm1D model;
  /// Mean log-likelihood at initialization and after every EM iteration.
  std::vector<double> log_likelihood;
  int iterations = 0;
  bool converged = false;
};

/// EM from a quantile start (means at the 10th / 90th percentiles, equal
/// weights, pooled variance) plus `restarts` seeded runs. Each run stops once
/// the mean log-likelihood improves by less than `tol`; the returned trace
/// belongs to the winning run. Throws NumericError when all
/// values coincide and ConfigError for fewer than 4 values.
GmmFit fit_gmm_em(std::span<const double> values, const EmOptions& options = {});

/// Posterior responsibility of `component` at v.
double gmm_posterior(const Gmm1D& g, double v, Component component);

struct ClassifierTrainConfig {
  int epochs = 100;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  int batch_size = 128;

  void validate() const;
};

struct EpochAccuracy {
  int epoch = 0;
  double loss = 0.0;
  /// Accuracy against the observed (noisy) training labels.
  double train_acc = 0.0;
  /// Accuracy against clean test labels; NaN without a test set.
  double test_acc = 0.0;
};

struct ClassifierResult {
  LayerStack classifier;
  std::vector<EpochAccuracy> log;
};

/// Linear classifier on the frozen representation, SGD + cross-entropy on
/// y_noisy. The encoder is only read.
ClassifierResult train_frozen_classifier(const LayerStack& encoder, const LabeledDataset& train,
                                         const ClassifierTrainConfig& config, std::uint64_t seed,
                                         const LabeledDataset* test = nullptr);

struct SampleStats {
  std::vector<double> losses;       // CE(p(x_i), noisy label)
  std::vector<double> confidences;  // max_k p_k(x_i)
  std::vector<Label> predictions;   // argmax
};

SampleStats per_sample_stats(const LayerStack& encoder, const LayerStack& classifier,
                             const LabeledDataset& ds);

struct CredibilityScores {
  std::vector<double> p_clean;
  std::vector<double> p_right;
  std::vector<double> losses;
  std::vector<double> confidences;
};

struct CredibilityAssessment {
  CredibilityScores scores;
  /// Empty when the corresponding values were degenerate (all equal).
  std::optional<Gmm1D> loss_gmm;
  std::optional<Gmm1D> confidence_gmm;
};

/// p_clean: low-mean posterior of a GMM on min-max normalized losses.
/// p_right: high-mean posterior of a GMM on confidences.
/// Degenerate inputs fall back to p_clean = 1 (keep every label) and
/// p_right = 0 (correct nothing).
CredibilityAssessment assess_credibility(const SampleStats& stats, const EmOptions& options = {});

enum class Origin { kept, corrected };

std::string to_string(Origin o);
Origin parse_origin(const std::string& s);

struct TransferredLabels {
  struct Entry {
    std::size_t index = 0;
    Label label = 0;
    Origin origin = Origin::kept;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  int num_classes = 0;
  std::size_t num_samples = 0;
  std::vector<Entry> labeled;
  std::vector<std::size_t> unlabeled;
  double tau_clean = kDefaultTauClean;
  double tau_right = kDefaultTauRight;

  /// Throws ConfigError unless labeled and unlabeled indices partition [0, N).
  void validate() const;
  std::vector<double> one_hot(const Entry& e) const;
  std::size_t count(Origin o) const;
  /// Per-class counts of the labeled set.
  std::vector<std::size_t> class_counts() const;
  friend bool operator==(const TransferredLabels&, const TransferredLabels&) = default;
};

/// p_clean >= tau_clean keeps the observed label; otherwise p_right >=
/// tau_right adopts the prediction; otherwise the sample is unlabeled.
TransferredLabels transfer_labels(std::span<const Label> noisy, std::span<const Label> predicted,
                                  const CredibilityScores& scores, int num_classes,
                                  double tau_clean = kDefaultTauClean,
                                  double tau_right = kDefaultTauRight);

struct TransferQuality {
  double precision = 0.0;  // fraction of L whose label equals y_clean
  double coverage = 0.0;   // |L| / N
  double kept_precision = 0.0;
  double corrected_precision = 0.0;
};

/// Uses the hidden clean labels; for diagnostics only.
TransferQuality transfer_quality(const TransferredLabels& t, std::span<const Label> clean);

struct Stage2Config {
  ClassifierTrainConfig classifier{};
  EmOptions em{};
  double tau_clean = kDefaultTauClean;
  double tau_right = kDefaultTauRight;
};

struct Stage2Result {
  ClassifierResult classifier;
  SampleStats stats;
  CredibilityAssessment credibility;
  TransferredLabels transfer;
};

/// Frozen-representation classifier, credibility scores and the L/U transfer.
Stage2Result run_stage2(const LayerStack& encoder, const LabeledDataset& train, const Stage2Config& config,
                        std::uint64_t seed, const LabeledDataset* test = nullptr);

}  // namespace reed::cred
