#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "reed/autodiff.hpp"
#include "reed/credibility.hpp"
#include "reed/data.hpp"
#include "reed/graphreg.hpp"
#include "reed/mlp.hpp"
#include "reed/optim.hpp"

namespace reed::semi {

using cred::TransferredLabels;
using data::LabeledDataset;
using nn::Matrix;
using nn::MlpParams;
using nn::Var;

struct MixMatchConfig {
  double temperature = 0.5;
  double alpha = 0.75;
  double lambda_u = 50.0;
  /// Linear ramp of lambda_u from 0 over this many epochs (0 disables).
  int lambda_u_rampup_epochs = 0;
  int k_augment = 2;
  int batch_size = 128;
  int epochs = 60;
  double learning_rate = 1e-3;
  double eta_min = 2e-4;
  double lambda_lu = graph::kDefaultLambdaLU;
  double lambda_uu = graph::kDefaultLambdaUU;
  double tau_c = graph::kDefaultTauC;
  bool uu_ordered_pairs = true;
  bool use_cbs = true;
  bool use_gsr = true;
  double ema_decay = 0.999;
  /// Label guessing with the EMA weights instead of the live ones.
  bool guess_with_ema = true;
  data::AugmentationSpec augmentation{};

  void validate() const;
};

/// Class-balanced sampler over the labeled set: pick a represented class
/// uniformly, then an entry of that class uniformly (with replacement).
class BalancedSampler {
 public:
  /// Throws ConfigError when the labeled set is empty.
  explicit BalancedSampler(const TransferredLabels& transfer);

  TransferredLabels::Entry draw(Rng& rng) const;
  std::vector<TransferredLabels::Entry> sample(std::size_t count, Rng& rng) const;

  std::size_t represented_classes() const noexcept { return by_class_.size(); }

 private:
  std::vector<std::vector<TransferredLabels::Entry>> by_class_;
};

/// Same as BalancedSampler::sample.
std::vector<TransferredLabels::Entry> balanced_sample_L(const BalancedSampler& sampler, std::size_t count,
                                                        Rng& rng);

/// Uniform sample (with replacement) of L entries, ignoring classes.
std::vector<TransferredLabels::Entry> uniform_sample_L(const TransferredLabels& transfer, std::size_t count,
                                                       Rng& rng);

/// Uniform indices over all N samples; unlabeled candidates come from the
/// whole training set regardless of the L/U split.
std::vector<std::size_t> sample_U_candidates(std::size_t num_samples, std::size_t count, Rng& rng);
/// Feature rows only, drawn as above.
Matrix sample_U_candidates(const LabeledDataset& ds, std::size_t count, Rng& rng);

/// q = sharpen(mean_k p(augment_k(x)), T) for every row of x_u.
Matrix guess_labels(const MlpParams& model, const Matrix& x_u, int k, double temperature,
                    const data::AugmentationSpec& augmentation, Rng& rng);

struct MixupResult {
  std::vector<double> x;
  std::vector<double> y;
  double weight = 1.0;  // lambda' = max(lambda, 1 - lambda)
};

/// lambda ~ Beta(alpha, alpha), lambda' = max(lambda, 1 - lambda); the first
/// argument dominates.
MixupResult mixup(std::span<const double> x1, std::span<const double> y1, std::span<const double> x2,
                  std::span<const double> y2, double alpha, Rng& rng);
/// Mixing with a given lambda' (no sampling).
MixupResult mixup_with(std::span<const double> x1, std::span<const double> y1, std::span<const double> x2,
                       std::span<const double> y2, double weight);

/// Rows of a labeled and an unlabeled mini-batch.
struct LabeledBatch {
  Matrix x;        // raw features
  Matrix targets;  // one-hot transferred labels
};

/// Inputs and targets after augmentation, label guessing and mixup.
struct MixedBatch {
  Matrix x_labeled;
  Matrix y_labeled;
  Matrix x_unlabeled;
  Matrix y_unlabeled;
};

/// MixMatch batch construction. `guess_model` produces the guessed labels.
MixedBatch mix_batches(const MlpParams& guess_model, const LabeledBatch& labeled, const Matrix& unlabeled,
                       const MixMatchConfig& config, Rng& rng);

struct LossValues {
  double sup = 0.0;
  double unsup = 0.0;
  double graph = 0.0;
  double total = 0.0;
};

/// Mean soft cross-entropy over the mixed labeled rows and mean squared L2
/// between predictions and mixed targets over the mixed unlabeled rows.
LossValues mixmatch_losses(const MlpParams& model, const LabeledBatch& labeled, const Matrix& unlabeled,
                           const MixMatchConfig& config, Rng& rng);

/// Everything one Stage-3 step consumes, with all randomness already drawn.
struct StepBatch {
  MixedBatch mixed;
  /// Graph over the labeled batch nodes followed by the unlabeled batch nodes;
  /// absent when the graph term is off.
  std::optional<graph::NeighborGraph> graph;
  Matrix graph_unlabeled_x;
  Matrix graph_labeled_targets;
};

struct LossVars {
  Var total;
  Var sup;
  Var unsup;
  Var graph;
};

/// L = L_sup + lambda_u * L_unsup + R on a prepared batch.
LossVars stage3_loss(nn::Tape& tape, const nn::MlpVars& model, const StepBatch& batch,
                     const MixMatchConfig& config, double lambda_u);

struct Stage3Epoch {
  int epoch = 0;
  double test_acc = 0.0;
  double test_acc_ema = 0.0;
  double l_sup = 0.0;
  double l_unsup = 0.0;
  double r_graph = 0.0;
};

struct Stage3Result {
  MlpParams model;
  nn::EmaState ema;
  std::vector<Stage3Epoch> log;
};

/// Semi-supervised retraining of encoder and classifier on the transferred
/// labels. `graph_encoder` is the frozen Stage-1 encoder whose outputs define
/// the neighbor graph.
class Stage3Trainer {
 public:
  Stage3Trainer(MlpParams init, nn::LayerStack graph_encoder, const TransferredLabels& transfer,
                const LabeledDataset& train, const MixMatchConfig& config, std::uint64_t seed);

  /// Draws the next batch; advances the sampling stream.
  StepBatch next_batch();
  /// One optimizer + EMA step on `batch`; returns the loss components.
  LossValues step(const StepBatch& batch);
  /// Runs all epochs, evaluating on `test` after each.
  Stage3Result run(const LabeledDataset* test);

  const MlpParams& model() const noexcept { return model_; }
  const nn::EmaState& ema() const noexcept { return ema_; }
  std::size_t steps_per_epoch() const noexcept { return steps_per_epoch_; }
  double current_lambda_u() const;

 private:
  MlpParams model_;
  nn::EmaState ema_;
  nn::LayerStack graph_encoder_;
  const TransferredLabels& transfer_;
  const LabeledDataset& train_;
  MixMatchConfig config_;
  Matrix graph_z_;
  std::optional<BalancedSampler> sampler_;
  nn::OptState opt_;
  Rng rng_;
  std::size_t steps_per_epoch_ = 0;
  std::size_t total_steps_ = 0;
  std::size_t step_ = 0;
};

Stage3Result train_stage3(const MlpParams& init, const nn::LayerStack& graph_encoder,
                          const TransferredLabels& transfer, const LabeledDataset& train,
                          const MixMatchConfig& config, std::uint64_t seed, const LabeledDataset* test = nullptr);

/// Top-1 accuracy of `model` against clean labels.
double accuracy(const MlpParams& model, const LabeledDataset& ds);

}  // namespace reed::semi
