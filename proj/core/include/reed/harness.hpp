#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "reed/config.hpp"
#include "reed/credibility.hpp"
#include "reed/data.hpp"
#include "reed/mlp.hpp"
#include "reed/optim.hpp"
#include "reed/semi.hpp"
#include "reed/ssrl.hpp"

namespace reed::harness {

using data::LabeledDataset;
using nn::Label;
using nn::MlpParams;

/// Shortest text that parses back to the same double.
std::string format_double(double v);

struct MetricRow {
  std::string run_id;
  int epoch = 0;
  std::string split;
  std::string metric;
  double value = 0.0;
};

/// Long-format metrics table, CSV header run_id,epoch,split,metric,value.
class MetricsLog {
 public:
  /// Throws ConfigError unless `epoch` increases strictly along the
  /// (run_id, split, metric) series.
  void add(const std::string& run_id, int epoch, const std::string& split, const std::string& metric, double value);
  /// Appends every row of `other`, prefixing its run ids.
  void append(const MetricsLog& other, const std::string& run_prefix = "");

  const std::vector<MetricRow>& rows() const noexcept { return rows_; }
  /// Run ids in order of first appearance.
  std::vector<std::string> run_ids() const;
  std::vector<double> series(const std::string& run_id, const std::string& split, const std::string& metric) const;

  void write_csv(std::ostream& out) const;
  void save(const std::string& path) const;

 private:
  std::vector<MetricRow> rows_;
};

struct BestLast {
  double best = 0.0;
  /// Mean over the final min(10, n) epochs.
  double last = 0.0;
};

inline constexpr std::size_t kLastWindow = 10;

BestLast best_last(std::span<const double> per_epoch);

struct Evaluation {
  double top1 = 0.0;
  /// NaN for classes absent from the test set.
  std::vector<double> per_class;
};

/// Top-1 against y_clean. Throws ConfigError on an empty test set.
Evaluation evaluate(const MlpParams& model, const LabeledDataset& test);

struct PreparedData {
  /// y_noisy carries the injected noise; the test side stays clean.
  LabeledDataset train;
  LabeledDataset test;
};

PreparedData prepare_data(const ExperimentConfig& config);

/// Encoder widths {d, ssrl.hidden...} with a linear head to C classes.
MlpParams init_model(const ExperimentConfig& config);

struct SupervisedRun {
  MlpParams model;
  std::vector<double> train_loss;
  std::vector<double> test_acc;
};

/// Mini-batch Adam on mean cross-entropy against `labels`. Only the groups in
/// `mask` move. The batch order comes from `order_seed`, so runs sharing it
/// see identical schedules.
SupervisedRun train_supervised(MlpParams init, const LabeledDataset& train, std::span<const Label> labels,
                               nn::GradMask mask, const SupervisedConfig& config, std::uint64_t order_seed,
                               const LabeledDataset* test);

namespace run_ids {
inline const std::string clean = "a_clean";
inline const std::string retrain_representation = "b_retrain_representation";
inline const std::string retrain_classifier = "c_retrain_classifier";
inline const std::string noisy = "d_noisy";
inline const std::string ce = "ce";
inline const std::string stage1 = "stage1";
inline const std::string stage2 = "stage2";
inline const std::string transfer = "transfer";
inline const std::string stage3 = "stage3";
}  // namespace run_ids

/// Four regimes sharing one initialization and batch schedule:
/// (a) clean labels end to end, (b) classifier frozen from (a) and encoder
/// retrained on noisy labels, (c) encoder frozen from (a) and classifier
/// retrained, (d) noisy labels end to end.
MetricsLog run_decoupling_experiment(const ExperimentConfig& config);
MetricsLog run_decoupling_experiment(const ExperimentConfig& config, const PreparedData& data);

/// End-to-end cross-entropy on the noisy labels (same recipe as regime d).
MetricsLog run_ce_baseline(const ExperimentConfig& config, const PreparedData& data);

ssrl::EncoderResult run_stage1(const ExperimentConfig& config, const LabeledDataset& train);
cred::Stage2Result run_stage2(const ExperimentConfig& config, const nn::LayerStack& encoder,
                              const LabeledDataset& train, const LabeledDataset* test);
semi::Stage3Result run_stage3(const ExperimentConfig& config, const MlpParams& init, const nn::LayerStack& graph_encoder,
                              const cred::TransferredLabels& transfer, const LabeledDataset& train,
                              const LabeledDataset* test);

void log_stage1(MetricsLog& log, const ssrl::EncoderResult& r);
void log_stage2(MetricsLog& log, const cred::Stage2Result& r);
void log_stage3(MetricsLog& log, const semi::Stage3Result& r, const std::string& run_id = run_ids::stage3);

struct PipelineResult {
  MetricsLog log;
  ssrl::EncoderResult stage1;
  cred::Stage2Result stage2;
  std::optional<semi::Stage3Result> stage3;
  /// Stage-3 model in full mode, encoder + Stage-2 classifier otherwise.
  MlpParams final_model;
  /// Per-epoch test accuracy of the stage that produced final_model.
  std::vector<double> test_curve;
};

/// Stage-1 -> Stage-2 -> Stage-3, or stop after Stage-2 when the regime is
/// no-stage3.
PipelineResult run_pipeline(const ExperimentConfig& config);
PipelineResult run_pipeline(const ExperimentConfig& config, const PreparedData& data);

std::string ablation_run_id(bool use_cbs, bool use_gsr);

/// The {CBS, GSR} x {on, off} grid of Stage-3 runs on one shared transfer and
/// seed. Cells are logged in the order on/on, on/off, off/on, off/off.
MetricsLog run_ablation(const ExperimentConfig& config, const MlpParams& init, const nn::LayerStack& graph_encoder,
                        const cred::TransferredLabels& transfer, const PreparedData& data);
/// Runs Stage-1 and Stage-2 first.
MetricsLog run_ablation(const ExperimentConfig& config);

struct HistogramRow {
  std::string series;
  double bin_left = 0.0;
  double bin_right = 0.0;
  std::size_t count = 0;
};

struct Histograms {
  /// Series loss_clean / loss_noisy split by the hidden clean labels.
  std::vector<HistogramRow> loss;
  /// Series confidence_correct / confidence_wrong split by whether the
  /// prediction equals the clean label.
  std::vector<HistogramRow> confidence;
  /// Per-class counts of the labeled set after transfer.
  std::vector<std::size_t> class_counts;
};

inline constexpr int kHistogramBins = 50;

/// Each histogram uses `bins` equal bins over the observed range of its
/// values, shared by its two series.
Histograms build_histograms(const cred::SampleStats& stats, const LabeledDataset& train,
                            const cred::TransferredLabels& transfer, int bins = kHistogramBins);

/// Header series,bin_left,bin_right,count.
void write_histogram_csv(std::span<const HistogramRow> rows, std::ostream& out);
/// Header class,count; one row per class.
void write_class_counts_csv(std::span<const std::size_t> counts, std::ostream& out);

}  // namespace reed::harness
