#include "reed/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>

#include "reed/error.hpp"
#include "reed/random.hpp"

namespace reed::harness {

std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

void MetricsLog::add(const std::string& run_id, int epoch, const std::string& split, const std::string& metric,
                     double value) {
  for (auto it = rows_.rbegin(); it != rows_.rend(); ++it) {
    if (it->run_id == run_id && it->split == split && it->metric == metric) {
      if (epoch <= it->epoch)
        throw ConfigError("metrics: epoch " + std::to_string(epoch) + " does not follow " + std::to_string(it->epoch) +
                          " for " + run_id + "/" + split + "/" + metric);
      break;
    }
  }
  rows_.push_back({run_id, epoch, split, metric, value});
}

void MetricsLog::append(const MetricsLog& other, const std::string& run_prefix) {
  for (const MetricRow& r : other.rows_) add(run_prefix + r.run_id, r.epoch, r.split, r.metric, r.value);
}

std::vector<std::string> MetricsLog::run_ids() const {
  std::vector<std::string> out;
  for (const MetricRow& r : rows_)
    if (std::find(out.begin(), out.end(), r.run_id) == out.end()) out.push_back(r.run_id);
  return out;
}

std::vector<double> MetricsLog::series(const std::string& run_id, const std::string& split,
                                       const std::string& metric) const {
  std::vector<double> out;
  for (const MetricRow& r : rows_)
    if (r.run_id == run_id && r.split == split && r.metric == metric) out.push_back(r.value);
  return out;
}

void MetricsLog::write_csv(std::ostream& out) const {
  out << "run_id,epoch,split,metric,value\n";
  for (const MetricRow& r : rows_)
    out << r.run_id << ',' << r.epoch << ',' << r.split << ',' << r.metric << ',' << format_double(r.value) << '\n';
}

void MetricsLog::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  write_csv(out);
}

BestLast best_last(std::span<const double> per_epoch) {
  if (per_epoch.empty()) throw ConfigError("best_last: no epochs");
  BestLast r;
  r.best = *std::max_element(per_epoch.begin(), per_epoch.end());
  const std::size_t k = std::min(kLastWindow, per_epoch.size());
  double sum = 0.0;
  for (std::size_t i = per_epoch.size() - k; i < per_epoch.size(); ++i) sum += per_epoch[i];
  r.last = sum / static_cast<double>(k);
  return r;
}

Evaluation evaluate(const MlpParams& model, const LabeledDataset& test) {
  if (test.size() == 0) throw ConfigError("evaluate: empty test set");
  const auto pred = nn::predict(nn::mlp_forward(model, test.x).probs);
  const auto c = static_cast<std::size_t>(test.num_classes);
  std::vector<std::size_t> hits(c, 0);
  std::vector<std::size_t> totals(c, 0);
  std::size_t all_hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto y = static_cast<std::size_t>(test.y_clean[i]);
    ++totals[y];
    if (pred[i] == test.y_clean[i]) {
      ++hits[y];
      ++all_hits;
    }
  }
  Evaluation e;
  e.top1 = static_cast<double>(all_hits) / static_cast<double>(pred.size());
  for (std::size_t k = 0; k < c; ++k)
    e.per_class.push_back(totals[k] ? static_cast<double>(hits[k]) / static_cast<double>(totals[k])
                                    : std::numeric_limits<double>::quiet_NaN());
  return e;
}

PreparedData prepare_data(const ExperimentConfig& config) {
  config.validate();
  auto all = data::make_blobs(config.data, derive_seed(config.seed, streams::blobs));
  auto split = data::train_test_split(all, config.test_fraction, derive_seed(config.seed, streams::split));
  data::NoiseSpec noise = config.noise;
  noise.seed = derive_seed(config.seed, streams::noise);
  PreparedData out;
  out.train = data::apply_noise(std::move(split.train), noise);
  out.test = std::move(split.test);
  return out;
}

MlpParams init_model(const ExperimentConfig& config) {
  std::vector<std::size_t> widths{static_cast<std::size_t>(config.data.dim)};
  widths.insert(widths.end(), config.ssrl.hidden.begin(), config.ssrl.hidden.end());
  Rng rng(derive_seed(config.seed, streams::supervised_init));
  return nn::init_mlp(widths, static_cast<std::size_t>(config.data.classes), rng);
}

SupervisedRun train_supervised(MlpParams init, const LabeledDataset& train, std::span<const Label> labels,
                               nn::GradMask mask, const SupervisedConfig& config, std::uint64_t order_seed,
                               const LabeledDataset* test) {
  config.validate();
  if (labels.size() != train.size()) throw ConfigError("train_supervised: one label per row required");
  if (train.size() == 0) throw ConfigError("train_supervised: empty training set");
  SupervisedRun run;
  run.model = std::move(init);
  run.model.validate();
  nn::OptState opt = nn::make_adam(config.learning_rate);
  Rng rng(order_seed);
  const auto batch = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto order = rng.permutation(train.size());
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t s = 0; s < order.size(); s += batch) {
      const std::span<const std::size_t> rows(order.data() + s, std::min(batch, order.size() - s));
      const nn::Matrix xb = nn::gather_rows(train.x, rows);
      std::vector<std::size_t> yb;
      yb.reserve(rows.size());
      for (std::size_t r : rows) yb.push_back(static_cast<std::size_t>(labels[r]));
      auto g = nn::grad(
          run.model,
          [&](nn::Tape& t, const nn::MlpVars& v) {
            return nn::scale(nn::mean(nn::pick_per_row(nn::log_softmax_rows(v.logits(t.constant(xb))), yb)), -1.0);
          },
          mask);
      nn::optimizer_step(opt, run.model, g.grads, mask);
      loss_sum += g.loss;
      ++steps;
    }
    run.train_loss.push_back(loss_sum / static_cast<double>(steps));
    run.test_acc.push_back(test ? evaluate(run.model, *test).top1 : std::numeric_limits<double>::quiet_NaN());
  }
  return run;
}

namespace {

void log_supervised(MetricsLog& log, const std::string& run_id, const SupervisedRun& run) {
  for (std::size_t e = 0; e < run.test_acc.size(); ++e) {
    const int epoch = static_cast<int>(e) + 1;
    log.add(run_id, epoch, "train", "loss", run.train_loss[e]);
    log.add(run_id, epoch, "test", "acc", run.test_acc[e]);
  }
}

}  // namespace

MetricsLog run_decoupling_experiment(const ExperimentConfig& config) {
  return run_decoupling_experiment(config, prepare_data(config));
}

MetricsLog run_decoupling_experiment(const ExperimentConfig& config, const PreparedData& data) {
  const MlpParams init = init_model(config);
  const std::uint64_t order = derive_seed(config.seed, streams::supervised_order);
  const auto& sup = config.supervised;
  const auto& tr = data.train;

  SupervisedRun a = train_supervised(init, tr, tr.y_clean, {true, true}, sup, order, &data.test);
  SupervisedRun b = train_supervised({init.encoder, a.model.classifier}, tr, tr.y_noisy, {true, false}, sup, order,
                                     &data.test);
  SupervisedRun c = train_supervised({a.model.encoder, init.classifier}, tr, tr.y_noisy, {false, true}, sup, order,
                                     &data.test);
  SupervisedRun d = train_supervised(init, tr, tr.y_noisy, {true, true}, sup, order, &data.test);

  MetricsLog log;
  log_supervised(log, run_ids::clean, a);
  log_supervised(log, run_ids::retrain_representation, b);
  log_supervised(log, run_ids::retrain_classifier, c);
  log_supervised(log, run_ids::noisy, d);
  return log;
}

MetricsLog run_ce_baseline(const ExperimentConfig& config, const PreparedData& data) {
  SupervisedRun r = train_supervised(init_model(config), data.train, data.train.y_noisy, {true, true},
                                     config.supervised, derive_seed(config.seed, streams::supervised_order), &data.test);
  MetricsLog log;
  log_supervised(log, run_ids::ce, r);
  return log;
}

ssrl::EncoderResult run_stage1(const ExperimentConfig& config, const LabeledDataset& train) {
  return ssrl::train_encoder(train.x, config.ssrl, derive_seed(config.seed, streams::stage1));
}

cred::Stage2Result run_stage2(const ExperimentConfig& config, const nn::LayerStack& encoder,
                              const LabeledDataset& train, const LabeledDataset* test) {
  cred::Stage2Config s2 = config.stage2;
  const std::uint64_t seed = derive_seed(config.seed, streams::stage2);
  s2.em.seed = derive_seed(seed, 1);
  return cred::run_stage2(encoder, train, s2, seed, test);
}

semi::Stage3Result run_stage3(const ExperimentConfig& config, const MlpParams& init, const nn::LayerStack& graph_encoder,
                              const cred::TransferredLabels& transfer, const LabeledDataset& train,
                              const LabeledDataset* test) {
  return semi::train_stage3(init, graph_encoder, transfer, train, config.stage3,
                            derive_seed(config.seed, streams::stage3), test);
}

void log_stage1(MetricsLog& log, const ssrl::EncoderResult& r) {
  for (const auto& e : r.log) log.add(run_ids::stage1, e.epoch, "train", "nt_xent_loss", e.loss);
}

void log_stage2(MetricsLog& log, const cred::Stage2Result& r) {
  for (const auto& e : r.classifier.log) {
    log.add(run_ids::stage2, e.epoch, "train", "loss", e.loss);
    log.add(run_ids::stage2, e.epoch, "train", "noisy_acc", e.train_acc);
    log.add(run_ids::stage2, e.epoch, "test", "acc", e.test_acc);
  }
  const auto& t = r.transfer;
  log.add(run_ids::transfer, 0, "train", "labeled", static_cast<double>(t.labeled.size()));
  log.add(run_ids::transfer, 0, "train", "unlabeled", static_cast<double>(t.unlabeled.size()));
  log.add(run_ids::transfer, 0, "train", "kept", static_cast<double>(t.count(cred::Origin::kept)));
  log.add(run_ids::transfer, 0, "train", "corrected", static_cast<double>(t.count(cred::Origin::corrected)));
}

void log_stage3(MetricsLog& log, const semi::Stage3Result& r, const std::string& run_id) {
  for (const auto& e : r.log) {
    log.add(run_id, e.epoch, "train", "l_sup", e.l_sup);
    log.add(run_id, e.epoch, "train", "l_unsup", e.l_unsup);
    log.add(run_id, e.epoch, "train", "r_graph", e.r_graph);
    log.add(run_id, e.epoch, "test", "acc", e.test_acc);
    log.add(run_id, e.epoch, "test", "acc_ema", e.test_acc_ema);
  }
}

PipelineResult run_pipeline(const ExperimentConfig& config) { return run_pipeline(config, prepare_data(config)); }

PipelineResult run_pipeline(const ExperimentConfig& config, const PreparedData& data) {
  config.validate();
  PipelineResult r;
  r.stage1 = run_stage1(config, data.train);
  log_stage1(r.log, r.stage1);
  r.stage2 = run_stage2(config, r.stage1.encoder, data.train, &data.test);
  log_stage2(r.log, r.stage2);
  r.final_model = {r.stage1.encoder, r.stage2.classifier.classifier};
  for (const auto& e : r.stage2.classifier.log) r.test_curve.push_back(e.test_acc);
  if (config.regime == Regime::no_stage3) return r;

  r.stage3 = run_stage3(config, r.final_model, r.stage1.encoder, r.stage2.transfer, data.train, &data.test);
  log_stage3(r.log, *r.stage3);
  r.final_model = r.stage3->model;
  r.test_curve.clear();
  for (const auto& e : r.stage3->log) r.test_curve.push_back(e.test_acc);
  return r;
}

std::string ablation_run_id(bool use_cbs, bool use_gsr) {
  return std::string("cbs_") + (use_cbs ? "on" : "off") + "_gsr_" + (use_gsr ? "on" : "off");
}

MetricsLog run_ablation(const ExperimentConfig& config, const MlpParams& init, const nn::LayerStack& graph_encoder,
                        const cred::TransferredLabels& transfer, const PreparedData& data) {
  MetricsLog log;
  for (bool cbs : {true, false}) {
    for (bool gsr : {true, false}) {
      ExperimentConfig cell = config;
      cell.stage3.use_cbs = cbs;
      cell.stage3.use_gsr = gsr;
      auto r = run_stage3(cell, init, graph_encoder, transfer, data.train, &data.test);
      log_stage3(log, r, ablation_run_id(cbs, gsr));
    }
  }
  return log;
}

MetricsLog run_ablation(const ExperimentConfig& config) {
  const PreparedData data = prepare_data(config);
  const auto s1 = run_stage1(config, data.train);
  const auto s2 = run_stage2(config, s1.encoder, data.train, &data.test);
  return run_ablation(config, {s1.encoder, s2.classifier.classifier}, s1.encoder, s2.transfer, data);
}

namespace {

std::vector<HistogramRow> two_series(std::span<const double> values, std::span<const char> first,
                                     const std::string& first_name, const std::string& second_name, int bins) {
  double lo = *std::min_element(values.begin(), values.end());
  double hi = *std::max_element(values.begin(), values.end());
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double width = (hi - lo) / bins;
  std::vector<std::size_t> a(static_cast<std::size_t>(bins), 0);
  std::vector<std::size_t> b(static_cast<std::size_t>(bins), 0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto k = static_cast<std::size_t>(std::floor((values[i] - lo) / width));
    k = std::min(k, static_cast<std::size_t>(bins - 1));
    ++(first[i] ? a : b)[k];
  }
  std::vector<HistogramRow> rows;
  for (int pass = 0; pass < 2; ++pass) {
    const auto& counts = pass == 0 ? a : b;
    for (int k = 0; k < bins; ++k)
      rows.push_back({pass == 0 ? first_name : second_name, lo + k * width, k + 1 == bins ? hi : lo + (k + 1) * width,
                      counts[static_cast<std::size_t>(k)]});
  }
  return rows;
}

}  // namespace

Histograms build_histograms(const cred::SampleStats& stats, const LabeledDataset& train,
                            const cred::TransferredLabels& transfer, int bins) {
  const std::size_t n = train.size();
  if (bins < 1) throw ConfigError("histograms: bins must be positive");
  if (n == 0 || stats.losses.size() != n || stats.confidences.size() != n || stats.predictions.size() != n)
    throw ConfigError("histograms: statistics do not match the dataset");
  std::vector<char> clean(n);
  std::vector<char> correct(n);
  for (std::size_t i = 0; i < n; ++i) {
    clean[i] = train.y_clean[i] == train.y_noisy[i];
    correct[i] = stats.predictions[i] == train.y_clean[i];
  }
  Histograms h;
  h.loss = two_series(stats.losses, clean, "loss_clean", "loss_noisy", bins);
  h.confidence = two_series(stats.confidences, correct, "confidence_correct", "confidence_wrong", bins);
  h.class_counts = transfer.class_counts();
  return h;
}

void write_histogram_csv(std::span<const HistogramRow> rows, std::ostream& out) {
  out << "series,bin_left,bin_right,count\n";
  for (const auto& r : rows)
    out << r.series << ',' << format_double(r.bin_left) << ',' << format_double(r.bin_right) << ',' << r.count << '\n';
}

void write_class_counts_csv(std::span<const std::size_t> counts, std::ostream& out) {
  out << "class,count\n";
  for (std::size_t c = 0; c < counts.size(); ++c) out << c << ',' << counts[c] << '\n';
}

}  // namespace reed::harness
