#include "reed/credibility.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "reed/error.hpp"
#include "reed/optim.hpp"
#include "reed/random.hpp"
#include "reed/ssrl.hpp"

namespace reed::cred {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_normal(double v, double mean, double variance) {
  const double d = v - mean;
  return -0.5 * (std::log(2.0 * std::numbers::pi * variance) + d * d / variance);
}

/// log w_k + log N(v | m_k, s_k) for both components.
std::array<double, 2> component_log_joint(const Gmm1D& g, double v) {
  std::array<double, 2> out{};
  for (std::size_t k = 0; k < 2; ++k)
    out[k] = g.weights[k] > 0.0 ? std::log(g.weights[k]) + log_normal(v, g.means[k], g.variances[k]) : kNegInf;
  return out;
}

double log_sum_exp(const std::array<double, 2>& a) {
  const double m = std::max(a[0], a[1]);
  if (m == kNegInf) return kNegInf;
  return m + std::log(std::exp(a[0] - m) + std::exp(a[1] - m));
}

double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

void order_by_mean(Gmm1D& g) {
  if (g.means[0] > g.means[1]) {
    std::swap(g.means[0], g.means[1]);
    std::swap(g.variances[0], g.variances[1]);
    std::swap(g.weights[0], g.weights[1]);
  }
}

}  // namespace

void Gmm1D::validate() const {
  for (std::size_t k = 0; k < 2; ++k) {
    if (!std::isfinite(means[k]) || !(variances[k] > 0.0) || !std::isfinite(variances[k]))
      throw ConfigError("gmm: invalid mean or variance");
    if (!(weights[k] >= 0.0)) throw ConfigError("gmm: negative weight");
  }
  if (std::abs(weights[0] + weights[1] - 1.0) > 1e-9) throw ConfigError("gmm: weights must sum to 1");
  if (means[0] > means[1]) throw ConfigError("gmm: components must be ordered by mean");
}

double Gmm1D::mean_log_likelihood(std::span<const double> values) const {
  double total = 0.0;
  for (double v : values) total += log_sum_exp(component_log_joint(*this, v));
  return total / static_cast<double>(values.size());
}

namespace {

GmmFit run_em(std::span<const double> values, const Gmm1D& start, const EmOptions& options) {
  const double n = static_cast<double>(values.size());
  GmmFit fit;
  Gmm1D& g = fit.model;
  g = start;

  std::vector<double> resp(values.size());
  double ll = g.mean_log_likelihood(values);
  fit.log_likelihood.push_back(ll);
  for (int it = 1; it <= options.max_iter; ++it) {
    // E-step: responsibility of component 1.
    double sum_r1 = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const auto lj = component_log_joint(g, values[i]);
      resp[i] = std::exp(lj[1] - log_sum_exp(lj));
      sum_r1 += resp[i];
    }
    // M-step.
    const std::array<double, 2> mass{n - sum_r1, sum_r1};
    Gmm1D next = g;
    for (std::size_t k = 0; k < 2; ++k) {
      if (!(mass[k] > 1e-12)) {
        next.weights[k] = 0.0;
        continue;
      }
      double m = 0.0;
      for (std::size_t i = 0; i < values.size(); ++i) m += (k == 1 ? resp[i] : 1.0 - resp[i]) * values[i];
      m /= mass[k];
      double var = 0.0;
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double d = values[i] - m;
        var += (k == 1 ? resp[i] : 1.0 - resp[i]) * d * d;
      }
      next.means[k] = m;
      next.variances[k] = std::max(var / mass[k], options.variance_floor);
      next.weights[k] = mass[k] / n;
    }
    const double wsum = next.weights[0] + next.weights[1];
    next.weights[0] /= wsum;
    next.weights[1] /= wsum;
    g = next;
    const double next_ll = g.mean_log_likelihood(values);
    fit.log_likelihood.push_back(next_ll);
    fit.iterations = it;
    const double gain = next_ll - ll;
    ll = next_ll;
    if (gain < options.tol) {
      fit.converged = true;
      break;
    }
  }
  order_by_mean(g);
  return fit;
}

}  // namespace

GmmFit fit_gmm_em(std::span<const double> values, const EmOptions& options) {
  if (values.size() < 4) throw ConfigError("fit_gmm_em: need at least 4 values");
  if (options.max_iter < 0 || options.restarts < 0 || !(options.variance_floor > 0.0) || !(options.tol >= 0.0))
    throw ConfigError("fit_gmm_em: invalid options");
  for (double v : values)
    if (!std::isfinite(v)) throw NumericError("fit_gmm_em: non-finite value");

  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() == sorted.back()) throw NumericError("fit_gmm_em: all values identical (degenerate fit)");

  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double pooled = 0.0;
  for (double v : values) pooled += (v - mean) * (v - mean);
  pooled = std::max(pooled / n, options.variance_floor);

  Gmm1D start;
  start.means = {quantile(sorted, 0.1), quantile(sorted, 0.9)};
  if (start.means[0] == start.means[1]) start.means = {sorted.front(), sorted.back()};
  start.variances = {pooled, pooled};
  start.weights = {0.5, 0.5};
  GmmFit best = run_em(values, start, options);

  Rng rng(derive_seed(options.seed, 41));
  for (int r = 0; r < options.restarts; ++r) {
    double a = values[rng.index(values.size())];
    double b = values[rng.index(values.size())];
    if (a == b) continue;
    start.means = {std::min(a, b), std::max(a, b)};
    GmmFit fit = run_em(values, start, options);
    if (fit.log_likelihood.back() > best.log_likelihood.back() + 1e-12) best = std::move(fit);
  }
  return best;
}

double gmm_posterior(const Gmm1D& g, double v, Component component) {
  const auto lj = component_log_joint(g, v);
  const std::size_t k = component == Component::low_mean ? 0 : 1;
  const double lse = log_sum_exp(lj);
  if (lse == kNegInf) return 0.5;
  return std::exp(lj[k] - lse);
}

void ClassifierTrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("stage2: epochs must be non-negative");
  if (!(learning_rate > 0.0)) throw ConfigError("stage2: learning_rate must be positive");
  if (batch_size < 1) throw ConfigError("stage2: batch_size must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("stage2: momentum must be in [0, 1)");
}

namespace {

double accuracy(std::span<const Label> predicted, std::span<const Label> truth) {
  if (predicted.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

}  // namespace

ClassifierResult train_frozen_classifier(const LayerStack& encoder, const LabeledDataset& train,
                                         const ClassifierTrainConfig& config, std::uint64_t seed,
                                         const LabeledDataset* test) {
  config.validate();
  train.validate();
  if (train.size() == 0) throw ConfigError("stage2: empty training set");
  const Matrix z = ssrl::embed(encoder, train.x);
  const Matrix z_test = test ? ssrl::embed(encoder, test->x) : Matrix();

  Rng init_rng(derive_seed(seed, 21));
  nn::MlpParams model;
  const std::size_t widths[] = {z.cols(), static_cast<std::size_t>(train.num_classes)};
  model.classifier = nn::init_stack(widths, init_rng);
  const nn::GradMask only_classifier{false, true};

  Rng rng(derive_seed(seed, 22));
  nn::OptState opt = nn::make_sgd(config.learning_rate, config.momentum);
  const auto batch = static_cast<std::size_t>(config.batch_size);
  ClassifierResult result;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::size_t> order = rng.permutation(z.rows());
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::span<const std::size_t> rows(order.data() + start, end - start);
      Matrix zb = nn::gather_rows(z, rows);
      std::vector<std::size_t> targets;
      for (std::size_t r : rows) targets.push_back(static_cast<std::size_t>(train.y_noisy[r]));
      auto g = nn::grad(
          model,
          [&](nn::Tape& tape, const nn::MlpVars& vars) {
            Var logp = nn::log_softmax_rows(vars.classify(tape.constant(zb)));
            return nn::scale(nn::mean(nn::pick_per_row(logp, targets)), -1.0);
          },
          only_classifier);
      nn::optimizer_step(opt, model, g.grads, only_classifier);
      total += g.loss;
      ++batches;
    }
    EpochAccuracy row;
    row.epoch = epoch;
    row.loss = total / static_cast<double>(std::max<std::size_t>(batches, 1));
    row.train_acc = accuracy(nn::predict(nn::run_stack(model.classifier, z, false)), train.y_noisy);
    row.test_acc = test ? accuracy(nn::predict(nn::run_stack(model.classifier, z_test, false)), test->y_clean)
                        : std::numeric_limits<double>::quiet_NaN();
    result.log.push_back(row);
  }
  result.classifier = std::move(model.classifier);
  return result;
}

SampleStats per_sample_stats(const LayerStack& encoder, const LayerStack& classifier, const LabeledDataset& ds) {
  ds.validate();
  nn::MlpParams model{encoder, classifier};
  const auto fwd = nn::mlp_forward(model, ds.x);
  SampleStats s;
  s.predictions = nn::predict(fwd.probs);
  s.losses.resize(ds.size());
  s.confidences.resize(ds.size());
  const auto c = static_cast<std::size_t>(ds.num_classes);
  if (fwd.probs.cols() != c) throw ConfigError("per_sample_stats: classifier width differs from class count");
  std::vector<double> target(c, 0.0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto p = fwd.probs.row(i);
    const auto y = static_cast<std::size_t>(ds.y_noisy[i]);
    target[y] = 1.0;
    s.losses[i] = nn::cross_entropy(p, target);
    target[y] = 0.0;
    s.confidences[i] = *std::max_element(p.begin(), p.end());
  }
  return s;
}

CredibilityAssessment assess_credibility(const SampleStats& stats, const EmOptions& options) {
  const std::size_t n = stats.losses.size();
  if (stats.confidences.size() != n) throw ConfigError("assess_credibility: length mismatch");
  CredibilityAssessment a;
  a.scores.losses = stats.losses;
  a.scores.confidences = stats.confidences;
  a.scores.p_clean.assign(n, 1.0);
  a.scores.p_right.assign(n, 0.0);
  if (n == 0) return a;

  const auto [lo, hi] = std::minmax_element(stats.losses.begin(), stats.losses.end());
  if (*hi > *lo && n >= 4) {
    std::vector<double> normalized(n);
    for (std::size_t i = 0; i < n; ++i) normalized[i] = (stats.losses[i] - *lo) / (*hi - *lo);
    a.loss_gmm = fit_gmm_em(normalized, options).model;
    for (std::size_t i = 0; i < n; ++i)
      a.scores.p_clean[i] = gmm_posterior(*a.loss_gmm, normalized[i], Component::low_mean);
  }
  const auto [clo, chi] = std::minmax_element(stats.confidences.begin(), stats.confidences.end());
  if (*chi > *clo && n >= 4) {
    a.confidence_gmm = fit_gmm_em(stats.confidences, options).model;
    for (std::size_t i = 0; i < n; ++i)
      a.scores.p_right[i] = gmm_posterior(*a.confidence_gmm, stats.confidences[i], Component::high_mean);
  }
  return a;
}

std::string to_string(Origin o) { return o == Origin::kept ? "kept" : "corrected"; }

Origin parse_origin(const std::string& s) {
  if (s == "kept") return Origin::kept;
  if (s == "corrected") return Origin::corrected;
  throw FormatError("origin", "expected 'kept' or 'corrected', got '" + s + "'");
}

void TransferredLabels::validate() const {
  std::vector<char> seen(num_samples, 0);
  auto mark = [&](std::size_t i) {
    if (i >= num_samples) throw ConfigError("transfer: index out of range");
    if (seen[i]) throw ConfigError("transfer: index listed twice");
    seen[i] = 1;
  };
  for (const auto& e : labeled) {
    mark(e.index);
    if (e.label < 0 || e.label >= num_classes) throw ConfigError("transfer: label out of range");
  }
  for (std::size_t i : unlabeled) mark(i);
  if (std::find(seen.begin(), seen.end(), 0) != seen.end())
    throw ConfigError("transfer: labeled and unlabeled sets do not cover every sample");
}

std::vector<double> TransferredLabels::one_hot(const Entry& e) const {
  std::vector<double> v(static_cast<std::size_t>(num_classes), 0.0);
  v[static_cast<std::size_t>(e.label)] = 1.0;
  return v;
}

std::size_t TransferredLabels::count(Origin o) const {
  return static_cast<std::size_t>(
      std::count_if(labeled.begin(), labeled.end(), [o](const Entry& e) { return e.origin == o; }));
}

std::vector<std::size_t> TransferredLabels::class_counts() const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (const auto& e : labeled) ++counts[static_cast<std::size_t>(e.label)];
  return counts;
}

TransferredLabels transfer_labels(std::span<const Label> noisy, std::span<const Label> predicted,
                                  const CredibilityScores& scores, int num_classes, double tau_clean,
                                  double tau_right) {
  const std::size_t n = noisy.size();
  if (predicted.size() != n || scores.p_clean.size() != n || scores.p_right.size() != n)
    throw ConfigError("transfer_labels: vectors are not aligned");
  if (!(tau_clean >= 0.0 && tau_clean <= 1.0 && tau_right >= 0.0 && tau_right <= 1.0))
    throw ConfigError("transfer_labels: thresholds must be in [0, 1]");
  TransferredLabels t;
  t.num_classes = num_classes;
  t.num_samples = n;
  t.tau_clean = tau_clean;
  t.tau_right = tau_right;
  for (std::size_t i = 0; i < n; ++i) {
    if (scores.p_clean[i] >= tau_clean)
      t.labeled.push_back({i, noisy[i], Origin::kept});
    else if (scores.p_right[i] >= tau_right)
      t.labeled.push_back({i, predicted[i], Origin::corrected});
    else
      t.unlabeled.push_back(i);
  }
  return t;
}

TransferQuality transfer_quality(const TransferredLabels& t, std::span<const Label> clean) {
  TransferQuality q;
  std::size_t hits = 0, kept = 0, kept_hits = 0, corr = 0, corr_hits = 0;
  for (const auto& e : t.labeled) {
    const bool ok = clean[e.index] == e.label;
    hits += ok;
    if (e.origin == Origin::kept) {
      ++kept;
      kept_hits += ok;
    } else {
      ++corr;
      corr_hits += ok;
    }
  }
  auto ratio = [](std::size_t a, std::size_t b) {
    return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
  };
  q.precision = ratio(hits, t.labeled.size());
  q.coverage = ratio(t.labeled.size(), t.num_samples);
  q.kept_precision = ratio(kept_hits, kept);
  q.corrected_precision = ratio(corr_hits, corr);
  return q;
}

Stage2Result run_stage2(const LayerStack& encoder, const LabeledDataset& train, const Stage2Config& config,
                        std::uint64_t seed, const LabeledDataset* test) {
  Stage2Result r;
  r.classifier = train_frozen_classifier(encoder, train, config.classifier, seed, test);
  r.stats = per_sample_stats(encoder, r.classifier.classifier, train);
  r.credibility = assess_credibility(r.stats, config.em);
  r.transfer = transfer_labels(train.y_noisy, r.stats.predictions, r.credibility.scores, train.num_classes,
                               config.tau_clean, config.tau_right);
  return r;
}

}  // namespace reed::cred
