#include "reed/semi.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "reed/error.hpp"
#include "reed/ssrl.hpp"

namespace reed::semi {

using Entry = TransferredLabels::Entry;

void MixMatchConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("stage3: temperature must be positive");
  if (!(alpha > 0.0)) throw ConfigError("stage3: alpha must be positive");
  if (!(lambda_u >= 0.0)) throw ConfigError("stage3: lambda_u must be non-negative");
  if (lambda_u_rampup_epochs < 0) throw ConfigError("stage3: lambda_u_rampup_epochs must be non-negative");
  if (k_augment < 1) throw ConfigError("stage3: k_augment must be at least 1");
  if (batch_size < 1) throw ConfigError("stage3: batch_size must be positive");
  if (epochs < 0) throw ConfigError("stage3: epochs must be non-negative");
  if (!(learning_rate > 0.0) || !(eta_min >= 0.0) || eta_min > learning_rate)
    throw ConfigError("stage3: need learning_rate > 0 and 0 <= eta_min <= learning_rate");
  if (!(lambda_lu >= 0.0 && lambda_uu >= 0.0)) throw ConfigError("stage3: graph weights must be non-negative");
  if (!(tau_c >= 0.0 && tau_c < 1.0)) throw ConfigError("stage3: tau_c must be in [0, 1)");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("stage3: ema_decay must be in [0, 1)");
  augmentation.validate();
}

BalancedSampler::BalancedSampler(const TransferredLabels& transfer) {
  if (transfer.labeled.empty()) throw ConfigError("balanced sampler: labeled set is empty");
  std::vector<std::vector<Entry>> lists(static_cast<std::size_t>(std::max(transfer.num_classes, 0)));
  for (const Entry& e : transfer.labeled) {
    if (e.label < 0 || e.label >= transfer.num_classes) throw ConfigError("balanced sampler: label out of range");
    lists[static_cast<std::size_t>(e.label)].push_back(e);
  }
  for (auto& l : lists)
    if (!l.empty()) by_class_.push_back(std::move(l));
}

Entry BalancedSampler::draw(Rng& rng) const {
  const auto& members = by_class_[rng.index(by_class_.size())];
  return members[rng.index(members.size())];
}

std::vector<Entry> BalancedSampler::sample(std::size_t count, Rng& rng) const {
  std::vector<Entry> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(draw(rng));
  return out;
}

std::vector<Entry> balanced_sample_L(const BalancedSampler& sampler, std::size_t count, Rng& rng) {
  return sampler.sample(count, rng);
}

std::vector<Entry> uniform_sample_L(const TransferredLabels& transfer, std::size_t count, Rng& rng) {
  if (transfer.labeled.empty()) throw ConfigError("uniform sampler: labeled set is empty");
  std::vector<Entry> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(transfer.labeled[rng.index(transfer.labeled.size())]);
  return out;
}

std::vector<std::size_t> sample_U_candidates(std::size_t num_samples, std::size_t count, Rng& rng) {
  if (num_samples == 0) throw ConfigError("unlabeled sampler: dataset is empty");
  std::vector<std::size_t> out(count);
  for (auto& i : out) i = rng.index(num_samples);
  return out;
}

Matrix sample_U_candidates(const LabeledDataset& ds, std::size_t count, Rng& rng) {
  auto idx = sample_U_candidates(ds.size(), count, rng);
  return nn::gather_rows(ds.x, idx);
}

Matrix guess_labels(const MlpParams& model, const Matrix& x_u, int k, double temperature,
                    const data::AugmentationSpec& augmentation, Rng& rng) {
  if (k < 1) throw ConfigError("guess_labels: K must be at least 1");
  Matrix mean_p(x_u.rows(), model.output_dim());
  for (int a = 0; a < k; ++a) {
    Matrix view = augmentation.is_identity() ? x_u : data::augment_rows(x_u, augmentation, rng);
    Matrix p = nn::mlp_forward(model, view).probs;
    auto dst = mean_p.values();
    auto src = p.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i] / k;
  }
  return graph::sharpen_rows(mean_p, temperature);
}

MixupResult mixup_with(std::span<const double> x1, std::span<const double> y1, std::span<const double> x2,
                       std::span<const double> y2, double weight) {
  if (x1.size() != x2.size() || y1.size() != y2.size()) throw ConfigError("mixup: shape mismatch");
  MixupResult r;
  r.weight = weight;
  r.x.resize(x1.size());
  r.y.resize(y1.size());
  for (std::size_t i = 0; i < x1.size(); ++i) r.x[i] = weight * x1[i] + (1.0 - weight) * x2[i];
  for (std::size_t i = 0; i < y1.size(); ++i) r.y[i] = weight * y1[i] + (1.0 - weight) * y2[i];
  return r;
}

MixupResult mixup(std::span<const double> x1, std::span<const double> y1, std::span<const double> x2,
                  std::span<const double> y2, double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw ConfigError("mixup: alpha must be positive");
  double lambda = rng.beta(alpha, alpha);
  if (!std::isfinite(lambda)) lambda = 1.0;
  return mixup_with(x1, y1, x2, y2, std::max(lambda, 1.0 - lambda));
}

MixedBatch mix_batches(const MlpParams& guess_model, const LabeledBatch& labeled, const Matrix& unlabeled,
                       const MixMatchConfig& config, Rng& rng) {
  const std::size_t n_l = labeled.x.rows();
  const std::size_t n_u = unlabeled.rows();
  const auto k = static_cast<std::size_t>(config.k_augment);
  if (n_l == 0) throw ConfigError("mixmatch: labeled batch is empty");

  Matrix x_hat = data::augment_rows(labeled.x, config.augmentation, rng);
  std::vector<Matrix> u_views;
  Matrix mean_p(n_u, guess_model.output_dim());
  for (std::size_t a = 0; a < k && n_u > 0; ++a) {
    u_views.push_back(data::augment_rows(unlabeled, config.augmentation, rng));
    Matrix p = nn::mlp_forward(guess_model, u_views.back()).probs;
    auto dst = mean_p.values();
    auto src = p.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i] / static_cast<double>(k);
  }
  Matrix q = n_u > 0 ? graph::sharpen_rows(mean_p, config.temperature) : Matrix(0, labeled.targets.cols());
  Matrix u_hat = nn::vstack(u_views);
  std::vector<Matrix> q_rep(u_views.size(), q);
  Matrix q_hat = nn::vstack(q_rep);

  const Matrix xs[] = {x_hat, u_hat};
  const Matrix ys[] = {labeled.targets, q_hat};
  Matrix all_x = nn::vstack(xs);
  Matrix all_y = nn::vstack(ys);
  std::vector<std::size_t> perm = rng.permutation(all_x.rows());

  MixedBatch out;
  out.x_labeled = Matrix(n_l, all_x.cols());
  out.y_labeled = Matrix(n_l, all_y.cols());
  out.x_unlabeled = Matrix(u_hat.rows(), all_x.cols());
  out.y_unlabeled = Matrix(u_hat.rows(), all_y.cols());
  for (std::size_t i = 0; i < all_x.rows(); ++i) {
    auto m = mixup(all_x.row(i), all_y.row(i), all_x.row(perm[i]), all_y.row(perm[i]), config.alpha, rng);
    Matrix& dx = i < n_l ? out.x_labeled : out.x_unlabeled;
    Matrix& dy = i < n_l ? out.y_labeled : out.y_unlabeled;
    const std::size_t r = i < n_l ? i : i - n_l;
    std::copy(m.x.begin(), m.x.end(), dx.row(r).begin());
    std::copy(m.y.begin(), m.y.end(), dy.row(r).begin());
  }
  return out;
}

LossVars stage3_loss(nn::Tape& tape, const nn::MlpVars& model, const StepBatch& batch,
                     const MixMatchConfig& config, double lambda_u) {
  LossVars v;
  const MixedBatch& m = batch.mixed;
  v.sup = nn::soft_cross_entropy(model.logits(tape.constant(m.x_labeled)), m.y_labeled);
  if (m.x_unlabeled.rows() > 0) {
    Var p = nn::softmax_rows(model.logits(tape.constant(m.x_unlabeled)));
    v.unsup = nn::mean_row_sqdist(p, tape.constant(m.y_unlabeled));
  } else {
    v.unsup = tape.constant(Matrix(1, 1));
  }
  if (batch.graph && batch.graph_unlabeled_x.rows() > 0) {
    Var p_u = nn::softmax_rows(model.logits(tape.constant(batch.graph_unlabeled_x)));
    Var sharp = graph::sharpen_rows(p_u, config.temperature);
    v.graph = graph::graph_regularizer(*batch.graph, sharp, batch.graph_labeled_targets,
                                       {config.lambda_lu, config.lambda_uu, config.uu_ordered_pairs});
  } else {
    v.graph = tape.constant(Matrix(1, 1));
  }
  v.total = nn::add(nn::add(v.sup, nn::scale(v.unsup, lambda_u)), v.graph);
  return v;
}

LossValues mixmatch_losses(const MlpParams& model, const LabeledBatch& labeled, const Matrix& unlabeled,
                           const MixMatchConfig& config, Rng& rng) {
  StepBatch batch;
  batch.mixed = mix_batches(model, labeled, unlabeled, config, rng);
  nn::Tape tape;
  auto vars = nn::bind_mlp(tape, model, {false, false});
  LossVars l = stage3_loss(tape, vars, batch, config, config.lambda_u);
  return {l.sup.scalar(), l.unsup.scalar(), l.graph.scalar(), l.total.scalar()};
}

Stage3Trainer::Stage3Trainer(MlpParams init, nn::LayerStack graph_encoder, const TransferredLabels& transfer,
                             const LabeledDataset& train, const MixMatchConfig& config, std::uint64_t seed)
    : model_(std::move(init)),
      graph_encoder_(std::move(graph_encoder)),
      transfer_(transfer),
      train_(train),
      config_(config),
      rng_(derive_seed(seed, 31)) {
  config_.validate();
  model_.validate();
  transfer_.validate();
  if (transfer_.num_samples != train_.size()) throw ConfigError("stage3: transfer does not match the dataset size");
  if (transfer_.num_classes != train_.num_classes || model_.output_dim() != static_cast<std::size_t>(train_.num_classes))
    throw ConfigError("stage3: class count mismatch between model, transfer and dataset");
  if (model_.input_dim() != train_.dim()) throw ConfigError("stage3: model input width differs from the data");
  if (transfer_.labeled.empty()) throw ConfigError("stage3: labeled set is empty");
  if (config_.use_cbs) sampler_.emplace(transfer_);
  if (config_.use_gsr) graph_z_ = ssrl::embed(graph_encoder_, train_.x);
  ema_ = nn::ema_init(model_, config_.ema_decay);
  opt_ = nn::make_adam(config_.learning_rate);
  const auto batch = static_cast<std::size_t>(config_.batch_size);
  steps_per_epoch_ = (train_.size() + batch - 1) / batch;
  total_steps_ = std::max<std::size_t>(1, steps_per_epoch_ * static_cast<std::size_t>(config_.epochs));
}

double Stage3Trainer::current_lambda_u() const {
  if (config_.lambda_u_rampup_epochs <= 0) return config_.lambda_u;
  const double epoch = static_cast<double>(step_) / static_cast<double>(steps_per_epoch_);
  return config_.lambda_u * std::min(1.0, epoch / config_.lambda_u_rampup_epochs);
}

StepBatch Stage3Trainer::next_batch() {
  const auto b = static_cast<std::size_t>(config_.batch_size);
  std::vector<Entry> l_entries = config_.use_cbs ? balanced_sample_L(*sampler_, b, rng_)
                                                 : uniform_sample_L(transfer_, b, rng_);
  std::vector<std::size_t> u_index;
  if (config_.use_cbs) {
    u_index = sample_U_candidates(train_.size(), b, rng_);
  } else if (!transfer_.unlabeled.empty()) {
    for (std::size_t i = 0; i < b; ++i) u_index.push_back(transfer_.unlabeled[rng_.index(transfer_.unlabeled.size())]);
  }

  std::vector<std::size_t> l_index;
  LabeledBatch labeled;
  labeled.targets = Matrix(b, static_cast<std::size_t>(train_.num_classes));
  for (std::size_t i = 0; i < b; ++i) {
    l_index.push_back(l_entries[i].index);
    labeled.targets(i, static_cast<std::size_t>(l_entries[i].label)) = 1.0;
  }
  labeled.x = nn::gather_rows(train_.x, l_index);
  Matrix unlabeled = nn::gather_rows(train_.x, u_index);

  StepBatch batch;
  const MlpParams& guesser = config_.guess_with_ema ? ema_.shadow : model_;
  batch.mixed = mix_batches(guesser, labeled, unlabeled, config_, rng_);
  if (config_.use_gsr) {
    std::vector<std::size_t> nodes = l_index;
    nodes.insert(nodes.end(), u_index.begin(), u_index.end());
    std::vector<graph::NodeRole> roles(l_index.size(), graph::NodeRole::labeled);
    roles.resize(nodes.size(), graph::NodeRole::unlabeled);
    batch.graph = graph::build_neighbor_graph(nn::gather_rows(graph_z_, nodes), config_.tau_c, std::move(roles));
    batch.graph_unlabeled_x = std::move(unlabeled);
    batch.graph_labeled_targets = labeled.targets;
  }
  return batch;
}

LossValues Stage3Trainer::step(const StepBatch& batch) {
  opt_.learning_rate = nn::cosine_lr(std::min(step_, total_steps_ - 1), total_steps_, config_.learning_rate,
                                     config_.eta_min);
  const double lambda_u = current_lambda_u();
  LossValues values;
  auto g = nn::grad(model_, [&](nn::Tape& tape, const nn::MlpVars& vars) {
    LossVars l = stage3_loss(tape, vars, batch, config_, lambda_u);
    values = {l.sup.scalar(), l.unsup.scalar(), l.graph.scalar(), l.total.scalar()};
    return l.total;
  });
  nn::optimizer_step(opt_, model_, g.grads);
  nn::ema_update(ema_, model_);
  ++step_;
  return values;
}

Stage3Result Stage3Trainer::run(const LabeledDataset* test) {
  Stage3Result result;
  for (int epoch = 1; epoch <= config_.epochs; ++epoch) {
    Stage3Epoch row;
    row.epoch = epoch;
    for (std::size_t s = 0; s < steps_per_epoch_; ++s) {
      StepBatch b = next_batch();
      LossValues v = step(b);
      row.l_sup += v.sup;
      row.l_unsup += v.unsup;
      row.r_graph += v.graph;
    }
    const double n = static_cast<double>(steps_per_epoch_);
    row.l_sup /= n;
    row.l_unsup /= n;
    row.r_graph /= n;
    row.test_acc = test ? accuracy(model_, *test) : std::numeric_limits<double>::quiet_NaN();
    row.test_acc_ema = test ? accuracy(ema_.shadow, *test) : std::numeric_limits<double>::quiet_NaN();
    result.log.push_back(row);
  }
  result.model = model_;
  result.ema = ema_;
  return result;
}

Stage3Result train_stage3(const MlpParams& init, const nn::LayerStack& graph_encoder,
                          const TransferredLabels& transfer, const LabeledDataset& train,
                          const MixMatchConfig& config, std::uint64_t seed, const LabeledDataset* test) {
  Stage3Trainer trainer(init, graph_encoder, transfer, train, config, seed);
  return trainer.run(test);
}

double accuracy(const MlpParams& model, const LabeledDataset& ds) {
  if (ds.size() == 0) throw ConfigError("accuracy: empty dataset");
  auto pred = nn::predict(nn::mlp_forward(model, ds.x).probs);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == ds.y_clean[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

}  // namespace reed::semi
