#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "gradcheck.hpp"
#include "reed/config.hpp"
#include "reed/error.hpp"
#include "reed/harness.hpp"
#include "reed/semi.hpp"

using namespace reed;
using namespace reed::semi;
using Entry = TransferredLabels::Entry;

namespace {

// chi-square critical values at significance 0.01
constexpr double kChi2Df49 = 74.919;
constexpr double kChi2Df99 = 134.642;

TransferredLabels transfer_with_counts(std::vector<std::size_t> counts, std::size_t unlabeled = 0) {
  TransferredLabels t;
  t.num_classes = static_cast<int>(counts.size());
  std::size_t idx = 0;
  for (std::size_t c = 0; c < counts.size(); ++c)
    for (std::size_t i = 0; i < counts[c]; ++i) t.labeled.push_back({idx++, static_cast<nn::Label>(c), cred::Origin::kept});
  for (std::size_t i = 0; i < unlabeled; ++i) t.unlabeled.push_back(idx++);
  t.num_samples = idx;
  return t;
}

data::AugmentationSpec no_augmentation() { return {0.0, 1.0, 1.0, 0.0}; }

struct Tiny {
  data::LabeledDataset train;
  TransferredLabels transfer;
  MlpParams init;
  nn::LayerStack graph_encoder;
};

Tiny tiny_problem(std::size_t unlabeled, std::uint64_t seed) {
  Tiny t;
  t.train = data::make_blobs({3, 8, 4, 3.0, 1.0}, seed);
  t.transfer.num_classes = 3;
  t.transfer.num_samples = t.train.size();
  for (std::size_t i = 0; i < t.train.size(); ++i) {
    if (i < unlabeled) t.transfer.unlabeled.push_back(i);
    else t.transfer.labeled.push_back({i, t.train.y_clean[i], cred::Origin::kept});
  }
  Rng rng(seed + 1);
  std::vector<std::size_t> w{4, 6};
  t.init = nn::init_mlp(w, 3, rng);
  for (auto* m : nn::tensors(t.init))
    for (double& v : m->values()) v += rng.uniform(-0.05, 0.05);
  t.graph_encoder = nn::init_stack(std::vector<std::size_t>{4, 5}, rng);
  // shift every pre-activation to at least 1 so no embedded row is zero
  const Matrix pre = nn::run_stack(t.graph_encoder, t.train.x, false);
  for (std::size_t j = 0; j < pre.cols(); ++j) {
    double lo = pre(0, j);
    for (std::size_t i = 1; i < pre.rows(); ++i) lo = std::min(lo, pre(i, j));
    t.graph_encoder[0].bias(0, j) += 1.0 - lo;
  }
  return t;
}

}  // namespace

TEST_CASE("balanced sampler equalizes skewed classes") {
  const auto t = transfer_with_counts({900, 100});
  BalancedSampler s(t);
  CHECK(s.represented_classes() == 2);
  Rng rng(1);
  const auto draws = balanced_sample_L(s, 100000, rng);
  std::size_t ones = 0;
  for (const auto& e : draws) ones += e.label == 1;
  CHECK(std::abs(ones / 1e5 - 0.5) < 0.02);

  const auto single = transfer_with_counts({0, 0, 7});
  BalancedSampler only(single);
  CHECK(only.represented_classes() == 1);
  for (const auto& e : only.sample(200, rng)) CHECK(e.label == 2);

  CHECK_THROWS_AS(BalancedSampler(transfer_with_counts({0, 0})), ConfigError);
  CHECK_THROWS_AS(uniform_sample_L(transfer_with_counts({0, 0}), 3, rng), ConfigError);
}

TEST_CASE("balanced sampling of a balanced set is uniform over entries") {
  const auto t = transfer_with_counts({20, 20, 20, 20, 20});
  BalancedSampler s(t);
  Rng rng(2);
  std::vector<double> freq(100, 0.0);
  for (const auto& e : s.sample(100000, rng)) ++freq[e.index];
  double chi2 = 0.0;
  for (double f : freq) chi2 += (f - 1000.0) * (f - 1000.0) / 1000.0;
  CHECK(chi2 < kChi2Df99);
}

TEST_CASE("unlabeled candidates are uniform over the whole dataset") {
  Rng rng(3);
  const auto idx = sample_U_candidates(50, 100000, rng);
  std::vector<double> freq(50, 0.0);
  for (auto i : idx) ++freq[i];
  double chi2 = 0.0;
  for (double f : freq) chi2 += (f - 2000.0) * (f - 2000.0) / 2000.0;
  CHECK(chi2 < kChi2Df49);
  CHECK_THROWS_AS(sample_U_candidates(0, 3, rng), ConfigError);

  // candidates include samples that sit in L
  const auto tiny = tiny_problem(6, 4);
  const auto rows = sample_U_candidates(tiny.train, 200, rng);
  CHECK(rows.rows() == 200);
  CHECK(rows.cols() == tiny.train.dim());
  bool saw_labeled = false;
  for (std::size_t r = 0; r < rows.rows() && !saw_labeled; ++r)
    for (const auto& e : tiny.transfer.labeled)
      if (std::equal(rows.row(r).begin(), rows.row(r).end(), tiny.train.x.row(e.index).begin())) saw_labeled = true;
  CHECK(saw_labeled);
}

TEST_CASE("label guessing") {
  const auto tiny = tiny_problem(0, 5);
  Rng rng(6);
  const Matrix p = nn::mlp_forward(tiny.init, tiny.train.x).probs;
  const Matrix q1 = guess_labels(tiny.init, tiny.train.x, 1, 1.0, no_augmentation(), rng);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(q1.values()[i] == doctest::Approx(p.values()[i]).epsilon(1e-12));

  const Matrix q2 = guess_labels(tiny.init, tiny.train.x, 2, 0.5, no_augmentation(), rng);
  const Matrix sharp = graph::sharpen_rows(p, 0.5);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(q2.values()[i] == doctest::Approx(sharp.values()[i]).epsilon(1e-12));

  // constant predictor: zero weights, fixed bias
  MlpParams constant = tiny.init;
  constant.classifier[0].weight.fill(0.0);
  constant.classifier[0].bias = Matrix{{0.3, -0.2, 1.0}};
  const auto pc = nn::softmax(constant.classifier[0].bias.row(0));
  const auto expected = graph::sharpen(pc, 0.5);
  const Matrix qc = guess_labels(constant, tiny.train.x, 3, 0.5, data::AugmentationSpec{}, rng);
  for (std::size_t r = 0; r < qc.rows(); ++r)
    for (std::size_t k = 0; k < 3; ++k) CHECK(qc(r, k) == doctest::Approx(expected[k]).epsilon(1e-12));

  CHECK_THROWS_AS(guess_labels(tiny.init, tiny.train.x, 0, 0.5, no_augmentation(), rng), ConfigError);
}

TEST_CASE("mixup") {
  std::vector<double> x1{1.0, 2.0}, x2{-1.0, 4.0}, y1{1.0, 0.0}, y2{0.0, 1.0};
  const auto full = mixup_with(x1, y1, x2, y2, 1.0);
  CHECK(full.x == x1);
  CHECK(full.y == y1);
  const auto half = mixup_with(x1, y1, x2, y1, 0.5);
  CHECK(half.y == y1);

  Rng rng(7);
  for (int i = 0; i < 500; ++i) {
    const auto m = mixup(x1, y1, x2, y2, 0.75, rng);
    CHECK(m.weight >= 0.5);
    CHECK(m.weight <= 1.0);
    CHECK(m.y[0] + m.y[1] == doctest::Approx(1.0));
    CHECK(m.y[0] >= m.y[1]);
    CHECK((m.x[0] <= 1.0 && m.x[0] >= -1.0));
    CHECK((m.x[1] >= 2.0 && m.x[1] <= 4.0));
  }
  CHECK_THROWS_AS(mixup(x1, y1, x2, y2, 0.0, rng), ConfigError);
  CHECK_THROWS_AS(mixup_with(x1, y1, std::vector<double>{1.0}, y2, 0.7), ConfigError);
}

TEST_CASE("MixMatch losses") {
  const auto tiny = tiny_problem(0, 8);
  Rng rng(9);
  LabeledBatch lb{nn::gather_rows(tiny.train.x, std::vector<std::size_t>{0, 1, 2, 3}), Matrix(4, 3)};
  for (std::size_t i = 0; i < 4; ++i) lb.targets(i, static_cast<std::size_t>(tiny.train.y_clean[i])) = 1.0;
  const Matrix u = nn::gather_rows(tiny.train.x, std::vector<std::size_t>{4, 5, 6, 7, 8});

  MixMatchConfig cfg;
  for (int trial = 0; trial < 10; ++trial) {
    const auto l = mixmatch_losses(tiny.init, lb, u, cfg, rng);
    CHECK(std::isfinite(l.sup));
    CHECK(l.sup >= 0.0);
    CHECK(l.unsup >= 0.0);
    CHECK(l.total == doctest::Approx(l.sup + cfg.lambda_u * l.unsup + l.graph));
  }
  MixMatchConfig no_u = cfg;
  no_u.lambda_u = 0.0;
  const auto l0 = mixmatch_losses(tiny.init, lb, u, no_u, rng);
  CHECK(l0.total == l0.sup);

  // no mixing, no augmentation, T = 1: the model agrees with its own guesses
  MixMatchConfig self = cfg;
  self.alpha = 1e-4;
  self.temperature = 1.0;
  self.augmentation = no_augmentation();
  const auto ls = mixmatch_losses(tiny.init, lb, u, self, rng);
  CHECK(ls.unsup < 1e-6);
}

TEST_CASE("stage 3 loss gradient matches finite differences") {
  const auto tiny = tiny_problem(6, 10);
  MixMatchConfig cfg;
  cfg.batch_size = 4;
  cfg.lambda_u = 5.0;
  cfg.lambda_lu = 0.5;
  cfg.lambda_uu = 0.3;
  cfg.tau_c = 0.0;
  Stage3Trainer trainer(tiny.init, tiny.graph_encoder, tiny.transfer, tiny.train, cfg, 11);
  const StepBatch batch = trainer.next_batch();
  REQUIRE(batch.graph.has_value());
  const auto c = testing::check_mlp_gradient(tiny.init, [&](nn::Tape& t, const nn::MlpVars& v) {
    auto l = stage3_loss(t, v, batch, cfg, cfg.lambda_u);
    CHECK(l.graph.scalar() > 0.0);
    CHECK(l.total.scalar() ==
          doctest::Approx(l.sup.scalar() + cfg.lambda_u * l.unsup.scalar() + l.graph.scalar()).epsilon(1e-12));
    return l.total;
  });
  CHECK(c.max_rel < 1e-4);
}

TEST_CASE("zero graph weights reproduce the run without the graph term") {
  const auto tiny = tiny_problem(6, 12);
  MixMatchConfig with;
  with.batch_size = 8;
  with.epochs = 2;
  with.lambda_lu = 0.0;
  with.lambda_uu = 0.0;
  MixMatchConfig without = with;
  without.use_gsr = false;
  const auto a = train_stage3(tiny.init, tiny.graph_encoder, tiny.transfer, tiny.train, with, 13);
  const auto b = train_stage3(tiny.init, tiny.graph_encoder, tiny.transfer, tiny.train, without, 13);
  CHECK(a.model == b.model);
  CHECK(a.ema.shadow == b.ema.shadow);
}

TEST_CASE("with U empty and lambda_u = 0 stage 3 is supervised mixup on L") {
  const auto tiny = tiny_problem(0, 14);
  MixMatchConfig cfg;
  cfg.batch_size = 6;
  cfg.lambda_u = 0.0;
  cfg.use_cbs = false;
  Stage3Trainer trainer(tiny.init, tiny.graph_encoder, tiny.transfer, tiny.train, cfg, 15);
  const StepBatch batch = trainer.next_batch();
  CHECK(batch.mixed.x_unlabeled.rows() == 0);
  CHECK(batch.mixed.x_labeled.rows() == 6);
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0.0, mx = 0.0;
    for (double v : batch.mixed.y_labeled.row(r)) s += v, mx = std::max(mx, v);
    CHECK(s == doctest::Approx(1.0));
    CHECK(mx >= 0.5);
  }
  const auto v = trainer.step(batch);
  CHECK(v.unsup == 0.0);
  CHECK(v.graph == 0.0);
  CHECK(v.total == v.sup);
}

TEST_CASE("trainer validates its inputs") {
  auto tiny = tiny_problem(0, 16);
  MixMatchConfig cfg;
  auto bad = tiny.transfer;
  bad.num_samples += 1;
  CHECK_THROWS_AS(Stage3Trainer(tiny.init, tiny.graph_encoder, bad, tiny.train, cfg, 1), ConfigError);
  MixMatchConfig k0 = cfg;
  k0.k_augment = 0;
  CHECK_THROWS_AS(Stage3Trainer(tiny.init, tiny.graph_encoder, tiny.transfer, tiny.train, k0, 1), ConfigError);
  auto none = tiny_problem(tiny.train.size(), 16);
  CHECK_THROWS_AS(Stage3Trainer(none.init, none.graph_encoder, none.transfer, none.train, cfg, 1), ConfigError);
}

TEST_CASE("full pipeline beats cross-entropy training at 80% symmetric noise") {
  ExperimentConfig cfg;
  cfg.seed = 1;
  cfg.noise = {data::NoiseKind::symmetric, 0.8};
  auto data = harness::prepare_data(cfg);
  const auto reed_run = harness::run_pipeline(cfg, data);
  const auto ce = harness::run_ce_baseline(cfg, data);
  const double reed_last = harness::best_last(reed_run.test_curve).last;
  const double ce_last = harness::best_last(ce.series("ce", "test", "acc")).last;
  MESSAGE("reed last " << reed_last << ", ce last " << ce_last);
  CHECK(reed_last > ce_last);
}
