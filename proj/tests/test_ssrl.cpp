#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "reed/config.hpp"
#include "reed/error.hpp"
#include "reed/harness.hpp"
#include "reed/ssrl.hpp"

using namespace reed;
using nn::Matrix;
using ssrl::nt_xent_loss;

namespace {

Matrix pairs_of(std::initializer_list<std::initializer_list<double>> rows) { return Matrix(rows); }

// Multinomial logistic regression on fixed features, full-batch Adam.
double linear_probe_accuracy(const Matrix& train_x, const std::vector<nn::Label>& train_y, const Matrix& test_x,
                             const std::vector<nn::Label>& test_y, int classes) {
  Rng rng(99);
  nn::MlpParams probe{{}, nn::init_stack(std::vector<std::size_t>{train_x.cols(), std::size_t(classes)}, rng)};
  std::vector<std::size_t> y(train_y.begin(), train_y.end());
  auto opt = nn::make_adam(1e-2);
  const double n = static_cast<double>(train_x.rows());
  for (int step = 0; step < 500; ++step) {
    auto g = nn::grad(
        probe,
        [&](nn::Tape& t, const nn::MlpVars& v) {
          return nn::scale(nn::sum(nn::pick_per_row(nn::log_softmax_rows(v.classify(t.constant(train_x))), y)),
                           -1.0 / n);
        },
        {false, true});
    nn::optimizer_step(opt, probe, g.grads, {false, true});
  }
  const auto pred = nn::predict(nn::softmax_rows(nn::run_stack(probe.classifier, test_x, false)));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == test_y[i];
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

}  // namespace

TEST_CASE("NT-Xent closed-form four-row case") {
  Matrix z = pairs_of({{1, 0}, {1, 0}, {0, 1}, {0, 1}});
  const double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0));
  CHECK(nt_xent_loss(z, 1.0) == doctest::Approx(expected));
  CHECK(expected == doctest::Approx(0.5514).epsilon(1e-4));
}

TEST_CASE("NT-Xent with identical rows is log(2B - 1)") {
  for (std::size_t b : {2u, 3u, 8u}) {
    Matrix z(2 * b, 3, 0.7);
    CHECK(nt_xent_loss(z, 0.5) == doctest::Approx(std::log(2.0 * b - 1.0)));
  }
}

TEST_CASE("NT-Xent symmetries") {
  Rng rng(1);
  Matrix z = testing::random_matrix(rng, 12, 5);
  const double base = nt_xent_loss(z, 0.5);
  CHECK(base >= 0.0);

  // scale invariance
  Matrix scaled = z;
  for (double& v : scaled.values()) v *= 37.5;
  CHECK(nt_xent_loss(scaled, 0.5) == doctest::Approx(base).epsilon(1e-12));

  // permute pairs and swap views inside a pair
  std::vector<std::size_t> pair_order = rng.permutation(6);
  std::vector<std::size_t> rows;
  for (std::size_t k : pair_order) {
    const bool swap = rng.bernoulli(0.5);
    rows.push_back(2 * k + (swap ? 1 : 0));
    rows.push_back(2 * k + (swap ? 0 : 1));
  }
  CHECK(nt_xent_loss(nn::gather_rows(z, rows), 0.5) == doctest::Approx(base).epsilon(1e-12));

  // tape and plain forms agree and the tape form has correct gradients
  nn::Tape t;
  CHECK(nt_xent_loss(t.constant(z), 0.5).scalar() == doctest::Approx(base).epsilon(1e-12));
  const auto c = testing::check_gradient({z}, [](nn::Tape&, auto v) { return nt_xent_loss(v[0], 0.5); });
  CHECK(c.max_rel < 1e-6);
}

TEST_CASE("NT-Xent argument errors") {
  CHECK_THROWS_AS(nt_xent_loss(Matrix(2, 3, 1.0), 0.5), ConfigError);
  CHECK_THROWS_AS(nt_xent_loss(Matrix(5, 3, 1.0), 0.5), ConfigError);
  CHECK_THROWS_AS(nt_xent_loss(Matrix(4, 3, 1.0), 0.0), ConfigError);
}

TEST_CASE("embed is the representation beneath the head") {
  nn::Layer id{Matrix{{1, 0}, {0, 1}}, Matrix(1, 2)};
  Matrix x{{0.5, 2.0}, {0.5, 2.0}, {3.0, 0.0}};
  const Matrix z = ssrl::embed({id}, x);
  CHECK(z == x);
  CHECK(z.row(0)[0] == z.row(1)[0]);
  CHECK_THROWS_AS(ssrl::embed({id}, Matrix(2, 3)), ConfigError);
}

TEST_CASE("encoder training never reads labels") {
  ExperimentConfig cfg;
  cfg.seed = 3;
  cfg.data = {4, 40, 6, 4.0, 1.0};
  cfg.ssrl.epochs = 3;
  cfg.ssrl.hidden = {16, 8};
  auto data = harness::prepare_data(cfg);
  auto shuffled = data.train;
  Rng rng(4);
  rng.shuffle(shuffled.y_noisy);
  rng.shuffle(shuffled.y_clean);
  const auto a = harness::run_stage1(cfg, data.train);
  const auto b = harness::run_stage1(cfg, shuffled);
  CHECK(a.encoder == b.encoder);
  CHECK(a.projection_head == b.projection_head);
  REQUIRE(a.log.size() == 4);
  CHECK(a.log.front().epoch == 0);
}

TEST_CASE("contrastive loss drops by 30% on default blobs" * doctest::may_fail()) {
  ExperimentConfig cfg;
  cfg.seed = 1;
  auto data = harness::prepare_data(cfg);
  const auto r = harness::run_stage1(cfg, data.train);
  const double first = r.log.front().loss, last = r.log.back().loss;
  MESSAGE("nt_xent " << first << " -> " << last << " (" << 100.0 * (1.0 - last / first) << "% drop)");
  CHECK(last < first);
  CHECK(last <= 0.7 * first);
}

TEST_CASE("linear probe on the representation beats the raw probe on overlapping blobs" * doctest::may_fail()) {
  ExperimentConfig cfg;
  cfg.seed = 2;
  cfg.data.sigma = 2.5;
  auto data = harness::prepare_data(cfg);
  const auto r = harness::run_stage1(cfg, data.train);
  const int c = cfg.data.classes;
  const double raw = linear_probe_accuracy(data.train.x, data.train.y_clean, data.test.x, data.test.y_clean, c);
  const double rep = linear_probe_accuracy(ssrl::embed(r.encoder, data.train.x), data.train.y_clean,
                                           ssrl::embed(r.encoder, data.test.x), data.test.y_clean, c);
  MESSAGE("raw probe " << raw << ", representation probe " << rep);
  CHECK(rep > raw);
}
