#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "reed/error.hpp"
#include "reed/harness.hpp"

using namespace reed;
using namespace reed::harness;
using nn::Matrix;

namespace {

// Small but complete configuration; a full run takes a few seconds.
ExperimentConfig small_config(std::uint64_t seed, double noise) {
  ExperimentConfig c;
  c.seed = seed;
  c.data = {4, 60, 8, 4.0, 1.0};
  c.noise = {data::NoiseKind::symmetric, noise};
  c.ssrl.epochs = 5;
  c.ssrl.hidden = {16, 16};
  c.ssrl.projection_dim = 8;
  c.stage2.classifier.epochs = 10;
  c.stage3.epochs = 3;
  c.stage3.batch_size = 32;
  c.supervised.epochs = 5;
  return c;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

}  // namespace

TEST_CASE("best and last") {
  const std::vector<double> short_curve{0.2, 0.5, 0.4};
  auto bl = best_last(short_curve);
  CHECK(bl.best == 0.5);
  CHECK(bl.last == doctest::Approx(1.1 / 3.0));

  std::vector<double> long_curve(25);
  std::iota(long_curve.begin(), long_curve.end(), 0.0);
  bl = best_last(long_curve);
  CHECK(bl.best == 24.0);
  CHECK(bl.last == doctest::Approx(19.5));
  CHECK_THROWS_AS(best_last(std::vector<double>{}), ConfigError);
}

TEST_CASE("metrics log ordering and CSV") {
  MetricsLog log;
  log.add("r", 1, "test", "acc", 0.5);
  log.add("r", 2, "test", "acc", 0.25);
  log.add("r", 1, "train", "loss", 1.0 / 3.0);
  CHECK_THROWS_AS(log.add("r", 2, "test", "acc", 0.1), ConfigError);
  CHECK_THROWS_AS(log.add("r", 1, "test", "acc", 0.1), ConfigError);
  log.add("s", 0, "test", "acc", 1.0);
  CHECK(log.run_ids() == std::vector<std::string>{"r", "s"});
  CHECK(log.series("r", "test", "acc") == std::vector<double>{0.5, 0.25});

  std::ostringstream out;
  log.write_csv(out);
  CHECK(out.str() ==
        "run_id,epoch,split,metric,value\n"
        "r,1,test,acc,0.5\n"
        "r,2,test,acc,0.25\n"
        "r,1,train,loss,0.3333333333333333\n"
        "s,0,test,acc,1\n");

  MetricsLog merged;
  merged.append(log, "seed1/");
  CHECK(merged.run_ids().front() == "seed1/r");
  CHECK(std::stod(format_double(0.1 + 0.2)) == 0.1 + 0.2);
}

TEST_CASE("evaluation") {
  nn::Layer id{Matrix{{1, 0}, {0, 1}}, Matrix(1, 2)};
  nn::Layer pick{Matrix{{10, 0}, {0, 10}}, Matrix(1, 2)};
  MlpParams perfect{{id}, {pick}};
  data::LabeledDataset test{Matrix{{1, 0}, {0, 1}, {2, 0}, {0, 3}}, {0, 1, 0, 1}, {0, 1, 0, 1}, 2};
  auto e = evaluate(perfect, test);
  CHECK(e.top1 == 1.0);
  CHECK(e.per_class == std::vector<double>{1.0, 1.0});

  nn::Layer zero{Matrix(2, 10), Matrix(1, 10)};
  MlpParams constant{{id}, {zero}};
  std::vector<nn::Label> y(100);
  for (std::size_t i = 0; i < 100; ++i) y[i] = static_cast<nn::Label>(i % 10);
  data::LabeledDataset ten{Matrix(100, 2, 1.0), y, y, 10};
  e = evaluate(constant, ten);
  CHECK(e.top1 == doctest::Approx(0.1));
  CHECK(e.per_class[0] == 1.0);
  CHECK(e.per_class[1] == 0.0);

  data::LabeledDataset three{Matrix(1, 2, 1.0), {0}, {0}, 3};
  e = evaluate(MlpParams{{id}, {nn::Layer{Matrix(2, 3), Matrix(1, 3)}}}, three);
  CHECK(std::isnan(e.per_class[2]));

  data::LabeledDataset empty{Matrix(0, 2), {}, {}, 2};
  CHECK_THROWS_AS(evaluate(perfect, empty), ConfigError);
}

TEST_CASE("data preparation keeps the test side clean") {
  auto c = small_config(3, 0.6);
  const auto d = prepare_data(c);
  CHECK(d.train.size() + d.test.size() == 240);
  CHECK(d.test.noise_rate() == 0.0);
  CHECK(d.train.noise_rate() > 0.3);
  const auto again = prepare_data(c);
  CHECK(again.train.x == d.train.x);
  CHECK(again.train.y_noisy == d.train.y_noisy);
}

TEST_CASE("histograms cover every sample") {
  auto c = small_config(4, 0.5);
  const auto r = run_pipeline(c);
  const auto d = prepare_data(c);
  const auto h = build_histograms(r.stage2.stats, d.train, r.stage2.transfer);
  CHECK(h.class_counts.size() == 4);
  CHECK(std::accumulate(h.class_counts.begin(), h.class_counts.end(), std::size_t{0}) ==
        r.stage2.transfer.labeled.size());
  std::size_t loss_total = 0, conf_total = 0;
  for (const auto& row : h.loss) loss_total += row.count;
  for (const auto& row : h.confidence) conf_total += row.count;
  CHECK(loss_total == d.train.size());
  CHECK(conf_total == d.train.size());
  CHECK(h.loss.size() == 2 * kHistogramBins);

  std::ostringstream out;
  write_class_counts_csv(h.class_counts, out);
  CHECK(out.str().rfind("class,count\n0,", 0) == 0);
}

TEST_CASE("noisy samples carry larger stage 2 losses at 50% noise") {
  ExperimentConfig c;
  c.seed = 1;
  c.noise = {data::NoiseKind::symmetric, 0.5};
  c.regime = Regime::no_stage3;
  const auto d = prepare_data(c);
  const auto r = run_pipeline(c, d);
  std::vector<double> clean, noisy;
  for (std::size_t i = 0; i < d.train.size(); ++i)
    (d.train.y_noisy[i] == d.train.y_clean[i] ? clean : noisy).push_back(r.stage2.stats.losses[i]);
  MESSAGE("mean loss clean " << mean(clean) << ", noisy " << mean(noisy));
  CHECK(mean(noisy) > mean(clean));
}

TEST_CASE("stage 3 does not hurt at 50% noise") {
  ExperimentConfig c;
  c.seed = 1;
  c.noise = {data::NoiseKind::symmetric, 0.5};
  const auto d = prepare_data(c);
  const auto full = run_pipeline(c, d);
  c.regime = Regime::no_stage3;
  const auto partial = run_pipeline(c, d);
  const double a = best_last(full.test_curve).last, b = best_last(partial.test_curve).last;
  MESSAGE("full " << a << ", no stage 3 " << b);
  CHECK(a >= b);
  CHECK(full.stage2.transfer == partial.stage2.transfer);
}

TEST_CASE("ablation grid and determinism") {
  auto c = small_config(5, 0.6);
  const auto log = run_ablation(c);
  CHECK(log.run_ids() == std::vector<std::string>{ablation_run_id(true, true), ablation_run_id(true, false),
                                                  ablation_run_id(false, true), ablation_run_id(false, false)});
  CHECK(ablation_run_id(true, false) == "cbs_on_gsr_off");
  for (const auto& id : log.run_ids()) CHECK(log.series(id, "test", "acc").size() == 3);

  std::ostringstream a, b;
  log.write_csv(a);
  run_ablation(c).write_csv(b);
  CHECK(a.str() == b.str());
}

TEST_CASE("decoupling experiment logs four regimes deterministically") {
  auto c = small_config(6, 0.4);
  const auto log = run_decoupling_experiment(c);
  CHECK(log.run_ids() == std::vector<std::string>{run_ids::clean, run_ids::retrain_representation,
                                                  run_ids::retrain_classifier, run_ids::noisy});
  for (const auto& id : log.run_ids()) CHECK(log.series(id, "test", "acc").size() == 5);
  std::ostringstream a, b;
  log.write_csv(a);
  run_decoupling_experiment(c).write_csv(b);
  CHECK(a.str() == b.str());
}

TEST_CASE("pipeline metrics cover every stage") {
  auto c = small_config(7, 0.5);
  const auto r = run_pipeline(c);
  const auto ids = r.log.run_ids();
  for (const auto& id : {run_ids::stage1, run_ids::stage2, run_ids::transfer, run_ids::stage3})
    CHECK(std::find(ids.begin(), ids.end(), id) != ids.end());
  CHECK(r.log.series(run_ids::stage1, "train", "nt_xent_loss").size() == 6);
  CHECK(r.test_curve.size() == 3);
  REQUIRE(r.stage3.has_value());
  CHECK(r.final_model == r.stage3->model);

  c.regime = Regime::no_stage3;
  const auto s2 = run_pipeline(c);
  CHECK_FALSE(s2.stage3.has_value());
  CHECK(s2.test_curve.size() == 10);
}
