#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "reed/checkpoint.hpp"
#include "reed/error.hpp"
#include "reed/harness.hpp"

namespace {

using namespace reed;
namespace fs = std::filesystem;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config (JSON)");
  cmd->add_option("--seed", c.seed, "overrides the config seed");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg;
  if (!c.config.empty()) {
    cfg = io::load_config(c.config);
  } else if (!c.seed) {
    throw ConfigError("a seed is required: pass --seed or a --config that sets one");
  }
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  return out;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create directory '" + dir + "': " + ec.message());
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * v);
  return buf;
}

void print_best_last(const std::string& name, std::span<const double> curve) {
  const auto bl = harness::best_last(curve);
  std::cout << name << ": best " << pct(bl.best) << " last " << pct(bl.last) << '\n';
}

void write_stage3_csv(const semi::Stage3Result& r, const std::string& path) {
  auto out = open_out(path);
  out << "epoch,test_acc,test_acc_ema,l_sup,l_unsup,r_graph\n";
  for (const auto& e : r.log) {
    out << e.epoch << ',' << harness::format_double(e.test_acc) << ',' << harness::format_double(e.test_acc_ema) << ','
        << harness::format_double(e.l_sup) << ',' << harness::format_double(e.l_unsup) << ','
        << harness::format_double(e.r_graph) << '\n';
  }
}

void write_histograms(const harness::Histograms& h, const std::string& hist_path, const std::string& counts_path) {
  if (!hist_path.empty()) {
    auto out = open_out(hist_path);
    std::vector<harness::HistogramRow> rows = h.loss;
    rows.insert(rows.end(), h.confidence.begin(), h.confidence.end());
    harness::write_histogram_csv(rows, out);
  }
  if (!counts_path.empty()) {
    auto out = open_out(counts_path);
    harness::write_class_counts_csv(h.class_counts, out);
  }
}

data::LabeledDataset load_data(const std::string& path, const ExperimentConfig& cfg) {
  return data::load_csv(path, cfg.data.classes);
}

int run(int argc, char** argv) {
  CLI::App app{"REED: learning with noisy labels by representation, credibility and semi-supervised retraining"};
  app.require_subcommand(1);

  // gen-data
  Common gen_common;
  std::string gen_train = "train.csv", gen_test = "test.csv", gen_kind;
  std::optional<double> gen_ratio;
  auto* gen = app.add_subcommand("gen-data", "generate blobs, split and inject label noise");
  add_common(gen, gen_common);
  gen->add_option("--noise-kind", gen_kind, "none | symmetric | asymmetric");
  gen->add_option("--noise-ratio", gen_ratio, "noise ratio in [0, 1]");
  gen->add_option("--out-train", gen_train, "training CSV");
  gen->add_option("--out-test", gen_test, "test CSV");

  // stage1
  Common s1_common;
  std::string s1_data, s1_out = "encoder.json", s1_curve;
  std::optional<int> s1_epochs;
  std::optional<double> s1_temp;
  auto* s1 = app.add_subcommand("stage1", "contrastive representation learning");
  add_common(s1, s1_common);
  s1->add_option("--data", s1_data, "training CSV")->required();
  s1->add_option("--epochs", s1_epochs);
  s1->add_option("--temperature", s1_temp);
  s1->add_option("--out", s1_out, "encoder checkpoint");
  s1->add_option("--loss-curve", s1_curve, "CSV epoch,nt_xent_loss");

  // stage2
  Common s2_common;
  std::string s2_encoder, s2_data, s2_test, s2_out = "transfer.json", s2_classifier = "classifier.json", s2_gmm,
                                             s2_hist, s2_counts, s2_metrics;
  std::optional<double> s2_tau_clean, s2_tau_right;
  auto* s2 = app.add_subcommand("stage2", "frozen-representation classifier, credibility and label transfer");
  add_common(s2, s2_common);
  s2->add_option("--encoder", s2_encoder, "encoder checkpoint from stage1")->required();
  s2->add_option("--data", s2_data, "training CSV")->required();
  s2->add_option("--test", s2_test, "test CSV for accuracy curves");
  s2->add_option("--tau-clean", s2_tau_clean);
  s2->add_option("--tau-right", s2_tau_right);
  s2->add_option("--out", s2_out, "transfer (L/U) JSON");
  s2->add_option("--classifier-out", s2_classifier, "encoder + classifier checkpoint");
  s2->add_option("--gmm-out", s2_gmm, "fitted GMMs");
  s2->add_option("--histograms", s2_hist, "loss / confidence histogram CSV");
  s2->add_option("--class-counts", s2_counts, "per-class counts of L");
  s2->add_option("--metrics", s2_metrics, "metrics CSV");

  // stage3
  Common s3_common;
  std::string s3_transfer, s3_encoder, s3_classifier, s3_data, s3_test, s3_out = "model.json", s3_metrics;
  auto* s3 = app.add_subcommand("stage3", "semi-supervised retraining on the transferred labels");
  add_common(s3, s3_common);
  s3->add_option("--transfer", s3_transfer)->required();
  s3->add_option("--encoder", s3_encoder, "encoder checkpoint used for the neighbor graph")->required();
  s3->add_option("--classifier", s3_classifier, "stage2 classifier checkpoint")->required();
  s3->add_option("--data", s3_data, "training CSV")->required();
  s3->add_option("--test", s3_test, "test CSV");
  s3->add_option("--out", s3_out);
  s3->add_option("--metrics", s3_metrics, "CSV epoch,test_acc,test_acc_ema,l_sup,l_unsup,r_graph");

  // pipeline
  Common pl_common;
  std::string pl_dir = "run";
  bool pl_no_stage3 = false;
  auto* pl = app.add_subcommand("pipeline", "stage1 -> stage2 -> stage3 on generated data");
  add_common(pl, pl_common);
  pl->add_option("--out-dir", pl_dir);
  pl->add_flag("--no-stage3", pl_no_stage3, "stop after stage2");

  // fig1
  Common f1_common;
  std::string f1_out = "fig1.csv";
  auto* f1 = app.add_subcommand("fig1", "decoupling experiment: four training regimes");
  add_common(f1, f1_common);
  f1->add_option("--out", f1_out, "metrics CSV");

  // ablate
  Common ab_common;
  std::string ab_out = "ablation.csv";
  int ab_seeds = 1;
  auto* ab = app.add_subcommand("ablate", "CBS x GSR ablation of stage3");
  add_common(ab, ab_common);
  ab->add_option("--seeds", ab_seeds, "consecutive seeds starting at the config seed")->check(CLI::PositiveNumber);
  ab->add_option("--out", ab_out, "metrics CSV");

  // histograms
  std::string h_classifier, h_data, h_transfer, h_out = "histograms.csv", h_counts = "class_counts.csv";
  auto* hist = app.add_subcommand("histograms", "loss / confidence histograms and class counts of L");
  hist->add_option("--classifier", h_classifier, "stage2 classifier checkpoint")->required();
  hist->add_option("--data", h_data, "training CSV")->required();
  hist->add_option("--transfer", h_transfer)->required();
  hist->add_option("--out", h_out);
  hist->add_option("--class-counts", h_counts);

  // eval
  std::string ev_model, ev_data, ev_out;
  auto* ev = app.add_subcommand("eval", "top-1 and per-class accuracy against clean labels");
  ev->add_option("--model", ev_model)->required();
  ev->add_option("--data", ev_data, "test CSV")->required();
  ev->add_option("--out", ev_out, "CSV class,accuracy");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (gen->parsed()) {
    auto cfg = resolve(gen_common);
    if (!gen_kind.empty()) cfg.noise.kind = data::parse_noise_kind(gen_kind);
    if (gen_ratio) cfg.noise.ratio = *gen_ratio;
    cfg.validate();
    auto d = harness::prepare_data(cfg);
    data::save_csv(d.train, gen_train);
    data::save_csv(d.test, gen_test);
    std::cout << "train " << d.train.size() << " rows (noise " << pct(d.train.noise_rate()) << "%), test "
              << d.test.size() << " rows\n";
    return 0;
  }

  if (s1->parsed()) {
    auto cfg = resolve(s1_common);
    if (s1_epochs) cfg.ssrl.epochs = *s1_epochs;
    if (s1_temp) cfg.ssrl.temperature = *s1_temp;
    cfg.validate();
    auto train = load_data(s1_data, cfg);
    auto r = harness::run_stage1(cfg, train);
    io::save_model({{r.encoder, r.projection_head}, std::nullopt}, s1_out);
    if (!s1_curve.empty()) {
      auto out = open_out(s1_curve);
      out << "epoch,nt_xent_loss\n";
      for (const auto& e : r.log) out << e.epoch << ',' << harness::format_double(e.loss) << '\n';
    }
    std::cout << "nt_xent " << r.log.front().loss << " -> " << r.log.back().loss << '\n';
    return 0;
  }

  if (s2->parsed()) {
    auto cfg = resolve(s2_common);
    if (s2_tau_clean) cfg.stage2.tau_clean = *s2_tau_clean;
    if (s2_tau_right) cfg.stage2.tau_right = *s2_tau_right;
    cfg.validate();
    auto encoder = io::load_model(s2_encoder).params.encoder;
    auto train = load_data(s2_data, cfg);
    std::optional<data::LabeledDataset> test;
    if (!s2_test.empty()) test = load_data(s2_test, cfg);
    auto r = harness::run_stage2(cfg, encoder, train, test ? &*test : nullptr);
    io::save_transfer(r.transfer, s2_out);
    io::save_model({{encoder, r.classifier.classifier}, std::nullopt}, s2_classifier);
    if (!s2_gmm.empty()) io::save_json(io::to_json(io::GmmPair{r.credibility.loss_gmm, r.credibility.confidence_gmm}), s2_gmm);
    if (!s2_hist.empty() || !s2_counts.empty())
      write_histograms(harness::build_histograms(r.stats, train, r.transfer), s2_hist, s2_counts);
    if (!s2_metrics.empty()) {
      harness::MetricsLog log;
      harness::log_stage2(log, r);
      log.save(s2_metrics);
    }
    std::cout << "L " << r.transfer.labeled.size() << " (kept " << r.transfer.count(cred::Origin::kept) << ", corrected "
              << r.transfer.count(cred::Origin::corrected) << "), U " << r.transfer.unlabeled.size() << '\n';
    return 0;
  }

  if (s3->parsed()) {
    auto cfg = resolve(s3_common);
    auto transfer = io::load_transfer(s3_transfer);
    auto encoder = io::load_model(s3_encoder).params.encoder;
    auto classifier = io::load_model(s3_classifier).params;
    auto train = load_data(s3_data, cfg);
    std::optional<data::LabeledDataset> test;
    if (!s3_test.empty()) test = load_data(s3_test, cfg);
    auto r = harness::run_stage3(cfg, classifier, encoder, transfer, train, test ? &*test : nullptr);
    io::save_model({r.model, r.ema}, s3_out);
    if (!s3_metrics.empty()) write_stage3_csv(r, s3_metrics);
    if (test) {
      std::vector<double> curve;
      for (const auto& e : r.log) curve.push_back(e.test_acc);
      if (!curve.empty()) print_best_last("stage3", curve);
    }
    return 0;
  }

  if (pl->parsed()) {
    auto cfg = resolve(pl_common);
    if (pl_no_stage3) cfg.regime = Regime::no_stage3;
    ensure_dir(pl_dir);
    const fs::path dir(pl_dir);
    io::save_config(cfg, (dir / "config.json").string());
    auto r = harness::run_pipeline(cfg);
    r.log.save((dir / "metrics.csv").string());
    io::save_model({{r.stage1.encoder, r.stage1.projection_head}, std::nullopt}, (dir / "encoder.json").string());
    io::save_model({{r.stage1.encoder, r.stage2.classifier.classifier}, std::nullopt},
                   (dir / "classifier.json").string());
    io::save_transfer(r.stage2.transfer, (dir / "transfer.json").string());
    io::save_model({r.final_model, r.stage3 ? std::optional(r.stage3->ema) : std::nullopt},
                   (dir / "model.json").string());
    print_best_last(cfg.regime == Regime::full ? "reed" : "reed-no-stage3", r.test_curve);
    return 0;
  }

  if (f1->parsed()) {
    auto cfg = resolve(f1_common);
    auto log = harness::run_decoupling_experiment(cfg);
    log.save(f1_out);
    for (const auto& id : log.run_ids()) print_best_last(id, log.series(id, "test", "acc"));
    return 0;
  }

  if (ab->parsed()) {
    auto cfg = resolve(ab_common);
    harness::MetricsLog all;
    std::map<std::string, std::vector<double>> lasts;
    for (int s = 0; s < ab_seeds; ++s) {
      ExperimentConfig c = cfg;
      c.seed = cfg.seed + static_cast<std::uint64_t>(s);
      auto log = harness::run_ablation(c);
      all.append(log, ab_seeds > 1 ? "seed" + std::to_string(c.seed) + "/" : "");
      for (const auto& id : log.run_ids()) {
        const auto curve = log.series(id, "test", "acc");
        lasts[id].push_back(harness::best_last(curve).last);
        if (ab_seeds == 1) print_best_last(id, curve);
      }
    }
    all.save(ab_out);
    if (ab_seeds > 1) {
      for (const auto& [id, v] : lasts) {
        double mean = 0.0;
        for (double x : v) mean += x / static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean) / static_cast<double>(v.size() - 1);
        std::cout << id << ": last " << pct(mean) << " +- " << pct(std::sqrt(var)) << " over " << v.size()
                  << " seeds\n";
      }
    }
    return 0;
  }

  if (hist->parsed()) {
    auto model = io::load_model(h_classifier).params;
    auto train = data::load_csv(h_data, static_cast<int>(model.output_dim()));
    auto transfer = io::load_transfer(h_transfer);
    auto stats = cred::per_sample_stats(model.encoder, model.classifier, train);
    write_histograms(harness::build_histograms(stats, train, transfer), h_out, h_counts);
    return 0;
  }

  if (ev->parsed()) {
    auto model = io::load_model(ev_model).params;
    auto test = data::load_csv(ev_data, static_cast<int>(model.output_dim()));
    auto e = harness::evaluate(model, test);
    std::cout << "top1 " << pct(e.top1) << '\n';
    if (!ev_out.empty()) {
      auto out = open_out(ev_out);
      out << "class,accuracy\n";
      for (std::size_t c = 0; c < e.per_class.size(); ++c)
        out << c << ',' << harness::format_double(e.per_class[c]) << '\n';
    }
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const reed::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const reed::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
