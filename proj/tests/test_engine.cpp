#include <doctest.h>

#include <filesystem>

#include "condisr/engine.hpp"

using namespace condisr;

namespace {

ExperimentConfig micro_cfg() {
  ExperimentConfig cfg;
  cfg.samples_per_domain = 20;
  cfg.holdout_fraction = 0.2;
  cfg.batch_size = 16;
  cfg.epochs = 2;
  cfg.seeds = {0};
  cfg.lr = 1e-3;
  cfg.workers = 2;
  cfg.model.kind = "small-cnn";
  cfg.model.stem_channels = 16;
  cfg.model.proj_dim = 16;
  cfg.model.decoder_resolution = 48;
  cfg.model.decoder_widths = {8, 4};
  cfg.model.decoder_pool_stages = 2;
  cfg.loss_opt.style_mode = StyleMode::kMargin;
  return cfg;
}

std::vector<DomainDataset> micro_domains(const ExperimentConfig& cfg) {
  SyntheticDomainConfig sc;
  sc.samples_per_domain = cfg.samples_per_domain;
  return generate_synthetic_domains(sc, cfg.data_seed);
}

// Forces the head so that the logit is a constant regardless of input.
void force_constant_logit(Network<real_t>& net, float logit) {
  ParamSet<real_t> ps = net.params();
  for (auto* p : ps.params) {
    if (p->name == "head.fc.w") p->value.fill(0.0f);
    if (p->name == "head.fc.b") p->value.fill(logit);
  }
}

}  // namespace

TEST_CASE("evaluate: oracle, anti-oracle and constant-logit accuracies") {
  ExperimentConfig cfg = micro_cfg();
  auto domains = micro_domains(cfg);
  Network<real_t> net = build_network<real_t>(cfg.model, false, false, 1);

  // all-positive collection: constant +20 logit is an oracle, -20 the anti
  DomainDataset positives = domains[0];
  positives.samples.erase(
      std::remove_if(positives.samples.begin(), positives.samples.end(),
                     [](const DomainSample& s) { return s.label != 1; }),
      positives.samples.end());
  REQUIRE(positives.size() >= 2);
  EvalCollection pos = union_domains({&positives});
  force_constant_logit(net, 20.0f);
  CHECK(evaluate(net, pos, cfg).accuracy == doctest::Approx(1.0));
  force_constant_logit(net, -20.0f);
  CHECK(evaluate(net, pos, cfg).accuracy == doctest::Approx(0.0));

  // constant logit on the full domain scores the positive-class fraction
  EvalCollection all = union_domains({&domains[0]});
  long ones = 0;
  for (const auto& s : domains[0].samples) ones += s.label;
  force_constant_logit(net, 5.0f);
  CHECK(evaluate(net, all, cfg).accuracy ==
        doctest::Approx(static_cast<double>(ones) / domains[0].size()));

  // per-domain breakdown partitions the union accuracy
  EvalCollection both = union_domains({&domains[0], &domains[1]});
  EvalResult r = evaluate(net, both, cfg);
  double n0 = static_cast<double>(domains[0].size()), n1 = static_cast<double>(domains[1].size());
  CHECK(r.accuracy ==
        doctest::Approx((r.per_domain[0] * n0 + r.per_domain[1] * n1) / (n0 + n1)));

  EvalCollection empty;
  CHECK_THROWS_AS(evaluate(net, empty, cfg), DataError);
}

TEST_CASE("training is deterministic and honors checkpoint selection") {
  ExperimentConfig cfg = micro_cfg();
  cfg.epochs = 3;
  auto domains = micro_domains(cfg);
  TrainedModel a = train_one_source(cfg, Method::kCondisr, domains, 0, 0);
  TrainedModel b = train_one_source(cfg, Method::kCondisr, domains, 0, 0);
  REQUIRE(a.record.epochs.size() == 3);
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(a.record.epochs[e].total ==
          doctest::Approx(b.record.epochs[e].total).epsilon(1e-6));
    CHECK(a.record.epochs[e].val_acc == b.record.epochs[e].val_acc);
  }
  // the selected epoch is the earliest maximum of the validation history
  double best = -1.0;
  int expect = -1;
  for (std::size_t e = 0; e < a.record.epochs.size(); ++e)
    if (a.record.epochs[e].val_acc > best) {
      best = a.record.epochs[e].val_acc;
      expect = static_cast<int>(e);
    }
  CHECK(a.record.selected_epoch == expect);

  TrainedModel c = train_one_source(cfg, Method::kCondisr, domains, 0, 1);
  bool differs = false;
  for (std::size_t e = 0; e < 3; ++e)
    differs = differs || std::abs(c.record.epochs[e].total - a.record.epochs[e].total) > 1e-9;
  CHECK(differs);
}

TEST_CASE("erm_noaug ignores augmentation settings entirely") {
  ExperimentConfig cfg = micro_cfg();
  cfg.epochs = 1;
  auto domains = micro_domains(cfg);
  ExperimentConfig wild = cfg;
  wild.bezier.invert_prob = 1.0;
  wild.fda.beta_min = wild.fda.beta_max = 0.5;
  TrainedModel a = train_one_source(cfg, Method::kErmNoAug, domains, 1, 0);
  TrainedModel b = train_one_source(wild, Method::kErmNoAug, domains, 1, 0);
  CHECK(a.record.epochs[0].total == doctest::Approx(b.record.epochs[0].total).epsilon(1e-9));
  CHECK(a.record.epochs[0].c_str == 0.0);
  CHECK(a.record.epochs[0].rec == 0.0);
}

TEST_CASE("evaluation path purity: repeated evaluation is identical") {
  ExperimentConfig cfg = micro_cfg();
  cfg.epochs = 1;
  auto domains = micro_domains(cfg);
  TrainedModel tm = train_one_source(cfg, Method::kCondisr, domains, 0, 0);
  EvalCollection target = union_domains({&domains[1], &domains[2], &domains[3], &domains[4]});
  EvalResult e1 = evaluate(*tm.net, target, cfg);
  EvalResult e2 = evaluate(*tm.net, target, cfg);
  CHECK(e1.accuracy == e2.accuracy);
  for (auto& [d, acc] : e1.per_domain) CHECK(acc == e2.per_domain[d]);
}

TEST_CASE("protocol bookkeeping on a micro run") {
  ExperimentConfig cfg = micro_cfg();
  cfg.epochs = 1;
  cfg.seeds = {0, 1};
  cfg.methods = {Method::kErmNoAug};
  auto domains = micro_domains(cfg);
  ProtocolResult res = run_protocol(cfg, domains);
  CHECK(res.records.size() == 10);  // 5 sources x 2 seeds
  REQUIRE(res.table.row_labels.size() == 1);
  for (int c = 0; c < 5; ++c) {
    CHECK(!res.table.cells[0][c].missing());
    CHECK(res.table.cells[0][c].accs.size() == 2);
  }
  double manual = 0;
  for (int c = 0; c < 5; ++c) manual += res.table.cells[0][c].mean();
  manual /= 5.0;
  CHECK(std::abs(res.table.average(0) - manual) < 1e-9);
}

TEST_CASE("seed isolation: one seed rerun alone reproduces its record") {
  ExperimentConfig cfg = micro_cfg();
  cfg.epochs = 2;
  cfg.seeds = {0, 1};
  cfg.methods = {Method::kCondisrNoRec};
  auto domains = micro_domains(cfg);
  ProtocolResult both = run_protocol(cfg, domains);
  TrainedModel alone = train_one_source(cfg, Method::kCondisrNoRec, domains, 3, 1);
  const RunRecord* from_batch = nullptr;
  for (const auto& r : both.records)
    if (r.source == 3 && r.seed == 1) from_batch = &r;
  REQUIRE(from_batch);
  REQUIRE(!from_batch->failed);
  for (std::size_t e = 0; e < 2; ++e) {
    CHECK(from_batch->epochs[e].total ==
          doctest::Approx(alone.record.epochs[e].total).epsilon(1e-9));
    CHECK(from_batch->epochs[e].val_acc == alone.record.epochs[e].val_acc);
  }
  CHECK(from_batch->selected_epoch == alone.record.selected_epoch);
}

TEST_CASE("memorization smoke: every method reaches <10% of initial loss") {
  // 64-sample single-domain memorization task, 30 epochs. Augmentations are
  // sampled once so the methods see a fixed, memorizable set; the generator
  // is configured for unambiguous lesions (no off-center negatives).
  ExperimentConfig cfg = micro_cfg();
  cfg.samples_per_domain = 64;
  cfg.holdout_fraction = 0.1;
  cfg.batch_size = 16;
  cfg.epochs = 30;
  cfg.lr = 1e-2;
  cfg.resample_per_batch = false;
  SyntheticDomainConfig sc;
  sc.samples_per_domain = 64;
  sc.off_center_lesion_prob = 0.0;
  sc.lesion_radius_min = 10;
  sc.lesion_radius_max = 16;
  sc.speckle_min = 20;
  sc.speckle_max = 40;
  auto domains = generate_synthetic_domains(sc, cfg.data_seed);
  for (Method m : {Method::kErmNoAug, Method::kErm, Method::kCondisr, Method::kCondisrNoRec}) {
    TrainedModel tm = train_one_source(cfg, m, domains, 0, 0);
    double initial = tm.record.epochs.front().total;
    double final_loss = tm.record.epochs.back().total;
    CAPTURE(method_name(m));
    CAPTURE(initial);
    CAPTURE(final_loss);
    CHECK(final_loss < 0.1 * initial);
  }
}

TEST_CASE("non-finite losses abort the run and mark the cell missing") {
  ExperimentConfig cfg = micro_cfg();
  cfg.epochs = 2;  // the explosion surfaces on the step after the blow-up
  cfg.lr = 1e30;
  cfg.loss_opt.style_mode = StyleMode::kLiteral;
  cfg.methods = {Method::kCondisr};
  cfg.seeds = {0};
  auto domains = micro_domains(cfg);
  CHECK_THROWS_AS(train_one_source(cfg, Method::kCondisr, domains, 0, 0), TrainAbort);
  ProtocolResult res = run_protocol(cfg, domains);
  CHECK(res.any_failed);
  bool any_missing = false;
  for (int c = 0; c < 5; ++c) any_missing = any_missing || res.table.cells[0][c].missing();
  CHECK(any_missing);
}

TEST_CASE("gradcam: shape, range, zero map for a constant head, unknown layer") {
  ExperimentConfig cfg = micro_cfg();
  Network<real_t> net = build_network<real_t>(cfg.model, true, false, 5);
  auto domains = micro_domains(cfg);
  Tensor<double> img = domains[0].samples[0].image();

  Tensor<float> heat = gradcam(net, img, "block2", cfg);
  CHECK(heat.dims() == std::vector<long>{96, 96});
  for (long i = 0; i < heat.numel(); ++i) {
    CHECK(heat[i] >= 0.0f);
    CHECK(heat[i] <= 1.0f);
  }

  force_constant_logit(net, 1.0f);
  Tensor<float> flat = gradcam(net, img, "stem", cfg);
  for (long i = 0; i < flat.numel(); ++i) CHECK(flat[i] == 0.0f);

  try {
    gradcam(net, img, "blocks9", cfg);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("block1") != std::string::npos);
  }
}

TEST_CASE("evaluation accuracy is independent of plugin probability") {
  ExperimentConfig cfg = micro_cfg();
  cfg.model.plugin_kind = "mixstyle";
  cfg.model.plugin_p = 0.1;
  auto domains = micro_domains(cfg);
  Network<real_t> a = build_network<real_t>(cfg.model, false, false, 9);
  cfg.model.plugin_p = 0.9;
  Network<real_t> b = build_network<real_t>(cfg.model, false, false, 9);
  EvalCollection col = union_domains({&domains[2]});
  CHECK(evaluate(a, col, cfg).accuracy == evaluate(b, col, cfg).accuracy);
}

TEST_CASE("resolution ablation rows and paired seeds") {
  ExperimentConfig cfg = micro_cfg();
  cfg.epochs = 1;
  cfg.seeds = {0, 1};
  cfg.source = 0;  // single source keeps this quick
  auto domains = micro_domains(cfg);
  ProtocolResult res = run_resolution_ablation(cfg, domains);
  REQUIRE(res.table.row_labels == std::vector<std::string>{"24", "48", "96"});
  for (std::size_t r = 0; r < 3; ++r) CHECK(res.table.cells[r][0].accs.size() == 2);
  CHECK(res.records.size() == 6);
}

TEST_CASE("style ablation rows pair each plugin with and without the method") {
  ExperimentConfig cfg = micro_cfg();
  cfg.epochs = 1;
  cfg.seeds = {0};
  cfg.source = 1;
  auto domains = micro_domains(cfg);
  ProtocolResult res = run_style_ablation(cfg, domains);
  REQUIRE(res.table.row_labels ==
          std::vector<std::string>{"mixstyle", "mixstyle+condisr", "dsu", "dsu+condisr"});
  CHECK(res.records.size() == 4);
  for (std::size_t r = 0; r < 4; ++r) CHECK(!res.table.cells[r][1].missing());
}
