#include "condisr/engine.hpp"

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "condisr/image_io.hpp"

namespace condisr {

namespace {

std::uint64_t method_tag(Method m) { return static_cast<std::uint64_t>(m) + 17; }

struct Streams {
  Rng batch, aug, plugin;
};

Streams run_streams(int seed, int source, Method m) {
  auto s = static_cast<std::uint64_t>(seed);
  auto src = static_cast<std::uint64_t>(source);
  auto mt = method_tag(m);
  return {Rng::derive(s, {4002, src, mt}), Rng::derive(s, {4003, src, mt}),
          Rng::derive(s, {4004, src, mt})};
}

struct Snapshot {
  std::vector<Tensor<real_t>> params;
  std::vector<Tensor<real_t>> buffers;

  void capture(ParamSet<real_t>& ps) {
    params.clear();
    buffers.clear();
    for (auto* p : ps.params) params.push_back(p->value);
    for (auto* b : ps.buffers) buffers.push_back(b->value);
  }
  void restore(ParamSet<real_t>& ps) const {
    for (std::size_t i = 0; i < ps.params.size(); ++i) ps.params[i]->value = params[i];
    for (std::size_t i = 0; i < ps.buffers.size(); ++i) ps.buffers[i]->value = buffers[i];
  }
};

std::vector<const DomainSample*> dataset_pointers(const DomainDataset& ds) {
  std::vector<const DomainSample*> out;
  out.reserve(ds.samples.size());
  for (const auto& s : ds.samples) out.push_back(&s);
  return out;
}

Tensor<real_t> labels_of(const std::vector<const DomainSample*>& samples, std::size_t begin,
                         std::size_t end) {
  Tensor<real_t> y({static_cast<long>(end - begin)});
  for (std::size_t i = begin; i < end; ++i)
    y[static_cast<long>(i - begin)] = static_cast<real_t>(samples[i]->label);
  return y;
}

}  // namespace

std::string method_name(Method m) {
  switch (m) {
    case Method::kErmNoAug:
      return "erm_noaug";
    case Method::kErm:
      return "erm";
    case Method::kCondisr:
      return "condisr";
    case Method::kCondisrNoRec:
      return "condisr_norec";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  if (name == "erm_noaug") return Method::kErmNoAug;
  if (name == "erm") return Method::kErm;
  if (name == "condisr") return Method::kCondisr;
  if (name == "condisr_norec") return Method::kCondisrNoRec;
  throw ConfigError("unknown method '" + name + "'");
}

ExperimentConfig experiment_from_config(const Config& c) {
  ExperimentConfig e;
  e.data_kind = c.get_string("data.kind");
  e.data_root = c.get_string("data.root");
  e.data_seed = static_cast<std::uint64_t>(c.get_int("data.seed"));
  e.samples_per_domain = static_cast<int>(c.get_int("data.samples_per_domain"));
  e.holdout_fraction = c.get_real("data.holdout_fraction");
  auto mean = c.get_real_list("data.norm_mean");
  auto stdv = c.get_real_list("data.norm_std");
  for (int i = 0; i < 3; ++i) {
    e.norm_mean[i] = mean[i];
    e.norm_std[i] = stdv[i];
  }
  e.model.kind = c.get_string("model.kind");
  e.model.stem_channels = c.get_int("model.stem_channels");
  e.model.proj_dim = c.get_int("model.proj_dim");
  e.model.proj_hidden = c.get_int("model.proj_hidden");
  e.model.tau = c.get_real("model.tau");
  e.model.pretrained_path = c.get_string("model.pretrained");
  e.model.stopgrad_cls = c.get_bool("model.stopgrad_cls");
  e.model.decoder_resolution = c.get_int("decoder.resolution");
  e.model.decoder_widths = c.get_int_list("decoder.widths");
  e.model.decoder_pool_stages = c.get_int("decoder.pool_stages");
  e.model.plugin_kind = c.get_string("plugin.kind");
  e.model.plugin_p = c.get_real("plugin.p");
  e.model.plugin_alpha = c.get_real("plugin.alpha");
  e.weights.cls = static_cast<real_t>(c.get_real("loss.lambda_cls"));
  e.weights.structure = static_cast<real_t>(c.get_real("loss.lambda_str"));
  e.weights.style = static_cast<real_t>(c.get_real("loss.lambda_sty"));
  e.weights.rec = static_cast<real_t>(c.get_real("loss.lambda_rec"));
  e.loss_opt.style_mode =
      c.get_string("loss.style_mode") == "margin" ? StyleMode::kMargin : StyleMode::kLiteral;
  e.loss_opt.margin = static_cast<real_t>(c.get_real("loss.margin"));
  e.loss_opt.style_clamp = static_cast<real_t>(c.get_real("loss.style_clamp"));
  e.loss_opt.reduce = c.get_string("loss.l1_reduction") == "coord_mean" ? PairReduce::kCoordMean
                                                                        : PairReduce::kSum;
  e.loss_opt.rec_norm = c.get_string("loss.rec_norm") == "sum" ? RecNorm::kSum : RecNorm::kMse;
  e.bezier.invert_prob = c.get_real("aug.bezier.invert_prob");
  e.bezier.per_channel = c.get_bool("aug.bezier.per_channel");
  e.fda.beta_min = c.get_real("aug.fda.beta_min");
  e.fda.beta_max = c.get_real("aug.fda.beta_max");
  e.resample_per_batch = c.get_bool("aug.resample_per_batch");
  e.methods.clear();
  {
    std::stringstream ss(c.get_string("train.methods"));
    std::string item;
    while (std::getline(ss, item, ',')) e.methods.push_back(parse_method(item));
  }
  e.lr = c.get_real("train.lr");
  e.batch_size = static_cast<int>(c.get_int("train.batch_size"));
  e.epochs = static_cast<int>(c.get_int("train.epochs"));
  e.seeds.clear();
  for (long s : c.get_int_list("train.seeds")) e.seeds.push_back(static_cast<int>(s));
  e.source = static_cast<int>(c.get_int("train.source"));
  e.workers = static_cast<int>(c.get_int("train.workers"));
  return e;
}

Logger::Logger(const std::string& path, bool echo) : echo_(echo) {
  os_ = std::make_unique<std::ofstream>(path, std::ios::app);
}

void Logger::line(const std::string& msg) {
  std::lock_guard<std::mutex> lock(mu_);
  auto now = std::chrono::system_clock::now();
  auto t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof buf, "%F %T", std::localtime(&t));
  if (os_ && os_->is_open()) (*os_) << "[" << buf << "] " << msg << "\n" << std::flush;
  if (echo_) std::cerr << msg << "\n";
}

Tensor<real_t> batch_images(const std::vector<const DomainSample*>& samples, std::size_t begin,
                            std::size_t end) {
  long n = static_cast<long>(end - begin);
  Tensor<real_t> x({n, kImageChannels, kImageSide, kImageSide});
  long per = static_cast<long>(kImageChannels) * kImageSide * kImageSide;
  for (long i = 0; i < n; ++i) {
    const auto& px = samples[begin + static_cast<std::size_t>(i)]->pixels;
    real_t* dst = x.data() + i * per;
    for (long j = 0; j < per; ++j)
      dst[j] = static_cast<real_t>(px[static_cast<std::size_t>(j)]) / real_t(255);
  }
  return x;
}

void normalize_channels(Tensor<real_t>& x, const std::array<double, 3>& mean,
                        const std::array<double, 3>& stddev) {
  normalize_branch(x, mean, stddev);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

struct StepLosses {
  real_t cls = 0, c_str = 0, c_sty = 0, rec = 0, total = 0;
};

TrainSettings<real_t> settings_of(const ExperimentConfig& cfg) {
  TrainSettings<real_t> s;
  s.weights = cfg.weights;
  s.loss_opt = cfg.loss_opt;
  s.norm_mean = cfg.norm_mean;
  s.norm_std = cfg.norm_std;
  s.decoder_resolution = cfg.model.decoder_resolution;
  s.stopgrad_cls = cfg.model.stopgrad_cls;
  return s;
}

/// One optimization step over an assembled raw batch; shared by every method.
StepLosses train_step(Network<real_t>& net, Method method, const ExperimentConfig& cfg,
                      const Triplet<real_t>& trip, const Tensor<real_t>& labels, Adam<real_t>& opt,
                      Rng& plugin_rng) {
  Tape<real_t> tape;
  Ctx<real_t> ctx{tape, /*training=*/true, /*grads=*/true, &plugin_rng, {}};
  TrainGraph<real_t> g = build_training_graph(ctx, net, method, settings_of(cfg), trip, labels);
  tape.backward(g.total);
  ParamSet<real_t> ps = net.params();
  opt.step(ps, ctx);
  return {g.cls, g.c_str, g.c_sty, g.rec, g.total_value};
}

}  // namespace

EvalResult evaluate(Network<real_t>& net, const EvalCollection& collection,
                    const ExperimentConfig& cfg) {
  if (collection.samples.empty()) throw DataError("evaluate: empty collection");
  std::map<int, std::pair<long, long>> tallies;  // domain -> (correct, total)
  long correct = 0;
  std::size_t n = collection.samples.size();
  constexpr std::size_t kEvalBatch = 256;
  for (std::size_t begin = 0; begin < n; begin += kEvalBatch) {
    std::size_t end = std::min(n, begin + kEvalBatch);
    Tensor<real_t> x = batch_images(collection.samples, begin, end);
    normalize_channels(x, cfg.norm_mean, cfg.norm_std);
    Tape<real_t> tape;
    Ctx<real_t> ctx{tape, /*training=*/false, /*grads=*/false, nullptr, {}};
    Var<real_t> xin = tape.leaf(std::move(x), false);
    Var<real_t> f = net.backbone->stem(ctx, xin);
    Var<real_t> h = net.has_gate ? disentangle(ctx, net.gate, f).structure : f;
    Var<real_t> logits = net.backbone->body(ctx, h, nullptr, nullptr);
    const Tensor<real_t>& z = tape.val(logits);
    for (std::size_t i = begin; i < end; ++i) {
      const DomainSample* s = collection.samples[i];
      bool pred = z[static_cast<long>(i - begin)] >= real_t(0);  // sigmoid(z) >= 0.5
      bool ok = pred == (s->label == 1);
      auto& t = tallies[s->domain_id];
      t.first += ok ? 1 : 0;
      t.second += 1;
      correct += ok ? 1 : 0;
    }
  }
  EvalResult res;
  res.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  for (auto& [d, t] : tallies)
    res.per_domain[d] = static_cast<double>(t.first) / static_cast<double>(t.second);
  return res;
}

TrainedModel train_one_source(const ExperimentConfig& cfg, Method method,
                              const std::vector<DomainDataset>& domains, int source, int seed,
                              Logger* log) {
  auto t0 = std::chrono::steady_clock::now();
  const DomainDataset* src = nullptr;
  for (const auto& d : domains)
    if (d.domain_id == source) src = &d;
  if (!src) throw DataError("train_one_source: source domain " + std::to_string(source) +
                            " not found");
  auto [train_ds, val_ds] = holdout_split(*src, cfg.holdout_fraction, static_cast<std::uint64_t>(seed));
  std::vector<const DomainSample*> train_ptr = dataset_pointers(train_ds);
  EvalCollection val_col = union_domains({&val_ds});

  Streams streams = run_streams(seed, source, method);
  std::uint64_t init_seed = (static_cast<std::uint64_t>(seed) << 20) ^
                            (static_cast<std::uint64_t>(source) << 8) ^ method_tag(method);
  TrainedModel out;
  out.net = std::make_shared<Network<real_t>>(
      build_network<real_t>(cfg.model, uses_gate(method), uses_decoder(method), init_seed));
  Network<real_t>& net = *out.net;
  if (!cfg.model.pretrained_path.empty()) {
    ParamSet<real_t> ps = net.params();
    load_pretrained(cfg.model.pretrained_path, ps);
  }

  Adam<real_t> opt(static_cast<real_t>(cfg.lr));
  ParamSet<real_t> ps = net.params();
  RunRecord& rec = out.record;
  rec.method = method_name(method);
  rec.source = source;
  rec.seed = seed;

  std::size_t n_train = train_ptr.size();
  long batch = std::min<long>(cfg.batch_size, static_cast<long>(n_train));
  if (batch < 1) throw DataError("train_one_source: empty training split");

  // Fixed-once augmentation: the triplet of the whole training split is
  // materialized a single time and batches gather from it.
  std::unique_ptr<Triplet<real_t>> fixed_aug;
  if (!cfg.resample_per_batch && uses_augmentation(method)) {
    Tensor<real_t> all = batch_images(train_ptr, 0, n_train);
    fixed_aug = std::make_unique<Triplet<real_t>>(
        make_triplet(all, streams.aug, cfg.bezier, cfg.fda));
  }

  Snapshot best;
  double best_val = -1.0;
  std::vector<int> order(n_train);
  for (std::size_t i = 0; i < n_train; ++i) order[i] = static_cast<int>(i);

  try {
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      streams.batch.shuffle(order);
      double sums[5] = {0, 0, 0, 0, 0};
      long seen = 0;
      for (std::size_t begin = 0; begin < n_train; begin += static_cast<std::size_t>(batch)) {
        std::size_t end = std::min(n_train, begin + static_cast<std::size_t>(batch));
        std::vector<const DomainSample*> chunk;
        chunk.reserve(end - begin);
        for (std::size_t i = begin; i < end; ++i)
          chunk.push_back(train_ptr[static_cast<std::size_t>(order[i])]);
        Tensor<real_t> x = batch_images(chunk, 0, chunk.size());
        Tensor<real_t> y({static_cast<long>(chunk.size())});
        for (std::size_t i = 0; i < chunk.size(); ++i)
          y[static_cast<long>(i)] = static_cast<real_t>(chunk[i]->label);

        Triplet<real_t> trip;
        if (!uses_augmentation(method)) {
          trip.source = std::move(x);
        } else if (fixed_aug) {
          long per = static_cast<long>(kImageChannels) * kImageSide * kImageSide;
          trip.source = std::move(x);
          trip.bezier = Tensor<real_t>(trip.source.dims());
          trip.fda = Tensor<real_t>(trip.source.dims());
          for (std::size_t i = 0; i < chunk.size(); ++i) {
            long si = order[begin + i];
            std::copy(fixed_aug->bezier.data() + si * per, fixed_aug->bezier.data() + (si + 1) * per,
                      trip.bezier.data() + static_cast<long>(i) * per);
            std::copy(fixed_aug->fda.data() + si * per, fixed_aug->fda.data() + (si + 1) * per,
                      trip.fda.data() + static_cast<long>(i) * per);
          }
        } else {
          trip = make_triplet(x, streams.aug, cfg.bezier, cfg.fda);
        }

        StepLosses sl;
        try {
          sl = train_step(net, method, cfg, trip, y, opt, streams.plugin);
        } catch (const NonFiniteLoss& e) {
          throw TrainAbort(std::string("run aborted (") + rec.method + ", source " +
                           std::to_string(source) + ", seed " + std::to_string(seed) +
                           "): " + e.what());
        }
        long bsz = static_cast<long>(chunk.size());
        sums[0] += sl.cls * bsz;
        sums[1] += sl.c_str * bsz;
        sums[2] += sl.c_sty * bsz;
        sums[3] += sl.rec * bsz;
        sums[4] += sl.total * bsz;
        seen += bsz;
      }
      EpochStats es;
      es.cls = sums[0] / seen;
      es.c_str = sums[1] / seen;
      es.c_sty = sums[2] / seen;
      es.rec = sums[3] / seen;
      es.total = sums[4] / seen;
      es.val_acc = evaluate(net, val_col, cfg).accuracy;
      rec.epochs.push_back(es);
      if (es.val_acc > best_val) {
        best_val = es.val_acc;
        rec.selected_epoch = epoch;
        best.capture(ps);
      }
      if (log)
        log->line(rec.method + " src=" + std::to_string(source) + " seed=" +
                  std::to_string(seed) + " epoch " + std::to_string(epoch) + " loss " +
                  std::to_string(es.total) + " val " + std::to_string(es.val_acc));
    }
  } catch (...) {
    rec.wall_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    throw;
  }
  best.restore(ps);
  rec.wall_sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

// ---------------------------------------------------------------------------
// Protocol and ablations
// ---------------------------------------------------------------------------

double CellStat::mean() const {
  double s = 0;
  for (double a : accs) s += a;
  return accs.empty() ? 0.0 : s / static_cast<double>(accs.size());
}

double CellStat::stddev() const {
  if (accs.size() < 2) return 0.0;
  double m = mean(), s = 0;
  for (double a : accs) s += (a - m) * (a - m);
  return std::sqrt(s / static_cast<double>(accs.size() - 1));
}

double ResultsTable::average(std::size_t row) const {
  double s = 0;
  int n = 0;
  for (const auto& cell : cells[row])
    if (!cell.missing()) {
      s += cell.mean();
      ++n;
    }
  return n == 0 ? 0.0 : s / n;
}

std::vector<DomainDataset> load_domains(const ExperimentConfig& cfg) {
  if (cfg.data_kind == "synthetic") {
    SyntheticDomainConfig sc;
    sc.samples_per_domain = cfg.samples_per_domain;
    return generate_synthetic_domains(sc, cfg.data_seed);
  }
  std::string root = cfg.data_root;
  if (root.empty()) {
    const char* env = std::getenv("CONDISR_DATA_ROOT");
    if (env) root = env;
  }
  if (root.empty())
    throw DataError("camelyon17: set data.root or the CONDISR_DATA_ROOT environment variable");
  return load_camelyon17(root);
}

namespace {

struct RunTask {
  std::string row_label;
  ExperimentConfig cfg;  // possibly specialized (ablations)
  Method method;
  int source;
  int seed;
};

ProtocolResult execute_tasks(const std::vector<RunTask>& tasks,
                             const std::vector<DomainDataset>& domains,
                             const std::vector<std::string>& row_labels, int workers,
                             Logger* log) {
  // Pre-build the evaluation union per source (read-only, shared by workers).
  std::map<int, EvalCollection> eval_unions;
  for (const auto& d : domains) {
    std::vector<const DomainDataset*> rest;
    for (const auto& o : domains)
      if (o.domain_id != d.domain_id) rest.push_back(&o);
    if (!rest.empty()) eval_unions.emplace(d.domain_id, union_domains(rest));
  }

  std::vector<RunRecord> records(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      const RunTask& task = tasks[i];
      try {
        TrainedModel tm =
            train_one_source(task.cfg, task.method, domains, task.source, task.seed, log);
        EvalResult ev = evaluate(*tm.net, eval_unions.at(task.source), task.cfg);
        tm.record.target_acc = ev.accuracy;
        tm.record.per_domain = ev.per_domain;
        if (!task.cfg.checkpoint_dir.empty()) {
          ParamSet<real_t> ps = tm.net->params();
          save_checkpoint(task.cfg.checkpoint_dir + "/" + task.row_label + "_src" +
                              std::to_string(task.source) + "_seed" + std::to_string(task.seed) +
                              ".bin",
                          ps);
        }
        records[i] = std::move(tm.record);
      } catch (const std::exception& e) {
        RunRecord r;
        r.method = method_name(task.method);
        r.source = task.source;
        r.seed = task.seed;
        r.failed = true;
        r.error = e.what();
        records[i] = std::move(r);
        if (log) log->line(std::string("run failed: ") + e.what());
      }
    }
  };
  std::vector<std::thread> pool;
  int n_workers = std::max(1, workers);
  for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  ProtocolResult out;
  out.table.row_labels = row_labels;
  out.table.cells.assign(row_labels.size(), {});
  std::map<std::string, std::size_t> row_of;
  for (std::size_t r = 0; r < row_labels.size(); ++r) row_of[row_labels[r]] = r;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const RunRecord& r = records[i];
    out.any_failed = out.any_failed || r.failed;
    if (!r.failed && tasks[i].source >= 0 && tasks[i].source < 5)
      out.table.cells[row_of.at(tasks[i].row_label)][static_cast<std::size_t>(tasks[i].source)]
          .accs.push_back(r.target_acc);
  }
  out.records = std::move(records);
  return out;
}

std::vector<int> protocol_sources(const ExperimentConfig& cfg,
                                  const std::vector<DomainDataset>& domains) {
  std::vector<int> sources;
  if (cfg.source >= 0) {
    sources.push_back(cfg.source);
  } else {
    for (const auto& d : domains) sources.push_back(d.domain_id);
    std::sort(sources.begin(), sources.end());
  }
  return sources;
}

}  // namespace

ProtocolResult run_protocol(const ExperimentConfig& cfg, const std::vector<DomainDataset>& domains,
                            Logger* log) {
  std::vector<RunTask> tasks;
  std::vector<std::string> rows;
  for (Method m : cfg.methods) {
    rows.push_back(method_name(m));
    for (int source : protocol_sources(cfg, domains))
      for (int seed : cfg.seeds) tasks.push_back({method_name(m), cfg, m, source, seed});
  }
  return execute_tasks(tasks, domains, rows, cfg.workers, log);
}

ProtocolResult run_resolution_ablation(const ExperimentConfig& cfg,
                                       const std::vector<DomainDataset>& domains, Logger* log) {
  std::vector<RunTask> tasks;
  std::vector<std::string> rows;
  for (long r : {24L, 48L, 96L}) {
    ExperimentConfig variant = cfg;
    variant.model.decoder_resolution = r;
    std::string label = std::to_string(r);
    rows.push_back(label);
    for (int source : protocol_sources(cfg, domains))
      for (int seed : cfg.seeds)  // identical seeds across rows: paired comparison
        tasks.push_back({label, variant, Method::kCondisr, source, seed});
  }
  return execute_tasks(tasks, domains, rows, cfg.workers, log);
}

ProtocolResult run_style_ablation(const ExperimentConfig& cfg,
                                  const std::vector<DomainDataset>& domains, Logger* log) {
  std::vector<std::string> kinds = {"mixstyle", "dsu"};
  for (const auto& [name, _] : style_plugin_registry<real_t>())
    if (name != "mixstyle" && name != "dsu") kinds.push_back(name);
  std::vector<RunTask> tasks;
  std::vector<std::string> rows;
  for (const std::string& kind : kinds) {
    for (bool with_condisr : {false, true}) {
      ExperimentConfig variant = cfg;
      variant.model.plugin_kind = kind;
      std::string label = with_condisr ? kind + "+condisr" : kind;
      rows.push_back(label);
      Method m = with_condisr ? Method::kCondisr : Method::kErm;
      for (int source : protocol_sources(cfg, domains))
        for (int seed : cfg.seeds) tasks.push_back({label, variant, m, source, seed});
    }
  }
  return execute_tasks(tasks, domains, rows, cfg.workers, log);
}

// ---------------------------------------------------------------------------
// Grad-CAM
// ---------------------------------------------------------------------------

Tensor<float> gradcam(Network<real_t>& net, const Tensor<double>& image01,
                      const std::string& layer, const ExperimentConfig& cfg) {
  std::vector<std::string> names = net.layer_names();
  if (std::find(names.begin(), names.end(), layer) == names.end()) {
    std::string available;
    for (const auto& n : names) available += (available.empty() ? "" : ", ") + n;
    throw ConfigError("unknown layer '" + layer + "'; available layers: " + available);
  }
  long h = image01.dim(1), w = image01.dim(2);
  Tensor<real_t> x({1, kImageChannels, h, w});
  for (long i = 0; i < image01.numel(); ++i) x[i] = static_cast<real_t>(image01[i]);
  normalize_channels(x, cfg.norm_mean, cfg.norm_std);

  Tape<real_t> tape;
  Ctx<real_t> ctx{tape, /*training=*/false, /*grads=*/true, nullptr, {}};
  Var<real_t> xin = tape.leaf(std::move(x), true);
  Trace<real_t> trace;
  Var<real_t> f = net.backbone->stem(ctx, xin);
  trace.emplace_back("stem", f);
  Var<real_t> hvar = net.has_gate ? disentangle(ctx, net.gate, f).structure : f;
  Var<real_t> logits = net.backbone->body(ctx, hvar, nullptr, &trace);
  tape.backward(logits);

  Var<real_t> target{-1};
  for (auto& [name, var] : trace)
    if (name == layer) target = var;
  const Tensor<real_t>& act = tape.val(target);
  long c = act.c(), ah = act.h(), aw = act.w();
  Tensor<float> heat({1, 1, ah, aw});
  if (tape.grad_present(target.id)) {
    const Tensor<real_t>& g = tape.grad(target);
    for (long ch = 0; ch < c; ++ch) {
      double wsum = 0.0;
      for (long p = 0; p < ah * aw; ++p) wsum += g[ch * ah * aw + p];
      float alpha = static_cast<float>(wsum / (ah * aw));
      for (long p = 0; p < ah * aw; ++p)
        heat[p] += alpha * static_cast<float>(act[ch * ah * aw + p]);
    }
  }
  float maxv = 0.0f;
  for (long i = 0; i < heat.numel(); ++i) {
    heat[i] = std::max(0.0f, heat[i]);  // rectify
    maxv = std::max(maxv, heat[i]);
  }
  if (maxv > 0)
    for (long i = 0; i < heat.numel(); ++i) heat[i] /= maxv;
  Tensor<float> up({1, 1, h, w});
  ops::resize_bilinear(heat, h, w, up);
  Tensor<float> out({h, w});
  for (long i = 0; i < out.numel(); ++i) out[i] = std::clamp(up[i], 0.0f, 1.0f);
  return out;
}

void write_gradcam_overlay(const std::string& path, const Tensor<double>& image01,
                           const Tensor<float>& heat) {
  long h = image01.dim(1), w = image01.dim(2);
  ImageU8 img;
  img.width = static_cast<int>(w);
  img.height = static_cast<int>(h);
  img.pixels.resize(static_cast<std::size_t>(3 * h * w));
  auto jet = [](float v, int ch) {
    // piecewise-linear jet: blue -> cyan -> yellow -> red
    float r = std::clamp(1.5f - std::abs(4.0f * v - 3.0f), 0.0f, 1.0f);
    float g = std::clamp(1.5f - std::abs(4.0f * v - 2.0f), 0.0f, 1.0f);
    float b = std::clamp(1.5f - std::abs(4.0f * v - 1.0f), 0.0f, 1.0f);
    return ch == 0 ? r : (ch == 1 ? g : b);
  };
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      float v = heat[y * w + x];
      for (int ch = 0; ch < 3; ++ch) {
        double base = image01[ch * h * w + y * w + x];
        double blended = 0.55 * base + 0.45 * jet(v, ch);
        img.pixels[(static_cast<std::size_t>(y) * w + x) * 3 + ch] =
            static_cast<std::uint8_t>(std::lround(std::clamp(blended, 0.0, 1.0) * 255.0));
      }
    }
  write_png(path, img);
}

}  // namespace condisr
