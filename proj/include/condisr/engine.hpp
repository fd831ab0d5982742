#pragma once

#include <array>
#include <fstream>
#include <memory>
#include <mutex>

#include "condisr/config.hpp"
#include "condisr/data.hpp"
#include "condisr/training.hpp"

// The SDG protocol: per-source training with the composite objective,
// training-domain validation checkpoint selection, target evaluation on the
// union of the remaining domains, seed aggregation and the two scripted
// ablations. Training-scale math runs in float32; the tolerance-critical
// paths are exercised in double by the test suite via the templated core.

namespace condisr {

using real_t = float;

std::string method_name(Method m);
Method parse_method(const std::string& name);

struct ExperimentConfig {
  // data
  std::string data_kind = "synthetic";
  std::string data_root;
  std::uint64_t data_seed = 1234;
  int samples_per_domain = 1000;
  double holdout_fraction = 0.2;
  std::array<double, 3> norm_mean{0.5, 0.5, 0.5};
  std::array<double, 3> norm_std{0.5, 0.5, 0.5};

  ModelConfig model;
  LossWeights<real_t> weights;
  LossOptions<real_t> loss_opt;

  BezierConfig bezier;
  FdaConfig fda;
  bool resample_per_batch = true;

  std::vector<Method> methods{Method::kCondisr};
  double lr = 1e-3;
  int batch_size = 256;
  int epochs = 50;
  std::vector<int> seeds{0, 1, 2};
  int source = -1;  // -1: every domain takes a turn as the source
  int workers = 2;
  std::string checkpoint_dir;  // empty: do not persist per-run checkpoints
};

ExperimentConfig experiment_from_config(const Config& cfg);

struct EpochStats {
  double cls = 0, c_str = 0, c_sty = 0, rec = 0, total = 0;
  double val_acc = 0;
};

struct RunRecord {
  std::string method;
  int source = 0;
  int seed = 0;
  std::vector<EpochStats> epochs;
  int selected_epoch = -1;  // maximizes validation accuracy, ties -> earliest
  double target_acc = 0;
  std::map<int, double> per_domain;
  double wall_sec = 0;
  bool failed = false;
  std::string error;
};

struct EvalResult {
  double accuracy = 0;
  std::map<int, double> per_domain;
};

class Logger {
 public:
  Logger() = default;
  Logger(const std::string& path, bool echo);
  void line(const std::string& msg);

 private:
  std::mutex mu_;
  std::unique_ptr<std::ofstream> os_;
  bool echo_ = false;
};

struct TrainedModel {
  std::shared_ptr<Network<real_t>> net;
  RunRecord record;
};

TrainedModel train_one_source(const ExperimentConfig& cfg, Method method,
                              const std::vector<DomainDataset>& domains, int source, int seed,
                              Logger* log = nullptr);

EvalResult evaluate(Network<real_t>& net, const EvalCollection& collection,
                    const ExperimentConfig& cfg);

struct CellStat {
  std::vector<double> accs;  // one per finished seed
  bool missing() const { return accs.empty(); }
  double mean() const;
  double stddev() const;  // sample std over seeds
};

struct ResultsTable {
  std::vector<std::string> row_labels;
  std::vector<std::array<CellStat, 5>> cells;
  double average(std::size_t row) const;  // mean of the per-center means
};

struct ProtocolResult {
  ResultsTable table;
  std::vector<RunRecord> records;
  bool any_failed = false;
};

std::vector<DomainDataset> load_domains(const ExperimentConfig& cfg);

ProtocolResult run_protocol(const ExperimentConfig& cfg, const std::vector<DomainDataset>& domains,
                            Logger* log = nullptr);
ProtocolResult run_resolution_ablation(const ExperimentConfig& cfg,
                                       const std::vector<DomainDataset>& domains,
                                       Logger* log = nullptr);
ProtocolResult run_style_ablation(const ExperimentConfig& cfg,
                                  const std::vector<DomainDataset>& domains,
                                  Logger* log = nullptr);

/// Channel-weighted, rectified, max-normalized activation map of `layer`,
/// upsampled to the input resolution. Throws ConfigError listing the
/// available layers when the name is unknown.
Tensor<float> gradcam(Network<real_t>& net, const Tensor<double>& image01,
                      const std::string& layer, const ExperimentConfig& cfg);

/// Blends a jet-style colormap of the heatmap over the image and writes PNG.
void write_gradcam_overlay(const std::string& path, const Tensor<double>& image01,
                           const Tensor<float>& heat);

// Exposed for tests.
Tensor<real_t> batch_images(const std::vector<const DomainSample*>& samples, std::size_t begin,
                            std::size_t end);
void normalize_channels(Tensor<real_t>& x, const std::array<double, 3>& mean,
                        const std::array<double, 3>& stddev);

}  // namespace condisr
