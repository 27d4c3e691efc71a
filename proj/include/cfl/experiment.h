#ifndef CFL_EXPERIMENT_H_
#define CFL_EXPERIMENT_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cfl/federation.h"
#include "cfl/metrics.h"
#include "cfl/model.h"
#include "cfl/strategies.h"
#include "cfl/tasks.h"

namespace cfl {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Scenario { kDomainRotate, kDomainPermute, kClassIl, kTaskIl };
enum class PartitionKind { kAuto, kDigitPairs, kDirichlet, kIid };
enum class DatasetKind { kSynth, kIdx };

struct ExperimentConfig {
  std::string method_name;  // empty: derived from the strategy

  DatasetKind dataset = DatasetKind::kSynth;
  std::size_t synth_train_per_class = 100;
  std::size_t synth_test_per_class = 50;
  std::size_t synth_classes = 10;
  std::size_t synth_dim = 16;
  double synth_spread = 0.1;
  std::string idx_train_images, idx_train_labels, idx_test_images, idx_test_labels;
  std::size_t idx_downsample = 2;
  std::size_t idx_max_train = 0;  // 0: all
  std::size_t idx_max_test = 0;

  Scenario scenario = Scenario::kDomainRotate;
  PartitionKind partition = PartitionKind::kAuto;
  std::size_t tasks = 10;
  std::size_t clients = 10;
  std::size_t buffer_size = 200;
  double dirichlet_alpha = 0.3;
  std::vector<std::size_t> hidden = {100};
  Activation activation = Activation::kRelu;

  StrategyConfig strategy;
  Schedule schedule;
  std::size_t buffer_grad_samples = 0;  // 0: whole buffer
  bool weighted_aggregation = false;
  double client_sampling_rate = 1.0;
  ForgettingVariant forgetting = ForgettingVariant::kLiteral;

  std::vector<std::uint64_t> seeds = {0};
  std::string output_dir = "results";
  bool save_model = false;
  std::size_t threads = 0;  // 0: DefaultThreadCount()

  void Validate() const;
  std::string ResolvedMethodName() const;
  EvalMode eval_mode() const;
};

// Strict flat-JSON parsing: unknown keys, wrong types and constraint
// violations throw ConfigError naming the key. Omitted keys take defaults;
// local_epochs and rounds_per_task default per scenario (domain: E=1, R=20;
// class/task split: E=5, R=20).
ExperimentConfig ParseConfigText(std::string_view text);
ExperimentConfig ParseConfig(const std::filesystem::path& path);
nlohmann::json ConfigToJson(const ExperimentConfig& cfg);

std::string ToString(Scenario s);
std::string ToString(BaseStrategy b);
std::string ToString(InsertPolicy p);
std::string ToString(RefineMode m);
std::string ToString(RefineCondition c);

struct SeedResult {
  std::uint64_t seed = 0;
  AccuracyMatrix matrix{1};
  std::vector<double> acc;                 // Acc_t, t = 1..T
  std::vector<std::optional<double>> fgt;  // Fgt_t, null at t = 1
  std::optional<double> bwt;
  std::optional<double> fwt;
  CommLedger ledger;
  RoundStats totals;
  double wall_clock_seconds = 0.0;
  ParameterVector final_model;
};

struct RunReport {
  ExperimentConfig config;
  ModelSpec spec;
  std::vector<SeedResult> runs;
};

// Fills Acc/Fgt/BWT/FWT from the matrix.
void ComputeMetricSeries(SeedResult& r, ForgettingVariant variant);

// One seed of the federated continual-learning loop.
SeedResult RunSeed(const ExperimentConfig& cfg, std::uint64_t seed,
                   ModelSpec* spec_out = nullptr);

// Every seed in cfg.seeds. Writes report.json, accuracy.csv and metrics.csv
// (plus model_seed<N>.json with save_model) into cfg.output_dir when
// `write_outputs`.
RunReport RunExperiment(const ExperimentConfig& cfg, bool write_outputs = true);

nlohmann::json ReportToJson(const RunReport& report);
std::string AccuracyCsv(const RunReport& report);
std::string MetricsCsv(const RunReport& report);

// Shortest round-trip decimal form.
std::string FormatDouble(double v);

// Per-method summary read back from report.json files.
struct MethodSeries {
  std::string method;
  std::string scenario;
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<double>> acc;                 // [seed][t]
  std::vector<std::vector<std::optional<double>>> fgt;  // [seed][t]
};

// Parses report.json files; runs sharing a method name are merged in input
// order. Throws std::runtime_error on malformed reports.
std::vector<MethodSeries> LoadReports(const std::vector<std::filesystem::path>& paths);

struct PlotFiles {
  std::filesystem::path accuracy_svg;
  std::filesystem::path forgetting_svg;
};

// Acc_t and Fgt_t against t, one polyline per method (seed mean) with a
// min/max band when a method has more than one seed.
std::string AccuracySvg(const std::vector<MethodSeries>& methods);
std::string ForgettingSvg(const std::vector<MethodSeries>& methods);
PlotFiles EmitPlots(const std::vector<std::filesystem::path>& reports,
                    const std::filesystem::path& out_dir);

struct CompareRow {
  std::string method;
  std::size_t seeds = 0;
  double acc_mean = 0.0, acc_std = 0.0;
  std::optional<double> fgt_mean, fgt_std;
  double acc_delta = 0.0;
  std::optional<double> fgt_delta;
};

// Final-task Acc_T and Fgt_T, mean and sample std over seeds, with deltas
// against `baseline`. Rows keep first-appearance order. Throws
// std::runtime_error on scenario mismatch or unknown baseline.
std::vector<CompareRow> CompareRuns(const std::vector<MethodSeries>& methods,
                                    const std::string& baseline);
std::string CompareCsv(const std::vector<CompareRow>& rows);
std::string CompareTable(const std::vector<CompareRow>& rows);

}  // namespace cfl

#endif  // CFL_EXPERIMENT_H_
