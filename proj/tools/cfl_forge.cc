// cfl_forge: run continual federated learning experiments and summarize them.
//
//   cfl_forge run <config.json> [--seed N] [--out DIR] [--save-model]
//   cfl_forge plot <report.json...> [--out DIR]
//   cfl_forge compare <report.json...> --baseline NAME [--out FILE]
//
// Exit codes: 0 ok, 1 config error, 2 runtime error.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cfl/experiment.h"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual federated learning simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string run_out;
  bool save_model = false;
  auto* run = app.add_subcommand("run", "Run an experiment from a JSON config");
  run->add_option("config", config_path, "Experiment config (JSON)")->required();
  run->add_option("--seed", seed, "Run only this seed");
  run->add_option("--out", run_out, "Output directory (overrides output_dir)");
  run->add_flag("--save-model", save_model, "Write the final model of each seed");

  std::vector<std::string> plot_reports;
  std::string plot_out = ".";
  auto* plot = app.add_subcommand("plot", "Accuracy/forgetting SVG charts");
  plot->add_option("reports", plot_reports, "report.json files")->required();
  plot->add_option("--out", plot_out, "Output directory");

  std::vector<std::string> compare_reports;
  std::string baseline;
  std::string compare_out;
  auto* compare = app.add_subcommand("compare", "Final-task comparison table");
  compare->add_option("reports", compare_reports, "report.json files")->required();
  compare->add_option("--baseline", baseline, "Method name used for deltas")->required();
  compare->add_option("--out", compare_out, "CSV output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  if (run->parsed()) {
    cfl::ExperimentConfig cfg;
    try {
      cfg = cfl::ParseConfig(config_path);
      if (seed) cfg.seeds = {*seed};
      if (!run_out.empty()) cfg.output_dir = run_out;
      if (save_model) cfg.save_model = true;
    } catch (const cfl::ConfigError& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return kConfigError;
    }
    try {
      const cfl::RunReport report = cfl::RunExperiment(cfg);
      for (const auto& r : report.runs) {
        std::printf("%s seed=%llu Acc_T=%.2f", cfg.ResolvedMethodName().c_str(),
                    static_cast<unsigned long long>(r.seed), r.acc.back());
        if (r.fgt.back()) std::printf(" Fgt_T=%.2f", *r.fgt.back());
        std::printf(" uplink=%llu floats (%.1fs)\n",
                    static_cast<unsigned long long>(r.ledger.uplink_total()),
                    r.wall_clock_seconds);
      }
      std::printf("wrote %s\n", (std::filesystem::path(cfg.output_dir) / "report.json").c_str());
    } catch (const std::exception& e) {
      std::cerr << "runtime error: " << e.what() << "\n";
      return kRuntimeError;
    }
    return kOk;
  }

  try {
    std::vector<std::filesystem::path> paths;
    if (plot->parsed()) {
      paths.assign(plot_reports.begin(), plot_reports.end());
      const auto files = cfl::EmitPlots(paths, plot_out);
      std::printf("wrote %s and %s\n", files.accuracy_svg.c_str(),
                  files.forgetting_svg.c_str());
    } else {
      paths.assign(compare_reports.begin(), compare_reports.end());
      const auto rows = cfl::CompareRuns(cfl::LoadReports(paths), baseline);
      std::cout << cfl::CompareTable(rows);
      if (!compare_out.empty()) {
        std::ofstream out(compare_out, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + compare_out);
        out << cfl::CompareCsv(rows);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kOk;
}
