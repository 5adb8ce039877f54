// Command-line driver: partition, run, sweep, report.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fedobp/experiment.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string output;
  int threads = 1;
};

fedobp::ExperimentConfig resolve(const Common& c) {
  fedobp::ExperimentConfig cfg = fedobp::load_config(c.config);
  if (c.seed) cfg.seeds = {*c.seed};
  if (!c.output.empty()) cfg.output_dir = c.output;
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "experiment config file")->required()->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "run a single seed instead of the configured list");
  sub->add_option("--output", c.output, "output directory (overrides output_dir)");
  sub->add_option("--threads", c.threads, "worker threads for client training")
      ->check(CLI::Range(1, 256));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated personalization simulator"};
  app.require_subcommand(1);

  Common partition_opts, run_opts, sweep_opts;
  std::string report_dir;

  CLI::App* partition = app.add_subcommand("partition", "write per-seed partition plans");
  add_common(partition, partition_opts);
  CLI::App* run = app.add_subcommand("run", "run an experiment for every seed");
  add_common(run, run_opts);
  CLI::App* sweep = app.add_subcommand("sweep", "quantile sweep over sweep.q x sweep.scores");
  add_common(sweep, sweep_opts);
  CLI::App* report = app.add_subcommand("report", "summarize an output directory");
  report->add_option("--output,dir", report_dir, "output directory to summarize")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*partition) {
      for (const auto& p : fedobp::cmd_partition(resolve(partition_opts))) {
        std::cout << p.string() << '\n';
      }
    } else if (*run) {
      const fedobp::ExperimentConfig cfg = resolve(run_opts);
      const fedobp::RunSummary s = fedobp::cmd_run(cfg, run_opts.threads);
      std::cout << cfg.method.label() << " final_mean_acc=" << fedobp::format_double(s.final_mean)
                << " std=" << fedobp::format_double(s.final_std) << " -> "
                << cfg.output_dir.string() << '\n';
    } else if (*sweep) {
      const fedobp::ExperimentConfig cfg = resolve(sweep_opts);
      fedobp::cmd_sweep(cfg, sweep_opts.threads);
      std::cout << (cfg.output_dir / "sweep.csv").string() << '\n';
    } else if (*report) {
      fedobp::cmd_report(report_dir, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
