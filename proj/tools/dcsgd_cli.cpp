// Command-line front end: run experiments, compare optimizers, sweep lambda,
// verify the property suite, and inspect trace files.
// Exit codes: 0 success, 1 config error, 2 divergence, 3 property failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dcsgd/verify.hpp"

using namespace dcsgd;

namespace {

ExperimentConfig load_config(const std::string& path,
                             const std::vector<std::string>& overrides) {
  ExperimentConfig c = ExperimentConfig::parse_file(path);
  for (const std::string& kv : overrides) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError(kv, "expected key=value");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  c.validate();
  return c;
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& overrides,
            std::uint64_t stop_after, const std::string& resume,
            const std::string& checkpoint_out) {
  ExperimentConfig c = load_config(config_path, overrides);
  RunOptions opt;
  opt.stop_after_updates = stop_after;
  opt.resume_from = resume;
  opt.checkpoint_out = checkpoint_out;
  RunOutcome out = run_experiment(c, opt);
  std::printf("status: %s\n", out.status == RunStatus::Ok        ? "ok"
                              : out.status == RunStatus::Stopped ? "stopped"
                                                                 : "diverged");
  std::printf("metrics: %s\n", out.metrics_path.c_str());
  std::printf("trace: %s\n", out.trace_path.c_str());
  std::printf("checkpoint: %s\n", out.checkpoint_path.c_str());
  if (!out.metrics.empty())
    std::printf("final: pass=%.6g train_risk=%.6g eval_error=%.6g\n",
                out.metrics.back().pass, out.final_risk, out.final_error);
  return out.status == RunStatus::Diverged ? 2 : 0;
}

int cmd_compare(const std::vector<std::string>& config_paths,
                const std::vector<std::string>& names, const std::string& align,
                const std::string& out_path) {
  std::vector<ExperimentConfig> configs;
  for (const auto& p : config_paths) configs.push_back(load_config(p, {}));
  AlignBy by = align == "simtime" ? AlignBy::SimTime : AlignBy::Passes;
  std::string csv = compare_runs(configs, by, names);
  if (out_path.empty()) {
    std::fputs(csv.c_str(), stdout);
  } else {
    std::ofstream out(out_path);
    out << csv;
    std::printf("wrote %s\n", out_path.c_str());
  }
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::vector<double>& lambdas,
              const std::string& out_path) {
  ExperimentConfig base = load_config(config_path, {});
  std::string csv = lambda_sweep(base, lambdas);
  if (out_path.empty()) {
    std::fputs(csv.c_str(), stdout);
  } else {
    std::ofstream out(out_path);
    out << csv;
    std::printf("wrote %s\n", out_path.c_str());
  }
  return 0;
}

int cmd_verify(const std::string& out_path, bool quick) {
  VerifyOptions opt;
  opt.include_slow = !quick;
  std::vector<PropertyResult> results = run_verify_suite(opt);
  std::ofstream file;
  if (!out_path.empty()) file.open(out_path);
  int failures = 0;
  for (const PropertyResult& r : results) {
    std::string line = format_property_line(r);
    std::puts(line.c_str());
    if (file) file << line << "\n";
    if (!r.pass) ++failures;
  }
  std::printf("%d properties, %d failed\n", static_cast<int>(results.size()), failures);
  return failures == 0 ? 0 : 3;
}

int cmd_dc_ssgd(const std::string& config_path, const DcSsgdComparisonSetup& setup,
                const std::string& out_path) {
  ExperimentConfig base = load_config(config_path, {});
  std::string csv = dc_ssgd_comparison_csv(base, setup);
  if (out_path.empty()) {
    std::fputs(csv.c_str(), stdout);
  } else {
    std::ofstream out(out_path);
    out << csv;
    std::printf("wrote %s\n", out_path.c_str());
  }
  return 0;
}

int cmd_inspect(const std::string& trace_path) {
  TraceLog log = read_trace_file(trace_path);
  StalenessStats st = staleness_stats(log);
  std::size_t pulls = 0, grads = 0, flushes = 0;
  double end_time = 0.0;
  for (const TraceRecord& r : log) {
    end_time = std::max(end_time, r.time);
    if (r.kind == 'p') ++pulls;
    if (r.kind == 'g') ++grads;
    if (r.kind == 'f') ++flushes;
  }
  std::printf("events: %zu pulls, %zu gradients, %zu barrier flushes\n", pulls, grads,
              flushes);
  std::printf("sim time span: %.6g\n", end_time);
  std::printf("staleness: n=%zu mean=%.4f max=%llu\n", st.taus.size(), st.mean,
              static_cast<unsigned long long>(st.max));
  std::printf("histogram:\n");
  for (const auto& [tau, count] : st.histogram)
    std::printf("  tau=%-4llu %llu\n", static_cast<unsigned long long>(tau),
                static_cast<unsigned long long>(count));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"delay-compensated asynchronous SGD simulator"};
  app.require_subcommand(1);

  std::string config_path, resume, checkpoint_out, align = "passes", out_path,
              trace_path;
  std::vector<std::string> overrides, config_paths, names;
  std::vector<double> lambdas;
  std::uint64_t stop_after = 0;
  bool quick = false;

  CLI::App* run = app.add_subcommand("run", "run one experiment from a config file");
  run->add_option("--config", config_path, "experiment config file")->required();
  run->add_option("--set", overrides, "override config keys, key=value");
  run->add_option("--stop-after-updates", stop_after,
                  "stop after N applied updates and write a checkpoint");
  run->add_option("--resume", resume, "resume from a checkpoint file");
  run->add_option("--checkpoint-out", checkpoint_out, "checkpoint path for early stops");

  CLI::App* cmp = app.add_subcommand("compare", "aligned eval-error curves for configs");
  cmp->add_option("--config", config_paths, "config files (repeat)")->required();
  cmp->add_option("--name", names, "column names (optional, one per config)");
  cmp->add_option("--align", align, "passes | simtime");
  cmp->add_option("--out", out_path, "output CSV path (default stdout)");

  CLI::App* swp = app.add_subcommand("sweep", "lambda sweep for a DC-ASGD config");
  swp->add_option("--config", config_path, "base config file")->required();
  swp->add_option("--lambdas", lambdas, "lambda values")->required();
  swp->add_option("--out", out_path, "output CSV path (default stdout)");

  CLI::App* ver = app.add_subcommand("verify", "run the property suite");
  ver->add_option("--out", out_path, "also write the report to this file");
  ver->add_flag("--quick", quick, "skip the slow convergence-ordering experiment");

  DcSsgdComparisonSetup dcs;
  std::string ordering = "asgiven";
  CLI::App* dss = app.add_subcommand(
      "dc-ssgd-compare", "distance to the sequential trajectory for DC-SSGD steps");
  dss->add_option("--config", config_path, "base config (model/data/seed)")->required();
  dss->add_option("--trials", dcs.trials, "number of trials");
  dss->add_option("--workers", dcs.workers, "gradients per step (M)");
  dss->add_option("--per-worker", dcs.per_worker, "samples per worker gradient");
  dss->add_option("--eta", dcs.eta, "sequential sub-step learning rate");
  dss->add_option("--lambda", dcs.lambda, "compensation weight");
  dss->add_option("--ordering", ordering, "asgiven | bynorm");
  dss->add_option("--out", out_path, "output CSV path (default stdout)");

  CLI::App* ins = app.add_subcommand("inspect-trace", "staleness summary of a trace file");
  ins->add_option("--trace", trace_path, "trace.log path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed())
      return cmd_run(config_path, overrides, stop_after, resume, checkpoint_out);
    if (cmp->parsed()) return cmd_compare(config_paths, names, align, out_path);
    if (swp->parsed()) return cmd_sweep(config_path, lambdas, out_path);
    if (ver->parsed()) return cmd_verify(out_path, quick);
    if (dss->parsed()) {
      dcs.ordering = ordering == "bynorm" ? UnfoldOrdering::ByCompensatedNorm
                                          : UnfoldOrdering::AsGiven;
      return cmd_dc_ssgd(config_path, dcs, out_path);
    }
    if (ins->parsed()) return cmd_inspect(trace_path);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
