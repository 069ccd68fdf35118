#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dcsgd/harness.hpp"

using namespace dcsgd;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig small_config(const std::string& out) {
  ExperimentConfig c;
  c.model_kind = "softmax";
  c.model_d = 3;
  c.model_k = 3;
  c.optimizer_kind = "dc-asgd-c";
  c.lambda0 = 0.1;
  c.eta0 = 0.2;
  c.workers = 3;
  c.delay = "stochastic:1.0";
  c.data_samples = 120;
  c.eval_samples = 60;
  c.minibatch = 4;
  c.epochs = 3.0;
  c.eval_every = 1.0;
  c.seed = 7;
  c.output_dir = out;
  return c;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name)
      : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string sub(const std::string& s) const { return (path / s).string(); }
};

}  // namespace

TEST_CASE("config parse/echo round trip") {
  ExperimentConfig c = small_config("somewhere");
  c.decay_epochs = {2, 5};
  std::string echo = c.write();
  ExperimentConfig back = ExperimentConfig::parse(echo);
  CHECK(back == c);
  CHECK(back.hash() == c.hash());
  CHECK(back.write() == echo);

  // comments and blank lines are fine
  ExperimentConfig с2 = ExperimentConfig::parse("# hi\n\nmodel.d=5\n");
  CHECK(с2.model_d == 5);

  CHECK_THROWS_WITH_AS(ExperimentConfig::parse("nonsense.key=1\n"),
                       "nonsense.key: unknown key", ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("model.d=abc\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("model.d\n"), ConfigError);
}

TEST_CASE("config validation gives field-level messages") {
  ExperimentConfig c = small_config("x");
  c.optimizer_kind = "sgdmomentum";
  CHECK_THROWS_WITH_AS(c.validate(),
                       "optimizer.kind: must be sequential, asgd, ssgd, dc-asgd-c or "
                       "dc-asgd-a",
                       ConfigError);
  c = small_config("x");
  c.decay_epochs = {5, 5};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config("x");
  c.delay = "sometimes";
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config("x");
  c.delay = "fixed:1.0,-2";
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config("x");
  c.data_kind = "csv";
  CHECK_THROWS_WITH_AS(c.validate(), "data.path: required for data.kind=csv", ConfigError);
}

TEST_CASE("rerun gives byte-identical outputs") {
  TempDir tmp("dcsgd_harness_rerun");
  ExperimentConfig c = small_config(tmp.sub("a"));
  RunOutcome a = run_experiment(c);
  CHECK(a.status == RunStatus::Ok);
  std::string metrics_a = slurp(a.metrics_path);
  std::string trace_a = slurp(a.trace_path);

  c.output_dir = tmp.sub("b");
  RunOutcome b = run_experiment(c);
  CHECK(slurp(b.metrics_path) == metrics_a);
  CHECK(slurp(b.trace_path) == trace_a);

  // header is pinned
  CHECK(metrics_a.substr(0, std::string(kMetricsHeader).size()) == kMetricsHeader);
  // config echo parses back to the same config
  ExperimentConfig echoed = ExperimentConfig::parse_file(tmp.sub("a") + "/config.txt");
  CHECK(echoed.hash() == c.hash());  // output_dir is excluded from the hash
  echoed.output_dir = c.output_dir;
  CHECK(echoed == c);
}

TEST_CASE("checkpoint resume reproduces the uninterrupted run byte for byte") {
  TempDir tmp("dcsgd_harness_resume");
  for (std::string kind : {"asgd", "dc-asgd-a", "ssgd", "sequential"}) {
    ExperimentConfig full = small_config(tmp.sub("full_" + kind));
    full.optimizer_kind = kind;
    if (kind == "sequential") full.workers = 1;
    RunOutcome whole = run_experiment(full);
    CHECK(whole.status == RunStatus::Ok);

    ExperimentConfig part = full;
    part.output_dir = tmp.sub("part_" + kind);
    RunOptions stop;
    stop.stop_after_updates = 15;
    stop.checkpoint_out = tmp.sub("part_" + kind) + "/mid.bin";
    RunOutcome first = run_experiment(part, stop);
    CHECK(first.status == RunStatus::Stopped);

    RunOptions cont;
    cont.resume_from = stop.checkpoint_out;
    RunOutcome second = run_experiment(part, cont);
    CHECK(second.status == RunStatus::Ok);

    CHECK(slurp(part.output_dir + "/metrics.csv") ==
          slurp(full.output_dir + "/metrics.csv"));
    CHECK(slurp(part.output_dir + "/trace.log") == slurp(full.output_dir + "/trace.log"));
    // final checkpoints agree except for nothing: byte-identical
    CHECK(slurp(part.output_dir + "/checkpoint.bin") ==
          slurp(full.output_dir + "/checkpoint.bin"));
  }
}

TEST_CASE("checkpoint guards") {
  TempDir tmp("dcsgd_harness_ckptguard");
  ExperimentConfig c = small_config(tmp.sub("run"));
  RunOptions stop;
  stop.stop_after_updates = 5;
  RunOutcome out = run_experiment(c, stop);
  // resuming under a different config is rejected
  ExperimentConfig other = c;
  other.eta0 = 0.123;
  RunOptions cont;
  cont.resume_from = out.checkpoint_path;
  CHECK_THROWS_WITH_AS(run_experiment(other, cont),
                       "checkpoint does not match this config", std::runtime_error);
  {
    std::ofstream junk(tmp.sub("junk.bin"), std::ios::binary);
    junk << "not a checkpoint";
  }
  cont.resume_from = tmp.sub("junk.bin");
  CHECK_THROWS_AS(run_experiment(c, cont), std::runtime_error);
}

TEST_CASE("chance-level eval error at pass zero") {
  TempDir tmp("dcsgd_harness_chance");
  ExperimentConfig c = small_config(tmp.sub("run"));
  c.model_d = 5;
  c.model_k = 10;
  c.wstar_scale = 0.0;  // labels exactly uniform
  c.init_scale = 0.0;  // uniform predictions
  c.data_samples = 4000;
  c.eval_samples = 4000;
  c.epochs = 1.0;
  RunOutcome out = run_experiment(c);
  REQUIRE(!out.metrics.empty());
  double err0 = out.metrics.front().eval_error;
  // binomial bounds around 0.9 with n = 4000
  double sd = std::sqrt(0.9 * 0.1 / 4000.0);
  CHECK(err0 >= 0.9 - 4 * sd);
  CHECK(err0 <= 0.9 + 4 * sd);
}

TEST_CASE("trace file round trip and staleness from trace") {
  TempDir tmp("dcsgd_harness_trace");
  ExperimentConfig c = small_config(tmp.sub("run"));
  c.optimizer_kind = "asgd";
  c.workers = 4;
  c.delay = "round-robin";
  RunOutcome out = run_experiment(c);
  TraceLog log = read_trace_file(out.trace_path);
  CHECK(!log.empty());
  StalenessStats st = staleness_stats(log);
  REQUIRE(st.taus.size() > 10);
  for (std::size_t i = 3; i < st.taus.size(); ++i) CHECK(st.taus[i] == 3);
}

TEST_CASE("no hidden global state: two in-process runs agree") {
  TempDir tmp("dcsgd_harness_state");
  ExperimentConfig c = small_config(tmp.sub("r1"));
  RunOutcome r1 = run_experiment(c);
  c.output_dir = tmp.sub("r2");
  RunOutcome r2 = run_experiment(c);
  REQUIRE(r1.metrics.size() == r2.metrics.size());
  for (std::size_t i = 0; i < r1.metrics.size(); ++i)
    CHECK(r1.metrics[i].train_risk == r2.metrics[i].train_risk);
}

TEST_CASE("compare aligns identical and degenerate runs") {
  TempDir tmp("dcsgd_harness_cmp");
  ExperimentConfig seq = small_config(tmp.sub("seq"));
  seq.optimizer_kind = "sequential";
  seq.workers = 1;
  seq.epochs = 2.0;
  ExperimentConfig asgd1 = seq;
  asgd1.optimizer_kind = "asgd";

  std::string self_cmp = compare_runs({seq, seq}, AlignBy::Passes, {"a", "b"});
  std::string degen = compare_runs({seq, asgd1}, AlignBy::Passes, {"a", "b"});
  for (const std::string& csv : {self_cmp, degen}) {
    std::stringstream ss(csv);
    std::string line;
    std::getline(ss, line);
    CHECK(line == "pass,err_a,err_b");
    while (std::getline(ss, line)) {
      if (line.empty() || line[0] == '#') continue;
      auto c1 = line.find(','), c2 = line.rfind(',');
      REQUIRE(c1 != std::string::npos);
      REQUIRE(c2 > c1);
      CHECK(line.substr(c1 + 1, c2 - c1 - 1) == line.substr(c2 + 1));  // equal columns
    }
  }
  // mismatched model is rejected
  ExperimentConfig other = seq;
  other.model_d = 4;
  CHECK_THROWS_AS(compare_runs({seq, other}, AlignBy::Passes), std::invalid_argument);
  // sim-time alignment also runs
  std::string bytime = compare_runs({seq, asgd1}, AlignBy::SimTime, {"a", "b"});
  CHECK(bytime.substr(0, 8) == "sim_time");
}

TEST_CASE("lambda sweep") {
  TempDir tmp("dcsgd_harness_sweep");
  ExperimentConfig base = small_config(tmp.sub("base"));
  base.optimizer_kind = "dc-asgd-c";
  base.epochs = 2.0;
  std::string csv = lambda_sweep(base, {0.0, 0.1});
  std::stringstream ss(csv);
  std::string header;
  std::getline(ss, header);
  CHECK(header == "pass,err_lambda0,err_lambda0.1");

  // lambda = 0 column equals a plain ASGD run
  ExperimentConfig asgd = base;
  asgd.optimizer_kind = "asgd";
  ExperimentConfig zero = base;
  zero.lambda0 = 0.0;
  std::string cmp = compare_runs({zero, asgd}, AlignBy::Passes, {"z", "a"});
  std::stringstream cs(cmp);
  std::string line;
  std::getline(cs, line);
  while (std::getline(cs, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto c1 = line.find(','), c2 = line.rfind(',');
    CHECK(line.substr(c1 + 1, c2 - c1 - 1) == line.substr(c2 + 1));
  }
  // determinism of the sweep
  CHECK(lambda_sweep(base, {0.0, 0.1}) == csv);

  ExperimentConfig bad = base;
  bad.optimizer_kind = "asgd";
  CHECK_THROWS_AS(lambda_sweep(bad, {0.1}), std::invalid_argument);
  CHECK_THROWS_AS(lambda_sweep(base, {}), std::invalid_argument);
}

TEST_CASE("lambda sweep shape: intermediate best, huge lambda diverges") {
  ExperimentConfig base;
  base.model_d = 20;
  base.model_k = 10;
  base.optimizer_kind = "dc-asgd-c";
  base.eta0 = 0.8;
  base.decay_epochs = {9, 11};
  base.workers = 8;
  base.delay = "round-robin";
  base.data_samples = 4000;
  base.eval_samples = 500;
  base.wstar_scale = 0.5;
  base.init_scale = 0.0;
  base.minibatch = 50;
  base.epochs = 12.0;
  base.eval_every = 13.0;
  base.seed = 3;
  auto run_risk = [&](double lam, bool* diverged) {
    base.lambda0 = lam;
    ResolvedExperiment exp = resolve(base);
    SimState st;
    Simulation sim(exp.setup, &st, false);
    *diverged = sim.run().diverged;
    return *diverged ? 1e300 : sim.snapshot_metrics().train_risk;
  };
  bool d0 = false, d50 = false, dbig = false;
  double r0 = run_risk(0.0, &d0);
  double r50 = run_risk(50.0, &d50);
  run_risk(400.0, &dbig);
  CHECK_FALSE(d0);
  CHECK_FALSE(d50);
  CHECK(r50 < r0);  // a well-chosen lambda beats the ASGD extreme
  CHECK(dbig);      // oversized compensation wrecks the run
}

TEST_CASE("dc-ssgd comparison driver") {
  ExperimentConfig base = small_config("unused");
  base.model_d = 4;
  base.model_k = 3;
  base.data_samples = 500;
  DcSsgdComparisonSetup setup;
  setup.trials = 20;
  setup.workers = 4;
  setup.warm_passes = 30;
  std::string csv = dc_ssgd_comparison_csv(base, setup);
  std::stringstream ss(csv);
  std::string line;
  std::getline(ss, line);
  CHECK(line == "trial,dist_dc,dist_plain,M,eta,lambda,ordering");
  int rows = 0;
  while (std::getline(ss, line)) {
    CHECK(line.find(",4,") != std::string::npos);
    CHECK(line.substr(line.size() - 7) == "asgiven");
    ++rows;
  }
  CHECK(rows == 20);
  CHECK(dc_ssgd_comparison_csv(base, setup) == csv);  // deterministic

  setup.ordering = UnfoldOrdering::ByCompensatedNorm;
  std::string by = dc_ssgd_comparison_csv(base, setup);
  CHECK(by.find("bynorm") != std::string::npos);
  setup.trials = 0;
  CHECK_THROWS_AS(dc_ssgd_comparison_csv(base, setup), std::invalid_argument);
}

TEST_CASE("divergence surfaces in run status") {
  TempDir tmp("dcsgd_harness_div");
  ExperimentConfig c = small_config(tmp.sub("run"));
  c.optimizer_kind = "asgd";
  c.eta0 = 1e308;
  c.feature_scale = 30.0;
  RunOutcome out = run_experiment(c);
  CHECK(out.status == RunStatus::Diverged);
  CHECK(slurp(c.output_dir + "/status") == "diverged\n");
  CHECK(!slurp(out.trace_path).empty());
}
