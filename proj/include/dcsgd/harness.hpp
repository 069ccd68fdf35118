#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcsgd/cluster_sim.hpp"
#include "dcsgd/config.hpp"
#include "dcsgd/data.hpp"
#include "dcsgd/dc_ssgd.hpp"

namespace dcsgd {

constexpr char kMetricsHeader[] =
    "pass,sim_time,train_risk,eval_error,mean_tau,max_tau,lr,lambda_mean";
constexpr char kTraceHeader[] = "# time kind worker version server_t tau";

inline std::string format_metrics_row(const MetricsRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g",
                r.pass, r.sim_time, r.train_risk, r.eval_error, r.mean_tau, r.max_tau,
                r.lr, r.lambda_mean);
  return buf;
}

// trace lines print 1-based worker ids; 0 marks the barrier pseudo-worker
inline std::string format_trace_row(const TraceRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%.12g %c %d %llu %llu %lld", r.time, r.kind,
                r.worker + 1, static_cast<unsigned long long>(r.version),
                static_cast<unsigned long long>(r.server_t),
                static_cast<long long>(r.tau));
  return buf;
}

inline TraceLog read_trace_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trace: " + path);
  TraceLog log;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    TraceRecord r;
    char kind = 0;
    int worker = 0;
    unsigned long long version = 0, server_t = 0;
    long long tau = 0;
    if (std::sscanf(line.c_str(), "%lf %c %d %llu %llu %lld", &r.time, &kind, &worker,
                    &version, &server_t, &tau) != 6)
      throw std::runtime_error("malformed trace line: " + line);
    r.kind = kind;
    r.worker = worker - 1;
    r.version = version;
    r.server_t = server_t;
    r.tau = tau;
    log.push_back(r);
  }
  return log;
}

// --- checkpoint serialization -------------------------------------------

namespace ckpt {

constexpr char kMagic[4] = {'D', 'C', 'S', 'G'};
constexpr std::uint32_t kVersion = 1;

struct Writer {
  std::ofstream out;
  explicit Writer(const std::string& path) : out(path, std::ios::binary) {
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  }
  void raw(const void* p, std::size_t n) { out.write(static_cast<const char*>(p), n); }
  void u8(std::uint8_t v) { raw(&v, 1); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void i32(std::int32_t v) { raw(&v, 4); }
  void f64(double v) { raw(&v, 8); }
  void vec(const Vec& v) {
    u64(v.size());
    if (!v.empty()) raw(v.data(), v.size() * sizeof(double));
  }
};

struct Reader {
  std::ifstream in;
  explicit Reader(const std::string& path) : in(path, std::ios::binary) {
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  }
  void raw(void* p, std::size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in.gcount() != static_cast<std::streamsize>(n))
      throw std::runtime_error("truncated checkpoint");
  }
  std::uint8_t u8() { std::uint8_t v; raw(&v, 1); return v; }
  std::uint32_t u32() { std::uint32_t v; raw(&v, 4); return v; }
  std::uint64_t u64() { std::uint64_t v; raw(&v, 8); return v; }
  std::int32_t i32() { std::int32_t v; raw(&v, 4); return v; }
  double f64() { double v; raw(&v, 8); return v; }
  Vec vec() {
    Vec v(u64());
    if (!v.empty()) raw(v.data(), v.size() * sizeof(double));
    return v;
  }
};

inline void write_packet(Writer& w, const GradientPacket& p) {
  w.i32(p.worker);
  w.vec(p.g);
  w.u64(p.based_on_version);
  w.u64(p.minibatch_id);
  w.u32(p.batch_size);
}

inline GradientPacket read_packet(Reader& r) {
  GradientPacket p;
  p.worker = r.i32();
  p.g = r.vec();
  p.based_on_version = r.u64();
  p.minibatch_id = r.u64();
  p.batch_size = r.u32();
  return p;
}

}  // namespace ckpt

inline void write_checkpoint(const std::string& path, std::uint64_t config_hash,
                             const SimState& s) {
  ckpt::Writer w(path);
  w.raw(ckpt::kMagic, 4);
  w.u32(ckpt::kVersion);
  w.u64(config_hash);
  // server
  w.u64(s.server.t);
  w.vec(s.server.w);
  w.u32(static_cast<std::uint32_t>(s.server.w_bak.size()));
  for (std::size_t m = 0; m < s.server.w_bak.size(); ++m) {
    w.u8(s.server.w_bak_set[m] ? 1 : 0);
    w.vec(s.server.w_bak[m]);
    w.u8(s.server.pending_sync[m] ? 1 : 0);
    if (s.server.pending_sync[m]) ckpt::write_packet(w, *s.server.pending_sync[m]);
  }
  w.vec(s.server.lambda_state.mean_square);
  w.vec(s.server.lambda_state.velocity);
  w.u64(s.server.lambda_state.step_count);
  // workers
  w.u32(static_cast<std::uint32_t>(s.workers.size()));
  for (const WorkerCursor& c : s.workers) {
    w.u64(c.epoch);
    w.u64(c.pos);
    w.vec(c.snapshot);
    w.u64(c.snapshot_version);
  }
  // event queue
  w.u32(static_cast<std::uint32_t>(s.queue.size()));
  for (const SimEvent& e : s.queue) {
    w.f64(e.time);
    w.u64(e.seq);
    w.u8(e.kind == EventKind::PullArrives ? 0 : 1);
    w.i32(e.worker);
    ckpt::write_packet(w, e.packet);
  }
  // rng cursors
  w.u32(static_cast<std::uint32_t>(s.compute_rng.size()));
  for (const RandomSource& r : s.compute_rng) {
    w.u64(r.key());
    w.u64(r.counter());
  }
  w.f64(s.clock);
  w.u64(s.next_seq);
  w.u64(s.samples_consumed);
  w.u64(s.updates_applied);
  w.u64(s.minibatch_counter);
  w.u64(s.window_tau_count);
  w.u64(s.window_tau_sum);
  w.u64(s.window_tau_max);
  w.f64(s.last_lambda_mean);
  w.f64(s.last_lr);
  w.f64(s.last_metrics_pass);
  w.u8(s.diverged ? 1 : 0);
}

inline SimState read_checkpoint(const std::string& path, std::uint64_t expect_hash) {
  ckpt::Reader r(path);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, ckpt::kMagic, 4) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  if (r.u32() != ckpt::kVersion)
    throw std::runtime_error("unsupported checkpoint version");
  std::uint64_t hash = r.u64();
  if (hash != expect_hash)
    throw std::runtime_error("checkpoint does not match this config");
  SimState s;
  s.server.t = r.u64();
  s.server.w = r.vec();
  std::uint32_t workers = r.u32();
  s.server.w_bak.resize(workers);
  s.server.w_bak_set.resize(workers);
  s.server.pending_sync.resize(workers);
  for (std::uint32_t m = 0; m < workers; ++m) {
    s.server.w_bak_set[m] = r.u8() != 0;
    s.server.w_bak[m] = r.vec();
    if (r.u8() != 0) s.server.pending_sync[m] = ckpt::read_packet(r);
  }
  s.server.lambda_state.mean_square = r.vec();
  s.server.lambda_state.velocity = r.vec();
  s.server.lambda_state.step_count = r.u64();
  std::uint32_t nw = r.u32();
  s.workers.resize(nw);
  for (std::uint32_t m = 0; m < nw; ++m) {
    s.workers[m].epoch = r.u64();
    s.workers[m].pos = r.u64();
    s.workers[m].snapshot = r.vec();
    s.workers[m].snapshot_version = r.u64();
  }
  std::uint32_t nq = r.u32();
  s.queue.resize(nq);
  for (std::uint32_t i = 0; i < nq; ++i) {
    s.queue[i].time = r.f64();
    s.queue[i].seq = r.u64();
    s.queue[i].kind = r.u8() == 0 ? EventKind::PullArrives : EventKind::GradientArrives;
    s.queue[i].worker = r.i32();
    s.queue[i].packet = ckpt::read_packet(r);
  }
  std::uint32_t nr = r.u32();
  for (std::uint32_t i = 0; i < nr; ++i) {
    RandomSource src(r.u64());
    src.set_counter(r.u64());
    s.compute_rng.push_back(src);
  }
  s.clock = r.f64();
  s.next_seq = r.u64();
  s.samples_consumed = r.u64();
  s.updates_applied = r.u64();
  s.minibatch_counter = r.u64();
  s.window_tau_count = r.u64();
  s.window_tau_sum = r.u64();
  s.window_tau_max = r.u64();
  s.last_lambda_mean = r.f64();
  s.last_lr = r.f64();
  s.last_metrics_pass = r.f64();
  s.diverged = r.u8() != 0;
  return s;
}

// --- experiment resolution & drivers --------------------------------------

struct ResolvedExperiment {
  ExperimentConfig config;
  Dataset train;
  Dataset eval;
  SimSetup setup;  // train/eval pointers refer to the members above
};

inline ParamVector planted_parameters(const ExperimentConfig& c) {
  ModelSpec star_spec = ModelSpec::softmax_regression(c.model_d, c.model_k);
  RandomSource rng = RandomSource::derive(c.seed, StreamPurpose::TrueParams);
  ParamVector w(star_spec.param_count());
  for (double& v : w) v = c.wstar_scale * rng.next_gaussian();
  return w;
}

inline ResolvedExperiment resolve(const ExperimentConfig& config) {
  config.validate();
  ResolvedExperiment r;
  r.config = config;
  if (config.data_kind == "synthetic") {
    ParamVector w_star = planted_parameters(config);
    r.train = generate_synthetic(config.model_d, config.model_k, config.data_samples,
                                 w_star, config.feature_scale, config.seed);
    r.eval = generate_synthetic(config.model_d, config.model_k, config.eval_samples,
                                w_star, config.feature_scale, config.seed,
                                SyntheticSplit::Eval);
  } else {
    r.train = load_csv(config.data_path, config.model_k);
    if (r.train.d != config.model_d)
      throw ConfigError("data.path", "csv feature count does not match model.d");
    r.eval = config.eval_path.empty() ? r.train : load_csv(config.eval_path, config.model_k);
  }
  r.setup.model = config.model_spec();
  r.setup.optimizer = config.optimizer();
  r.setup.schedule = config.schedule();
  r.setup.workers = config.workers;
  r.setup.delay = config.parse_delay();
  r.setup.minibatch = config.minibatch;
  r.setup.epochs = config.epochs;
  r.setup.eval_every_passes = config.eval_every;
  r.setup.server_overhead = config.server_overhead;
  r.setup.seed = config.seed;
  r.setup.train = &r.train;
  r.setup.eval = &r.eval;
  RandomSource init = RandomSource::derive(config.seed, StreamPurpose::InitParams);
  r.setup.w0.assign(r.setup.model.param_count(), 0.0);
  for (double& v : r.setup.w0) v = config.init_scale * init.next_gaussian();
  r.setup.validate();
  return r;
}

enum class RunStatus { Ok = 0, ConfigError = 1, Diverged = 2, Stopped = 10 };

struct RunOptions {
  std::uint64_t stop_after_updates = 0;  // 0 = run to completion
  std::string resume_from;               // checkpoint path; empty = fresh
  std::string checkpoint_out;            // defaults to <output_dir>/checkpoint.bin
  SimOptions sim;                        // observers for tests
};

struct RunOutcome {
  RunStatus status = RunStatus::Ok;
  std::string output_dir;
  std::string metrics_path;
  std::string trace_path;
  std::string checkpoint_path;
  double final_risk = 0.0;
  double final_error = 0.0;
  MetricsLog metrics;  // records emitted by this segment (plus pass-0 if fresh)
};

// Runs one experiment: writes config echo, metrics.csv, trace.log, status and
// a checkpoint into output_dir. Resume appends to the existing logs and must
// reproduce the uninterrupted run byte for byte.
inline RunOutcome run_experiment(const ExperimentConfig& config,
                                 const RunOptions& options = {}) {
  ResolvedExperiment exp = resolve(config);
  std::filesystem::create_directories(config.output_dir);
  RunOutcome out;
  out.output_dir = config.output_dir;
  out.metrics_path = config.output_dir + "/metrics.csv";
  out.trace_path = config.output_dir + "/trace.log";
  out.checkpoint_path = options.checkpoint_out.empty()
                            ? config.output_dir + "/checkpoint.bin"
                            : options.checkpoint_out;

  bool resume = !options.resume_from.empty();
  SimState state;
  if (resume) state = read_checkpoint(options.resume_from, config.hash());
  Simulation sim(exp.setup, &state, resume);

  std::ofstream metrics, trace;
  if (resume) {
    metrics.open(out.metrics_path, std::ios::app);
    trace.open(out.trace_path, std::ios::app);
  } else {
    std::ofstream echo(config.output_dir + "/config.txt");
    echo << config.write();
    metrics.open(out.metrics_path, std::ios::trunc);
    trace.open(out.trace_path, std::ios::trunc);
    metrics << kMetricsHeader << "\n";
    trace << kTraceHeader << "\n";
    MetricsRecord first = sim.snapshot_metrics();
    metrics << format_metrics_row(first) << "\n";
    out.metrics.push_back(first);
    sim.mark_metrics_emitted(first.pass);
  }
  if (!metrics || !trace)
    throw std::runtime_error("cannot write into output dir: " + config.output_dir);

  SimOptions simopt = options.sim;
  simopt.stop_after_updates = options.stop_after_updates;
  SimResult result = sim.run(simopt);

  for (const TraceRecord& t : result.trace) trace << format_trace_row(t) << "\n";
  for (const MetricsRecord& m : result.metrics) {
    metrics << format_metrics_row(m) << "\n";
    out.metrics.push_back(m);
  }
  // final record, unless one was already emitted at this pass count
  if (result.finished && sim.pass_count() > sim.state().last_metrics_pass) {
    MetricsRecord fin = sim.snapshot_metrics();
    metrics << format_metrics_row(fin) << "\n";
    out.metrics.push_back(fin);
    sim.mark_metrics_emitted(fin.pass);
  }
  metrics.flush();
  trace.flush();

  write_checkpoint(out.checkpoint_path, config.hash(), sim.state());

  std::string status_text = "ok";
  if (result.diverged) {
    out.status = RunStatus::Diverged;
    status_text = "diverged";
  } else if (!result.finished) {
    out.status = RunStatus::Stopped;
    status_text = "stopped";
  }
  std::ofstream status(config.output_dir + "/status");
  status << status_text << "\n";

  if (!out.metrics.empty()) {
    out.final_risk = out.metrics.back().train_risk;
    out.final_error = out.metrics.back().eval_error;
  }
  return out;
}

// --- comparison & sweep drivers -------------------------------------------

enum class AlignBy { Passes, SimTime };

// Aligned eval-error curves for several configs sharing dataset and model.
// Rows are joined on the alignment key; missing points carry the last value
// forward. Footer comment lines give the final risk/error per run.
inline std::string compare_runs(const std::vector<ExperimentConfig>& configs,
                                AlignBy align, std::vector<std::string> names = {}) {
  if (configs.empty()) throw std::invalid_argument("no configs to compare");
  for (const auto& c : configs) {
    if (c.data_kind != configs[0].data_kind || c.seed != configs[0].seed ||
        c.data_samples != configs[0].data_samples || c.data_path != configs[0].data_path ||
        c.model_kind != configs[0].model_kind || c.model_d != configs[0].model_d ||
        c.model_k != configs[0].model_k ||
        c.feature_scale != configs[0].feature_scale ||
        c.wstar_scale != configs[0].wstar_scale)
      throw std::invalid_argument("compared configs must share dataset and model");
  }
  if (names.empty())
    for (std::size_t i = 0; i < configs.size(); ++i)
      names.push_back(std::to_string(i + 1) + "-" + configs[i].optimizer_kind);

  std::vector<MetricsLog> logs;
  for (const auto& c : configs) {
    ResolvedExperiment exp = resolve(c);
    SimState state;
    Simulation sim(exp.setup, &state, false);
    MetricsLog log;
    log.push_back(sim.snapshot_metrics());
    SimResult res = sim.run();
    for (const auto& m : res.metrics) log.push_back(m);
    if (res.finished && sim.pass_count() > log.back().pass)
      log.push_back(sim.snapshot_metrics());
    logs.push_back(std::move(log));
  }

  std::vector<double> keys;
  for (const auto& log : logs)
    for (const auto& m : log) keys.push_back(align == AlignBy::Passes ? m.pass : m.sim_time);
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());

  std::string csv = align == AlignBy::Passes ? "pass" : "sim_time";
  for (const auto& n : names) csv += ",err_" + n;
  csv += "\n";
  char buf[64];
  for (double key : keys) {
    std::snprintf(buf, sizeof(buf), "%.12g", key);
    csv += buf;
    for (const auto& log : logs) {
      double value = log.front().eval_error;
      for (const auto& m : log) {
        double k = align == AlignBy::Passes ? m.pass : m.sim_time;
        if (k <= key) value = m.eval_error;
      }
      std::snprintf(buf, sizeof(buf), ",%.12g", value);
      csv += buf;
    }
    csv += "\n";
  }
  for (std::size_t i = 0; i < logs.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "# final,%s,%.12g,%.12g\n", names[i].c_str(),
                  logs[i].back().train_risk, logs[i].back().eval_error);
    csv += buf;
  }
  return csv;
}

// Experiment kind "dc-ssgd-comparison": distance of the delay-compensated and
// plain large-minibatch steps from the true sequential trajectory, sampled at
// a near-converged point of the config's task.
struct DcSsgdComparisonSetup {
  int trials = 200;
  int workers = 8;        // M gradients per step
  int per_worker = 1;     // samples per worker gradient
  double eta = 0.45;      // sequential sub-step learning rate; eta_hat = M*eta
  double lambda = 1.0;
  UnfoldOrdering ordering = UnfoldOrdering::AsGiven;
  int warm_passes = 60;   // sequential pre-training to reach the measurement point
  double warm_eta = 0.25;
  int warm_batch = 10;
};

inline std::string dc_ssgd_comparison_csv(const ExperimentConfig& base,
                                          const DcSsgdComparisonSetup& s) {
  if (s.trials < 1 || s.workers < 1 || s.per_worker < 1)
    throw std::invalid_argument("trials, workers and per_worker must be >= 1");
  ResolvedExperiment exp = resolve(base);
  const ModelSpec spec = exp.setup.model;
  ParamVector w(spec.param_count(), 0.0);
  for (int p = 0; p < s.warm_passes; ++p)
    for (std::size_t i = 0; i + s.warm_batch <= exp.train.size(); i += s.warm_batch) {
      std::vector<DatasetSample> b(exp.train.samples.begin() + i,
                                   exp.train.samples.begin() + i + s.warm_batch);
      w = sgd_step(w, batch_gradient(b, w, spec), s.warm_eta);
    }
  RandomSource rng = RandomSource::derive(base.seed, StreamPurpose::Probe);
  std::string csv = "trial,dist_dc,dist_plain,M,eta,lambda,ordering\n";
  const char* ord = s.ordering == UnfoldOrdering::AsGiven ? "asgiven" : "bynorm";
  char buf[192];
  for (int t = 0; t < s.trials; ++t) {
    std::vector<std::vector<DatasetSample>> parts(s.workers);
    for (int j = 0; j < s.workers; ++j)
      for (int i = 0; i < s.per_worker; ++i)
        parts[j].push_back(exp.train.samples[rng.next_below(exp.train.size())]);
    auto [d_dc, d_plain] =
        compare_to_sequential(w, parts, s.eta, s.lambda, spec, s.ordering);
    std::snprintf(buf, sizeof(buf), "%d,%.12g,%.12g,%d,%.12g,%.12g,%s\n", t, d_dc,
                  d_plain, s.workers, s.eta, s.lambda, ord);
    csv += buf;
  }
  return csv;
}

// One curve per lambda for a DC-ASGD base config.
inline std::string lambda_sweep(const ExperimentConfig& base,
                                const std::vector<double>& lambdas) {
  if (lambdas.empty()) throw std::invalid_argument("empty lambda list");
  if (base.optimizer_kind != "dc-asgd-c" && base.optimizer_kind != "dc-asgd-a")
    throw std::invalid_argument("lambda sweep needs a DC-ASGD optimizer kind");
  std::vector<ExperimentConfig> configs;
  std::vector<std::string> names;
  char buf[48];
  for (double lam : lambdas) {
    ExperimentConfig c = base;
    c.lambda0 = lam;
    configs.push_back(c);
    std::snprintf(buf, sizeof(buf), "lambda%g", lam);
    names.push_back(buf);
  }
  return compare_runs(configs, AlignBy::Passes, names);
}

}  // namespace dcsgd
