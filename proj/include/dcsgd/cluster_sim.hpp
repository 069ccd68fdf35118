#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcsgd/data.hpp"
#include "dcsgd/matrix.hpp"
#include "dcsgd/model.hpp"
#include "dcsgd/optimizer.hpp"
#include "dcsgd/rng.hpp"

namespace dcsgd {

// Worker compute-time policy; communication is instant, so these durations
// are what produce staleness.
struct DelayModel {
  enum class Kind { RoundRobin, FixedComputeTime, StochasticCompute };
  Kind kind = Kind::RoundRobin;
  // FixedComputeTime: seconds per minibatch, one entry per worker (or a
  // single broadcast value). StochasticCompute: exponential means.
  std::vector<double> compute_times;

  static DelayModel round_robin() { return {Kind::RoundRobin, {}}; }
  static DelayModel fixed(std::vector<double> times) {
    for (double t : times)
      if (!(t > 0)) throw std::invalid_argument("compute times must be > 0");
    return {Kind::FixedComputeTime, std::move(times)};
  }
  static DelayModel stochastic(std::vector<double> means) {
    for (double t : means)
      if (!(t > 0)) throw std::invalid_argument("compute means must be > 0");
    return {Kind::StochasticCompute, std::move(means)};
  }

  double per_worker(int m) const {
    if (compute_times.empty()) return 1.0;
    if (compute_times.size() == 1) return compute_times[0];
    return compute_times[static_cast<std::size_t>(m) % compute_times.size()];
  }
};

struct GradientPacket {
  int worker = 0;  // zero-based in memory; external formats print 1-based
  Vec g;
  std::uint64_t based_on_version = 0;
  std::uint64_t minibatch_id = 0;
  std::uint32_t batch_size = 0;
};

enum class EventKind { PullArrives, GradientArrives };

struct SimEvent {
  double time = 0.0;
  std::uint64_t seq = 0;  // tiebreaker, assigned at scheduling time
  EventKind kind = EventKind::PullArrives;
  int worker = 0;
  GradientPacket packet;  // GradientArrives only

  bool before(const SimEvent& o) const {
    if (time != o.time) return time < o.time;
    return seq < o.seq;
  }
};

struct ServerState {
  ParamVector w;
  std::uint64_t t = 0;  // logical clock: one tick per applied update
  std::vector<ParamVector> w_bak;
  std::vector<bool> w_bak_set;
  LambdaControllerState lambda_state;
  std::vector<std::optional<GradientPacket>> pending_sync;  // SSGD barrier buffer

  void init(int workers, ParamVector w0) {
    w = std::move(w0);
    t = 0;
    w_bak.assign(workers, {});
    w_bak_set.assign(workers, false);
    pending_sync.assign(workers, std::nullopt);
    lambda_state = {};
  }
  int workers() const { return static_cast<int>(w_bak.size()); }
};

inline void check_worker(const ServerState& s, int m) {
  if (m < 0 || m >= s.workers()) throw std::invalid_argument("unknown worker id");
}

// Pull request: back up the current model for this worker and serve it.
// The logical clock does not move.
inline const ParamVector& server_on_pull(ServerState& s, int m) {
  check_worker(s, m);
  s.w_bak[m] = s.w;
  s.w_bak_set[m] = true;
  return s.w;
}

// Barrier flush: average the M buffered gradients and take one step.
inline void ssgd_flush(ServerState& s, double eta) {
  std::uint64_t version = 0;
  bool first = true;
  for (const auto& p : s.pending_sync) {
    if (!p) throw std::runtime_error("protocol violation: flush without all gradients");
    if (first) {
      version = p->based_on_version;
      first = false;
    } else if (p->based_on_version != version) {
      throw std::runtime_error("protocol violation: version mismatch in barrier");
    }
  }
  Vec mean(s.w.size(), 0.0);
  for (const auto& p : s.pending_sync)
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += p->g[i];
  double inv = 1.0 / static_cast<double>(s.pending_sync.size());
  for (double& v : mean) v *= inv;
  s.w = sgd_step(s.w, mean, eta);
  s.t += 1;
  for (auto& p : s.pending_sync) p.reset();
}

// Lambda vector actually used by an update (diagnostics / audit).
struct AppliedUpdate {
  int worker = 0;
  std::uint64_t tau = 0;
  double lambda_mean = 0.0;
};

// Apply one received gradient according to the optimizer kind. For SSGD the
// packet is buffered and the update happens only when the barrier is full
// (returns false until then).
inline bool server_on_gradient(ServerState& s, const GradientPacket& pkt,
                               const OptimizerKind& kind, double eta,
                               AppliedUpdate* applied = nullptr) {
  check_worker(s, pkt.worker);
  if (kind.method == OptimizerMethod::Ssgd) {
    if (s.pending_sync[pkt.worker])
      throw std::runtime_error("protocol violation: duplicate gradient in barrier");
    s.pending_sync[pkt.worker] = pkt;
    for (const auto& p : s.pending_sync)
      if (!p) return false;
    if (applied) *applied = {pkt.worker, 0, 0.0};
    ssgd_flush(s, eta);
    return true;
  }
  if (!s.w_bak_set[pkt.worker])
    throw std::runtime_error("protocol violation: gradient before any pull");
  std::uint64_t tau = s.t - pkt.based_on_version;
  double lambda_mean = 0.0;
  switch (kind.method) {
    case OptimizerMethod::Sequential:
    case OptimizerMethod::Asgd:
      s.w = sgd_step(s.w, pkt.g, eta);
      break;
    case OptimizerMethod::DcAsgdConst:
      s.w = dc_asgd_step(s.w, pkt.g, s.w_bak[pkt.worker], eta, kind.lambda0);
      lambda_mean = kind.lambda0;
      break;
    case OptimizerMethod::DcAsgdAdaptive: {
      Vec lam = adaptive_lambda(s.lambda_state, pkt.g, kind.lambda0, kind.m, kind.epsilon);
      s.w = dc_asgd_step(s.w, pkt.g, s.w_bak[pkt.worker], eta, lam);
      double sum = 0.0;
      for (double v : lam) sum += v;
      lambda_mean = sum / static_cast<double>(lam.size());
      break;
    }
    case OptimizerMethod::Ssgd:
      break;  // handled above
  }
  s.t += 1;
  if (applied) *applied = {pkt.worker, tau, lambda_mean};
  return true;
}

// --- trace / metrics ---------------------------------------------------

struct TraceRecord {
  double time = 0.0;
  char kind = 'g';  // 'p' pull, 'g' gradient applied/buffered, 'f' barrier flush
  int worker = 0;
  std::uint64_t version = 0;   // served (pull) or based-on (grad)
  std::uint64_t server_t = 0;  // logical clock when the event was handled
  std::int64_t tau = -1;       // staleness, grad records only
};
using TraceLog = std::vector<TraceRecord>;

struct MetricsRecord {
  double pass = 0.0;
  double sim_time = 0.0;
  double train_risk = 0.0;
  double eval_error = 0.0;
  double mean_tau = 0.0;
  double max_tau = 0.0;
  double lr = 0.0;
  double lambda_mean = 0.0;
};
using MetricsLog = std::vector<MetricsRecord>;

struct StalenessStats {
  std::vector<std::uint64_t> taus;
  std::map<std::uint64_t, std::uint64_t> histogram;
  double mean = 0.0;
  std::uint64_t max = 0;
};

inline StalenessStats staleness_stats(const TraceLog& trace) {
  StalenessStats st;
  double sum = 0.0;
  for (const TraceRecord& r : trace) {
    if (r.kind != 'g') continue;
    std::uint64_t tau = r.server_t - r.version;
    st.taus.push_back(tau);
    st.histogram[tau] += 1;
    sum += static_cast<double>(tau);
    st.max = std::max(st.max, tau);
  }
  if (!st.taus.empty()) st.mean = sum / static_cast<double>(st.taus.size());
  return st;
}

// --- simulation --------------------------------------------------------

struct SimSetup {
  ModelSpec model;
  OptimizerKind optimizer;
  LrSchedule schedule;
  int workers = 1;
  DelayModel delay;
  int minibatch = 1;
  double epochs = 1.0;  // pass budget
  double eval_every_passes = 1.0;
  double server_overhead = 0.0;
  std::uint64_t seed = 0;
  const Dataset* train = nullptr;
  const Dataset* eval = nullptr;  // may be null: eval_error reported on train
  ParamVector w0;

  void validate() const {
    if (!train || train->size() == 0) throw std::invalid_argument("missing train dataset");
    if (workers < 1) throw std::invalid_argument("workers must be >= 1");
    if (optimizer.method == OptimizerMethod::Sequential && workers != 1)
      throw std::invalid_argument("sequential optimizer requires workers=1");
    if (static_cast<std::size_t>(workers) > train->size())
      throw std::invalid_argument("more workers than samples");
    if (minibatch < 1) throw std::invalid_argument("minibatch must be >= 1");
    if (!(epochs > 0)) throw std::invalid_argument("epochs must be > 0");
    if (!(eval_every_passes > 0))
      throw std::invalid_argument("eval_every must be > 0");
    if (server_overhead < 0) throw std::invalid_argument("server overhead must be >= 0");
    if (model.param_count() != w0.size())
      throw std::invalid_argument("initial parameters do not match model");
    if (train->d != model.d || train->k != model.k)
      throw std::invalid_argument("dataset does not match model");
  }
};

struct WorkerCursor {
  std::uint64_t epoch = 0;  // worker-local epoch (its slice position)
  std::uint64_t pos = 0;    // index into its slice
  ParamVector snapshot;
  std::uint64_t snapshot_version = 0;
};

// Complete mid-run state; serializing this (plus the RNG counters inside)
// is what makes checkpoint/resume bit-exact.
struct SimState {
  ServerState server;
  std::vector<WorkerCursor> workers;
  std::vector<SimEvent> queue;  // <= one outstanding event per worker
  std::vector<RandomSource> compute_rng;
  double clock = 0.0;
  std::uint64_t next_seq = 0;
  std::uint64_t samples_consumed = 0;
  std::uint64_t updates_applied = 0;
  std::uint64_t minibatch_counter = 0;
  // staleness window accumulators since the previous metrics record
  std::uint64_t window_tau_count = 0;
  std::uint64_t window_tau_sum = 0;
  std::uint64_t window_tau_max = 0;
  double last_lambda_mean = 0.0;
  double last_lr = 0.0;
  double last_metrics_pass = -1.0;
  bool diverged = false;
};

struct AuditRecord {
  int worker = 0;
  std::uint64_t based_on_version = 0;
  ParamVector w_before;
  ParamVector w_backup_used;
  Vec gradient;
  double eta = 0.0;
  double lambda0 = 0.0;
};

struct SimOptions {
  // stop after this many applied updates (0 = run to the pass budget)
  std::uint64_t stop_after_updates = 0;
  // called after every applied update with (t, w)
  std::function<void(std::uint64_t, const ParamVector&)> on_update;
  // called at every pull with (worker, served w)
  std::function<void(int, const ParamVector&)> on_pull;
  bool audit = false;  // collect AuditRecords (small runs only)
};

struct SimResult {
  MetricsLog metrics;
  TraceLog trace;
  std::vector<AuditRecord> audits;
  bool diverged = false;
  bool finished = false;  // pass budget reached (vs stopped early)
};

constexpr double kDivergenceRiskLimit = 1e10;

class Simulation {
 public:
  Simulation(const SimSetup& setup, SimState* state, bool resume)
      : setup_(setup), state_(*state) {
    setup_.validate();
    if (!resume) {
      state_.server.init(setup_.workers, setup_.w0);
      state_.workers.assign(setup_.workers, {});
      state_.compute_rng.clear();
      for (int m = 0; m < setup_.workers; ++m)
        state_.compute_rng.push_back(RandomSource::derive(
            setup_.seed, StreamPurpose::ComputeTimes, static_cast<std::uint64_t>(m)));
      state_.last_lr = lr_at(setup_.schedule, 0);
      if (setup_.optimizer.method != OptimizerMethod::Sequential) {
        for (int m = 0; m < setup_.workers; ++m) schedule_initial_pull(m);
      }
    }
  }

  // run until the pass budget, divergence, or options.stop_after_updates
  SimResult run(const SimOptions& options = {}) {
    SimResult result;
    if (setup_.optimizer.method == OptimizerMethod::Sequential)
      run_sequential(options, result);
    else
      run_events(options, result);
    result.diverged = state_.diverged;
    return result;
  }

  MetricsRecord snapshot_metrics() {
    MetricsRecord r;
    r.pass = pass_count();
    r.sim_time = state_.clock;
    r.train_risk = empirical_risk(setup_.train->samples, state_.server.w, setup_.model);
    const Dataset* ev = setup_.eval ? setup_.eval : setup_.train;
    std::size_t wrong = 0;
    for (const DatasetSample& s : ev->samples) {
      Vec p = predict(s.x, state_.server.w, setup_.model);
      if (argmax_class(p) != s.y) ++wrong;
    }
    r.eval_error = static_cast<double>(wrong) / static_cast<double>(ev->size());
    if (state_.window_tau_count > 0) {
      r.mean_tau = static_cast<double>(state_.window_tau_sum) /
                   static_cast<double>(state_.window_tau_count);
      r.max_tau = static_cast<double>(state_.window_tau_max);
    }
    r.lr = state_.last_lr;
    r.lambda_mean = state_.last_lambda_mean;
    return r;
  }

  void mark_metrics_emitted(double pass) { state_.last_metrics_pass = pass; }

  double pass_count() const {
    return static_cast<double>(state_.samples_consumed) /
           static_cast<double>(setup_.train->size());
  }

  const SimState& state() const { return state_; }

 private:
  void schedule_initial_pull(int m) {
    double t0 = 0.0;
    if (setup_.delay.kind == DelayModel::Kind::RoundRobin)
      t0 = static_cast<double>(m) / static_cast<double>(setup_.workers);
    state_.queue.push_back(
        {t0, state_.next_seq++, EventKind::PullArrives, m, {}});
  }

  double compute_duration(int m) {
    switch (setup_.delay.kind) {
      case DelayModel::Kind::RoundRobin:
        return 1.0;
      case DelayModel::Kind::FixedComputeTime:
        return setup_.delay.per_worker(m);
      case DelayModel::Kind::StochasticCompute:
        return state_.compute_rng[m].next_exponential(setup_.delay.per_worker(m));
    }
    return 1.0;
  }

  // next minibatch for worker m: consecutive chunk of its slice, ragged at
  // the slice end; exhausting the slice advances the worker-local epoch
  std::vector<DatasetSample> next_minibatch(int m) {
    const PartitionPlan& plan = plan_for_epoch(state_.workers[m].epoch);
    const auto& slice = plan.assignment[m];
    std::uint64_t pos = state_.workers[m].pos;
    std::uint64_t end = std::min<std::uint64_t>(pos + setup_.minibatch, slice.size());
    std::vector<DatasetSample> batch;
    batch.reserve(end - pos);
    for (std::uint64_t i = pos; i < end; ++i)
      batch.push_back(setup_.train->samples[slice[i]]);
    if (end >= slice.size()) {
      state_.workers[m].pos = 0;
      state_.workers[m].epoch += 1;
    } else {
      state_.workers[m].pos = end;
    }
    return batch;
  }

  const PartitionPlan& plan_for_epoch(std::uint64_t epoch) {
    auto it = plans_.find(epoch);
    if (it == plans_.end()) {
      it = plans_
               .emplace(epoch, repartition(setup_.train->size(), setup_.workers,
                                           static_cast<int>(epoch), setup_.seed))
               .first;
    }
    return it->second;
  }

  int current_lr_epoch() const {
    return static_cast<int>(state_.samples_consumed / setup_.train->size());
  }

  bool budget_reached() const {
    return static_cast<double>(state_.samples_consumed) >=
           setup_.epochs * static_cast<double>(setup_.train->size());
  }

  // emit a metrics record whenever the pass counter crosses a multiple of
  // eval_every_passes
  void maybe_emit_metrics(double pass_before, SimResult& result) {
    double step = setup_.eval_every_passes;
    if (std::floor(pass_count() / step) > std::floor(pass_before / step)) {
      MetricsRecord rec = snapshot_metrics();
      if (!std::isfinite(rec.train_risk) || rec.train_risk > kDivergenceRiskLimit)
        state_.diverged = true;
      result.metrics.push_back(rec);
      state_.last_metrics_pass = pass_count();
      state_.window_tau_count = 0;
      state_.window_tau_sum = 0;
      state_.window_tau_max = 0;
    }
  }

  void note_divergence_check() {
    if (!all_finite(state_.server.w)) state_.diverged = true;
  }

  void apply_gradient_event(const SimEvent& ev, const SimOptions& options,
                            SimResult& result) {
    double pass_before = pass_count();
    state_.last_lr = lr_at(setup_.schedule, current_lr_epoch());
    AppliedUpdate applied;
    if (options.audit && setup_.optimizer.delay_compensated()) {
      AuditRecord a;
      a.worker = ev.worker;
      a.based_on_version = ev.packet.based_on_version;
      a.w_before = state_.server.w;
      a.w_backup_used = state_.server.w_bak[ev.worker];
      a.gradient = ev.packet.g;
      a.eta = state_.last_lr;
      a.lambda0 = setup_.optimizer.lambda0;
      result.audits.push_back(std::move(a));
    }
    bool updated =
        server_on_gradient(state_.server, ev.packet, setup_.optimizer, state_.last_lr,
                           &applied);
    state_.samples_consumed += ev.packet.batch_size;
    result.trace.push_back({state_.clock, 'g', ev.worker, ev.packet.based_on_version,
                            updated ? state_.server.t - 1 : state_.server.t,
                            static_cast<std::int64_t>(
                                (updated ? state_.server.t - 1 : state_.server.t) -
                                ev.packet.based_on_version)});
    if (updated) {
      state_.updates_applied += 1;
      state_.last_lambda_mean = applied.lambda_mean;
      if (setup_.optimizer.method != OptimizerMethod::Ssgd) {
        state_.window_tau_count += 1;
        state_.window_tau_sum += applied.tau;
        state_.window_tau_max = std::max(state_.window_tau_max, applied.tau);
      } else {
        result.trace.push_back({state_.clock, 'f', -1, ev.packet.based_on_version,
                                state_.server.t - 1, 0});
        state_.window_tau_count += 1;  // barrier step has zero staleness
      }
      note_divergence_check();
      if (options.on_update) options.on_update(state_.server.t, state_.server.w);
    }
    maybe_emit_metrics(pass_before, result);
  }

  void handle_pull(const SimEvent& ev, const SimOptions& options, SimResult& result) {
    int m = ev.worker;
    const ParamVector& served = server_on_pull(state_.server, m);
    if (options.on_pull) options.on_pull(m, served);
    state_.workers[m].snapshot = served;
    state_.workers[m].snapshot_version = state_.server.t;
    result.trace.push_back({state_.clock, 'p', m, state_.server.t, state_.server.t, -1});
    std::vector<DatasetSample> batch = next_minibatch(m);
    GradientPacket pkt;
    pkt.worker = m;
    pkt.based_on_version = state_.workers[m].snapshot_version;
    pkt.minibatch_id = state_.minibatch_counter++;
    pkt.batch_size = static_cast<std::uint32_t>(batch.size());
    pkt.g = batch_gradient(batch, state_.workers[m].snapshot, setup_.model);
    state_.queue.push_back({state_.clock + compute_duration(m), state_.next_seq++,
                            EventKind::GradientArrives, m, std::move(pkt)});
  }

  void run_events(const SimOptions& options, SimResult& result) {
    while (!state_.diverged && !budget_reached()) {
      if (options.stop_after_updates > 0 &&
          state_.updates_applied >= options.stop_after_updates)
        return;  // checkpoint stop, queue retained
      if (state_.queue.empty()) throw std::logic_error("event queue drained");
      auto it = std::min_element(
          state_.queue.begin(), state_.queue.end(),
          [](const SimEvent& a, const SimEvent& b) { return a.before(b); });
      SimEvent ev = std::move(*it);
      state_.queue.erase(it);
      state_.clock = ev.time;
      if (ev.kind == EventKind::PullArrives) {
        handle_pull(ev, options, result);
      } else {
        bool was_ssgd_flush = false;
        apply_gradient_event(ev, options, result);
        if (setup_.optimizer.method == OptimizerMethod::Ssgd) {
          // after a barrier flush every worker pulls again; before it, the
          // pushing worker just waits
          bool barrier_empty = true;
          for (const auto& p : state_.server.pending_sync)
            if (p) barrier_empty = false;
          was_ssgd_flush = barrier_empty;
          if (was_ssgd_flush) {
            for (int m = 0; m < setup_.workers; ++m)
              state_.queue.push_back({state_.clock + setup_.server_overhead,
                                      state_.next_seq++, EventKind::PullArrives, m, {}});
          }
        } else {
          state_.queue.push_back({state_.clock + setup_.server_overhead,
                                  state_.next_seq++, EventKind::PullArrives, ev.worker,
                                  {}});
        }
      }
    }
    result.finished = !state_.diverged;
  }

  // sequential SGD shares the data pipeline (M = 1 cursors) but applies each
  // gradient as soon as it is computed
  void run_sequential(const SimOptions& options, SimResult& result) {
    while (!state_.diverged && !budget_reached()) {
      if (options.stop_after_updates > 0 &&
          state_.updates_applied >= options.stop_after_updates)
        return;
      double pass_before = pass_count();
      std::vector<DatasetSample> batch = next_minibatch(0);
      state_.last_lr = lr_at(setup_.schedule, current_lr_epoch());
      Vec g = batch_gradient(batch, state_.server.w, setup_.model);
      state_.server.w = sgd_step(state_.server.w, g, state_.last_lr);
      state_.server.t += 1;
      state_.updates_applied += 1;
      state_.samples_consumed += batch.size();
      state_.clock += compute_duration(0);
      result.trace.push_back({state_.clock, 'g', 0, state_.server.t - 1,
                              state_.server.t - 1, 0});
      state_.window_tau_count += 1;
      note_divergence_check();
      if (options.on_update) options.on_update(state_.server.t, state_.server.w);
      maybe_emit_metrics(pass_before, result);
    }
    result.finished = !state_.diverged;
  }

  SimSetup setup_;
  SimState& state_;
  std::map<std::uint64_t, PartitionPlan> plans_;
};

// One-shot run with fresh state.
inline SimResult run_simulation(const SimSetup& setup, const SimOptions& options = {},
                                SimState* state_out = nullptr) {
  SimState state;
  Simulation sim(setup, &state, false);
  SimResult result = sim.run(options);
  if (state_out) *state_out = std::move(state);
  return result;
}

}  // namespace dcsgd
