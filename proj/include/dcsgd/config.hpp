#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcsgd/cluster_sim.hpp"
#include "dcsgd/data.hpp"

namespace dcsgd {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& field, const std::string& what)
      : std::runtime_error(field + ": " + what) {}
};

// Flat key=value experiment description; see write() for the canonical key
// set. Lines starting with '#' are comments.
struct ExperimentConfig {
  std::string model_kind = "softmax";  // softmax | mlp
  int model_d = 10;
  int model_hidden = 16;  // mlp only
  int model_k = 3;

  std::string optimizer_kind = "sequential";  // sequential|asgd|ssgd|dc-asgd-c|dc-asgd-a
  double lambda0 = 0.04;
  double momentum_m = 0.95;  // MeanSquare decay for dc-asgd-a
  double epsilon = 1e-7;

  double eta0 = 0.1;
  std::vector<int> decay_epochs;

  int workers = 1;
  std::string delay = "round-robin";  // round-robin | fixed:a,b,... | stochastic:a,b,...
  double server_overhead = 0.0;

  std::string data_kind = "synthetic";  // synthetic | csv
  std::uint64_t data_samples = 1000;
  std::uint64_t eval_samples = 1000;
  double feature_scale = 1.0;
  double wstar_scale = 1.0;
  double init_scale = 0.0;
  std::string data_path;
  std::string eval_path;

  int minibatch = 16;
  double epochs = 5.0;
  double eval_every = 1.0;

  std::uint64_t seed = 42;
  std::string output_dir = "out";

  static ExperimentConfig parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  static ExperimentConfig parse(const std::string& text) {
    ExperimentConfig c;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
      ++lineno;
      std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      auto eq = t.find('=');
      if (eq == std::string::npos)
        throw ConfigError("line " + std::to_string(lineno), "expected key=value");
      c.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return c;
  }

  void set(const std::string& key, const std::string& value) {
    if (key == "model.kind") model_kind = value;
    else if (key == "model.d") model_d = to_int(key, value);
    else if (key == "model.hidden") model_hidden = to_int(key, value);
    else if (key == "model.k") model_k = to_int(key, value);
    else if (key == "optimizer.kind") optimizer_kind = value;
    else if (key == "optimizer.lambda0") lambda0 = to_double(key, value);
    else if (key == "optimizer.m") momentum_m = to_double(key, value);
    else if (key == "optimizer.epsilon") epsilon = to_double(key, value);
    else if (key == "schedule.eta0") eta0 = to_double(key, value);
    else if (key == "schedule.decay_epochs") decay_epochs = to_int_list(key, value);
    else if (key == "cluster.workers") workers = to_int(key, value);
    else if (key == "cluster.delay") delay = value;
    else if (key == "cluster.server_overhead") server_overhead = to_double(key, value);
    else if (key == "data.kind") data_kind = value;
    else if (key == "data.samples") data_samples = to_u64(key, value);
    else if (key == "data.eval_samples") eval_samples = to_u64(key, value);
    else if (key == "data.feature_scale") feature_scale = to_double(key, value);
    else if (key == "data.wstar_scale") wstar_scale = to_double(key, value);
    else if (key == "data.init_scale") init_scale = to_double(key, value);
    else if (key == "data.path") data_path = value;
    else if (key == "data.eval_path") eval_path = value;
    else if (key == "train.minibatch") minibatch = to_int(key, value);
    else if (key == "train.epochs") epochs = to_double(key, value);
    else if (key == "train.eval_every") eval_every = to_double(key, value);
    else if (key == "seed") seed = to_u64(key, value);
    else if (key == "output_dir") output_dir = value;
    else throw ConfigError(key, "unknown key");
  }

  void validate() const {
    if (model_kind != "softmax" && model_kind != "mlp")
      throw ConfigError("model.kind", "must be softmax or mlp");
    if (model_d < 1) throw ConfigError("model.d", "must be >= 1");
    if (model_k < 1) throw ConfigError("model.k", "must be >= 1");
    if (model_kind == "mlp" && model_hidden < 1)
      throw ConfigError("model.hidden", "must be >= 1");
    if (optimizer_kind != "sequential" && optimizer_kind != "asgd" &&
        optimizer_kind != "ssgd" && optimizer_kind != "dc-asgd-c" &&
        optimizer_kind != "dc-asgd-a")
      throw ConfigError("optimizer.kind",
                        "must be sequential, asgd, ssgd, dc-asgd-c or dc-asgd-a");
    if (lambda0 < 0) throw ConfigError("optimizer.lambda0", "must be >= 0");
    if (momentum_m < 0 || momentum_m >= 1) throw ConfigError("optimizer.m", "must be in [0,1)");
    if (epsilon <= 0) throw ConfigError("optimizer.epsilon", "must be > 0");
    if (eta0 <= 0) throw ConfigError("schedule.eta0", "must be > 0");
    for (std::size_t i = 1; i < decay_epochs.size(); ++i)
      if (decay_epochs[i] <= decay_epochs[i - 1])
        throw ConfigError("schedule.decay_epochs", "must be strictly increasing");
    if (workers < 1) throw ConfigError("cluster.workers", "must be >= 1");
    if (server_overhead < 0) throw ConfigError("cluster.server_overhead", "must be >= 0");
    if (data_kind != "synthetic" && data_kind != "csv")
      throw ConfigError("data.kind", "must be synthetic or csv");
    if (data_kind == "synthetic" && data_samples < 1)
      throw ConfigError("data.samples", "must be >= 1");
    if (data_kind == "csv" && data_path.empty())
      throw ConfigError("data.path", "required for data.kind=csv");
    if (minibatch < 1) throw ConfigError("train.minibatch", "must be >= 1");
    if (!(epochs > 0)) throw ConfigError("train.epochs", "must be > 0");
    if (!(eval_every > 0)) throw ConfigError("train.eval_every", "must be > 0");
    parse_delay();  // throws on malformed delay strings
  }

  DelayModel parse_delay() const {
    if (delay == "round-robin") return DelayModel::round_robin();
    auto colon = delay.find(':');
    if (colon != std::string::npos) {
      std::string head = delay.substr(0, colon);
      std::vector<double> vals;
      std::stringstream ss(delay.substr(colon + 1));
      std::string cell;
      while (std::getline(ss, cell, ',')) vals.push_back(to_double("cluster.delay", cell));
      if (vals.empty()) throw ConfigError("cluster.delay", "needs at least one time");
      for (double v : vals)
        if (!(v > 0)) throw ConfigError("cluster.delay", "times must be > 0");
      if (head == "fixed") return DelayModel::fixed(vals);
      if (head == "stochastic") return DelayModel::stochastic(vals);
    }
    throw ConfigError("cluster.delay",
                      "must be round-robin, fixed:<times> or stochastic:<means>");
  }

  ModelSpec model_spec() const {
    return model_kind == "softmax" ? ModelSpec::softmax_regression(model_d, model_k)
                                   : ModelSpec::mlp(model_d, model_hidden, model_k);
  }

  OptimizerKind optimizer() const {
    if (optimizer_kind == "sequential") return OptimizerKind::sequential();
    if (optimizer_kind == "asgd") return OptimizerKind::asgd();
    if (optimizer_kind == "ssgd") return OptimizerKind::ssgd();
    if (optimizer_kind == "dc-asgd-c") return OptimizerKind::dc_asgd_const(lambda0);
    return OptimizerKind::dc_asgd_adaptive(lambda0, momentum_m, epsilon);
  }

  LrSchedule schedule() const { return {eta0, decay_epochs, 10.0}; }

  // canonical echo: fixed key order, numeric formatting %.17g
  std::string write() const {
    std::string out;
    auto add = [&](const std::string& k, const std::string& v) {
      out += k;
      out += '=';
      out += v;
      out += '\n';
    };
    add("model.kind", model_kind);
    add("model.d", std::to_string(model_d));
    add("model.hidden", std::to_string(model_hidden));
    add("model.k", std::to_string(model_k));
    add("optimizer.kind", optimizer_kind);
    add("optimizer.lambda0", fmt(lambda0));
    add("optimizer.m", fmt(momentum_m));
    add("optimizer.epsilon", fmt(epsilon));
    add("schedule.eta0", fmt(eta0));
    std::string epochs_str;
    for (std::size_t i = 0; i < decay_epochs.size(); ++i) {
      if (i) epochs_str += ',';
      epochs_str += std::to_string(decay_epochs[i]);
    }
    add("schedule.decay_epochs", epochs_str);
    add("cluster.workers", std::to_string(workers));
    add("cluster.delay", delay);
    add("cluster.server_overhead", fmt(server_overhead));
    add("data.kind", data_kind);
    add("data.samples", std::to_string(data_samples));
    add("data.eval_samples", std::to_string(eval_samples));
    add("data.feature_scale", fmt(feature_scale));
    add("data.wstar_scale", fmt(wstar_scale));
    add("data.init_scale", fmt(init_scale));
    add("data.path", data_path);
    add("data.eval_path", eval_path);
    add("train.minibatch", std::to_string(minibatch));
    add("train.epochs", fmt(epochs));
    add("train.eval_every", fmt(eval_every));
    add("seed", std::to_string(seed));
    add("output_dir", output_dir);
    return out;
  }

  // output_dir does not influence the simulation, so it is excluded: the
  // same experiment checkpointed under different directories stays resumable
  std::uint64_t hash() const {
    ExperimentConfig c = *this;
    c.output_dir = "";
    std::string echo = c.write();
    return fnv1a(echo.data(), echo.size());
  }

  bool operator==(const ExperimentConfig& o) const { return write() == o.write(); }

 private:
  static std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }
  static std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
  }
  static int to_int(const std::string& key, const std::string& v) {
    try {
      std::size_t used = 0;
      int x = std::stoi(v, &used);
      if (used != v.size()) throw std::invalid_argument("trailing junk");
      return x;
    } catch (const std::exception&) {
      throw ConfigError(key, "not an integer: '" + v + "'");
    }
  }
  static std::uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
      std::size_t used = 0;
      unsigned long long x = std::stoull(v, &used);
      if (used != v.size()) throw std::invalid_argument("trailing junk");
      return x;
    } catch (const std::exception&) {
      throw ConfigError(key, "not a non-negative integer: '" + v + "'");
    }
  }
  static double to_double(const std::string& key, const std::string& v) {
    try {
      std::size_t used = 0;
      double x = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument("trailing junk");
      return x;
    } catch (const std::exception&) {
      throw ConfigError(key, "not a number: '" + v + "'");
    }
  }
  static std::vector<int> to_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    if (trim(v).empty()) return out;
    std::stringstream ss(v);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(to_int(key, trim(cell)));
    return out;
  }
};

}  // namespace dcsgd
