#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcsgd/model.hpp"
#include "dcsgd/rng.hpp"

namespace dcsgd {

enum class DatasetProvenance { Synthetic, LoadedCsv };

// Immutable after construction; safe to share across actors.
struct Dataset {
  std::vector<DatasetSample> samples;
  int d = 0;
  int k = 0;
  DatasetProvenance provenance = DatasetProvenance::Synthetic;
  ParamVector w_star;       // planted parameter, synthetic only
  std::string source_path;  // csv only
  std::uint64_t checksum = 0;

  std::size_t size() const { return samples.size(); }
};

enum class SyntheticSplit { Train, Eval };

// x ~ N(0, feature_scale^2 I), y ~ sigma(x; w_star). Features and labels
// come from separate substreams so resizing one never reshuffles the other.
inline Dataset generate_synthetic(int d, int k, std::size_t s, const ParamVector& w_star,
                                  double feature_scale, std::uint64_t seed,
                                  SyntheticSplit split = SyntheticSplit::Train) {
  if (s < 1) throw std::invalid_argument("need at least one sample");
  ModelSpec spec = ModelSpec::softmax_regression(d, k);
  check_params(w_star, spec);
  bool eval = split == SyntheticSplit::Eval;
  RandomSource feat = RandomSource::derive(
      seed, eval ? StreamPurpose::EvalFeatures : StreamPurpose::Features);
  RandomSource lab = RandomSource::derive(
      seed, eval ? StreamPurpose::EvalLabels : StreamPurpose::Labels);
  Dataset ds;
  ds.d = d;
  ds.k = k;
  ds.provenance = DatasetProvenance::Synthetic;
  ds.w_star = w_star;
  ds.samples.reserve(s);
  for (std::size_t i = 0; i < s; ++i) {
    Vec x(d);
    for (double& v : x) v = feature_scale * feat.next_gaussian();
    int y = sample_label(x, w_star, spec, lab);
    ds.samples.push_back({std::move(x), y});
  }
  return ds;
}

inline std::uint64_t fnv1a(const char* data, std::size_t n,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t file_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
    h = fnv1a(buf, static_cast<std::size_t>(in.gcount()), h);
  return h;
}

// CSV rows: d feature columns then a one-based integer label. An optional
// single header line is skipped.
inline Dataset load_csv(const std::string& path, int k) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  Dataset ds;
  ds.k = k;
  ds.provenance = DatasetProvenance::LoadedCsv;
  ds.source_path = path;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<std::string> cells;
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 2) {
      if (row == 1) continue;  // header
      throw std::runtime_error("malformed row " + std::to_string(row) +
                               ": need at least 2 columns");
    }
    std::vector<double> vals;
    bool numeric = true;
    for (const std::string& c : cells) {
      try {
        std::size_t used = 0;
        vals.push_back(std::stod(c, &used));
        if (used != c.size()) numeric = false;
      } catch (const std::exception&) {
        numeric = false;
        break;
      }
    }
    if (!numeric) {
      if (row == 1) continue;  // header
      throw std::runtime_error("malformed row " + std::to_string(row) +
                               ": non-numeric cell");
    }
    int d = static_cast<int>(vals.size()) - 1;
    if (ds.d == 0)
      ds.d = d;
    else if (d != ds.d)
      throw std::runtime_error("malformed row " + std::to_string(row) +
                               ": expected " + std::to_string(ds.d + 1) + " columns");
    double raw_label = vals.back();
    int label = static_cast<int>(raw_label);
    if (label != raw_label || label < 1 || label > k)
      throw std::runtime_error("label out of range [1," + std::to_string(k) +
                               "] at row " + std::to_string(row));
    Vec x(vals.begin(), vals.end() - 1);
    if (!all_finite(x))
      throw std::runtime_error("non-finite feature at row " + std::to_string(row));
    ds.samples.push_back({std::move(x), label - 1});
  }
  if (ds.samples.empty()) throw std::runtime_error("no samples in " + path);
  ds.checksum = file_checksum(path);
  return ds;
}

inline void save_csv(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  char buf[64];
  for (const DatasetSample& s : ds.samples) {
    std::string line;
    for (double v : s.x) {
      std::snprintf(buf, sizeof(buf), "%.17g,", v);
      line += buf;
    }
    line += std::to_string(s.y + 1);
    out << line << "\n";
  }
}

struct PartitionPlan {
  int epoch = 0;
  std::vector<std::vector<std::uint32_t>> assignment;  // worker -> sample indices
};

// Seeded permutation split into near-equal contiguous chunks; each epoch
// draws an independent permutation from its own substream.
inline PartitionPlan repartition(std::size_t dataset_size, int workers, int epoch,
                                 std::uint64_t seed) {
  if (workers < 1) throw std::invalid_argument("need at least one worker");
  if (static_cast<std::size_t>(workers) > dataset_size)
    throw std::invalid_argument("more workers than samples");
  std::vector<std::uint32_t> perm(dataset_size);
  for (std::size_t i = 0; i < dataset_size; ++i) perm[i] = static_cast<std::uint32_t>(i);
  RandomSource rng = RandomSource::derive(seed, StreamPurpose::Partition,
                                          static_cast<std::uint64_t>(epoch));
  for (std::size_t i = dataset_size - 1; i > 0; --i) {
    std::size_t j = rng.next_below(i + 1);
    std::swap(perm[i], perm[j]);
  }
  PartitionPlan plan;
  plan.epoch = epoch;
  plan.assignment.resize(workers);
  std::size_t base = dataset_size / workers;
  std::size_t extra = dataset_size % workers;
  std::size_t pos = 0;
  for (int m = 0; m < workers; ++m) {
    std::size_t len = base + (static_cast<std::size_t>(m) < extra ? 1 : 0);
    plan.assignment[m].assign(perm.begin() + pos, perm.begin() + pos + len);
    pos += len;
  }
  return plan;
}

}  // namespace dcsgd
