#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "spikegest/alloc_hook.hpp"
#include "spikegest/attention.hpp"
#include "spikegest/model.hpp"

namespace spikegest::bench {

// The harness is strictly single-threaded; raising this elsewhere makes every
// benchmark entry point refuse to run.
inline int& worker_count() {
  static int workers = 1;
  return workers;
}

inline void require_single_thread() {
  if (worker_count() > 1)
    throw std::logic_error("bench: refusing to run with more than one active worker");
}

enum class Impl { sja_channelwise, sja_elementwise, dense };

inline const char* to_string(Impl i) {
  switch (i) {
    case Impl::sja_channelwise: return "sja_channelwise";
    case Impl::sja_elementwise: return "sja_elementwise";
    case Impl::dense: return "dense";
  }
  return "?";
}

inline Impl impl_from_string(const std::string& s) {
  if (s == "sja_channelwise") return Impl::sja_channelwise;
  if (s == "sja_elementwise") return Impl::sja_elementwise;
  if (s == "dense") return Impl::dense;
  throw std::invalid_argument("unknown bench impl: " + s);
}

struct BenchRecord {
  Impl impl_id = Impl::sja_channelwise;
  int seq_len = 0;
  double density = 0.0;
  int reps = 0;
  int64_t median_ns = 0;
  int64_t p10_ns = 0;
  int64_t p90_ns = 0;
  int64_t peak_bytes = 0;
};

namespace detail {

// Pseudo-data on twelve channels, matching the paper's benchmark setup.
constexpr int kBenchChannels = 12;

// Sparse inputs are prebuilt outside the timed region: a spiking pipeline
// hands its attention stage index lists, so building them is data
// generation, not attention work.
struct SparseInput {
  int steps = 0;
  std::vector<int64_t> q_flat, k_flat, v_flat;
  std::vector<std::vector<int64_t>> q_cols, k_cols, v_cols;  // per channel
};

inline SparseInput make_sparse_input(int seq_len, double density, uint64_t seed) {
  SparseInput in;
  in.steps = seq_len;
  in.q_cols.resize(kBenchChannels);
  in.k_cols.resize(kBenchChannels);
  in.v_cols.resize(kBenchChannels);
  Rng rng(seed);
  for (int t = 0; t < seq_len; ++t)
    for (int c = 0; c < kBenchChannels; ++c) {
      int64_t flat = static_cast<int64_t>(t) * kBenchChannels + c;
      if (rng.uniform() < density) {
        in.q_flat.push_back(flat);
        in.q_cols[static_cast<size_t>(c)].push_back(t);
      }
      if (rng.uniform() < density) {
        in.k_flat.push_back(flat);
        in.k_cols[static_cast<size_t>(c)].push_back(t);
      }
      if (rng.uniform() < density) {
        in.v_flat.push_back(flat);
        in.v_cols[static_cast<size_t>(c)].push_back(t);
      }
    }
  return in;
}

struct DenseInput {
  Mat q, k, v;
};

inline DenseInput make_dense_input(int seq_len, uint64_t seed) {
  DenseInput in{Mat(seq_len, kBenchChannels), Mat(seq_len, kBenchChannels),
                Mat(seq_len, kBenchChannels)};
  Rng rng(seed);
  for (double& x : in.q.v) x = rng.uniform();
  for (double& x : in.k.v) x = rng.uniform();
  for (double& x : in.v.v) x = rng.uniform();
  return in;
}

inline void do_not_optimize(const void* p) { asm volatile("" : : "g"(p) : "memory"); }
inline void do_not_optimize(double v) { asm volatile("" : : "x"(v) : "memory"); }

// One channel-wise SJA application: the global weight plus the scaled value
// train in sparse form (index list + shared scalar). O(nonzeros).
inline double run_sja_channelwise(const SparseInput& in) {
  double w = jaccard_sorted(in.q_flat, in.k_flat, kJaccardEps);
  std::vector<int64_t> out(in.v_flat);
  do_not_optimize(out.data());
  do_not_optimize(w);
  return w;
}

// Element-wise variant over per-channel time columns, still O(nonzeros).
inline double run_sja_elementwise(const SparseInput& in) {
  double acc = 0.0;
  for (int c = 0; c < kBenchChannels; ++c) {
    double w = jaccard_sorted(in.q_cols[static_cast<size_t>(c)],
                              in.k_cols[static_cast<size_t>(c)], kJaccardEps);
    std::vector<int64_t> out(in.v_cols[static_cast<size_t>(c)]);
    do_not_optimize(out.data());
    acc += w;
  }
  do_not_optimize(acc);
  return acc;
}

inline double run_dense(const DenseInput& in) {
  Mat out = dense_attention(in.q, in.k, in.v);
  do_not_optimize(out.v.data());
  return out.at(0, 0);
}

}  // namespace detail

// Times one attention implementation on seeded pseudo-data. Five warm-up
// calls are discarded; each rep batches enough inner calls to outlast timer
// noise and reports the per-call wall time.
inline BenchRecord time_attention(Impl impl_id, int seq_len, double density, int reps,
                                  uint64_t seed) {
  require_single_thread();
  if (reps < 3) throw std::invalid_argument("time_attention: reps must be >= 3");
  if (density < 0.0 || density > 1.0)
    throw std::invalid_argument("time_attention: density must be in [0,1]");
  if (seq_len < 1) throw std::invalid_argument("time_attention: seq_len must be >= 1");
  if (!alloc_hook::installed())
    throw std::logic_error("time_attention: allocation hook is not installed in this binary");

  detail::SparseInput sparse;
  detail::DenseInput dense;
  if (impl_id == Impl::dense)
    dense = detail::make_dense_input(seq_len, seed);
  else
    sparse = detail::make_sparse_input(seq_len, density, seed);

  auto run_once = [&] {
    switch (impl_id) {
      case Impl::sja_channelwise: return detail::run_sja_channelwise(sparse);
      case Impl::sja_elementwise: return detail::run_sja_elementwise(sparse);
      case Impl::dense: return detail::run_dense(dense);
    }
    return 0.0;
  };

  for (int i = 0; i < 5; ++i) run_once();

  // Calibrate the inner batch so one rep spans at least ~200us.
  using clock = std::chrono::steady_clock;
  int64_t inner = 1;
  {
    auto t0 = clock::now();
    run_once();
    auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(clock::now() - t0).count();
    if (ns < 200000) inner = std::min<int64_t>(1 + 200000 / std::max<int64_t>(1, ns), 1000000);
  }

  std::vector<int64_t> per_call(static_cast<size_t>(reps));
  int64_t peak = 0;
  for (int r = 0; r < reps; ++r) {
    size_t baseline = alloc_hook::live_bytes();
    alloc_hook::reset_peak();
    auto t0 = clock::now();
    for (int64_t i = 0; i < inner; ++i) run_once();
    auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(clock::now() - t0).count();
    per_call[static_cast<size_t>(r)] = ns / inner;
    peak = std::max<int64_t>(peak, static_cast<int64_t>(alloc_hook::peak_above_baseline(baseline)));
  }
  std::sort(per_call.begin(), per_call.end());

  BenchRecord rec;
  rec.impl_id = impl_id;
  rec.seq_len = seq_len;
  rec.density = density;
  rec.reps = reps;
  rec.median_ns = per_call[per_call.size() / 2];
  rec.p10_ns = per_call[static_cast<size_t>(0.1 * (reps - 1))];
  rec.p90_ns = per_call[static_cast<size_t>(0.9 * (reps - 1))];
  rec.peak_bytes = peak;
  return rec;
}

// Least-squares slope of ln(median_ns) over ln(seq_len).
inline double fit_loglog_slope(std::span<const std::pair<double, double>> points) {
  if (points.size() < 2) throw std::invalid_argument("slope fit: need at least 2 points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (auto& [x, y] : points) {
    double lx = std::log(x), ly = std::log(y);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  double n = static_cast<double>(points.size());
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

struct ScalingSummary {
  Impl impl_id;
  double slope = 0.0;
  int points = 0;
};

struct ScalingReport {
  std::vector<ScalingSummary> summaries;
  std::string csv;
  std::string text;
};

inline std::string bench_records_csv(std::span<const BenchRecord> records) {
  std::ostringstream os;
  os << "impl_id,seq_len,density,reps,median_ns,p10_ns,p90_ns,peak_bytes\n";
  for (const BenchRecord& r : records) {
    char density[32];
    std::snprintf(density, sizeof density, "%.6g", r.density);
    os << to_string(r.impl_id) << ',' << r.seq_len << ',' << density << ',' << r.reps << ','
       << r.median_ns << ',' << r.p10_ns << ',' << r.p90_ns << ',' << r.peak_bytes << '\n';
  }
  return os.str();
}

inline std::vector<BenchRecord> parse_bench_csv(const std::string& csv) {
  std::istringstream is(csv);
  std::string line;
  if (!std::getline(is, line) || line.rfind("impl_id,", 0) != 0)
    throw std::invalid_argument("bench csv: missing header");
  std::vector<BenchRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string field;
    BenchRecord r;
    std::getline(row, field, ',');
    r.impl_id = impl_from_string(field);
    std::getline(row, field, ',');
    r.seq_len = std::stoi(field);
    std::getline(row, field, ',');
    r.density = std::stod(field);
    std::getline(row, field, ',');
    r.reps = std::stoi(field);
    std::getline(row, field, ',');
    r.median_ns = std::stoll(field);
    std::getline(row, field, ',');
    r.p10_ns = std::stoll(field);
    std::getline(row, field, ',');
    r.p90_ns = std::stoll(field);
    if (!std::getline(row, field, ',')) throw std::invalid_argument("bench csv: truncated row");
    r.peak_bytes = std::stoll(field);
    out.push_back(r);
  }
  return out;
}

// Per-implementation log-log runtime slope over sequence length, plus the CSV
// of the raw records and a plain-text summary.
inline ScalingReport scaling_report(std::span<const BenchRecord> records) {
  ScalingReport report;
  report.csv = bench_records_csv(records);
  std::ostringstream text;
  for (Impl impl : {Impl::sja_channelwise, Impl::sja_elementwise, Impl::dense}) {
    std::vector<std::pair<double, double>> pts;
    for (const BenchRecord& r : records)
      if (r.impl_id == impl)
        pts.emplace_back(static_cast<double>(r.seq_len), static_cast<double>(r.median_ns));
    if (pts.empty()) continue;
    if (pts.size() < 4)
      throw std::invalid_argument(std::string("scaling_report: need >= 4 lengths for ") +
                                  to_string(impl));
    ScalingSummary s;
    s.impl_id = impl;
    s.points = static_cast<int>(pts.size());
    s.slope = fit_loglog_slope(pts);
    report.summaries.push_back(s);
    text << to_string(impl) << ": fitted log-log slope " << s.slope << " over " << s.points
         << " points\n";
  }
  if (report.summaries.empty()) throw std::invalid_argument("scaling_report: no records");
  report.text = text.str();
  return report;
}

// Median end-to-end single-window inference time, single-threaded. The
// prediction must not change across reps.
inline int64_t latency_probe(const JasnnModel& model, const GestureSample& sample, int reps) {
  require_single_thread();
  if (reps < 10) throw std::invalid_argument("latency_probe: reps must be >= 10");
  using clock = std::chrono::steady_clock;
  int first_prediction = jasnn_forward(model, sample).prediction;  // warm-up
  std::vector<int64_t> times(static_cast<size_t>(reps));
  for (int r = 0; r < reps; ++r) {
    auto t0 = clock::now();
    ForwardResult fr = jasnn_forward(model, sample);
    int pred = predict(fr.trace);
    auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(clock::now() - t0).count();
    if (pred != first_prediction) throw std::logic_error("latency_probe: prediction changed");
    times[static_cast<size_t>(r)] = ns;
  }
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

}  // namespace spikegest::bench
