#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "coreselect/baselines.hpp"
#include "coreselect/classifier.hpp"
#include "coreselect/data.hpp"
#include "coreselect/error.hpp"
#include "coreselect/scoring.hpp"

namespace coreselect {

struct RunRecord {
  std::size_t run = 0;
  std::uint64_t seed = 0;
  double test_accuracy = 0.0;
  double runtime_seconds = 0.0;
};

struct EvalReport {
  std::string method;
  std::size_t subset_size = 0;
  std::size_t stride = 0;
  std::vector<RunRecord> runs;
  double test_accuracy_mean = 0.0;
  double test_accuracy_std = 0.0;  // sample standard deviation (0 for one run)
  double runtime_seconds = 0.0;
};

inline EvalReport make_report(std::string method, std::size_t subset_size, std::size_t stride) {
  EvalReport r;
  r.method = std::move(method);
  r.subset_size = subset_size;
  r.stride = stride;
  return r;
}

inline double mean_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double sample_std(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

inline void finalize(EvalReport& report) {
  std::vector<double> acc;
  report.runtime_seconds = 0.0;
  for (const auto& r : report.runs) {
    acc.push_back(r.test_accuracy);
    report.runtime_seconds += r.runtime_seconds;
  }
  report.test_accuracy_mean = mean_of(acc);
  report.test_accuracy_std = sample_std(acc);
}

inline RunRecord timed_run(std::size_t run, std::uint64_t seed, const Dataset& train,
                           std::span<const std::size_t> subset, const Dataset& test,
                           std::span<const std::size_t> test_indices, const ClassifierConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = train_classifier(train, subset, test, test_indices, cfg, seed);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {run, seed, res.test_accuracy, secs};
}

inline std::uint64_t run_seed(std::uint64_t base_seed, std::size_t run) { return base_seed + run; }

// For each stride s trains `runs` classifiers on A[s : s+L]; the final report
// is the random baseline at equal L with the same classifier seeds and a
// fresh random subset per run.
inline std::vector<EvalReport> stride_experiment(const CoresetRanking& ranking, const Dataset& train,
                                                 const Dataset& test, std::size_t subset_size,
                                                 std::span<const std::size_t> strides, std::size_t runs,
                                                 const ClassifierConfig& cfg, std::uint64_t base_seed) {
  if (runs == 0) throw ConfigError("runs must be >= 1");
  for (auto s : strides) select(ranking, subset_size, s);  // bounds check before any training
  std::vector<EvalReport> out;
  for (auto s : strides) {
    auto rep = make_report("coreset", subset_size, s);
    const auto subset = select(ranking, subset_size, s);
    for (std::size_t r = 0; r < runs; ++r)
      rep.runs.push_back(timed_run(r, run_seed(base_seed, r), train, subset, test, {}, cfg));
    finalize(rep);
    out.push_back(std::move(rep));
  }
  auto rnd = make_report("random", subset_size, 0);
  for (std::size_t r = 0; r < runs; ++r) {
    const auto subset = random_subset(train.size(), subset_size, run_seed(base_seed, r) ^ 0x5EEDull);
    rnd.runs.push_back(timed_run(r, run_seed(base_seed, r), train, subset, test, {}, cfg));
  }
  finalize(rnd);
  out.push_back(std::move(rnd));
  return out;
}

struct CrossTestResult {
  EvalReport coreset_to_noncoreset;  // train on top, test on bottom
  EvalReport noncoreset_to_coreset;  // train on bottom, test on top
};

inline CrossTestResult cross_test(const CoresetRanking& ranking, const Dataset& train, double train_frac,
                                  double test_frac, std::size_t runs, const ClassifierConfig& cfg,
                                  std::uint64_t base_seed) {
  if (runs == 0) throw ConfigError("runs must be >= 1");
  const std::size_t n = ranking.size();
  if (n != train.size()) throw ConfigError("cross_test: ranking size does not match dataset");
  const std::size_t train_l = subset_size_from_fraction(train_frac, n);
  const std::size_t test_l = subset_size_from_fraction(test_frac, n);
  if (train_l + test_l > n)
    throw ConfigError("cross_test: train and test slices overlap (" + std::to_string(train_l) + " + " +
                      std::to_string(test_l) + " > " + std::to_string(n) + ")");

  const auto top_train = select(ranking, train_l, 0);
  const auto bottom_test = select(ranking, test_l, n - test_l);
  const auto bottom_train = select(ranking, train_l, n - train_l);
  const auto top_test = select(ranking, test_l, 0);

  CrossTestResult out{make_report("C->N", train_l, 0), make_report("N->C", train_l, n - train_l)};
  for (std::size_t r = 0; r < runs; ++r) {
    const auto seed = run_seed(base_seed, r);
    out.coreset_to_noncoreset.runs.push_back(timed_run(r, seed, train, top_train, train, bottom_test, cfg));
    out.noncoreset_to_coreset.runs.push_back(timed_run(r, seed, train, bottom_train, train, top_test, cfg));
  }
  finalize(out.coreset_to_noncoreset);
  finalize(out.noncoreset_to_coreset);
  return out;
}

// |intersection of top-L sets| / L
inline double consistency(std::span<const CoresetRanking> rankings, std::size_t subset_size) {
  if (rankings.size() < 2) throw ConfigError("consistency: need at least two rankings");
  if (subset_size == 0) throw ConfigError("consistency: L must be >= 1");
  const std::size_t n = rankings.front().size();
  for (const auto& r : rankings)
    if (r.size() != n) throw ConfigError("consistency: rankings cover different N");
  if (subset_size > n) throw BoundsError("consistency: L exceeds N");
  std::vector<std::size_t> hits(n, 0);
  for (const auto& r : rankings)
    for (std::size_t i = 0; i < subset_size; ++i) ++hits[r.order[i]];
  const auto common = std::count(hits.begin(), hits.end(), rankings.size());
  return static_cast<double>(common) / static_cast<double>(subset_size);
}

struct ClassFractionHistogram {
  std::vector<std::size_t> counts;
  std::vector<double> fraction;
  std::size_t total = 0;
};

inline ClassFractionHistogram imbalance(std::span<const std::size_t> subset, std::span<const int> labels,
                                        int num_classes) {
  if (subset.empty()) throw ConfigError("imbalance: subset is empty");
  if (num_classes < 1) throw ConfigError("imbalance: num_classes must be >= 1");
  ClassFractionHistogram h;
  h.counts.assign(static_cast<std::size_t>(num_classes), 0);
  for (auto k : subset) {
    if (k >= labels.size()) throw BoundsError("imbalance: example index out of range");
    const int y = labels[k];
    if (y < 0 || y >= num_classes) throw DataError("imbalance: label " + std::to_string(y) + " out of range");
    ++h.counts[static_cast<std::size_t>(y)];
  }
  h.total = subset.size();
  for (auto c : h.counts) h.fraction.push_back(static_cast<double>(c) / static_cast<double>(h.total));
  return h;
}

inline constexpr std::size_t kCossimBins = 50;

struct CossimStats {
  double mean = 0.0;
  double median = 0.0;
  std::vector<double> bin_edges;     // kCossimBins + 1 edges over [-1, 1]
  std::vector<std::size_t> counts;  // kCossimBins
};

inline CossimStats cossim_stats(std::span<const double> values) {
  if (values.empty()) throw ConfigError("cossim_stats: empty input");
  CossimStats st;
  st.mean = mean_of(values);
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  st.median = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  for (std::size_t i = 0; i <= kCossimBins; ++i)
    st.bin_edges.push_back(-1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(kCossimBins));
  st.counts.assign(kCossimBins, 0);
  for (double v : values) {
    const double c = std::clamp(v, -1.0, 1.0);
    auto bin = static_cast<std::size_t>((c + 1.0) / 2.0 * static_cast<double>(kCossimBins));
    ++st.counts[std::min(bin, kCossimBins - 1)];
  }
  return st;
}

// Report CSV: method,L,stride,run,seed,test_accuracy,runtime_seconds
inline std::string report_csv(std::span<const EvalReport> reports) {
  std::string out = "method,L,stride,run,seed,test_accuracy,runtime_seconds\n";
  for (const auto& rep : reports)
    for (const auto& r : rep.runs)
      out += rep.method + "," + std::to_string(rep.subset_size) + "," + std::to_string(rep.stride) + "," +
             std::to_string(r.run) + "," + std::to_string(r.seed) + "," + format_real(r.test_accuracy) + "," +
             format_real(r.runtime_seconds) + "\n";
  return out;
}

}  // namespace coreselect
