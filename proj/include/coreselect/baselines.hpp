#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "coreselect/classifier.hpp"
#include "coreselect/error.hpp"
#include "coreselect/numerics.hpp"
#include "coreselect/rng.hpp"
#include "coreselect/scoring.hpp"

namespace coreselect {

// Uniform sample of `size` indices from [0, n) without replacement.
inline std::vector<std::size_t> random_subset(std::size_t n, std::size_t size, std::uint64_t seed) {
  if (size > n) throw BoundsError("random_subset: L = " + std::to_string(size) + " exceeds n = " + std::to_string(n));
  CounterRng rng(seed, Stream::subset);
  auto perm = random_permutation(n, rng);
  perm.resize(size);
  return perm;
}

// ---------------------------------------------------------------------------
// Forgetting events: correct -> incorrect transitions across epochs.

struct ForgettingTable {
  std::vector<std::uint32_t> forget_count;
  std::vector<bool> prev_correct;
  std::uint32_t epochs_seen = 0;

  std::size_t n() const { return forget_count.size(); }
};

inline ForgettingTable make_forgetting_table(std::size_t n) {
  return {std::vector<std::uint32_t>(n, 0), std::vector<bool>(n, false), 0};
}

inline void forgetting_update(ForgettingTable& table, const std::vector<bool>& correct) {
  if (correct.size() != table.n())
    throw ProtocolError("forgetting_update: got " + std::to_string(correct.size()) + " results for " +
                        std::to_string(table.n()) + " examples");
  for (std::size_t k = 0; k < table.n(); ++k) {
    if (table.prev_correct[k] && !correct[k]) ++table.forget_count[k];
    table.prev_correct[k] = correct[k];
  }
  ++table.epochs_seen;
}

// Trains on the full labeled set and records epoch-end training correctness.
inline ForgettingTable forgetting_events(const Dataset& train, const ClassifierConfig& cfg, std::uint64_t seed) {
  auto table = make_forgetting_table(train.size());
  const auto idx = all_indices(train.size());
  train_classifier(train, idx, train, idx, cfg, seed, [&](std::size_t, const Mlp& net) {
    const auto pred = predict(net, train, idx);
    std::vector<bool> correct(train.size());
    for (std::size_t k = 0; k < train.size(); ++k) correct[k] = pred[k] == train.label(k);
    forgetting_update(table, correct);
  });
  return table;
}

inline CoresetRanking forgetting_ranking(const ForgettingTable& table) {
  std::vector<double> scores(table.forget_count.begin(), table.forget_count.end());
  return rank_scores(scores);
}

// ---------------------------------------------------------------------------
// Greedy k-centers (farthest-point traversal) in feature space.

struct CenterSet {
  std::vector<std::size_t> chosen;
  std::vector<double> min_dist;
  std::vector<double> pick_dist;  // distance to the nearest earlier center when picked

  double covering_radius() const {
    double r = 0.0;
    for (double d : min_dist) r = std::max(r, d);
    return r;
  }
};

inline double euclidean(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

// First center is drawn from `seed` unless `first` is given; each later center
// is argmax_k min_dist[k], ties to the lowest index.
inline CenterSet kcenters_greedy(const Matrix& features, std::size_t size, std::uint64_t seed,
                                 std::optional<std::size_t> first = std::nullopt) {
  const std::size_t n = features.rows;
  if (size > n) throw BoundsError("kcenters: L = " + std::to_string(size) + " exceeds N = " + std::to_string(n));
  if (!all_finite(features.data)) throw NumericError("kcenters: non-finite features");
  CenterSet cs;
  cs.min_dist.assign(n, std::numeric_limits<double>::infinity());
  if (size == 0) return cs;

  std::size_t next = 0;
  if (first) {
    if (*first >= n) throw BoundsError("kcenters: forced first center out of range");
    next = *first;
  } else {
    CounterRng rng(seed, Stream::kcenters);
    next = static_cast<std::size_t>(rng.below(n));
  }
  std::vector<bool> taken(n, false);
  while (true) {
    cs.pick_dist.push_back(cs.min_dist[next]);
    cs.chosen.push_back(next);
    taken[next] = true;
    const auto c = features.row(next);
    parallel_for(n, [&](std::size_t k) {
      cs.min_dist[k] = std::min(cs.min_dist[k], euclidean(features.row(k), c));
    }, 256);
    cs.min_dist[next] = 0.0;
    if (cs.chosen.size() == size) break;
    // Unchosen points only, so coincident features never yield duplicates.
    std::optional<std::size_t> best;
    for (std::size_t k = 0; k < n; ++k)
      if (!taken[k] && (!best || cs.min_dist[k] > cs.min_dist[*best])) best = k;
    next = *best;
  }
  return cs;
}

// Supervised k-centers selection: features from a classifier trained on the
// full labeled training set.
inline CenterSet kcenters_selection(const Dataset& train, std::size_t size, const ClassifierConfig& cfg,
                                    std::uint64_t seed) {
  const auto idx = all_indices(train.size());
  const auto res = train_classifier(train, idx, train, idx, cfg, seed);
  return kcenters_greedy(classifier_features(res.net, train, idx), size, seed);
}

// Ranking export with a method column: method,rank,example_index,score.
inline std::string baseline_ranking_csv(const std::string& method, std::span<const std::size_t> order,
                                        std::span<const double> scores) {
  std::string out = "method,rank,example_index,score\n";
  for (std::size_t r = 0; r < order.size(); ++r)
    out += method + "," + std::to_string(r) + "," + std::to_string(order[r]) + "," + format_real(scores[r]) + "\n";
  return out;
}

}  // namespace coreselect
