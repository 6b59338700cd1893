#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "coreselect/data.hpp"
#include "coreselect/error.hpp"
#include "coreselect/numerics.hpp"
#include "coreselect/rng.hpp"

namespace coreselect {

// Downstream classifier: the encoder trunk (affine -> ReLU -> affine) with a
// fresh affine softmax head, trained from scratch with cross-entropy.
struct ClassifierConfig {
  std::size_t hidden_dim = 256;
  std::size_t feature_dim = 128;
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double base_lr = 0.05;
  double momentum = 0.9;

  void validate() const {
    if (hidden_dim == 0 || feature_dim == 0) throw ConfigError("classifier dims must be positive");
    if (epochs == 0) throw ConfigError("classifier.epochs must be >= 1");
    if (batch_size == 0) throw ConfigError("classifier.batch_size must be >= 1");
  }
};

inline Mlp classifier_layout(std::size_t input_dim, const ClassifierConfig& cfg, int num_classes) {
  return Mlp({{input_dim, cfg.hidden_dim, true},
              {cfg.hidden_dim, cfg.feature_dim, false},
              {cfg.feature_dim, static_cast<std::size_t>(num_classes), false}});
}

inline Matrix gather_images(const Dataset& ds, std::span<const std::size_t> indices) {
  Matrix x(indices.size(), ds.shape.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto img = ds.image(indices[r]);
    std::copy(img.begin(), img.end(), x.row(r).begin());
  }
  return x;
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

inline std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < row.size(); ++c)
    if (row[c] > row[best]) best = c;
  return best;
}

inline std::vector<int> predict(const Mlp& net, const Dataset& ds, std::span<const std::size_t> indices) {
  std::vector<int> out(indices.size());
  constexpr std::size_t kChunk = 512;
  for (std::size_t lo = 0; lo < indices.size(); lo += kChunk) {
    const auto part = indices.subspan(lo, std::min(kChunk, indices.size() - lo));
    const auto cache = mlp_forward(net, gather_images(ds, part));
    const Matrix& logits = cache.inputs.back();
    for (std::size_t r = 0; r < part.size(); ++r) out[lo + r] = static_cast<int>(argmax_row(logits.row(r)));
  }
  return out;
}

// Penultimate-layer (trunk feature) activations.
inline Matrix classifier_features(const Mlp& net, const Dataset& ds, std::span<const std::size_t> indices) {
  Matrix feats(indices.size(), net.layers()[1].out);
  constexpr std::size_t kChunk = 512;
  for (std::size_t lo = 0; lo < indices.size(); lo += kChunk) {
    const auto part = indices.subspan(lo, std::min(kChunk, indices.size() - lo));
    const auto cache = mlp_forward(net, gather_images(ds, part));
    const Matrix& f = cache.inputs[2];
    std::copy(f.data.begin(), f.data.end(), feats.data.begin() + static_cast<std::ptrdiff_t>(lo * feats.cols));
  }
  return feats;
}

inline double accuracy(const Mlp& net, const Dataset& ds, std::span<const std::size_t> indices) {
  if (indices.empty()) return 0.0;
  const auto pred = predict(net, ds, indices);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < indices.size(); ++i) correct += pred[i] == ds.label(indices[i]) ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

struct ClassifierResult {
  Mlp net;
  double test_accuracy = 0.0;
  double final_loss = 0.0;
};

using EpochHook = std::function<void(std::size_t epoch, const Mlp& net)>;

// Minimizes mean cross-entropy over exactly `subset` of `train`, then reports
// top-1 accuracy on `test` restricted to `test_indices` (all of `test` when
// empty). Fully determined by `seed`.
inline ClassifierResult train_classifier(const Dataset& train, std::span<const std::size_t> subset,
                                         const Dataset& test, std::span<const std::size_t> test_indices,
                                         const ClassifierConfig& cfg, std::uint64_t seed,
                                         const EpochHook& on_epoch = {}) {
  cfg.validate();
  if (subset.empty()) throw ConfigError("train_classifier: subset is empty");
  if (!train.has_labels()) throw ConfigError("train_classifier: training data has no labels");
  if (!test.has_labels()) throw ConfigError("train_classifier: test data has no labels");
  if (train.num_classes < 1) throw ConfigError("train_classifier: num_classes must be >= 1");
  for (auto k : subset) {
    if (k >= train.size()) throw BoundsError("train_classifier: subset index " + std::to_string(k) + " out of range");
    const int y = train.label(k);
    if (y < 0 || y >= train.num_classes) throw DataError("label " + std::to_string(y) + " out of range");
  }

  ClassifierResult res{classifier_layout(train.shape.size(), cfg, train.num_classes)};
  init_uniform(res.net, seed, 1);
  auto opt = make_optimizer(res.net.param_count(), cfg.base_lr, cfg.momentum, cfg.epochs);
  const std::size_t classes = static_cast<std::size_t>(train.num_classes);

  // Canonical order first, so training depends on the subset as a set.
  std::vector<std::size_t> order(subset.begin(), subset.end());
  std::sort(order.begin(), order.end());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    CounterRng rng(seed, Stream::classifier, epoch);
    rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
      const std::span<const std::size_t> batch(order.data() + lo, std::min(cfg.batch_size, order.size() - lo));
      const auto cache = mlp_forward(res.net, gather_images(train, batch));
      const Matrix& logits = cache.inputs.back();
      Matrix grad(batch.size(), classes);
      const double inv_b = 1.0 / static_cast<double>(batch.size());
      for (std::size_t r = 0; r < batch.size(); ++r) {
        const auto row = logits.row(r);
        const double mx = row[argmax_row(row)];
        double denom = 0.0;
        for (std::size_t c = 0; c < classes; ++c) denom += std::exp(row[c] - mx);
        const auto y = static_cast<std::size_t>(train.label(batch[r]));
        epoch_loss += (std::log(denom) - (row[y] - mx)) * inv_b;
        for (std::size_t c = 0; c < classes; ++c)
          grad(r, c) = (std::exp(row[c] - mx) / denom - (c == y ? 1.0 : 0.0)) * inv_b;
      }
      const auto g = mlp_backward(res.net, cache, grad);
      if (!all_finite(g)) throw NumericError("classifier gradient became non-finite");
      sgd_step(res.net.theta(), g, opt, epoch);
    }
    res.final_loss = epoch_loss;
    if (on_epoch) on_epoch(epoch, res.net);
  }

  if (test_indices.empty()) {
    const auto idx = all_indices(test.size());
    res.test_accuracy = accuracy(res.net, test, idx);
  } else {
    res.test_accuracy = accuracy(res.net, test, test_indices);
  }
  return res;
}

}  // namespace coreselect
