#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "coreselect/error.hpp"
#include "coreselect/numerics.hpp"

namespace coreselect {

struct PairCossim {
  std::size_t example_index = 0;
  double cossim = 0.0;
};

struct ContrastiveBatchResult {
  double loss = 0.0;
  std::vector<PairCossim> pair_cossims;
  Matrix grad_on_projections;
};

inline double cossim(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw ConfigError("cossim: length mismatch");
  const double nu = std::sqrt(dot(u, u));
  const double nv = std::sqrt(dot(v, v));
  if (nu == 0.0 || nv == 0.0) throw NumericError("cossim of a zero vector");
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

// NT-Xent over 2B unit-norm rows where row i pairs with row (i + B) mod 2B.
// example_indices (length B) labels the pairs in pair_cossims.
inline ContrastiveBatchResult ntxent_loss(const Matrix& z, double temperature,
                                          std::span<const std::size_t> example_indices = {}) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  if (z.rows % 2 != 0) throw ConfigError("ntxent: projection rows must be even (2B)");
  if (z.rows < 4) throw ConfigError("ntxent: need B >= 2 so that every anchor has a negative");
  const std::size_t n = z.rows;
  const std::size_t b = n / 2;
  if (!example_indices.empty() && example_indices.size() != b)
    throw ConfigError("ntxent: example index count must equal B");

  // sim[i][k] = z_i . z_k
  Matrix sim(n, n);
  parallel_for(n, [&](std::size_t i) {
    for (std::size_t k = 0; k < n; ++k) sim(i, k) = dot(z.row(i), z.row(k));
  }, 8);

  // prob[i][k]: softmax over k != i of sim/temperature; diagonal is zero.
  Matrix prob(n, n);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double max_logit = -INFINITY;
    for (std::size_t k = 0; k < n; ++k)
      if (k != i) max_logit = std::max(max_logit, sim(i, k) / temperature);
    double denom = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      if (k == i) continue;
      const double e = std::exp(sim(i, k) / temperature - max_logit);
      prob(i, k) = e;
      denom += e;
    }
    for (std::size_t k = 0; k < n; ++k) prob(i, k) /= denom;
    const std::size_t pos = (i + b) % n;
    loss += -(sim(i, pos) / temperature - max_logit) + std::log(denom);
  }
  const double scale = 1.0 / (static_cast<double>(n) * temperature);
  loss /= static_cast<double>(n);

  ContrastiveBatchResult out;
  out.loss = loss;
  out.grad_on_projections = Matrix(n, z.cols);
  parallel_for(n, [&](std::size_t i) {
    auto g = out.grad_on_projections.row(i);
    const std::size_t pos = (i + b) % n;
    for (std::size_t k = 0; k < n; ++k) {
      if (k == i) continue;
      double coeff = prob(i, k) + prob(k, i);
      if (k == pos) coeff -= 2.0;
      const auto zk = z.row(k);
      for (std::size_t c = 0; c < z.cols; ++c) g[c] += coeff * zk[c];
    }
    for (double& v : g) v *= scale;
  }, 8);

  out.pair_cossims.reserve(b);
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t idx = example_indices.empty() ? i : example_indices[i];
    out.pair_cossims.push_back({idx, std::clamp(sim(i, i + b), -1.0, 1.0)});
  }
  return out;
}

// FIFO ring of unit-norm key vectors.
class NegativeQueue {
 public:
  NegativeQueue(std::size_t capacity, std::size_t dim) : capacity_(capacity), dim_(dim), data_(capacity * dim) {
    if (capacity == 0) throw ConfigError("queue capacity must be >= 1");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }
  std::size_t head() const { return head_; }

  // i-th entry in FIFO order (0 = oldest).
  std::span<const double> entry(std::size_t i) const {
    const std::size_t slot = (head_ + capacity_ - size_ + i) % capacity_;
    return {data_.data() + slot * dim_, dim_};
  }

  void push(std::span<const double> key) {
    if (key.size() != dim_) throw ConfigError("queue_push: key dimension mismatch");
    std::copy(key.begin(), key.end(), data_.begin() + static_cast<std::ptrdiff_t>(head_ * dim_));
    head_ = (head_ + 1) % capacity_;
    size_ = std::min(size_ + 1, capacity_);
  }

  // Raw ring storage access for checkpointing.
  const std::vector<double>& storage() const { return data_; }
  void restore(std::vector<double> storage, std::size_t head, std::size_t size) {
    if (storage.size() != capacity_ * dim_ || head >= capacity_ || size > capacity_)
      throw FormatError("queue state does not match capacity");
    data_ = std::move(storage);
    head_ = head;
    size_ = size;
  }

 private:
  std::size_t capacity_;
  std::size_t dim_;
  std::vector<double> data_;
  std::size_t head_ = 0;
  std::size_t size_ = 0;
};

inline void queue_push(NegativeQueue& queue, const Matrix& keys) {
  for (std::size_t r = 0; r < keys.rows; ++r) queue.push(keys.row(r));
}

// InfoNCE with the positive key at logit index 0 and queue entries as
// negatives. Keys and queue are constants: only query gradients are returned.
inline ContrastiveBatchResult moco_loss(const Matrix& queries, const Matrix& keys, const NegativeQueue& queue,
                                        double temperature, std::span<const std::size_t> example_indices = {}) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  if (queue.empty()) throw StateError("moco_loss: negative queue is empty");
  if (queries.rows != keys.rows || queries.cols != keys.cols || queries.cols != queue.dim())
    throw ConfigError("moco_loss: query/key/queue shape mismatch");
  if (!example_indices.empty() && example_indices.size() != queries.rows)
    throw ConfigError("moco_loss: example index count must equal B");

  const std::size_t b = queries.rows;
  const std::size_t q = queue.size();
  ContrastiveBatchResult out;
  out.grad_on_projections = Matrix(b, queries.cols);
  out.pair_cossims.resize(b);
  std::vector<double> losses(b);
  const double scale = 1.0 / (static_cast<double>(b) * temperature);

  parallel_for(b, [&](std::size_t i) {
    const auto qi = queries.row(i);
    std::vector<double> logits(q + 1);
    const double pos_sim = dot(qi, keys.row(i));
    logits[0] = pos_sim / temperature;
    for (std::size_t j = 0; j < q; ++j) logits[j + 1] = dot(qi, queue.entry(j)) / temperature;
    const double max_logit = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (double& l : logits) {
      l = std::exp(l - max_logit);
      denom += l;
    }
    losses[i] = -(pos_sim / temperature - max_logit) + std::log(denom);
    auto g = out.grad_on_projections.row(i);
    const auto ki = keys.row(i);
    const double p0 = logits[0] / denom - 1.0;
    for (std::size_t c = 0; c < g.size(); ++c) g[c] = p0 * ki[c];
    for (std::size_t j = 0; j < q; ++j) {
      const double pj = logits[j + 1] / denom;
      const auto e = queue.entry(j);
      for (std::size_t c = 0; c < g.size(); ++c) g[c] += pj * e[c];
    }
    for (double& v : g) v *= scale;
    out.pair_cossims[i] = {example_indices.empty() ? i : example_indices[i], std::clamp(pos_sim, -1.0, 1.0)};
  }, 8);

  double loss = 0.0;
  for (double l : losses) loss += l;
  out.loss = loss / static_cast<double>(b);
  return out;
}

}  // namespace coreselect
