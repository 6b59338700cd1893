#include <catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <vector>

#include "coreselect/contrastive.hpp"
#include "grad_check.hpp"

using namespace coreselect;
using Catch::Matchers::WithinAbs;

namespace {

Matrix rows(std::initializer_list<std::vector<double>> r) {
  Matrix m(r.size(), r.begin()->size());
  std::size_t i = 0;
  for (const auto& v : r) std::copy(v.begin(), v.end(), m.row(i++).begin());
  return m;
}

Matrix unit_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  CounterRng rng(seed, Stream::init, 3);
  Matrix m = gradcheck::random_batch(n, d, rng);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = m.row(r);
    const double s = std::sqrt(dot(row, row));
    for (double& v : row) v /= s;
  }
  return m;
}

}  // namespace

TEST_CASE("cossim basics") {
  const std::vector<double> v = {0.3, -1.2, 2.0};
  const std::vector<double> neg = {-0.3, 1.2, -2.0};
  CHECK(cossim(v, v) == Catch::Approx(1.0));
  CHECK(cossim(v, neg) == Catch::Approx(-1.0));
  CHECK(cossim(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 0.0);
  CHECK_THROWS_AS(cossim(std::vector<double>{0, 0}, std::vector<double>{0, 1}), NumericError);
  CHECK_THROWS_AS(cossim(std::vector<double>{1, 0}, std::vector<double>{0, 1, 0}), ConfigError);
  CHECK(cossim(std::vector<double>{3, 3}, std::vector<double>{2, 2}) <= 1.0);
}

TEST_CASE("ntxent matches a term-by-term softmax (B=2, tau=1)") {
  const double a = 0.3;
  const auto z = rows({{1, 0}, {0, 1}, {std::cos(a), std::sin(a)}, {-0.6, 0.8}});
  const auto res = ntxent_loss(z, 1.0);
  double expect = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    double denom = 0.0;
    for (std::size_t k = 0; k < 4; ++k)
      if (k != i) denom += std::exp(dot(z.row(i), z.row(k)));
    expect += -std::log(std::exp(dot(z.row(i), z.row((i + 2) % 4))) / denom);
  }
  expect /= 4.0;
  CHECK_THAT(res.loss, WithinAbs(expect, 1e-9));
  REQUIRE(res.pair_cossims.size() == 2);
  CHECK_THAT(res.pair_cossims[0].cossim, WithinAbs(std::cos(a), 1e-15));
  CHECK_THAT(res.pair_cossims[1].cossim, WithinAbs(0.8, 1e-15));
}

TEST_CASE("identical projections give log(2B - 1)") {
  for (std::size_t b : {2u, 3u, 8u}) {
    Matrix z(2 * b, 3);
    for (std::size_t r = 0; r < z.rows; ++r) {
      z(r, 0) = 0.6;
      z(r, 2) = 0.8;
    }
    const auto res = ntxent_loss(z, 0.5);
    CHECK(res.loss == std::log(static_cast<double>(2 * b - 1)));
  }
}

TEST_CASE("ntxent argument errors") {
  CHECK_THROWS_AS(ntxent_loss(unit_rows(2, 3, 1), 0.5), ConfigError);  // B = 1
  CHECK_THROWS_AS(ntxent_loss(unit_rows(5, 3, 1), 0.5), ConfigError);
  CHECK_THROWS_AS(ntxent_loss(unit_rows(4, 3, 1), 0.0), ConfigError);
  CHECK_THROWS_AS(ntxent_loss(unit_rows(4, 3, 1), -1.0), ConfigError);
  const std::vector<std::size_t> idx = {1, 2, 3};
  CHECK_THROWS_AS(ntxent_loss(unit_rows(4, 3, 1), 0.5, idx), ConfigError);
}

TEST_CASE("pair cossims are raw and independent of temperature") {
  const auto z = unit_rows(12, 5, 4);
  const std::vector<std::size_t> idx = {10, 11, 12, 13, 14, 15};
  const auto lo = ntxent_loss(z, 0.1, idx);
  const auto hi = ntxent_loss(z, 1.0, idx);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(lo.pair_cossims[i].example_index == idx[i]);
    CHECK(lo.pair_cossims[i].cossim == hi.pair_cossims[i].cossim);
    CHECK(lo.pair_cossims[i].cossim == Catch::Approx(dot(z.row(i), z.row(i + 6))));
  }
  CHECK(lo.loss != hi.loss);
}

TEST_CASE("ntxent is symmetric under a consistent permutation of examples") {
  const std::size_t b = 5;
  const auto z = unit_rows(2 * b, 4, 8);
  const std::vector<std::size_t> idx = {0, 1, 2, 3, 4};
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  Matrix zp(2 * b, 4);
  std::vector<std::size_t> idxp(b);
  for (std::size_t i = 0; i < b; ++i) {
    std::copy(z.row(perm[i]).begin(), z.row(perm[i]).end(), zp.row(i).begin());
    std::copy(z.row(perm[i] + b).begin(), z.row(perm[i] + b).end(), zp.row(i + b).begin());
    idxp[i] = idx[perm[i]];
  }
  const auto r = ntxent_loss(z, 0.5, idx);
  const auto rp = ntxent_loss(zp, 0.5, idxp);
  CHECK_THAT(rp.loss, WithinAbs(r.loss, 1e-12));
  for (std::size_t i = 0; i < b; ++i) {
    CHECK(rp.pair_cossims[i].example_index == perm[i]);
    CHECK(rp.pair_cossims[i].cossim == r.pair_cossims[perm[i]].cossim);
  }
}

TEST_CASE("ntxent gradient matches the closed form per row") {
  // g_i = (1 / (2B tau)) [ sum_{k != i} (P_ik + P_ki) z_k - 2 z_{p(i)} ]
  const std::size_t b = 3, n = 6;
  const double tau = 0.7;
  const auto z = unit_rows(n, 4, 12);
  const auto res = ntxent_loss(z, tau);
  Matrix p(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0.0;
    for (std::size_t k = 0; k < n; ++k)
      if (k != i) denom += std::exp(dot(z.row(i), z.row(k)) / tau);
    for (std::size_t k = 0; k < n; ++k)
      if (k != i) p(i, k) = std::exp(dot(z.row(i), z.row(k)) / tau) / denom;
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 4; ++c) {
      double g = 0.0;
      for (std::size_t k = 0; k < n; ++k)
        if (k != i) g += (p(i, k) + p(k, i)) * z(k, c);
      g -= 2.0 * z((i + b) % n, c);
      g /= 2.0 * b * tau;
      CHECK_THAT(res.grad_on_projections(i, c), WithinAbs(g, 1e-12));
    }
}

TEST_CASE("ntxent loss decreases when training on a separable batch") {
  const EncoderDims dims{8, 16, 8, 4};
  auto params = init_encoder(dims, 5);
  // four well separated prototypes; the two views differ by small noise
  CounterRng rng(5, Stream::init, 44);
  Matrix batch(8, 8);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 8; ++c) {
      const double base = (c / 2 == i) ? 2.0 : 0.0;
      batch(i, c) = base + 0.05 * rng.normal();
      batch(i + 4, c) = base + 0.05 * rng.normal();
    }
  auto opt = make_optimizer(params.param_count(), 0.1, 0.9, 50);
  std::vector<double> losses;
  for (std::size_t step = 0; step < 50; ++step) {
    const auto fwd = forward(params, batch);
    const auto res = ntxent_loss(fwd.projections, 0.5);
    REQUIRE(std::isfinite(res.loss));
    losses.push_back(res.loss);
    sgd_step(params, backward(params, fwd, res.grad_on_projections), opt, step);
  }
  CHECK(losses.back() < losses.front() - 0.5);
}

TEST_CASE("moco closed form with orthogonal queue entries") {
  const double tau = 0.2;
  NegativeQueue queue(5, 4);
  for (std::size_t j = 0; j < 5; ++j) queue.push(std::vector<double>{0, 0, j % 2 ? 1.0 : 0.0, j % 2 ? 0.0 : 1.0});
  const auto q = rows({{1, 0, 0, 0}, {0.6, 0.8, 0, 0}});
  const auto res = moco_loss(q, q, queue, tau);
  const double expect = -std::log(std::exp(1 / tau) / (std::exp(1 / tau) + 5.0));
  CHECK_THAT(res.loss, WithinAbs(expect, 1e-12));
  CHECK(res.pair_cossims[0].cossim == 1.0);
}

TEST_CASE("moco with one queue entry equal to everything gives log 2") {
  NegativeQueue queue(1, 2);
  queue.push(std::vector<double>{0.6, 0.8});
  const auto q = rows({{0.6, 0.8}});
  const auto res = moco_loss(q, q, queue, 0.3);
  CHECK_THAT(res.loss, WithinAbs(std::log(2.0), 1e-15));
}

TEST_CASE("moco gradient matches central differences on the queries") {
  const auto keys = unit_rows(3, 5, 30);
  NegativeQueue queue(7, 5);
  queue_push(queue, unit_rows(7, 5, 31));
  auto q = unit_rows(3, 5, 32);
  const auto res = moco_loss(q, keys, queue, 0.2);
  for (std::size_t i = 0; i < q.data.size(); ++i) {
    const double saved = q.data[i];
    q.data[i] = saved + 1e-4;
    const double up = moco_loss(q, keys, queue, 0.2).loss;
    q.data[i] = saved - 1e-4;
    const double down = moco_loss(q, keys, queue, 0.2).loss;
    q.data[i] = saved;
    CHECK(gradcheck::relative_error(res.grad_on_projections.data[i], (up - down) / 2e-4) < 1e-3);
  }
}

TEST_CASE("moco errors") {
  NegativeQueue empty(4, 3);
  const auto q = unit_rows(2, 3, 1);
  CHECK_THROWS_AS(moco_loss(q, q, empty, 0.2), StateError);
  NegativeQueue queue(4, 3);
  queue_push(queue, q);
  CHECK_THROWS_AS(moco_loss(q, q, queue, 0.0), ConfigError);
  CHECK_THROWS_AS(moco_loss(q, unit_rows(3, 3, 2), queue, 0.2), ConfigError);
  NegativeQueue wide(4, 5);
  queue_push(wide, unit_rows(1, 5, 1));
  CHECK_THROWS_AS(moco_loss(q, q, wide, 0.2), ConfigError);
}

TEST_CASE("queue ring semantics") {
  NegativeQueue queue(4, 1);
  CHECK(queue.empty());
  for (double v = 1; v <= 3; ++v) queue.push(std::vector<double>{v});
  CHECK(queue.size() == 3);
  CHECK(queue.entry(2)[0] == 3.0);  // newest
  for (double v = 4; v <= 6; ++v) queue.push(std::vector<double>{v});
  CHECK(queue.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(queue.entry(i)[0] == 3.0 + static_cast<double>(i));
  CHECK_THROWS_AS(queue.push(std::vector<double>{1, 2}), ConfigError);
  CHECK_THROWS_AS(NegativeQueue(0, 3), ConfigError);

  NegativeQueue copy(4, 1);
  copy.restore(queue.storage(), queue.head(), queue.size());
  for (std::size_t i = 0; i < 4; ++i) CHECK(copy.entry(i)[0] == queue.entry(i)[0]);
  CHECK_THROWS_AS(copy.restore(std::vector<double>(3), 0, 0), FormatError);
  CHECK_THROWS_AS(copy.restore(queue.storage(), 4, 0), FormatError);
}
