#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <limits>
#include <vector>

#include "coreselect/numerics.hpp"
#include "grad_check.hpp"

using namespace coreselect;
using Catch::Matchers::WithinAbs;

namespace {

// Straight-line forward pass written against the documented layout:
// weight block [in x out] row-major, then bias.
std::vector<double> oracle_forward(const Mlp& net, std::vector<double> x) {
  const auto theta = net.theta();
  std::size_t off = 0;
  for (const auto& layer : net.layers()) {
    std::vector<double> y(layer.out, 0.0);
    for (std::size_t o = 0; o < layer.out; ++o) {
      double s = theta[off + layer.in * layer.out + o];
      for (std::size_t i = 0; i < layer.in; ++i) s += x[i] * theta[off + i * layer.out + o];
      y[o] = layer.relu ? std::max(0.0, s) : s;
    }
    off += layer.in * layer.out + layer.out;
    x = std::move(y);
  }
  double n = 0.0;
  for (double v : x) n += v * v;
  n = std::sqrt(n);
  for (double& v : x) v /= n;
  return x;
}

}  // namespace

TEST_CASE("encoder forward matches a hand-rolled oracle (seed 7, B=4)") {
  const EncoderDims dims{48, 256, 128, 64};
  const auto params = init_encoder(dims, 7);
  CounterRng rng(7, Stream::init, 77);
  const auto batch = gradcheck::random_batch(4, dims.input_dim, rng);
  const auto out = forward(params, batch);
  REQUIRE(out.projections.rows == 4);
  REQUIRE(out.projections.cols == 64);
  REQUIRE(out.features.cols == 128);
  for (std::size_t r = 0; r < 4; ++r) {
    const auto row = batch.row(r);
    const auto expect = oracle_forward(params.net, {row.begin(), row.end()});
    for (std::size_t c = 0; c < 64; ++c) REQUIRE_THAT(out.projections(r, c), WithinAbs(expect[c], 1e-6));
  }
}

TEST_CASE("projection rows are unit norm") {
  const auto params = init_encoder({30, 32, 16, 8}, 3);
  CounterRng rng(3, Stream::init, 1);
  const auto out = forward(params, gradcheck::random_batch(20, 30, rng));
  for (std::size_t r = 0; r < 20; ++r) {
    const auto z = out.projections.row(r);
    CHECK_THAT(std::sqrt(dot(z, z)), WithinAbs(1.0, 1e-6));
  }
}

TEST_CASE("zero pre-normalization vector maps to e1 with zero gradient") {
  auto params = make_encoder({5, 4, 3, 2});  // all-zero parameters
  Matrix batch(2, 5, 0.5);
  const auto out = forward(params, batch);
  CHECK(out.projections(0, 0) == 1.0);
  CHECK(out.projections(0, 1) == 0.0);
  Matrix g(2, 2, 1.0);
  const auto grad = backward(params, out, g);
  for (double v : grad) REQUIRE(v == 0.0);
}

TEST_CASE("layer layout: weight block then bias, contiguous") {
  const auto net = encoder_layout({6, 5, 4, 3});
  CHECK(net.param_count() == 6 * 5 + 5 + 5 * 4 + 4 + 4 * 4 + 4 + 4 * 3 + 3);
  CHECK(net.offset(1) == 35);
  CHECK(net.bias(0).data() == net.weight(0).data() + 30);
  CHECK_THROWS_AS(Mlp({{3, 4, true}, {5, 2, false}}), ConfigError);
}

TEST_CASE("analytic gradients match central differences, simclr") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto r = gradcheck::check_simclr(seed);
    INFO("seed " << seed << " worst " << r.worst);
    CHECK(r.coords >= 64);
    CHECK(r.failures == 0);
  }
}

TEST_CASE("analytic gradients match central differences, moco") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto r = gradcheck::check_moco(seed);
    INFO("seed " << seed << " worst " << r.worst);
    CHECK(r.coords >= 64);
    CHECK(r.failures == 0);
  }
}

TEST_CASE("mlp input gradient matches central differences") {
  Mlp net({{4, 6, true}, {6, 3, false}});
  init_uniform(net, 21);
  CounterRng rng(21, Stream::init, 5);
  auto x = gradcheck::random_batch(3, 4, rng);
  // loss = sum of outputs weighted by fixed coefficients
  Matrix w = gradcheck::random_batch(3, 3, rng);
  auto loss = [&](const Matrix& in) {
    const auto c = mlp_forward(net, in);
    double s = 0.0;
    for (std::size_t i = 0; i < w.data.size(); ++i) s += w.data[i] * c.inputs.back().data[i];
    return s;
  };
  Matrix gin;
  mlp_backward(net, mlp_forward(net, x), w, &gin);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const double saved = x.data[i];
    x.data[i] = saved + 1e-5;
    const double up = loss(x);
    x.data[i] = saved - 1e-5;
    const double down = loss(x);
    x.data[i] = saved;
    CHECK(gradcheck::relative_error(gin.data[i], (up - down) / 2e-5) < 1e-4);
  }
}

TEST_CASE("non-finite inputs raise numeric errors") {
  const auto params = init_encoder({4, 4, 4, 2}, 1);
  Matrix batch(2, 4, 0.1);
  Matrix g(2, 2, 0.1);
  batch(1, 2) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(backward(params, batch, g), NumericError);
  batch(1, 2) = 0.0;
  g(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(backward(params, batch, g), NumericError);
  CHECK_THROWS_AS(forward(params, Matrix(2, 5)), ConfigError);
  CHECK_THROWS_AS(forward(params, Matrix(0, 4)), ConfigError);
}

TEST_CASE("cosine learning-rate schedule") {
  auto st = make_optimizer(1, 0.4, 0.9, 10);
  CHECK(st.learning_rate(0) == 0.4);
  CHECK_THAT(st.learning_rate(5), WithinAbs(0.2, 1e-15));
  CHECK_THAT(st.learning_rate(10), WithinAbs(0.0, 1e-15));
  CHECK(st.learning_rate(3) > st.learning_rate(4));
}

TEST_CASE("sgd on a quadratic bowl follows the scalar recurrence and descends") {
  // f(x, y) = x^2 + 2 y^2
  auto f = [](const std::vector<double>& p) { return p[0] * p[0] + 2.0 * p[1] * p[1]; };
  std::vector<double> p = {1.0, -1.0};
  auto st = make_optimizer(2, 0.05, 0.5, 10);
  // independent replay of v = m v + g, p -= lr v
  double ox = 1.0, oy = -1.0, vx = 0.0, vy = 0.0;
  std::vector<double> values = {f(p)};
  for (std::size_t step = 0; step < 10; ++step) {
    const std::vector<double> g = {2.0 * p[0], 4.0 * p[1]};
    sgd_step(p, g, st, step);
    const double lr = 0.05 * 0.5 * (1.0 + std::cos(std::numbers::pi * step / 10.0));
    vx = 0.5 * vx + 2.0 * ox;
    vy = 0.5 * vy + 4.0 * oy;
    ox -= lr * vx;
    oy -= lr * vy;
    REQUIRE(p[0] == ox);
    REQUIRE(p[1] == oy);
    values.push_back(f(p));
  }
  for (std::size_t i = 2; i + 1 < values.size(); ++i) CHECK(values[i + 1] < values[i]);
}

TEST_CASE("optimizer argument errors") {
  CHECK_THROWS_AS(make_optimizer(3, 0.0, 0.9, 10), ConfigError);
  CHECK_THROWS_AS(make_optimizer(3, 0.1, 1.0, 10), ConfigError);
  CHECK_THROWS_AS(make_optimizer(3, 0.1, 0.9, 0), ConfigError);
  auto st = make_optimizer(2, 0.1, 0.9, 3);
  std::vector<double> p(2), g(2);
  CHECK_THROWS_AS(sgd_step(p, g, st, 3), ConfigError);
  std::vector<double> g3(3);
  CHECK_THROWS_AS(sgd_step(p, g3, st, 0), ConfigError);
}

TEST_CASE("momentum update is an exponential moving average") {
  const EncoderDims dims{3, 4, 2, 2};
  auto key = init_encoder(dims, 1);
  const auto query = init_encoder(dims, 2);
  const auto before = std::vector<double>(key.flat().begin(), key.flat().end());
  momentum_update(key, query, 0.75);
  for (std::size_t i = 0; i < before.size(); ++i)
    REQUIRE(key.flat()[i] == 0.75 * before[i] + 0.25 * query.flat()[i]);
  momentum_update(key, query, 0.0);
  for (std::size_t i = 0; i < before.size(); ++i) REQUIRE(key.flat()[i] == query.flat()[i]);
  CHECK_THROWS_AS(momentum_update(key, query, 1.0), ConfigError);
  auto other = init_encoder({3, 5, 2, 2}, 1);
  CHECK_THROWS_AS(momentum_update(other, query, 0.5), ConfigError);
}

TEST_CASE("parameter file round trip and corruption") {
  const EncoderDims dims{7, 5, 4, 3};
  const auto params = init_encoder(dims, 9);
  const auto path = std::filesystem::temp_directory_path() / "coreselect_test_params.csel";
  save_params(path, params);
  const auto back = load_params(path);
  CHECK(back.dims == dims);
  CHECK(std::equal(back.flat().begin(), back.flat().end(), params.flat().begin()));
  std::filesystem::remove(path);

  auto bytes = encode_param_file(dims, params.flat());
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_param_file(bad, "t"), FormatError);
  bad = bytes;
  bad.resize(bad.size() - 3);
  CHECK_THROWS_AS(decode_param_file(bad, "t"), FormatError);
  bad = bytes;
  bad[4] = 2;  // version
  CHECK_THROWS_AS(decode_param_file(bad, "t"), FormatError);
  bad = bytes;
  bad[8] = 0;  // input_dim = 0
  CHECK_THROWS_AS(decode_param_file(bad, "t"), FormatError);
  bad = std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 10);
  CHECK_THROWS_AS(decode_param_file(bad, "t"), FormatError);
  CHECK_THROWS_AS(load_params("/nonexistent/params.csel"), IoError);
}
