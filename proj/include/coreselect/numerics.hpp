#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "coreselect/binary_io.hpp"
#include "coreselect/error.hpp"
#include "coreselect/parallel.hpp"
#include "coreselect/rng.hpp"

namespace coreselect {

// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  // Four fixed lanes: a deterministic order that still pipelines well.
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  const std::size_t n = a.size();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// ---------------------------------------------------------------------------
// Multi-layer perceptron with a flat parameter vector.
//
// Layer l stores its weight as an [in x out] block followed by an [out] bias.
// The flat vector is the single source of truth, so every scalar parameter has
// exactly one address in [0, P).

struct LayerSpec {
  std::size_t in = 0;
  std::size_t out = 0;
  bool relu = false;  // activation applied after this layer
};

class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<LayerSpec> layers) : layers_(std::move(layers)) {
    std::size_t off = 0;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (l > 0 && layers_[l].in != layers_[l - 1].out)
        throw ConfigError("layer " + std::to_string(l) + " input width does not match previous output");
      offsets_.push_back(off);
      off += layers_[l].in * layers_[l].out + layers_[l].out;
    }
    theta_.assign(off, 0.0);
  }

  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::size_t param_count() const { return theta_.size(); }
  std::size_t input_dim() const { return layers_.front().in; }
  std::size_t output_dim() const { return layers_.back().out; }

  std::span<double> theta() { return theta_; }
  std::span<const double> theta() const { return theta_; }

  std::span<double> weight(std::size_t l) {
    return {theta_.data() + offsets_[l], layers_[l].in * layers_[l].out};
  }
  std::span<const double> weight(std::size_t l) const {
    return {theta_.data() + offsets_[l], layers_[l].in * layers_[l].out};
  }
  std::span<double> bias(std::size_t l) {
    return {theta_.data() + offsets_[l] + layers_[l].in * layers_[l].out, layers_[l].out};
  }
  std::span<const double> bias(std::size_t l) const {
    return {theta_.data() + offsets_[l] + layers_[l].in * layers_[l].out, layers_[l].out};
  }
  std::size_t offset(std::size_t l) const { return offsets_[l]; }

  bool same_shape(const Mlp& other) const {
    if (layers_.size() != other.layers_.size()) return false;
    for (std::size_t l = 0; l < layers_.size(); ++l)
      if (layers_[l].in != other.layers_[l].in || layers_[l].out != other.layers_[l].out ||
          layers_[l].relu != other.layers_[l].relu)
        return false;
    return true;
  }

 private:
  std::vector<LayerSpec> layers_;
  std::vector<std::size_t> offsets_;
  std::vector<double> theta_;
};

// Uniform(-1/sqrt(in), 1/sqrt(in)) weights, zero biases.
inline void init_uniform(Mlp& net, std::uint64_t seed, std::uint64_t stream_id = 0) {
  CounterRng rng(seed, Stream::init, stream_id);
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(net.layers()[l].in));
    for (double& w : net.weight(l)) w = rng.uniform(-bound, bound);
    for (double& b : net.bias(l)) b = 0.0;
  }
}

struct MlpCache {
  std::vector<Matrix> inputs;  // inputs[l] is the input of layer l; inputs[L] the output
  std::vector<Matrix> pre;     // pre-activation of each layer
};

inline MlpCache mlp_forward(const Mlp& net, const Matrix& x) {
  if (x.cols != net.input_dim())
    throw ConfigError("batch width " + std::to_string(x.cols) + " does not match input_dim " +
                      std::to_string(net.input_dim()));
  MlpCache cache;
  cache.inputs.reserve(net.layers().size() + 1);
  cache.inputs.push_back(x);
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    const auto& spec = net.layers()[l];
    const Matrix& in = cache.inputs.back();
    Matrix out(in.rows, spec.out);
    const auto w = net.weight(l);
    const auto b = net.bias(l);
    parallel_for(in.rows, [&](std::size_t r) {
      double* o = out.data.data() + r * spec.out;
      std::copy(b.begin(), b.end(), o);
      const double* xi = in.data.data() + r * spec.in;
      for (std::size_t k = 0; k < spec.in; ++k) {
        const double xk = xi[k];
        if (xk == 0.0) continue;
        const double* wk = w.data() + k * spec.out;
        for (std::size_t j = 0; j < spec.out; ++j) o[j] += xk * wk[j];
      }
    }, 16);
    Matrix act = out;
    if (spec.relu)
      for (double& v : act.data) v = v > 0.0 ? v : 0.0;
    cache.pre.push_back(std::move(out));
    cache.inputs.push_back(std::move(act));
  }
  return cache;
}

// Gradient of a scalar loss w.r.t. every parameter, given dLoss/dOutput.
// When grad_input is non-null it receives dLoss/dInput.
inline std::vector<double> mlp_backward(const Mlp& net, const MlpCache& cache, const Matrix& grad_out,
                                        Matrix* grad_input = nullptr) {
  const std::size_t n_layers = net.layers().size();
  std::vector<double> grads(net.param_count(), 0.0);
  Matrix g = grad_out;
  for (std::size_t li = n_layers; li-- > 0;) {
    const auto& spec = net.layers()[li];
    if (spec.relu) {
      const Matrix& pre = cache.pre[li];
      for (std::size_t i = 0; i < g.data.size(); ++i)
        if (!(pre.data[i] > 0.0)) g.data[i] = 0.0;
    }
    const Matrix& in = cache.inputs[li];
    const std::size_t rows = in.rows;
    double* gw = grads.data() + net.offset(li);
    double* gb = gw + spec.in * spec.out;
    parallel_for(spec.in, [&](std::size_t k) {
      double* gwk = gw + k * spec.out;
      for (std::size_t r = 0; r < rows; ++r) {
        const double xk = in.data[r * spec.in + k];
        if (xk == 0.0) continue;
        const double* gr = g.data.data() + r * spec.out;
        for (std::size_t j = 0; j < spec.out; ++j) gwk[j] += xk * gr[j];
      }
    }, 8);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gr = g.data.data() + r * spec.out;
      for (std::size_t j = 0; j < spec.out; ++j) gb[j] += gr[j];
    }
    if (li == 0 && grad_input == nullptr) break;
    Matrix gin(rows, spec.in);
    const auto w = net.weight(li);
    parallel_for(rows, [&](std::size_t r) {
      const std::span<const double> gr(g.data.data() + r * spec.out, spec.out);
      for (std::size_t k = 0; k < spec.in; ++k)
        gin(r, k) = dot(gr, w.subspan(k * spec.out, spec.out));
    }, 16);
    g = std::move(gin);
  }
  if (grad_input != nullptr) *grad_input = std::move(g);
  return grads;
}

// ---------------------------------------------------------------------------
// Contrastive encoder: flatten -> affine -> ReLU -> affine (features)
//                      -> affine -> ReLU -> affine -> L2 normalize (projections)

struct EncoderDims {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 256;
  std::size_t feature_dim = 128;
  std::size_t projection_dim = 64;

  bool operator==(const EncoderDims&) const = default;
};

struct EncoderParams {
  EncoderDims dims;
  Mlp net;

  std::span<double> flat() { return net.theta(); }
  std::span<const double> flat() const { return net.theta(); }
  std::size_t param_count() const { return net.param_count(); }
};

inline Mlp encoder_layout(const EncoderDims& d) {
  if (d.input_dim == 0 || d.hidden_dim == 0 || d.feature_dim == 0 || d.projection_dim == 0)
    throw ConfigError("encoder dims must be positive");
  return Mlp({{d.input_dim, d.hidden_dim, true},
              {d.hidden_dim, d.feature_dim, false},
              {d.feature_dim, d.feature_dim, true},
              {d.feature_dim, d.projection_dim, false}});
}

inline EncoderParams make_encoder(const EncoderDims& dims) { return {dims, encoder_layout(dims)}; }

inline EncoderParams init_encoder(const EncoderDims& dims, std::uint64_t seed) {
  auto params = make_encoder(dims);
  init_uniform(params.net, seed);
  return params;
}

inline constexpr double kZeroNormThreshold = 1e-12;

struct EncoderOutput {
  Matrix features;     // [B x feature_dim]
  Matrix projections;  // [B x projection_dim], unit-norm rows
  std::vector<double> norms;  // pre-normalization norms
  MlpCache cache;
};

inline EncoderOutput forward(const EncoderParams& params, const Matrix& batch) {
  if (batch.rows == 0) throw ConfigError("empty batch");
  EncoderOutput out;
  out.cache = mlp_forward(params.net, batch);
  out.features = out.cache.inputs[2];
  const Matrix& raw = out.cache.inputs.back();
  out.projections = Matrix(raw.rows, raw.cols);
  out.norms.resize(raw.rows);
  for (std::size_t r = 0; r < raw.rows; ++r) {
    const double n = std::sqrt(dot(raw.row(r), raw.row(r)));
    out.norms[r] = n;
    auto dst = out.projections.row(r);
    if (n < kZeroNormThreshold) {
      dst[0] = 1.0;  // zero vector maps to the first basis vector
    } else {
      const auto src = raw.row(r);
      for (std::size_t c = 0; c < raw.cols; ++c) dst[c] = src[c] / n;
    }
  }
  return out;
}

inline std::vector<double> backward(const EncoderParams& params, const EncoderOutput& fwd,
                                    const Matrix& grad_projections) {
  if (grad_projections.rows != fwd.projections.rows || grad_projections.cols != fwd.projections.cols)
    throw ConfigError("projection gradient shape mismatch");
  if (!all_finite(grad_projections.data)) throw NumericError("non-finite projection gradient");
  // d(u/|u|)/du applied to g: (g - z (z.g)) / |u|. The zero-vector branch is
  // locally constant, so its Jacobian is zero.
  Matrix grad_raw(grad_projections.rows, grad_projections.cols);
  for (std::size_t r = 0; r < grad_raw.rows; ++r) {
    const double n = fwd.norms[r];
    if (n < kZeroNormThreshold) continue;
    const auto z = fwd.projections.row(r);
    const auto g = grad_projections.row(r);
    const double zg = dot(z, g);
    auto dst = grad_raw.row(r);
    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] = (g[c] - z[c] * zg) / n;
  }
  return mlp_backward(params.net, fwd.cache, grad_raw);
}

inline std::vector<double> backward(const EncoderParams& params, const Matrix& batch,
                                    const Matrix& grad_projections) {
  if (!all_finite(batch.data)) throw NumericError("non-finite batch");
  return backward(params, forward(params, batch), grad_projections);
}

// ---------------------------------------------------------------------------
// SGD with momentum under a cosine learning-rate schedule.

struct OptimizerState {
  std::vector<double> velocity;
  double base_lr = 0.1;
  double momentum = 0.9;
  std::size_t total_epochs = 1;

  double learning_rate(std::size_t epoch) const {
    return base_lr * 0.5 *
           (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(total_epochs)));
  }
};

inline OptimizerState make_optimizer(std::size_t param_count, double base_lr, double momentum,
                                     std::size_t total_epochs) {
  if (!(base_lr > 0.0)) throw ConfigError("optimizer.base_lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("optimizer.momentum must be in [0, 1)");
  if (total_epochs == 0) throw ConfigError("schedule total_epochs must be >= 1");
  return {std::vector<double>(param_count, 0.0), base_lr, momentum, total_epochs};
}

inline void sgd_step(std::span<double> params, std::span<const double> grads, OptimizerState& state,
                     std::size_t epoch) {
  if (params.size() != grads.size() || state.velocity.size() != params.size())
    throw ConfigError("optimizer state does not match parameter count");
  if (epoch >= state.total_epochs) throw ConfigError("epoch beyond schedule");
  const double lr = state.learning_rate(epoch);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.velocity[i] = state.momentum * state.velocity[i] + grads[i];
    params[i] -= lr * state.velocity[i];
  }
}

inline void sgd_step(EncoderParams& params, std::span<const double> grads, OptimizerState& state,
                     std::size_t epoch) {
  sgd_step(params.flat(), grads, state, epoch);
}

// theta_key <- m * theta_key + (1 - m) * theta_query
inline void momentum_update(EncoderParams& key, const EncoderParams& query, double m) {
  if (!(key.dims == query.dims)) throw ConfigError("momentum_update: encoder dims differ");
  if (!(m >= 0.0 && m < 1.0)) throw ConfigError("momentum_m must be in [0, 1)");
  auto k = key.flat();
  const auto q = query.flat();
  for (std::size_t i = 0; i < k.size(); ++i) k[i] = m * k[i] + (1.0 - m) * q[i];
}

// ---------------------------------------------------------------------------
// Parameter checkpoint: "CSEL", u32 version, 4 x u32 dims, P x f64 (LE).

inline constexpr std::uint32_t kParamFormatVersion = 1;

inline std::vector<std::uint8_t> encode_param_file(const EncoderDims& dims, std::span<const double> values) {
  io::Writer w;
  w.bytes("CSEL");
  w.u32_le(kParamFormatVersion);
  w.u32_le(static_cast<std::uint32_t>(dims.input_dim));
  w.u32_le(static_cast<std::uint32_t>(dims.hidden_dim));
  w.u32_le(static_cast<std::uint32_t>(dims.feature_dim));
  w.u32_le(static_cast<std::uint32_t>(dims.projection_dim));
  for (double v : values) w.f64_le(v);
  return w.data();
}

struct ParamFile {
  EncoderDims dims;
  std::vector<double> values;
};

inline ParamFile decode_param_file(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  io::Reader r(bytes, source);
  r.expect_magic("CSEL");
  const auto version = r.u32_le("version");
  if (version != kParamFormatVersion)
    throw FormatError(source + ": unsupported version " + std::to_string(version));
  ParamFile out;
  out.dims.input_dim = r.u32_le("input_dim");
  out.dims.hidden_dim = r.u32_le("hidden_dim");
  out.dims.feature_dim = r.u32_le("feature_dim");
  out.dims.projection_dim = r.u32_le("projection_dim");
  if (out.dims.input_dim == 0 || out.dims.hidden_dim == 0 || out.dims.feature_dim == 0 ||
      out.dims.projection_dim == 0)
    throw FormatError(source + ": zero encoder dimension");
  const std::size_t expected = encoder_layout(out.dims).param_count();
  if (r.remaining() != expected * 8)
    throw FormatError(source + ": parameter payload holds " + std::to_string(r.remaining()) +
                      " bytes, expected " + std::to_string(expected * 8));
  out.values.resize(expected);
  for (auto& v : out.values) v = r.f64_le("parameter");
  if (!all_finite(out.values)) throw FormatError(source + ": non-finite parameter value");
  return out;
}

inline void save_params(const std::filesystem::path& path, const EncoderParams& params) {
  io::write_file(path, encode_param_file(params.dims, params.flat()));
}

inline EncoderParams load_params(const std::filesystem::path& path) {
  auto file = decode_param_file(io::read_file(path), path.string());
  auto params = make_encoder(file.dims);
  std::copy(file.values.begin(), file.values.end(), params.flat().begin());
  return params;
}

}  // namespace coreselect
