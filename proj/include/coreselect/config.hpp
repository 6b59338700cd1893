#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "coreselect/augment.hpp"
#include "coreselect/binary_io.hpp"
#include "coreselect/classifier.hpp"
#include "coreselect/data.hpp"
#include "coreselect/error.hpp"
#include "coreselect/numerics.hpp"
#include "coreselect/scoring.hpp"

namespace coreselect {

enum class LossMode { simclr, moco };

inline std::string to_string(LossMode m) { return m == LossMode::simclr ? "simclr" : "moco"; }

struct DatasetSpec {
  std::string source = "synthetic";  // synthetic | idx | cifar
  std::string train_images, train_labels, test_images, test_labels;  // idx
  std::vector<std::string> train_files, test_files;                   // cifar
  std::size_t limit = 0;  // keep the first `limit` training examples (0 = all)
  SyntheticSpec synthetic;
  std::size_t synthetic_test_n = 1000;
};

struct EvalSpec {
  std::string ranking;                // default: <output_dir>/ranking.csv
  std::vector<std::string> rankings;  // consistency inputs
  std::string scores;                 // default: <output_dir>/scores.cscr
  double fraction = 0.3;
  std::vector<double> strides = {0.0, 0.2, 0.4, 0.6};  // fractions of N
  std::size_t runs = 5;
  double train_fraction = 0.3;
  double test_fraction = 0.3;
  std::string method = "random";  // random | forgetting | kcenters
  std::uint64_t seed = 100;
};

struct RunConfig {
  DatasetSpec dataset;
  LossMode loss_mode = LossMode::simclr;
  std::size_t epochs = 40;
  std::size_t batch_size = 128;
  std::optional<double> temperature;  // unset: 0.5 (simclr) / 0.2 (moco)
  double momentum_m = 0.99;
  std::size_t queue_capacity = 1024;
  double base_lr = 0.3;
  double sgd_momentum = 0.9;
  EncoderDims encoder;  // input_dim derived from the data
  AugmentConfig augment;
  ClassifierConfig classifier;
  EvalSpec eval;
  std::uint64_t seed = 0;
  std::string output_dir = "run";

  double resolved_temperature() const {
    return temperature.value_or(loss_mode == LossMode::simclr ? 0.5 : 0.2);
  }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a real number, got '" + v + "'");
  }
}

inline std::vector<std::string> parse_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

inline std::string real(double v) { return format_real(v); }

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
  bool hashed = true;  // contributes to the config hash
};

#define CS_U64(KEY, MEMBER)                                                                      \
  Field{KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = parse_u64(KEY, v); },        \
        [](const RunConfig& c) { return std::to_string(c.MEMBER); }}
#define CS_SIZE(KEY, MEMBER)                                                                                 \
  Field{KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = static_cast<std::size_t>(parse_u64(KEY, v)); }, \
        [](const RunConfig& c) { return std::to_string(c.MEMBER); }}
#define CS_REAL(KEY, MEMBER)                                                                     \
  Field{KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = parse_real(KEY, v); },       \
        [](const RunConfig& c) { return real(c.MEMBER); }}
#define CS_STR(KEY, MEMBER)                                                                      \
  Field{KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = v; },                        \
        [](const RunConfig& c) { return c.MEMBER; }}
#define CS_LIST(KEY, MEMBER)                                                                     \
  Field{KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = parse_list(v); },            \
        [](const RunConfig& c) { return join(c.MEMBER); }}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f = {
        CS_STR("dataset.source", dataset.source),
        CS_STR("dataset.train_images", dataset.train_images),
        CS_STR("dataset.train_labels", dataset.train_labels),
        CS_STR("dataset.test_images", dataset.test_images),
        CS_STR("dataset.test_labels", dataset.test_labels),
        CS_LIST("dataset.train_files", dataset.train_files),
        CS_LIST("dataset.test_files", dataset.test_files),
        CS_SIZE("dataset.limit", dataset.limit),
        CS_SIZE("synthetic.n", dataset.synthetic.n),
        CS_SIZE("synthetic.test_n", dataset.synthetic_test_n),
        CS_SIZE("synthetic.image_size", dataset.synthetic.image_size),
        CS_SIZE("synthetic.channels", dataset.synthetic.channels),
        Field{"synthetic.num_classes",
              [](RunConfig& c, const std::string& v) {
                c.dataset.synthetic.num_classes = static_cast<int>(parse_u64("synthetic.num_classes", v));
              },
              [](const RunConfig& c) { return std::to_string(c.dataset.synthetic.num_classes); }},
        CS_REAL("synthetic.hard_fraction", dataset.synthetic.hard_fraction),
        CS_U64("synthetic.seed", dataset.synthetic.seed),
        Field{"train.loss_mode",
              [](RunConfig& c, const std::string& v) {
                if (v == "simclr") c.loss_mode = LossMode::simclr;
                else if (v == "moco") c.loss_mode = LossMode::moco;
                else throw ConfigError("train.loss_mode: expected simclr or moco, got '" + v + "'");
              },
              [](const RunConfig& c) { return to_string(c.loss_mode); }},
        CS_SIZE("train.epochs", epochs),
        CS_SIZE("train.batch_size", batch_size),
        Field{"train.temperature",
              [](RunConfig& c, const std::string& v) { c.temperature = parse_real("train.temperature", v); },
              [](const RunConfig& c) { return real(c.resolved_temperature()); }},
        CS_REAL("train.momentum_m", momentum_m),
        CS_SIZE("train.queue_capacity", queue_capacity),
        CS_REAL("optimizer.base_lr", base_lr),
        CS_REAL("optimizer.momentum", sgd_momentum),
        CS_SIZE("encoder.hidden_dim", encoder.hidden_dim),
        CS_SIZE("encoder.feature_dim", encoder.feature_dim),
        CS_SIZE("encoder.projection_dim", encoder.projection_dim),
        CS_REAL("augment.crop_scale_lo", augment.crop_scale_lo),
        CS_REAL("augment.crop_scale_hi", augment.crop_scale_hi),
        CS_REAL("augment.flip_prob", augment.flip_prob),
        CS_REAL("augment.jitter_strength", augment.jitter_strength),
        CS_REAL("augment.grayscale_prob", augment.grayscale_prob),
        CS_SIZE("augment.output_height", augment.output_height),
        CS_SIZE("augment.output_width", augment.output_width),
        CS_SIZE("classifier.hidden_dim", classifier.hidden_dim),
        CS_SIZE("classifier.feature_dim", classifier.feature_dim),
        CS_SIZE("classifier.epochs", classifier.epochs),
        CS_SIZE("classifier.batch_size", classifier.batch_size),
        CS_REAL("classifier.base_lr", classifier.base_lr),
        CS_REAL("classifier.momentum", classifier.momentum),
        CS_STR("eval.ranking", eval.ranking),
        CS_LIST("eval.rankings", eval.rankings),
        CS_STR("eval.scores", eval.scores),
        CS_REAL("eval.fraction", eval.fraction),
        Field{"eval.strides",
              [](RunConfig& c, const std::string& v) {
                c.eval.strides.clear();
                for (const auto& s : parse_list(v)) c.eval.strides.push_back(parse_real("eval.strides", s));
              },
              [](const RunConfig& c) {
                std::vector<std::string> s;
                for (double d : c.eval.strides) s.push_back(real(d));
                return join(s);
              }},
        CS_SIZE("eval.runs", eval.runs),
        CS_REAL("eval.train_fraction", eval.train_fraction),
        CS_REAL("eval.test_fraction", eval.test_fraction),
        CS_STR("eval.method", eval.method),
        CS_U64("eval.seed", eval.seed),
        CS_U64("seed", seed),
        CS_STR("output_dir", output_dir),
    };
    // Locations and evaluation settings do not change what training computes.
    for (auto& field : f)
      if (field.key == "output_dir" || field.key.rfind("eval.", 0) == 0 || field.key.rfind("classifier.", 0) == 0)
        field.hashed = false;
    return f;
  }();
  return table;
}

#undef CS_U64
#undef CS_SIZE
#undef CS_REAL
#undef CS_STR
#undef CS_LIST

}  // namespace config_detail

inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : config_detail::fields())
    if (f.key == key) {
      f.set(cfg, value);
      return;
    }
  throw ConfigError(key + ": unknown configuration key");
}

// Line-oriented `key = value`; '#' starts a comment.
inline RunConfig parse_config(const std::string& text, const std::string& source = "config") {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
    set_config_value(cfg, config_detail::trim(line.substr(0, eq)), config_detail::trim(line.substr(eq + 1)));
  }
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("--config: file not found: " + path.string());
  return parse_config(io::read_text(path), path.string());
}

// Resolved configuration, one `key = value` per line in sorted key order.
inline std::string canonical_config(const RunConfig& cfg, bool hashed_only = false) {
  std::map<std::string, std::string> kv;
  for (const auto& f : config_detail::fields())
    if (!hashed_only || f.hashed) kv[f.key] = f.get(cfg);
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

inline ConfigHash sha256(const std::string& text) {
  ConfigHash out{};
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 || len != out.size())
    throw StateError("SHA-256 digest failed");
  return out;
}

inline ConfigHash config_hash(const RunConfig& cfg) { return sha256(canonical_config(cfg, true)); }

// Field-level checks for training runs.
inline void validate_for_training(const RunConfig& cfg) {
  if (cfg.epochs == 0) throw ConfigError("train.epochs: must be >= 1 (nothing to accumulate)");
  if (cfg.loss_mode == LossMode::simclr && cfg.batch_size < 4)
    throw ConfigError("train.batch_size: must be >= 4 in simclr mode");
  if (cfg.batch_size == 0) throw ConfigError("train.batch_size: must be >= 1");
  if (!(cfg.resolved_temperature() > 0.0)) throw ConfigError("train.temperature: must be > 0");
  if (!(cfg.momentum_m >= 0.0 && cfg.momentum_m < 1.0)) throw ConfigError("train.momentum_m: must be in [0, 1)");
  if (cfg.queue_capacity == 0) throw ConfigError("train.queue_capacity: must be >= 1");
  if (!(cfg.base_lr > 0.0)) throw ConfigError("optimizer.base_lr: must be > 0");
  if (!(cfg.sgd_momentum >= 0.0 && cfg.sgd_momentum < 1.0)) throw ConfigError("optimizer.momentum: must be in [0, 1)");
  if (cfg.encoder.hidden_dim == 0 || cfg.encoder.feature_dim == 0 || cfg.encoder.projection_dim == 0)
    throw ConfigError("encoder: dims must be positive");
  cfg.augment.validate();
}

inline void validate_dataset_spec(const DatasetSpec& d) {
  auto need_file = [](const std::string& key, const std::string& path) {
    if (path.empty()) throw ConfigError(key + ": required for this dataset.source");
    if (!std::filesystem::exists(path)) throw ConfigError(key + ": file not found: " + path);
  };
  if (d.source == "synthetic") {
    if (!(d.synthetic.hard_fraction > 0.0 && d.synthetic.hard_fraction < 1.0))
      throw ConfigError("synthetic.hard_fraction: must be in (0, 1)");
    if (d.synthetic.image_size < 8) throw ConfigError("synthetic.image_size: must be >= 8");
    if (d.synthetic.n == 0) throw ConfigError("synthetic.n: must be >= 1");
    if (d.synthetic_test_n == 0) throw ConfigError("synthetic.test_n: must be >= 1");
  } else if (d.source == "idx") {
    need_file("dataset.train_images", d.train_images);
    need_file("dataset.train_labels", d.train_labels);
    if (!d.test_images.empty()) need_file("dataset.test_images", d.test_images);
    if (!d.test_labels.empty()) need_file("dataset.test_labels", d.test_labels);
  } else if (d.source == "cifar") {
    if (d.train_files.empty()) throw ConfigError("dataset.train_files: required for cifar source");
    for (const auto& f : d.train_files) need_file("dataset.train_files", f);
    for (const auto& f : d.test_files) need_file("dataset.test_files", f);
  } else {
    throw ConfigError("dataset.source: expected synthetic, idx or cifar, got '" + d.source + "'");
  }
}

}  // namespace coreselect
