#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "coreselect/binary_io.hpp"
#include "coreselect/contrastive.hpp"
#include "coreselect/error.hpp"

namespace coreselect {

using ConfigHash = std::array<std::uint8_t, 32>;

struct Provenance {
  std::uint64_t seed = 0;
  std::string loss_mode = "simclr";
  ConfigHash config_hash{};
};

// Accumulated negative positive-pair cossim per example.
struct ScoreTable {
  std::vector<double> m;
  std::uint32_t epochs_seen = 0;
  Provenance provenance;

  std::size_t n() const { return m.size(); }
};

inline ScoreTable make_score_table(std::size_t n, Provenance provenance = {}) {
  return {std::vector<double>(n, 0.0), 0, std::move(provenance)};
}

// Commits one full epoch: m[k] -= cossim_k. The stream must name every example
// exactly once; the table is left untouched if it does not.
inline void accumulate(ScoreTable& table, std::span<const PairCossim> epoch_cossims) {
  const std::size_t n = table.n();
  std::vector<double> per_example(n, 0.0);
  std::vector<bool> seen(n, false);
  for (const auto& pc : epoch_cossims) {
    if (pc.example_index >= n)
      throw ProtocolError("epoch stream names example " + std::to_string(pc.example_index) +
                          " outside [0, " + std::to_string(n) + ")");
    if (seen[pc.example_index])
      throw ProtocolError("example " + std::to_string(pc.example_index) + " appears twice in one epoch");
    seen[pc.example_index] = true;
    per_example[pc.example_index] = pc.cossim;
  }
  if (epoch_cossims.size() != n) {
    const auto missing = std::find(seen.begin(), seen.end(), false) - seen.begin();
    throw ProtocolError("epoch stream is missing example " + std::to_string(missing));
  }
  for (std::size_t k = 0; k < n; ++k) table.m[k] -= per_example[k];
  ++table.epochs_seen;
}

struct CoresetRanking {
  std::vector<std::size_t> order;   // a: example indices, highest score first
  std::vector<double> score_snapshot;
  std::uint32_t epochs_seen = 0;

  std::size_t size() const { return order.size(); }
};

// Descending by score; ties broken by ascending example index.
inline CoresetRanking rank_scores(std::span<const double> scores, std::uint32_t epochs_seen = 0) {
  CoresetRanking r;
  r.order.resize(scores.size());
  std::iota(r.order.begin(), r.order.end(), std::size_t{0});
  std::stable_sort(r.order.begin(), r.order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  r.score_snapshot.assign(scores.begin(), scores.end());
  r.epochs_seen = epochs_seen;
  return r;
}

inline CoresetRanking rank(const ScoreTable& table) {
  if (table.epochs_seen == 0) throw StateError("rank: no epoch has been accumulated");
  return rank_scores(table.m, table.epochs_seen);
}

// A[stride : stride + size]
inline std::vector<std::size_t> select(const CoresetRanking& ranking, std::size_t size, std::size_t stride = 0) {
  if (stride > ranking.size() || size > ranking.size() - stride)
    throw BoundsError("select: stride " + std::to_string(stride) + " + size " + std::to_string(size) +
                      " exceeds N = " + std::to_string(ranking.size()));
  const auto first = ranking.order.begin() + static_cast<std::ptrdiff_t>(stride);
  return {first, first + static_cast<std::ptrdiff_t>(size)};
}

// Average positive-pair cossim: -m[k] / epochs_seen.
inline std::vector<double> mean_cossim(const ScoreTable& table) {
  if (table.epochs_seen == 0) throw StateError("mean_cossim: no epoch has been accumulated");
  std::vector<double> out(table.n());
  for (std::size_t k = 0; k < table.n(); ++k) out[k] = -table.m[k] / table.epochs_seen;
  return out;
}

// Rounds fraction * n to the nearest integer, minimum 1.
inline std::size_t subset_size_from_fraction(double fraction, std::size_t n) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("fraction must be in (0, 1]");
  const auto l = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  return std::clamp<std::size_t>(l, 1, std::max<std::size_t>(n, 1));
}

// ---------------------------------------------------------------------------
// Score checkpoint: "CSCR", u32 version, u64 N, u32 epochs_seen, N x f64,
// 32-byte config hash. Little-endian.

inline constexpr std::uint32_t kScoreFormatVersion = 1;

inline std::vector<std::uint8_t> encode_score_file(const ScoreTable& table) {
  io::Writer w;
  w.bytes("CSCR");
  w.u32_le(kScoreFormatVersion);
  w.u64_le(table.n());
  w.u32_le(table.epochs_seen);
  for (double v : table.m) w.f64_le(v);
  w.bytes(table.provenance.config_hash.data(), table.provenance.config_hash.size());
  return w.data();
}

inline ScoreTable decode_score_file(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  io::Reader r(bytes, source);
  r.expect_magic("CSCR");
  const auto version = r.u32_le("version");
  if (version != kScoreFormatVersion)
    throw FormatError(source + ": unsupported version " + std::to_string(version));
  const auto n = r.u64_le("N");
  ScoreTable t;
  t.epochs_seen = r.u32_le("epochs_seen");
  if (r.remaining() != n * 8 + 32)
    throw FormatError(source + ": payload size does not match N = " + std::to_string(n));
  t.m.resize(n);
  for (auto& v : t.m) v = r.f64_le("score");
  const auto* hash = r.take(32, "config hash");
  std::copy(hash, hash + 32, t.provenance.config_hash.begin());
  return t;
}

inline void save_scores(const std::filesystem::path& path, const ScoreTable& table) {
  io::write_file(path, encode_score_file(table));
}

inline ScoreTable load_scores(const std::filesystem::path& path) {
  return decode_score_file(io::read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// CSV artifacts. Reals are printed with 17 significant digits so that the
// text round-trips to the identical double.

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline constexpr const char* kCossimLogHeader = "epoch,example_index,cossim";

// Rows of one epoch in ascending example order.
inline std::string cossim_log_rows(std::uint32_t epoch, std::span<const PairCossim> stream) {
  std::vector<PairCossim> sorted(stream.begin(), stream.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const PairCossim& a, const PairCossim& b) { return a.example_index < b.example_index; });
  std::string out;
  for (const auto& pc : sorted)
    out += std::to_string(epoch) + "," + std::to_string(pc.example_index) + "," + format_real(pc.cossim) + "\n";
  return out;
}

struct CossimLogRow {
  std::uint32_t epoch = 0;
  std::size_t example_index = 0;
  double cossim = 0.0;
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) fields.push_back(f);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

inline std::vector<CossimLogRow> read_cossim_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kCossimLogHeader)
    throw FormatError(path.string() + ": missing header '" + kCossimLogHeader + "'");
  std::vector<CossimLogRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 3) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected 3 fields");
    try {
      rows.push_back({static_cast<std::uint32_t>(std::stoul(f[0])), std::stoull(f[1]), std::stod(f[2])});
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": malformed number");
    }
  }
  return rows;
}

inline std::string ranking_csv(const CoresetRanking& ranking) {
  std::string out = "rank,example_index,score,mean_cossim\n";
  for (std::size_t r = 0; r < ranking.size(); ++r) {
    const auto k = ranking.order[r];
    const double score = ranking.score_snapshot[k];
    const double mean = ranking.epochs_seen ? -score / ranking.epochs_seen : 0.0;
    out += std::to_string(r) + "," + std::to_string(k) + "," + format_real(score) + "," + format_real(mean) + "\n";
  }
  return out;
}

// Reads a ranking export; accepts both the scoring layout and the baseline
// layout with a leading `method` column.
inline CoresetRanking read_ranking_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty ranking file");
  const auto header = split_csv_line(line);
  const auto col = [&](const std::string& name) -> std::ptrdiff_t {
    const auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : it - header.begin();
  };
  const auto rank_col = col("rank");
  const auto index_col = col("example_index");
  const auto score_col = col("score");
  if (rank_col < 0 || index_col < 0 || score_col < 0)
    throw FormatError(path.string() + ": header must contain rank, example_index, score");

  std::vector<std::pair<std::size_t, double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size())
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": wrong field count");
    try {
      if (std::stoull(f[static_cast<std::size_t>(rank_col)]) != rows.size())
        throw FormatError(path.string() + ":" + std::to_string(line_no) + ": ranks must be consecutive from 0");
      rows.emplace_back(std::stoull(f[static_cast<std::size_t>(index_col)]),
                        std::stod(f[static_cast<std::size_t>(score_col)]));
    } catch (const std::invalid_argument&) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": malformed number");
    } catch (const std::out_of_range&) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": number out of range");
    }
  }
  CoresetRanking r;
  const std::size_t n = rows.size();
  r.score_snapshot.assign(n, 0.0);
  std::vector<bool> seen(n, false);
  for (const auto& [k, score] : rows) {
    if (k >= n || seen[k]) throw FormatError(path.string() + ": example indices are not a permutation");
    seen[k] = true;
    r.order.push_back(k);
    r.score_snapshot[k] = score;
  }
  return r;
}

}  // namespace coreselect
