#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "coreselect/augment.hpp"
#include "coreselect/config.hpp"
#include "coreselect/contrastive.hpp"
#include "coreselect/data.hpp"
#include "coreselect/numerics.hpp"
#include "coreselect/parallel.hpp"
#include "coreselect/scoring.hpp"

namespace coreselect {

struct TrainingData {
  Dataset train;  // raw pixels in [0, 1]
  Dataset test;
  ChannelStats stats;  // training split only
  std::optional<SyntheticDataset> synthetic;  // ground truth for synthetic runs
};

inline TrainingData load_training_data(const DatasetSpec& spec) {
  validate_dataset_spec(spec);
  TrainingData td;
  if (spec.source == "synthetic") {
    auto train = make_synthetic(spec.synthetic, Split::train);
    auto test_spec = spec.synthetic;
    test_spec.n = spec.synthetic_test_n;
    td.test = make_synthetic(test_spec, Split::test).dataset;
    td.train = train.dataset;
    td.synthetic = std::move(train);
  } else if (spec.source == "idx") {
    td.train = load_idx(spec.train_images, spec.train_labels);
    if (!spec.test_images.empty()) td.test = load_idx(spec.test_images, spec.test_labels);
  } else {
    std::vector<std::filesystem::path> train_files(spec.train_files.begin(), spec.train_files.end());
    std::vector<std::filesystem::path> test_files(spec.test_files.begin(), spec.test_files.end());
    td.train = load_cifar_binary(train_files);
    if (!test_files.empty()) td.test = load_cifar_binary(test_files);
  }
  td.train = take_first(std::move(td.train), spec.limit);
  td.train.split = Split::train;
  td.test.split = Split::test;
  if (td.test.size() > 0 && !(td.test.shape == td.train.shape))
    throw ConfigError("dataset: test images do not share the training image shape");
  const int classes = std::max(td.train.num_classes, td.test.num_classes);
  td.train.num_classes = td.test.num_classes = classes;
  if (td.train.size() == 0) throw ConfigError("dataset: training split is empty");
  td.stats = channel_stats(td.train);
  validate_stats(td.stats, td.train.shape.channels);
  return td;
}

// ---------------------------------------------------------------------------

struct EpochSummary {
  std::uint32_t epoch = 0;
  double loss = 0.0;
  double mean_cossim = 0.0;
};

struct TrainScoreResult {
  ScoreTable table;
  CoresetRanking ranking;
  EncoderParams params;
  std::vector<EpochSummary> epochs;  // epochs run by this call
};

// Artifact names inside an output directory.
namespace artifacts {
inline constexpr const char* kScores = "scores.cscr";
inline constexpr const char* kCossimLog = "cossim_log.csv";
inline constexpr const char* kRanking = "ranking.csv";
inline constexpr const char* kParams = "params.csel";
inline constexpr const char* kVelocity = "optimizer.csel";
inline constexpr const char* kKeyParams = "key_params.csel";
inline constexpr const char* kQueue = "queue.bin";
inline constexpr const char* kConfigEcho = "config_echo";
inline constexpr const char* kMetadata = "run_meta.txt";
}  // namespace artifacts

// Queue state: "CSQU", u32 version, u64 capacity, u64 dim, u64 head, u64 size,
// capacity*dim f64 (LE).
inline std::vector<std::uint8_t> encode_queue(const NegativeQueue& q) {
  io::Writer w;
  w.bytes("CSQU");
  w.u32_le(1);
  w.u64_le(q.capacity());
  w.u64_le(q.dim());
  w.u64_le(q.head());
  w.u64_le(q.size());
  for (double v : q.storage()) w.f64_le(v);
  return w.data();
}

inline void decode_queue(const std::vector<std::uint8_t>& bytes, const std::string& source, NegativeQueue& q) {
  io::Reader r(bytes, source);
  r.expect_magic("CSQU");
  if (r.u32_le("version") != 1) throw FormatError(source + ": unsupported queue version");
  const auto cap = r.u64_le("capacity");
  const auto dim = r.u64_le("dim");
  const auto head = r.u64_le("head");
  const auto size = r.u64_le("size");
  if (cap != q.capacity() || dim != q.dim()) throw FormatError(source + ": queue shape differs from config");
  if (r.remaining() != cap * dim * 8) throw FormatError(source + ": queue payload size mismatch");
  std::vector<double> data(cap * dim);
  for (auto& v : data) v = r.f64_le("queue entry");
  q.restore(std::move(data), head, size);
}

// Batch boundaries over a shuffled epoch. A trailing batch smaller than
// `min_batch` is merged into its predecessor so every example is scored.
inline std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t batch_size,
                                                                     std::size_t min_batch) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t lo = 0; lo < n; lo += batch_size) out.emplace_back(lo, std::min(n, lo + batch_size));
  if (out.size() > 1 && out.back().second - out.back().first < min_batch) {
    const auto last = out.back();
    out.pop_back();
    out.back().second = last.second;
  }
  return out;
}

struct TrainOptions {
  std::optional<std::filesystem::path> output_dir;  // artifacts are written when set
  bool resume = false;
  std::ostream* progress = nullptr;
};

class ContrastiveTrainer {
 public:
  ContrastiveTrainer(const RunConfig& cfg, const Dataset& train, const ChannelStats& stats)
      : cfg_(cfg),
        validated_((validate_for_training(cfg), true)),
        train_(train),
        stats_(stats),
        view_shape_(output_shape(train.shape, cfg.augment)),
        dims_{view_shape_.size(), cfg.encoder.hidden_dim, cfg.encoder.feature_dim, cfg.encoder.projection_dim},
        query_(init_encoder(dims_, cfg.seed)),
        opt_(make_optimizer(query_.param_count(), cfg.base_lr, cfg.sgd_momentum, cfg.epochs)),
        queue_(cfg.queue_capacity, dims_.projection_dim),
        table_(make_score_table(train.size(), {cfg.seed, to_string(cfg.loss_mode), config_hash(cfg)})) {
    validate_stats(stats, train.shape.channels);
    if (cfg.loss_mode == LossMode::simclr && train.size() < 2)
      throw ConfigError("dataset: simclr mode needs at least two examples");
    if (cfg.loss_mode == LossMode::moco) {
      key_ = query_;
      // Random unit vectors stand in for keys until real keys displace them.
      CounterRng rng(cfg.seed, Stream::queue);
      std::vector<double> v(dims_.projection_dim);
      for (std::size_t i = 0; i < cfg.queue_capacity; ++i) {
        double norm = 0.0;
        for (double& x : v) {
          x = rng.normal();
          norm += x * x;
        }
        norm = std::sqrt(norm);
        for (double& x : v) x /= norm;
        queue_.push(v);
      }
    }
  }

  const ScoreTable& table() const { return table_; }
  const EncoderParams& params() const { return query_; }
  const EncoderDims& dims() const { return dims_; }

  // Builds the normalized views of `batch` as two stacked blocks:
  // rows [0, B) are view_a and rows [B, 2B) are view_b.
  Matrix make_batch_views(std::uint32_t epoch, std::span<const std::size_t> batch) const {
    const std::size_t b = batch.size();
    Matrix x(2 * b, dims_.input_dim);
    parallel_for(b, [&](std::size_t i) {
      const AugmentKey key{cfg_.seed, epoch, batch[i]};
      auto views = make_views(train_.example(batch[i]), cfg_.augment, key);
      normalize_pixels(views.view_a.pixels, view_shape_, stats_);
      normalize_pixels(views.view_b.pixels, view_shape_, stats_);
      std::copy(views.view_a.pixels.begin(), views.view_a.pixels.end(), x.row(i).begin());
      std::copy(views.view_b.pixels.begin(), views.view_b.pixels.end(), x.row(b + i).begin());
    });
    return x;
  }

  // One training epoch. Returns the per-example cossim stream without
  // committing it; the table is only touched by commit().
  std::vector<PairCossim> run_epoch(std::uint32_t epoch, EpochSummary& summary) {
    CounterRng shuffle_rng(cfg_.seed, Stream::shuffle, epoch);
    const auto order = random_permutation(train_.size(), shuffle_rng);
    const std::size_t min_batch = cfg_.loss_mode == LossMode::simclr ? 2 : 1;
    std::vector<PairCossim> stream;
    stream.reserve(train_.size());
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (const auto& [lo, hi] : batch_ranges(order.size(), cfg_.batch_size, min_batch)) {
      const std::span<const std::size_t> batch(order.data() + lo, hi - lo);
      const Matrix x = make_batch_views(epoch, batch);
      ContrastiveBatchResult res;
      std::vector<double> grads;
      if (cfg_.loss_mode == LossMode::simclr) {
        const auto fwd = forward(query_, x);
        res = ntxent_loss(fwd.projections, cfg_.resolved_temperature(), batch);
        check_finite(res, epoch);
        grads = backward(query_, fwd, res.grad_on_projections);
      } else {
        const std::size_t b = batch.size();
        Matrix xq(b, x.cols), xk(b, x.cols);
        std::copy(x.data.begin(), x.data.begin() + static_cast<std::ptrdiff_t>(b * x.cols), xq.data.begin());
        std::copy(x.data.begin() + static_cast<std::ptrdiff_t>(b * x.cols), x.data.end(), xk.data.begin());
        const auto fq = forward(query_, xq);
        const auto fk = forward(key_, xk);
        res = moco_loss(fq.projections, fk.projections, queue_, cfg_.resolved_temperature(), batch);
        check_finite(res, epoch);
        grads = backward(query_, fq, res.grad_on_projections);
        queue_push(queue_, fk.projections);
      }
      if (!all_finite(grads)) throw NumericError("non-finite gradient in epoch " + std::to_string(epoch));
      sgd_step(query_, grads, opt_, epoch);
      if (cfg_.loss_mode == LossMode::moco) momentum_update(key_, query_, cfg_.momentum_m);
      loss_sum += res.loss;
      ++batches;
      stream.insert(stream.end(), res.pair_cossims.begin(), res.pair_cossims.end());
    }
    double cs = 0.0;
    for (const auto& pc : stream) cs += pc.cossim;
    summary = {epoch, loss_sum / static_cast<double>(batches), cs / static_cast<double>(stream.size())};
    return stream;
  }

  void commit(std::span<const PairCossim> stream) { accumulate(table_, stream); }

  // --- checkpointing -------------------------------------------------------

  void save_state(const std::filesystem::path& dir) const {
    io::write_file(dir / artifacts::kParams, encode_param_file(dims_, query_.flat()));
    io::write_file(dir / artifacts::kVelocity, encode_param_file(dims_, opt_.velocity));
    if (cfg_.loss_mode == LossMode::moco) {
      io::write_file(dir / artifacts::kKeyParams, encode_param_file(dims_, key_.flat()));
      io::write_file(dir / artifacts::kQueue, encode_queue(queue_));
    }
    save_scores(dir / artifacts::kScores, table_);
  }

  // Restores the last committed epoch; returns the next epoch to run.
  std::uint32_t load_state(const std::filesystem::path& dir) {
    auto table = load_scores(dir / artifacts::kScores);
    if (table.provenance.config_hash != table_.provenance.config_hash)
      throw ConfigError("--resume: checkpoint was written with a different configuration");
    if (table.n() != table_.n()) throw FormatError("--resume: checkpoint covers a different dataset size");
    if (table.epochs_seen > cfg_.epochs) throw ConfigError("--resume: checkpoint is past train.epochs");
    auto restore = [&](const char* name, std::span<double> dst) {
      const auto file = decode_param_file(io::read_file(dir / name), (dir / name).string());
      if (!(file.dims == dims_)) throw FormatError(std::string(name) + ": dims differ from config");
      std::copy(file.values.begin(), file.values.end(), dst.begin());
    };
    restore(artifacts::kParams, query_.flat());
    restore(artifacts::kVelocity, opt_.velocity);
    if (cfg_.loss_mode == LossMode::moco) {
      restore(artifacts::kKeyParams, key_.flat());
      decode_queue(io::read_file(dir / artifacts::kQueue), (dir / artifacts::kQueue).string(), queue_);
    }
    table.provenance = table_.provenance;
    table_ = std::move(table);
    return table_.epochs_seen;
  }

 private:
  static void check_finite(const ContrastiveBatchResult& res, std::uint32_t epoch) {
    if (!std::isfinite(res.loss)) throw NumericError("non-finite loss in epoch " + std::to_string(epoch));
  }

  const RunConfig& cfg_;
  bool validated_;
  const Dataset& train_;
  const ChannelStats& stats_;
  ImageShape view_shape_;
  EncoderDims dims_;
  EncoderParams query_;
  EncoderParams key_;
  OptimizerState opt_;
  NegativeQueue queue_;
  ScoreTable table_;
};

inline void rewrite_cossim_log(const std::filesystem::path& path, std::uint32_t keep_epochs) {
  std::string kept = std::string(kCossimLogHeader) + "\n";
  if (std::filesystem::exists(path)) {
    for (const auto& row : read_cossim_log(path))
      if (row.epoch < keep_epochs)
        kept += std::to_string(row.epoch) + "," + std::to_string(row.example_index) + "," +
                format_real(row.cossim) + "\n";
  }
  io::write_text(path, kept);
}

// Contrastive training with per-epoch score commits (the train-score command).
inline TrainScoreResult train_score(const RunConfig& cfg, const Dataset& train, const ChannelStats& stats,
                                    const TrainOptions& opts = {}) {
  ContrastiveTrainer trainer(cfg, train, stats);
  std::uint32_t start = 0;
  const auto* dir = opts.output_dir ? &*opts.output_dir : nullptr;
  if (dir) {
    std::filesystem::create_directories(*dir);
    io::write_text(*dir / artifacts::kConfigEcho, canonical_config(cfg));
    if (opts.resume && std::filesystem::exists(*dir / artifacts::kScores)) start = trainer.load_state(*dir);
    rewrite_cossim_log(*dir / artifacts::kCossimLog, start);
    trainer.save_state(*dir);
  }

  TrainScoreResult result;
  for (std::uint32_t epoch = start; epoch < cfg.epochs; ++epoch) {
    EpochSummary summary;
    const auto stream = trainer.run_epoch(epoch, summary);
    trainer.commit(stream);
    if (dir) {
      std::ofstream log(*dir / artifacts::kCossimLog, std::ios::app);
      log << cossim_log_rows(epoch, stream);
      if (!log) throw IoError("cannot append to cossim log");
      log.close();
      trainer.save_state(*dir);
    }
    if (opts.progress) {
      *opts.progress << "epoch " << epoch << " loss " << format_real(summary.loss) << " mean_cossim "
                     << format_real(summary.mean_cossim) << "\n";
      opts.progress->flush();
    }
    result.epochs.push_back(summary);
  }
  result.table = trainer.table();
  result.ranking = rank(result.table);
  result.params = trainer.params();
  if (dir) io::write_text(*dir / artifacts::kRanking, ranking_csv(result.ranking));
  return result;
}

}  // namespace coreselect
