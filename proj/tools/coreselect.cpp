// coreselect: unsupervised coreset selection from contrastive training.
//
//   coreselect train-score --config run.cfg [--seed N] [--out DIR] [--resume]
//   coreselect select --ranking DIR/ranking.csv (--size L | --fraction F) [--stride S] --out DIR
//   coreselect eval stride|cross|consistency|imbalance|cossim-stats|baseline --config run.cfg

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "coreselect/coreselect.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace coreselect;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool resume = false;
};

RunConfig resolve_config(const CommonFlags& flags) {
  auto cfg = load_config(flags.config);
  if (flags.seed) cfg.seed = *flags.seed;
  if (!flags.out.empty()) cfg.output_dir = flags.out;
  return cfg;
}

void require_artifact(const fs::path& p) {
  if (!fs::exists(p)) throw ConfigError("missing artifact: " + p.string());
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

json report_json(const EvalReport& r) {
  json runs = json::array();
  for (const auto& run : r.runs)
    runs.push_back({{"run", run.run}, {"seed", run.seed}, {"test_accuracy", run.test_accuracy}});
  return {{"method", r.method},
          {"L", r.subset_size},
          {"stride", r.stride},
          {"test_accuracy_mean", r.test_accuracy_mean},
          {"test_accuracy_std", r.test_accuracy_std},
          {"runs", runs}};
}

json config_json(const RunConfig& cfg) {
  json j = json::object();
  std::istringstream in(canonical_config(cfg));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    j[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return j;
}

void write_summary(const fs::path& dir, const RunConfig& cfg, const std::string& experiment, json results) {
  json doc = {{"experiment", experiment}, {"config", config_json(cfg)}, {"results", std::move(results)}};
  io::write_text(dir / "summary.json", doc.dump(2) + "\n");
}

struct EvalData {
  Dataset train;
  Dataset test;
};

EvalData load_eval_data(const RunConfig& cfg) {
  auto td = load_training_data(cfg.dataset);
  EvalData d{normalize(td.train, td.stats), td.test};
  if (d.test.size() > 0) d.test = normalize(std::move(d.test), td.stats);
  return d;
}

fs::path ranking_path(const RunConfig& cfg) {
  return cfg.eval.ranking.empty() ? fs::path(cfg.output_dir) / artifacts::kRanking : fs::path(cfg.eval.ranking);
}

int cmd_train_score(const CommonFlags& flags) {
  const auto cfg = resolve_config(flags);
  validate_for_training(cfg);
  const auto td = load_training_data(cfg.dataset);
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  io::write_text(dir / artifacts::kMetadata, "started = " + timestamp() + "\n");
  TrainOptions opts{dir, flags.resume, &std::cout};
  const auto res = train_score(cfg, td.train, td.stats, opts);
  std::ofstream(dir / artifacts::kMetadata, std::ios::app) << "finished = " << timestamp() << "\n";
  std::cout << "train-score: N=" << res.table.n() << " epochs=" << res.table.epochs_seen
            << " top=" << res.ranking.order.front() << " -> " << dir.string() << "\n";
  return 0;
}

int cmd_select(const std::string& ranking_file, std::optional<std::size_t> size, std::optional<double> fraction,
               std::size_t stride, const std::string& out) {
  if (size.has_value() == fraction.has_value()) throw ConfigError("select: give exactly one of --size or --fraction");
  require_artifact(ranking_file);
  const auto ranking = read_ranking_csv(ranking_file);
  const std::size_t n = ranking.size();
  const std::size_t l = size ? *size : subset_size_from_fraction(*fraction, n);
  if (stride > n || l > n - stride)
    throw ConfigError("select: stride " + std::to_string(stride) + " is beyond N - L = " +
                      std::to_string(n >= l ? n - l : 0));
  const auto subset = select(ranking, l, stride);
  std::string text;
  for (auto k : subset) text += std::to_string(k) + "\n";
  const fs::path dir = out.empty() ? fs::path(".") : fs::path(out);
  fs::create_directories(dir);
  io::write_text(dir / "subset.txt", text);
  std::cout << "select: " << l << " of " << n << " from stride " << stride << " -> " << (dir / "subset.txt").string()
            << "\n";
  return 0;
}

std::size_t stride_count(double frac, std::size_t n) {
  if (!(frac >= 0.0 && frac < 1.0)) throw ConfigError("eval.strides: fractions must be in [0, 1)");
  return static_cast<std::size_t>(std::llround(frac * static_cast<double>(n)));
}

int eval_stride(const RunConfig& cfg, const fs::path& dir) {
  const auto rpath = ranking_path(cfg);
  require_artifact(rpath);
  const auto ranking = read_ranking_csv(rpath);
  const auto data = load_eval_data(cfg);
  if (ranking.size() != data.train.size()) throw ConfigError("eval.ranking: ranking size does not match dataset");
  const std::size_t n = ranking.size();
  const std::size_t l = subset_size_from_fraction(cfg.eval.fraction, n);
  std::vector<std::size_t> strides;
  for (double s : cfg.eval.strides) strides.push_back(stride_count(s, n));
  const auto reports = stride_experiment(ranking, data.train, data.test, l, strides, cfg.eval.runs, cfg.classifier,
                                         cfg.eval.seed);
  io::write_text(dir / "report.csv", report_csv(reports));
  json results = json::array();
  for (const auto& r : reports) results.push_back(report_json(r));
  write_summary(dir, cfg, "stride", results);
  std::cout << "eval stride:";
  for (const auto& r : reports)
    std::cout << " " << r.method << "@" << r.stride << "=" << format_real(r.test_accuracy_mean);
  std::cout << "\n";
  return 0;
}

int eval_cross(const RunConfig& cfg, const fs::path& dir) {
  const auto rpath = ranking_path(cfg);
  require_artifact(rpath);
  const auto ranking = read_ranking_csv(rpath);
  const auto data = load_eval_data(cfg);
  const auto res = cross_test(ranking, data.train, cfg.eval.train_fraction, cfg.eval.test_fraction, cfg.eval.runs,
                              cfg.classifier, cfg.eval.seed);
  const std::vector<EvalReport> reports = {res.coreset_to_noncoreset, res.noncoreset_to_coreset};
  io::write_text(dir / "report.csv", report_csv(reports));
  write_summary(dir, cfg, "cross", {report_json(reports[0]), report_json(reports[1])});
  std::cout << "eval cross: C->N " << format_real(reports[0].test_accuracy_mean) << " N->C "
            << format_real(reports[1].test_accuracy_mean) << "\n";
  return 0;
}

int eval_consistency(const RunConfig& cfg, const fs::path& dir) {
  if (cfg.eval.rankings.size() < 2) throw ConfigError("eval.rankings: list at least two ranking files");
  std::vector<CoresetRanking> rankings;
  for (const auto& p : cfg.eval.rankings) {
    require_artifact(p);
    rankings.push_back(read_ranking_csv(p));
  }
  const std::size_t n = rankings.front().size();
  const std::size_t l = subset_size_from_fraction(cfg.eval.fraction, n);
  const double ratio = consistency(rankings, l);
  const double f = static_cast<double>(l) / static_cast<double>(n);
  const double random_expectation = std::pow(f, static_cast<double>(rankings.size() - 1));
  io::write_text(dir / "report.csv", "rankings,L,N,intersection_ratio,random_expectation\n" +
                                         std::to_string(rankings.size()) + "," + std::to_string(l) + "," +
                                         std::to_string(n) + "," + format_real(ratio) + "," +
                                         format_real(random_expectation) + "\n");
  write_summary(dir, cfg, "consistency",
                {{"rankings", cfg.eval.rankings},
                 {"L", l},
                 {"N", n},
                 {"intersection_ratio", ratio},
                 {"random_expectation", random_expectation}});
  std::cout << "eval consistency: ratio " << format_real(ratio) << " (random expectation "
            << format_real(random_expectation) << ")\n";
  return 0;
}

int eval_imbalance(const RunConfig& cfg, const fs::path& dir) {
  const auto rpath = ranking_path(cfg);
  require_artifact(rpath);
  const auto ranking = read_ranking_csv(rpath);
  const auto td = load_training_data(cfg.dataset);
  if (!td.train.has_labels()) throw ConfigError("eval imbalance: dataset has no labels");
  if (ranking.size() != td.train.size()) throw ConfigError("eval.ranking: ranking size does not match dataset");
  const std::size_t l = subset_size_from_fraction(cfg.eval.fraction, ranking.size());
  const auto core = imbalance(select(ranking, l, 0), *td.train.labels, td.train.num_classes);
  const auto rnd = imbalance(random_subset(ranking.size(), l, cfg.eval.seed), *td.train.labels, td.train.num_classes);
  std::string csv = "class,coreset_count,coreset_fraction,random_count,random_fraction\n";
  for (std::size_t c = 0; c < core.counts.size(); ++c)
    csv += std::to_string(c) + "," + std::to_string(core.counts[c]) + "," + format_real(core.fraction[c]) + "," +
           std::to_string(rnd.counts[c]) + "," + format_real(rnd.fraction[c]) + "\n";
  io::write_text(dir / "report.csv", csv);
  write_summary(dir, cfg, "imbalance",
                {{"L", l},
                 {"coreset_fraction", core.fraction},
                 {"coreset_count", core.counts},
                 {"random_fraction", rnd.fraction},
                 {"random_count", rnd.counts}});
  std::cout << "eval imbalance: coreset fractions";
  for (double f : core.fraction) std::cout << " " << format_real(f);
  std::cout << "\n";
  return 0;
}

int eval_cossim_stats(const RunConfig& cfg, const fs::path& dir) {
  const fs::path spath = cfg.eval.scores.empty() ? fs::path(cfg.output_dir) / artifacts::kScores : fs::path(cfg.eval.scores);
  require_artifact(spath);
  const auto table = load_scores(spath);
  const auto st = cossim_stats(mean_cossim(table));
  std::string csv = "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < st.counts.size(); ++b)
    csv += format_real(st.bin_edges[b]) + "," + format_real(st.bin_edges[b + 1]) + "," + std::to_string(st.counts[b]) + "\n";
  io::write_text(dir / "report.csv", csv);
  write_summary(dir, cfg, "cossim-stats",
                {{"mean", st.mean}, {"median", st.median}, {"bin_edges", st.bin_edges}, {"counts", st.counts}});
  std::cout << "eval cossim-stats: (mean, median) = (" << format_real(st.mean) << ", " << format_real(st.median)
            << ")\n";
  return 0;
}

int eval_baseline(const RunConfig& cfg, const std::string& method, const fs::path& dir) {
  const auto data = load_eval_data(cfg);
  const std::size_t n = data.train.size();
  const std::size_t l = subset_size_from_fraction(cfg.eval.fraction, n);
  std::vector<std::size_t> order;
  std::vector<double> scores;
  if (method == "random") {
    order = random_subset(n, n, cfg.eval.seed);
    scores.assign(n, 0.0);
  } else if (method == "forgetting") {
    const auto table = forgetting_events(data.train, cfg.classifier, cfg.eval.seed);
    const auto ranking = forgetting_ranking(table);
    order = ranking.order;
    for (auto k : order) scores.push_back(ranking.score_snapshot[k]);
  } else if (method == "kcenters") {
    const auto cs = kcenters_selection(data.train, n, cfg.classifier, cfg.eval.seed);
    order = cs.chosen;
    scores = cs.pick_dist;
  } else {
    throw ConfigError("eval.method: expected random, forgetting or kcenters, got '" + method + "'");
  }
  io::write_text(dir / "baseline_ranking.csv", baseline_ranking_csv(method, order, scores));
  const std::vector<std::size_t> subset(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(l));
  std::string text;
  for (auto k : subset) text += std::to_string(k) + "\n";
  io::write_text(dir / "subset.txt", text);

  auto rep = make_report(method, l, 0);
  if (data.test.size() > 0) {
    for (std::size_t r = 0; r < cfg.eval.runs; ++r)
      rep.runs.push_back(timed_run(r, run_seed(cfg.eval.seed, r), data.train, subset, data.test, {}, cfg.classifier));
    finalize(rep);
  }
  const std::vector<EvalReport> reports = {rep};
  io::write_text(dir / "report.csv", report_csv(reports));
  write_summary(dir, cfg, "baseline", report_json(rep));
  std::cout << "eval baseline: method " << method << " L=" << l << " accuracy "
            << format_real(rep.test_accuracy_mean) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised coreset selection from contrastive training"};
  app.require_subcommand(1);

  CommonFlags train_flags;
  auto* train = app.add_subcommand("train-score", "Contrastive training with per-example coreset scoring");
  train->add_option("--config", train_flags.config, "Run configuration file")->required();
  train->add_option("--seed", train_flags.seed, "Override the configured seed");
  train->add_option("--out", train_flags.out, "Output directory");
  train->add_flag("--resume", train_flags.resume, "Continue from the latest checkpoint in the output directory");

  std::string ranking_file, select_out;
  std::optional<std::size_t> select_size;
  std::optional<double> select_fraction;
  std::size_t select_stride = 0;
  auto* sel = app.add_subcommand("select", "Slice a ranking into a subset index file");
  sel->add_option("--ranking", ranking_file, "ranking.csv produced by train-score")->required();
  sel->add_option("--size", select_size, "Subset size L");
  sel->add_option("--fraction", select_fraction, "Subset size as a fraction of N in (0, 1]");
  sel->add_option("--stride", select_stride, "Offset s into the ranking");
  sel->add_option("--out", select_out, "Output directory for subset.txt");

  CommonFlags eval_flags;
  std::string eval_kind;
  std::string method;
  auto* ev = app.add_subcommand("eval", "Evaluation battery");
  ev->add_option("kind", eval_kind, "stride|cross|consistency|imbalance|cossim-stats|baseline")
      ->required()
      ->check(CLI::IsMember({"stride", "cross", "consistency", "imbalance", "cossim-stats", "baseline"}));
  ev->add_option("--config", eval_flags.config, "Run configuration file")->required();
  ev->add_option("--seed", eval_flags.seed, "Override the configured seed");
  ev->add_option("--out", eval_flags.out, "Output directory for reports");
  ev->add_option("--method", method, "Baseline method: random|forgetting|kcenters");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*train) return cmd_train_score(train_flags);
    if (*sel) return cmd_select(ranking_file, select_size, select_fraction, select_stride, select_out);
    auto cfg = load_config(eval_flags.config);
    if (eval_flags.seed) cfg.eval.seed = *eval_flags.seed;
    const fs::path dir = eval_flags.out.empty() ? fs::path(cfg.output_dir) / ("eval-" + eval_kind) : fs::path(eval_flags.out);
    fs::create_directories(dir);
    io::write_text(dir / "config_echo", canonical_config(cfg));
    if (eval_kind == "stride") return eval_stride(cfg, dir);
    if (eval_kind == "cross") return eval_cross(cfg, dir);
    if (eval_kind == "consistency") return eval_consistency(cfg, dir);
    if (eval_kind == "imbalance") return eval_imbalance(cfg, dir);
    if (eval_kind == "cossim-stats") return eval_cossim_stats(cfg, dir);
    return eval_baseline(cfg, method.empty() ? cfg.eval.method : method, dir);
  } catch (const coreselect::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}
