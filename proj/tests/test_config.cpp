#include <catch_amalgamated.hpp>

#include <string>

#include "coreselect/config.hpp"
#include "temp_dir.hpp"

using namespace coreselect;
using Catch::Matchers::ContainsSubstring;

namespace {

std::string hex(const ConfigHash& h) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  for (auto b : h) {
    s += digits[b >> 4];
    s += digits[b & 15];
  }
  return s;
}

template <class F>
std::string config_error_message(F&& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "<no error>";
}

}  // namespace

TEST_CASE("parse key = value lines with comments and whitespace") {
  const auto cfg = parse_config(R"(
# a comment
dataset.source = synthetic
synthetic.n=500   # trailing comment
  train.loss_mode = moco
train.epochs = 7
eval.strides = 0, 0.25 ,0.5
dataset.train_files = a.bin,b.bin
seed = 18446744073709551615
)");
  CHECK(cfg.dataset.synthetic.n == 500);
  CHECK(cfg.loss_mode == LossMode::moco);
  CHECK(cfg.epochs == 7);
  CHECK(cfg.eval.strides == std::vector<double>{0.0, 0.25, 0.5});
  CHECK(cfg.dataset.train_files == std::vector<std::string>{"a.bin", "b.bin"});
  CHECK(cfg.seed == 18446744073709551615ull);
  CHECK(cfg.batch_size == 128);  // untouched default
}

TEST_CASE("parse errors name the key or line") {
  CHECK_THAT(config_error_message([] { parse_config("train.epoch = 3"); }), ContainsSubstring("train.epoch"));
  CHECK_THAT(config_error_message([] { parse_config("train.epochs = three"); }), ContainsSubstring("train.epochs"));
  CHECK_THAT(config_error_message([] { parse_config("train.epochs = -1"); }), ContainsSubstring("train.epochs"));
  CHECK_THAT(config_error_message([] { parse_config("optimizer.base_lr = 0.1x"); }),
             ContainsSubstring("optimizer.base_lr"));
  CHECK_THAT(config_error_message([] { parse_config("train.temperature = nan"); }),
             ContainsSubstring("train.temperature"));
  CHECK_THAT(config_error_message([] { parse_config("seed = 1\njust words\n", "my.cfg"); }),
             ContainsSubstring("my.cfg:2"));
  CHECK_THAT(config_error_message([] { parse_config("train.loss_mode = byol"); }), ContainsSubstring("byol"));
  CHECK_THROWS_AS(load_config("/nonexistent/run.cfg"), ConfigError);
}

TEST_CASE("temperature default follows the loss mode unless set") {
  RunConfig cfg;
  CHECK(cfg.resolved_temperature() == 0.5);
  cfg.loss_mode = LossMode::moco;
  CHECK(cfg.resolved_temperature() == 0.2);
  cfg.temperature = 0.07;
  CHECK(cfg.resolved_temperature() == 0.07);
}

TEST_CASE("canonical form round-trips and is sorted") {
  auto cfg = parse_config("train.epochs = 9\naugment.flip_prob = 0.25\neval.strides = 0,0.1\nseed = 4\n");
  const auto text = canonical_config(cfg);
  CHECK(canonical_config(parse_config(text)) == text);
  CHECK(config_hash(parse_config(text)) == config_hash(cfg));
  std::vector<std::string> keys;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) keys.push_back(line.substr(0, line.find(" = ")));
  CHECK(std::is_sorted(keys.begin(), keys.end()));
  CHECK_THAT(text, ContainsSubstring("train.temperature = 0.5\n"));
}

TEST_CASE("sha256 known answers") {
  CHECK(hex(sha256("abc")) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(hex(sha256("")) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("config hash covers training fields only") {
  const RunConfig base;
  const auto h = config_hash(base);
  auto changed = [&](const std::string& key, const std::string& value) {
    RunConfig c;
    set_config_value(c, key, value);
    return config_hash(c) != h;
  };
  CHECK(changed("train.epochs", "41"));
  CHECK(changed("seed", "1"));
  CHECK(changed("augment.flip_prob", "0.4"));
  CHECK(changed("synthetic.hard_fraction", "0.2"));
  CHECK(changed("train.loss_mode", "moco"));
  CHECK_FALSE(changed("output_dir", "elsewhere"));
  CHECK_FALSE(changed("eval.runs", "9"));
  CHECK_FALSE(changed("eval.seed", "9"));
  CHECK_FALSE(changed("classifier.epochs", "3"));
  // setting the temperature to its resolved default is the same run
  CHECK_FALSE(changed("train.temperature", "0.5"));
}

TEST_CASE("training validation gives field-level messages") {
  RunConfig cfg;
  CHECK_NOTHROW(validate_for_training(cfg));
  cfg.epochs = 0;
  CHECK_THAT(config_error_message([&] { validate_for_training(cfg); }), ContainsSubstring("train.epochs"));
  cfg = {};
  cfg.batch_size = 3;
  CHECK_THAT(config_error_message([&] { validate_for_training(cfg); }), ContainsSubstring("train.batch_size"));
  cfg.loss_mode = LossMode::moco;
  CHECK_NOTHROW(validate_for_training(cfg));
  cfg = {};
  cfg.momentum_m = 1.0;
  CHECK_THAT(config_error_message([&] { validate_for_training(cfg); }), ContainsSubstring("train.momentum_m"));
  cfg = {};
  cfg.temperature = 0.0;
  CHECK_THAT(config_error_message([&] { validate_for_training(cfg); }), ContainsSubstring("train.temperature"));
  cfg = {};
  cfg.queue_capacity = 0;
  CHECK_THROWS_AS(validate_for_training(cfg), ConfigError);
  cfg = {};
  cfg.base_lr = 0.0;
  CHECK_THAT(config_error_message([&] { validate_for_training(cfg); }), ContainsSubstring("optimizer.base_lr"));
  cfg = {};
  cfg.encoder.feature_dim = 0;
  CHECK_THROWS_AS(validate_for_training(cfg), ConfigError);
  cfg = {};
  cfg.augment.flip_prob = 2.0;
  CHECK_THROWS_AS(validate_for_training(cfg), ConfigError);
}

TEST_CASE("dataset validation checks sources and referenced paths") {
  DatasetSpec d;
  CHECK_NOTHROW(validate_dataset_spec(d));
  d.synthetic.hard_fraction = 0.0;
  CHECK_THAT(config_error_message([&] { validate_dataset_spec(d); }), ContainsSubstring("synthetic.hard_fraction"));
  d = {};
  d.source = "svhn";
  CHECK_THAT(config_error_message([&] { validate_dataset_spec(d); }), ContainsSubstring("dataset.source"));

  TempDir dir("cfg");
  io::write_text(dir / "img", "x");
  d = {};
  d.source = "idx";
  d.train_images = (dir / "img").string();
  CHECK_THAT(config_error_message([&] { validate_dataset_spec(d); }), ContainsSubstring("dataset.train_labels"));
  d.train_labels = (dir / "nope").string();
  CHECK_THAT(config_error_message([&] { validate_dataset_spec(d); }), ContainsSubstring("file not found"));
  d.train_labels = (dir / "img").string();
  CHECK_NOTHROW(validate_dataset_spec(d));

  d = {};
  d.source = "cifar";
  CHECK_THAT(config_error_message([&] { validate_dataset_spec(d); }), ContainsSubstring("dataset.train_files"));
  d.train_files = {(dir / "img").string()};
  d.test_files = {(dir / "missing").string()};
  CHECK_THAT(config_error_message([&] { validate_dataset_spec(d); }), ContainsSubstring("dataset.test_files"));
}

TEST_CASE("exit codes by error kind") {
  CHECK(exit_code_for(ConfigError("x").kind()) == 2);
  CHECK(exit_code_for(BoundsError("x").kind()) == 2);
  CHECK(exit_code_for(NumericError("x").kind()) == 3);
  CHECK(exit_code_for(FormatError("x").kind()) == 4);
  CHECK(exit_code_for(IoError("x").kind()) == 4);
  CHECK(exit_code_for(DataError("x").kind()) == 4);
}
