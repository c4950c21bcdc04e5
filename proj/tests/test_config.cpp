#include <doctest.h>

#include "config.hpp"

using namespace pctl;

TEST_SUITE_BEGIN("config");

TEST_CASE("defaults follow the reference experimental setup") {
  TrainConfig cfg;
  CHECK(cfg.lambda == 1.0 / 32.0);
  CHECK(cfg.r == 32);
  CHECK(cfg.r_prime == 32);
  CHECK(cfg.k_schedule == std::vector<std::size_t>{64});
  CHECK(cfg.tau_prime == 0.2);
  CHECK(cfg.alpha == 10.0);
  CHECK(cfg.lr == 8e-4);
  CHECK(cfg.lr_body == 8e-5);
  CHECK(cfg.momentum == 0.9);
  CHECK(cfg.batch_size == 64);
  CHECK(cfg.epochs == 30);
  CHECK(cfg.mode == TrainMode::Pctl);
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("get/set round-trips every key") {
  TrainConfig cfg;
  for (const std::string& key : cfg.keys()) {
    std::string value = cfg.get(key);
    CHECK_NOTHROW(cfg.set(key, value));
    CHECK(cfg.get(key) == value);
  }
}

TEST_CASE("unknown keys and bad values are named in the error") {
  TrainConfig cfg;
  CHECK_THROWS_WITH_AS(cfg.set("loss.lambdaa", "0.1"), doctest::Contains("loss.lambdaa"), Error);
  CHECK_THROWS_WITH_AS(cfg.get("nope.nothing"), doctest::Contains("nope.nothing"), Error);
  CHECK_THROWS_WITH_AS(cfg.set("loss.lambda", "abc"), doctest::Contains("loss.lambda"), Error);
}

TEST_CASE("file format: comments, blanks, dotted keys, overrides") {
  std::string text =
      "# a comment\n"
      "\n"
      "loss.lambda = 0.5\n"
      "cluster.k_schedule = 8,12\n"
      "run.mode = fine-tune\n"
      "encoder.activation = relu\n"
      "data.target_train = 99\n";
  TrainConfig cfg = TrainConfig::from_string(text);
  CHECK(cfg.lambda == 0.5);
  CHECK(cfg.k_schedule == std::vector<std::size_t>{8, 12});
  CHECK(cfg.mode == TrainMode::FineTune);
  CHECK(cfg.activation == "relu");
  CHECK(cfg.data.target_train == 99);

  CHECK_THROWS_WITH_AS(TrainConfig::from_string("no equals sign here\n"),
                       doctest::Contains("line 1"), Error);
}

TEST_CASE("echo emits sorted key = value lines that reparse identically") {
  TrainConfig cfg;
  cfg.set("loss.lambda", "0.125");
  cfg.set("cluster.k_schedule", "33");
  std::string echo = cfg.echo();
  TrainConfig back = TrainConfig::from_string(echo);
  CHECK(back.echo() == echo);
  CHECK(back.lambda == 0.125);
}

TEST_CASE("validation rejects a schedule below r_prime + 1 with the minimum-k message") {
  TrainConfig cfg;
  cfg.k_schedule = {32};
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("minimum k is 33"), Error);
  cfg.k_schedule = {33};
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("mode spellings") {
  CHECK(parse_train_mode("pctl") == TrainMode::Pctl);
  CHECK(parse_train_mode("target-only") == TrainMode::TargetOnly);
  CHECK(parse_train_mode("target_only") == TrainMode::TargetOnly);
  CHECK(parse_train_mode("fine-tune") == TrainMode::FineTune);
  CHECK_THROWS_AS(parse_train_mode("warp"), Error);
}

TEST_SUITE_END();
