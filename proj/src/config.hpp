#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "data.hpp"
#include "model.hpp"

namespace pctl {

enum class TrainMode { Pctl, TargetOnly, FineTune };

const char* train_mode_name(TrainMode m);
TrainMode parse_train_mode(const std::string& s);

// Every knob of a run. Defaults follow the reference experimental setup
// (lambda = 1/32, r = r' = 32, k = 64, tau' = 0.2, alpha = 10, SGD momentum
// 0.9, LR 8e-4 with 8e-5 for the encoder body, batch 64, 30 epochs); the
// encoder and dataset shapes default to desk scale.
struct TrainConfig {
  // run.*
  std::uint64_t seed = 7;
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  TrainMode mode = TrainMode::Pctl;
  std::size_t trials = 5;            // seeds per condition for ablations/comparisons
  bool dump_prototypes = false;      // per-epoch clustering debug dump

  // loss.*
  double lambda = 1.0 / 32.0;
  std::size_t r = 32;
  std::size_t r_prime = 32;

  // cluster.*
  std::vector<std::size_t> k_schedule = {64};
  double tau_prime = 0.2;
  double alpha = 10.0;

  // encoder.*
  double gamma = 0.99;
  std::size_t hidden = 32;
  std::size_t layers = 2;
  std::size_t embed_dim = 16;
  std::size_t classifier_hidden = 16;
  std::string activation = "tanh";

  // optim.*
  double lr = 8e-4;
  double lr_body = 8e-5;
  double momentum = 0.9;

  // fine_tune.*
  std::size_t pretrain_epochs = 30;

  // data.* (generator settings; feature dims live here and flow into the
  // encoder via the dataset header)
  GeneratorConfig data;

  void validate() const;
  // Encoder configuration for a given dataset's feature dimensions.
  EncoderConfig encoder_config(const DatasetFile& ds) const;

  // Flat "section.key = value" form, resolved and sorted; this is what the
  // manifest embeds.
  std::string echo() const;
  std::vector<std::string> keys() const;
  std::string get(const std::string& key) const;
  void set(const std::string& key, const std::string& value);

  static TrainConfig from_file(const std::string& path);
  static TrainConfig from_string(const std::string& text);
};

}  // namespace pctl
