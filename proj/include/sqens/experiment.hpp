#pragma once

// Experiment description read by the command line tool.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sqens/attacks.hpp"
#include "sqens/config.hpp"
#include "sqens/data.hpp"
#include "sqens/ensemble.hpp"
#include "sqens/training.hpp"

namespace sqens {

struct DatasetSpec {
  enum class Kind { mnist, blobs };
  Kind kind = Kind::blobs;
  // mnist: IDX files, relative paths resolve against the config file
  std::filesystem::path train_images, train_labels, test_images, test_labels;
  int train_limit = 0;  // 0 keeps every image
  int test_limit = 0;
  // blobs: the test split is a second draw from the same class centres
  int n_per_class = 200;
  int test_per_class = 50;
  int classes = 3;
  int dim = 8;
  double separation = 4.0;
};

struct EvalSpec {
  int members = 0;  // 0 uses the model's own n_members
  std::uint64_t seed = 0;
};

struct DetectSpec {
  double offset_sds = 3.0;  // flag threshold in clean standard deviations
  bool two_sided = false;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  ArchConfig arch;
  SqConfig sq;
  TrainConfig train;
  std::vector<AttackConfig> attacks;
  EvalSpec eval;
  DetectSpec detect;
  std::filesystem::path output = "out";  // relative to the config file
  std::filesystem::path init_checkpoint;  // optional starting point for train
  std::uint64_t seed = 1;
};

/// Strict reader. The top-level seed is the default for every other seed
/// (train, eval, attacks) that the document does not set explicitly.
/// Relative paths are resolved against base_dir.
ExperimentConfig experiment_from_json(const Json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment(const std::filesystem::path& path);

/// Everything that can be checked without touching data. Returns warnings.
std::vector<std::string> validate(const ExperimentConfig& c);

Json to_json(const AttackConfig& c);
AttackConfig attack_from_json(const Json& j, AttackConfig base = {});
Json to_json(const ExperimentConfig& c);

struct Splits {
  Dataset train, test;
};

Splits load_datasets(const DatasetSpec& spec, std::uint64_t seed);

}  // namespace sqens
