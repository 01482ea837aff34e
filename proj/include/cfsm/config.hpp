#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cfsm/data.hpp"
#include "cfsm/training.hpp"

namespace cfsm::config {

enum class DataKind { Synthetic, Idx, Csv };

/// How the labelled evaluation pool for the target domain is obtained.
enum class TargetEval {
  Pool,     // the (unlabelled-in-training) target pool itself
  Holdout,  // `eval_per_class` rows per class held out of training
  TestSet,  // the separate test files, filtered to the target classes
};

struct DataConfig {
  DataKind kind = DataKind::Synthetic;
  data::SynthSpec synthetic;
  std::string train_images, train_labels, test_images, test_labels;  // idx
  std::string train_csv, test_csv;                                   // csv
  double csv_scale = 1.0;
  std::vector<int> source_classes;  // file-backed data only
  std::vector<int> target_classes;
  TargetEval target_eval = TargetEval::Pool;
  std::size_t eval_per_class = 0;
  /// Optional cap on rows per class after the class split (0 keeps all).
  std::size_t max_per_class = 0;
};

struct ArchConfig {
  std::vector<std::size_t> hidden{64};
  std::size_t feature_dim = 32;
  std::size_t cfs_dim = 16;
};

struct ExperimentConfig {
  training::TrainConfig train;  // scenario, variant, seed, weights, optimizer, graph
  ArchConfig arch;
  DataConfig data;
  std::string output_dir = "runs/default";

  void validate() const;
};

/// Parses and validates. Scenario, variant and seed are required; a wrong or
/// missing field raises ConfigError naming it.
ExperimentConfig parse(const std::string& json_text);
ExperimentConfig load(const std::string& path);
/// Canonical JSON with every field spelled out.
std::string serialise(const ExperimentConfig& cfg);

}  // namespace cfsm::config
