#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "cfsm/data.hpp"
#include "cfsm/graph.hpp"
#include "cfsm/losses.hpp"
#include "cfsm/model.hpp"
#include "cfsm/scenario.hpp"

namespace cfsm::training {

enum class OptimizerKind { SGD, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t epochs = 10;
  std::size_t pretrain_epochs = 5;
  std::size_t batch_size = 64;
  std::size_t warmup = 50;  // auto_balance window W
  /// Overrides the natural epoch length (one pass over the larger stream).
  std::optional<std::size_t> steps_per_epoch;

  void validate() const;
};

struct OptimizerState {
  std::size_t t = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
};

/// SGD: p ← p − lr·g. Adam: bias-corrected moments, p ← p − lr·m̂/(√v̂ + eps).
/// Throws NumericError naming the parameter when a gradient is not finite.
void optimizer_step(model::ModelParams& params, const model::ModelParams& grads, OptimizerState& state,
                    const OptimizerConfig& cfg);

struct TrainConfig {
  ScenarioKind scenario = ScenarioKind::UnsupDLSTL;
  Variant variant = Variant::CFSM;
  std::uint64_t seed = 0;
  std::size_t k_shot = 0;               // SemiDLSTL only
  std::size_t labelled_per_batch = 8;   // k-shot rows in each SemiDLSTL target half
  losses::LossWeights weights;
  bool auto_beta_c = false;
  bool auto_beta_m = false;
  bool binary_entropy = false;
  graph::GraphSpec graph;
  OptimizerConfig optimizer;
  /// Retrieval on F_C instead of F (diagnostics only).
  bool retrieve_on_cfs = false;

  void validate() const;
  losses::ObjectiveOptions objective() const;
};

/// Train/eval splits for one run. `target_train` rows are used without labels
/// except the k-shot subset; `target_eval` carries labels for evaluation only.
struct ExperimentData {
  data::Dataset source_train;
  data::Dataset target_train;
  data::Dataset target_eval;
  std::vector<std::size_t> kshot;  // rows of target_train with visible labels
  data::Dataset source_eval;       // diagnostics only
};

/// Splits the target pool and draws the k-shot subset for a SemiDLSTL run.
std::vector<std::size_t> prepare_kshot(const TrainConfig& cfg, const data::Dataset& target_train);

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  losses::LossReport report;
  losses::LossWeights weights;
  double lr = 0.0;
  std::size_t source_rows = 0;
  std::size_t target_rows = 0;
  std::size_t labelled_target_rows = 0;
  std::size_t graph_size = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::optional<double> accuracy;
  std::optional<double> rank1;
  std::optional<double> mAP;
  double mid_mass = 0.0;     // target F_C mass in (0.1, 0.9)
  double cfs_entropy = 0.0;  // target factorisation entropy
};

struct TrainResult {
  model::ModelParams params;
  std::vector<StepRecord> warmup;  // auto_balance probe, discarded afterwards
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  losses::LossWeights weights;  // after auto_balance
};

model::ArchSpec arch_for(const TrainConfig& cfg, const ExperimentData& d, std::vector<std::size_t> hidden,
                         std::size_t feature_dim, std::size_t cfs_dim);

/// Evaluates `params` on the labelled target pool per the scenario's mode.
EpochRecord evaluate(const model::ModelParams& params, ScenarioKind scenario, const data::Dataset& target_eval,
                     bool retrieve_on_cfs = false);

/// Supervised-only source training (the scenario's SourceOnly objective) for
/// `optimizer.pretrain_epochs` epochs.
TrainResult pretrain_source(const TrainConfig& cfg, const ExperimentData& d, const model::ModelParams& init);

/// Joint training of the configured variant for `optimizer.epochs` epochs.
TrainResult train(const TrainConfig& cfg, const ExperimentData& d, const model::ModelParams& init);

/// Fresh initialisation from the run seed.
model::ModelParams initial_params(const model::ArchSpec& arch, std::uint64_t seed);

/// Full pipeline: init, pretrain when the variant starts from a source model,
/// then train.
struct PipelineResult {
  TrainResult pretrain;
  TrainResult run;
};
PipelineResult run_pipeline(const TrainConfig& cfg, const ExperimentData& d, const model::ArchSpec& arch);

}  // namespace cfsm::training
