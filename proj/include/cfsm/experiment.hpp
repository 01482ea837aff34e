#pragma once

#include <optional>
#include <string>

#include "cfsm/config.hpp"
#include "cfsm/model.hpp"
#include "cfsm/training.hpp"

namespace cfsm::experiment {

/// Builds the source/target splits and the k-shot subset described by the
/// config's data section.
training::ExperimentData load_data(const config::ExperimentConfig& cfg);

model::ArchSpec arch_for(const config::ExperimentConfig& cfg, const training::ExperimentData& d);

/// One JSON object per line; key order and number formatting are fixed.
std::string step_line(const training::StepRecord& r, const std::string& stage);
std::string epoch_line(const training::EpochRecord& r, const std::string& stage);

/// Final diagnostics on a trained model: F_C histogram over the target eval
/// pool and the top-k rows per factor over source train plus target eval.
void write_histogram_csv(const model::ModelParams& p, const training::ExperimentData& d, const std::string& path,
                         std::size_t bins = 20);
void write_topk_csv(const model::ModelParams& p, const training::ExperimentData& d, const std::string& path,
                    std::size_t k = 8);

struct RunSummary {
  training::EpochRecord first;
  training::EpochRecord last;
  losses::LossWeights weights;
  std::string checkpoint;
};

/// `pretrain`: source-only stage; writes pretrain_checkpoint.json plus logs.
RunSummary run_pretrain(const config::ExperimentConfig& cfg, const std::string& out_dir);

/// `train`: full pipeline. With `init_checkpoint` the pretrain stage is
/// replaced by loading that model.
RunSummary run_train(const config::ExperimentConfig& cfg, const std::string& out_dir,
                     const std::optional<std::string>& init_checkpoint = std::nullopt);

/// `eval`: metrics of a checkpoint on the config's target eval pool, as JSON.
/// Throws DimensionError naming both dims when the checkpoint does not fit.
std::string run_eval(const config::ExperimentConfig& cfg, const std::string& checkpoint,
                     const std::optional<std::string>& out_dir = std::nullopt);

/// `inspect`: histogram and top-k CSVs for a checkpoint.
void run_inspect(const config::ExperimentConfig& cfg, const std::string& checkpoint, const std::string& out_dir);

std::string code_version();

}  // namespace cfsm::experiment
