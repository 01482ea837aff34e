#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cfsm/data.hpp"
#include "cfsm/graph.hpp"
#include "cfsm/model.hpp"
#include "cfsm/scenario.hpp"
#include "cfsm/tape.hpp"

namespace cfsm::losses {

struct LossWeights {
  double beta_c = 0.01;         // factorisation entropy
  double beta_m = 0.01;         // graph term
  double beta_tgt_ent = 1.0;    // target prediction entropy (UDA)
  double beta_ae = 1.0;         // reconstruction (AE ablation)
  double label_smoothing = 0.0; // ε_ls ∈ [0,1)
  double triplet_margin = 0.3;

  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

// LossReport keys.
inline constexpr const char* kSupervised = "supervised";
inline constexpr const char* kFactorisation = "factorisation";
inline constexpr const char* kGraph = "graph";
inline constexpr const char* kTargetEntropy = "target_entropy";
inline constexpr const char* kTriplet = "triplet";
inline constexpr const char* kReconstruction = "ae";

struct LossReport {
  double total = 0.0;
  std::map<std::string, double> terms;    // unweighted term values
  std::map<std::string, double> weights;  // multiplier applied to each term

  bool has(const std::string& key) const { return terms.count(key) != 0; }
  double weighted_sum() const;
};

// Standalone terms. Each registers its computation on the tape of its input.

/// Mean over rows of −Σ_c q_c log softmax(logits)_c with
/// q = (1−ε)·onehot + ε/C.
ad::Var supervised_xent(ad::Var logits, const std::vector<int>& labels, double smoothing);

/// −(1/N) Σ_i ⟨F_C,i, log F_C,i⟩. With `binary` also adds the (1−p)log(1−p)
/// complement.
ad::Var factorisation_entropy(ad::Var fc, bool binary = false);

/// Mean over rows of the softmax entropy.
ad::Var target_prediction_entropy(ad::Var logits);

/// Anchor / hardest-positive / hardest-negative row triples.
struct Triplets {
  std::vector<std::size_t> anchor;
  std::vector<std::size_t> positive;
  std::vector<std::size_t> negative;
};

/// Batch-hard mining on Euclidean distances between rows of `features`.
/// Anchors without a positive or a negative are skipped.
Triplets mine_batch_hard(const Matrix& features, const std::vector<int>& labels);

/// Mean over mined anchors of max(0, d⁺ − d⁻ + margin). Returns a constant 0
/// (and logs a warning) when no anchor has both a positive and a negative.
ad::Var triplet_loss(ad::Var features, const std::vector<int>& labels, double margin,
                     const Triplets* mined = nullptr);

struct ObjectiveOptions {
  ScenarioKind scenario = ScenarioKind::UnsupDLSTL;
  Variant variant = Variant::CFSM;
  LossWeights weights;
  graph::GraphSpec graph;
  bool binary_entropy = false;
};

/// Data-dependent discrete choices made while evaluating the objective. Pass
/// them back in to evaluate the same function at perturbed parameters.
struct Frozen {
  std::optional<graph::BuiltGraph> graph;
  std::optional<graph::Laplacian> laplacian;
  std::optional<Triplets> triplets;
  std::optional<Matrix> ae_target;  // stop-gradient reconstruction target
};

struct ObjectiveResult {
  ad::Var total;
  LossReport report;
  Frozen frozen;
  std::size_t graph_size = 0;  // Laplacian dimension (0 without a graph term)
};

/// Registers the full training objective on `tape` for one batch.
ObjectiveResult composite_objective(ad::Tape& tape, const model::BoundParams& params,
                                    const data::Batch& batch, const ObjectiveOptions& opts,
                                    const Frozen* reuse = nullptr);

/// Value, report and parameter gradients in one call.
struct Evaluation {
  LossReport report;
  model::ModelParams grads;
  Frozen frozen;
  std::size_t graph_size = 0;
};
Evaluation evaluate_objective(const model::ModelParams& params, const data::Batch& batch,
                              const ObjectiveOptions& opts, const Frozen* reuse = nullptr);

/// Which β's auto_balance should set.
struct BalanceTargets {
  bool beta_c = true;
  bool beta_m = true;
};

/// β_C = median(sup)/median(factorisation), β_M = median(sup)/median(graph),
/// each snapped to 10^round(log10(·)). `sup` is the supervised term plus the
/// triplet term when present. A zero median sets that β to 0 with a warning.
LossWeights auto_balance(const std::vector<LossReport>& warmup, LossWeights base,
                         BalanceTargets targets = {});

double snap_power_of_ten(double x);

}  // namespace cfsm::losses
