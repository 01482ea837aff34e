#pragma once

#include <string>
#include <string_view>

namespace cfsm {

enum class ScenarioKind { UDA, SemiDLSTL, UnsupDLSTL };

enum class Variant {
  CFSM,
  SourceOnly,
  SourcePlusRegs,
  AE,
  CFSMMinusGraph,
  CFSMClassicGraph,
  JointFT,
  TrainTarget,
  FTTarget,
};

enum class EvalMode { Classification, Retrieval };

std::string to_string(ScenarioKind s);
std::string to_string(Variant v);
ScenarioKind scenario_from_string(std::string_view s);
Variant variant_from_string(std::string_view s);

EvalMode eval_mode(ScenarioKind s);

/// Which data streams feed a step and which loss terms are active. This is
/// the single table every other module consults, so LossReport keys always
/// match the variant.
struct VariantPlan {
  bool source_stream = true;
  bool target_stream = true;
  bool source_supervised = true;
  bool target_supervised = false;  // labelled target rows through θ_T
  bool factorisation = false;
  bool graph = false;
  bool classic_graph = false;  // graph on F regularising F_C
  bool target_entropy = false;
  bool triplet = false;
  bool reconstruction = false;
  bool init_from_pretrain = true;
};

/// Throws ConfigError for combinations that do not exist (e.g. JointFT
/// outside UDA, TrainTarget outside SemiDLSTL).
VariantPlan plan_for(ScenarioKind s, Variant v);

}  // namespace cfsm
