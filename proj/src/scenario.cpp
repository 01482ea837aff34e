#include "cfsm/scenario.hpp"

#include <array>
#include <utility>

#include "cfsm/error.hpp"

namespace cfsm {

namespace {

constexpr std::array<std::pair<ScenarioKind, std::string_view>, 3> kScenarios{{
    {ScenarioKind::UDA, "UDA"},
    {ScenarioKind::SemiDLSTL, "SemiDLSTL"},
    {ScenarioKind::UnsupDLSTL, "UnsupDLSTL"},
}};

constexpr std::array<std::pair<Variant, std::string_view>, 9> kVariants{{
    {Variant::CFSM, "CFSM"},
    {Variant::SourceOnly, "SourceOnly"},
    {Variant::SourcePlusRegs, "SourcePlusRegs"},
    {Variant::AE, "AE"},
    {Variant::CFSMMinusGraph, "CFSMMinusGraph"},
    {Variant::CFSMClassicGraph, "CFSMClassicGraph"},
    {Variant::JointFT, "JointFT"},
    {Variant::TrainTarget, "TrainTarget"},
    {Variant::FTTarget, "FTTarget"},
}};

}  // namespace

std::string to_string(ScenarioKind s) {
  for (auto [k, n] : kScenarios)
    if (k == s) return std::string(n);
  return "?";
}

std::string to_string(Variant v) {
  for (auto [k, n] : kVariants)
    if (k == v) return std::string(n);
  return "?";
}

ScenarioKind scenario_from_string(std::string_view s) {
  for (auto [k, n] : kScenarios)
    if (n == s) return k;
  throw ConfigError("unknown scenario '" + std::string(s) + "' (expected UDA, SemiDLSTL or UnsupDLSTL)");
}

Variant variant_from_string(std::string_view s) {
  for (auto [k, n] : kVariants)
    if (n == s) return k;
  throw ConfigError("unknown variant '" + std::string(s) + "'");
}

EvalMode eval_mode(ScenarioKind s) {
  return s == ScenarioKind::UnsupDLSTL ? EvalMode::Retrieval : EvalMode::Classification;
}

VariantPlan plan_for(ScenarioKind s, Variant v) {
  VariantPlan p;
  const bool semi = s == ScenarioKind::SemiDLSTL;
  switch (v) {
    case Variant::CFSM:
      p.factorisation = p.graph = true;
      break;
    case Variant::SourceOnly:
      p.target_stream = false;
      break;
    case Variant::SourcePlusRegs:
      p.target_stream = false;
      p.factorisation = p.graph = true;
      break;
    case Variant::AE:
      p.reconstruction = true;
      break;
    case Variant::CFSMMinusGraph:
      p.factorisation = true;
      break;
    case Variant::CFSMClassicGraph:
      p.factorisation = p.classic_graph = true;
      break;
    case Variant::JointFT:
      if (s != ScenarioKind::UDA) throw ConfigError("variant JointFT is only defined for UDA");
      break;
    case Variant::TrainTarget:
    case Variant::FTTarget:
      if (!semi) throw ConfigError("variant " + to_string(v) + " is only defined for SemiDLSTL");
      p.source_stream = false;
      p.source_supervised = false;
      p.init_from_pretrain = v == Variant::FTTarget;
      break;
  }
  if (semi) p.target_supervised = p.target_stream;
  if (s == ScenarioKind::UDA) p.target_entropy = p.target_stream;
  if (s == ScenarioKind::UnsupDLSTL) p.triplet = p.source_stream;
  return p;
}

}  // namespace cfsm
