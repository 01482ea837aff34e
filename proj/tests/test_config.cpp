#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"

#include "cfsm/config.hpp"
#include "cfsm/experiment.hpp"

using namespace cfsm;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* kBase = R"({
  "scenario": "UnsupDLSTL", "variant": "CFSM", "seed": 2,
  "arch": {"hidden": [12], "feature_dim": 6, "cfs_dim": 4},
  "losses": {"beta_c": 0.5, "beta_m": "auto"},
  "graph": {"k": 3, "sigma": null},
  "optimizer": {"epochs": 2, "pretrain_epochs": 1, "batch_size": 16, "warmup": 4},
  "data": {"kind": "synthetic", "synthetic": {"samples_per_class": 15}}
})";

std::string with(const std::string& pointer, const json& value) {
  json j = json::parse(kBase);
  j[json::json_pointer(pointer)] = value;
  return j.dump();
}

std::string without(const std::string& key) {
  json j = json::parse(kBase);
  j.erase(key);
  return j.dump();
}

std::string error_of(const std::string& text) {
  try {
    config::parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("cfsm_cfg_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("parse fills fields") {
  auto c = config::parse(kBase);
  CHECK(c.train.scenario == ScenarioKind::UnsupDLSTL);
  CHECK(c.train.seed == 2);
  CHECK(c.train.weights.beta_c == 0.5);
  CHECK_FALSE(c.train.auto_beta_c);
  CHECK(c.train.auto_beta_m);
  CHECK(c.arch.hidden == std::vector<std::size_t>{12});
  CHECK(c.train.graph.k == 3);
  CHECK_FALSE(c.train.graph.sigma.has_value());
  CHECK(c.data.synthetic.samples_per_class == 15);
}

TEST_CASE("round trip is a fixed point") {
  auto a = config::serialise(config::parse(kBase));
  auto b = config::serialise(config::parse(a));
  CHECK(a == b);
  auto c = config::serialise(config::parse(with("/graph/sigma", 0.7)));
  CHECK(config::serialise(config::parse(c)) == c);
}

TEST_CASE("field-level errors") {
  CHECK(error_of(with("/losses/beta_x", 1.0)).find("unknown field 'losses.beta_x'") != std::string::npos);
  CHECK(error_of(with("/graph/k", "eight")).find("field 'graph.k' has the wrong type") != std::string::npos);
  CHECK(error_of(with("/optimizer/lr", true)).find("optimizer.lr") != std::string::npos);
  CHECK(error_of(without("seed")).find("missing required field 'seed'") != std::string::npos);
  CHECK(error_of(without("variant")).find("variant") != std::string::npos);
  CHECK(error_of(with("/variant", "Nope")).find("Nope") != std::string::npos);
  CHECK(error_of(with("/optimizer/kind", "rmsprop")).find("optimizer.kind") != std::string::npos);
  CHECK(error_of(with("/losses/beta_c", "sometimes")).find("losses.beta_c") != std::string::npos);
  CHECK(error_of("{not json").find("not valid JSON") != std::string::npos);
}

TEST_CASE("validation rules") {
  CHECK_FALSE(error_of(with("/optimizer/batch_size", 15)).empty());
  CHECK_FALSE(error_of(with("/scenario", "UDA")).empty());  // synthetic UDA needs a shared label space
  CHECK_FALSE(error_of(with("/k_shot", 3)).empty());       // k-shot outside SemiDLSTL
  json idx = json::parse(kBase);
  idx["data"] = {{"kind", "idx"}, {"train_images", "a"}, {"train_labels", "b"},
                 {"source_classes", {0, 1}}, {"target_classes", {1, 2}}};
  CHECK(error_of(idx.dump()).find("overlap") != std::string::npos);
  idx["data"]["target_classes"] = {2, 3};
  idx["data"]["target_eval"] = "test";
  CHECK(error_of(idx.dump()).find("test_images") != std::string::npos);
  idx["data"]["target_eval"] = "holdout";
  CHECK(error_of(idx.dump()).find("eval_per_class") != std::string::npos);
}

TEST_CASE("train, eval and inspect through the experiment layer") {
  auto cfg = config::parse(kBase);
  auto out = scratch("run");
  auto s = experiment::run_train(cfg, out.string());
  for (auto f : {"metrics.jsonl", "epochs.jsonl", "checkpoint.json", "manifest.json", "histogram.csv", "topk.csv"})
    CHECK(fs::exists(out / f));

  auto man = json::parse(slurp(out / "manifest.json"));
  CHECK(man.at("seed") == 2);
  CHECK(man.contains("code_version"));
  CHECK(config::serialise(config::parse(man.at("config").dump())) == config::serialise(cfg));

  // the eval command reproduces the final epoch record
  auto ev = json::parse(experiment::run_eval(cfg, (out / "checkpoint.json").string()));
  CHECK(ev.at("mode") == "retrieval");
  CHECK(ev.contains("rank1"));
  CHECK(ev.contains("mAP"));
  CHECK(ev.at("rank1").get<double>() == *s.last.rank1);
  CHECK(ev.at("mAP").get<double>() == *s.last.mAP);
  CHECK(ev.at("mid_mass").get<double>() == s.last.mid_mass);

  auto hist = slurp(out / "histogram.csv");
  CHECK(hist.rfind("bin_low,bin_high,count\n", 0) == 0);
  auto insp = scratch("inspect");
  experiment::run_inspect(cfg, (out / "checkpoint.json").string(), insp.string());
  CHECK(slurp(insp / "histogram.csv") == hist);
  CHECK(slurp(insp / "topk.csv") == slurp(out / "topk.csv"));

  // same config twice gives the same bytes
  auto again = scratch("run2");
  experiment::run_train(cfg, again.string());
  CHECK(slurp(out / "metrics.jsonl") == slurp(again / "metrics.jsonl"));
  CHECK(slurp(out / "checkpoint.json") == slurp(again / "checkpoint.json"));

  // a checkpoint for other data dims is rejected with both dims named
  auto wide = cfg;
  wide.data.synthetic.input_dim = 30;
  try {
    experiment::run_eval(wide, (out / "checkpoint.json").string());
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    std::string w = e.what();
    CHECK(w.find("20") != std::string::npos);
    CHECK(w.find("30") != std::string::npos);
  }
  for (auto p : {out, insp, again}) fs::remove_all(p);
}

TEST_CASE("SourceOnly logs carry no target terms") {
  auto cfg = config::parse(with("/variant", "SourceOnly"));
  auto out = scratch("src");
  experiment::run_train(cfg, out.string());
  std::ifstream in(out / "metrics.jsonl");
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    auto j = json::parse(line);
    CHECK(j.at("target_rows") == 0);
    for (auto k : {"factorisation", "graph", "target_entropy", "ae"}) CHECK_FALSE(j.at("losses").contains(k));
    ++n;
  }
  CHECK(n > 0);
  fs::remove_all(out);
}

TEST_CASE("classification eval on a pretrained source model") {
  auto cfg = config::parse(with("/scenario", "SemiDLSTL"));
  cfg.train.k_shot = 2;
  auto out = scratch("semi");
  experiment::run_pretrain(cfg, out.string());
  auto ev = json::parse(experiment::run_eval(cfg, (out / "pretrain_checkpoint.json").string()));
  CHECK(ev.at("mode") == "classification");
  const double acc = ev.at("source_accuracy").get<double>();
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
  fs::remove_all(out);
}
