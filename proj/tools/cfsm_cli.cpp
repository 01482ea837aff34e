// cfsm command line: gradcheck | pretrain | train | eval | inspect.
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "cfsm/config.hpp"
#include "cfsm/error.hpp"
#include "cfsm/experiment.hpp"
#include "cfsm/gradcheck.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kNumeric = 2;

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string checkpoint;
};

void add_common(CLI::App* app, Common& c, bool needs_checkpoint) {
  app->add_option("--config", c.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  app->add_option("--out", c.out, "output directory (default: config output_dir)");
  app->add_option("--seed", c.seed, "overrides the config seed");
  auto* ck = app->add_option("--checkpoint", c.checkpoint, "model checkpoint");
  if (needs_checkpoint) ck->required();
}

cfsm::config::ExperimentConfig load(const Common& c) {
  cfsm::config::ExperimentConfig cfg = cfsm::config::load(c.config);
  if (c.seed) {
    cfg.train.seed = *c.seed;
    cfg.validate();
  }
  if (!c.out.empty()) cfg.output_dir = c.out;
  return cfg;
}

void print_summary(const cfsm::experiment::RunSummary& s) {
  auto show = [](const char* tag, const cfsm::training::EpochRecord& r) {
    std::printf("%s epoch %zu:", tag, r.epoch);
    if (r.accuracy) std::printf(" accuracy=%.4f", *r.accuracy);
    if (r.rank1) std::printf(" rank1=%.4f mAP=%.4f", *r.rank1, *r.mAP);
    std::printf(" mid_mass=%.4f cfs_entropy=%.4f\n", r.mid_mass, r.cfs_entropy);
  };
  show("start", s.first);
  show("final", s.last);
  std::printf("beta_c=%g beta_m=%g\ncheckpoint: %s\n", s.weights.beta_c, s.weights.beta_m, s.checkpoint.c_str());
}

int gradcheck(std::size_t instances, std::uint64_t seed, const std::string& fault_op, double fault_factor) {
  if (!fault_op.empty()) cfsm::ad::inject_gradient_fault(fault_op, fault_factor);
  cfsm::gradcheck::Options opts;
  opts.instances = instances;
  opts.seed = seed;
  const cfsm::gradcheck::Report rep = cfsm::gradcheck::run_suite(opts);
  std::printf("%-44s %9s %14s  %s\n", "check", "instances", "max_rel_error", "status");
  for (const auto& c : rep.checks)
    std::printf("%-44s %9zu %14.3e  %s\n", c.name.c_str(), c.instances, c.max_rel_error, c.passed ? "ok" : "FAIL");
  std::printf("tolerance %.0e, %zu checks, %.2fs\n", rep.tolerance, rep.checks.size(), rep.seconds);
  if (!rep.passed()) {
    std::fprintf(stderr, "gradcheck failed: %s\n", rep.failing().c_str());
    return kValidation;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Common factorised space model: training and diagnostics"};
  app.require_subcommand(1);

  std::size_t instances = 20;
  std::uint64_t gc_seed = 0;
  std::string fault_op;
  double fault_factor = 1.5;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every op and composite objective");
  gc->add_option("--instances", instances, "random instances per check")->check(CLI::PositiveNumber);
  gc->add_option("--seed", gc_seed, "instance seed");
  gc->add_option("--inject-fault", fault_op, "scale the gradient of this tape op (negative control)");
  gc->add_option("--fault-factor", fault_factor, "scale applied by --inject-fault");

  Common pre_c, train_c, eval_c, insp_c;
  auto* pre = app.add_subcommand("pretrain", "source-only pre-training");
  add_common(pre, pre_c, false);
  auto* tr = app.add_subcommand("train", "pre-train (unless --checkpoint) and train the configured variant");
  add_common(tr, train_c, false);
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the target eval pool");
  add_common(ev, eval_c, true);
  auto* in = app.add_subcommand("inspect", "CFS histogram and top-k activations of a checkpoint");
  add_common(in, insp_c, true);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gc) return gradcheck(instances, gc_seed, fault_op, fault_factor);
    if (*pre) {
      const auto cfg = load(pre_c);
      print_summary(cfsm::experiment::run_pretrain(cfg, cfg.output_dir));
    } else if (*tr) {
      const auto cfg = load(train_c);
      std::optional<std::string> ck;
      if (!train_c.checkpoint.empty()) ck = train_c.checkpoint;
      print_summary(cfsm::experiment::run_train(cfg, cfg.output_dir, ck));
    } else if (*ev) {
      const auto cfg = load(eval_c);
      std::optional<std::string> out;
      if (!eval_c.out.empty()) out = eval_c.out;
      std::cout << cfsm::experiment::run_eval(cfg, eval_c.checkpoint, out);
    } else if (*in) {
      const auto cfg = load(insp_c);
      cfsm::experiment::run_inspect(cfg, insp_c.checkpoint, cfg.output_dir);
      std::printf("wrote histogram.csv and topk.csv to %s\n", cfg.output_dir.c_str());
    }
  } catch (const cfsm::NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kNumeric;
  } catch (const cfsm::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kValidation;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kValidation;
  }
  return kOk;
}
