#include "cfsm/training.hpp"

#include <algorithm>
#include <cmath>

#include "cfsm/eval.hpp"
#include "cfsm/log.hpp"

namespace cfsm::training {

namespace {

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

double plain_factorisation_entropy(const Matrix& fc) {
  if (fc.rows() == 0) return 0.0;
  double h = 0.0;
  for (double p : fc.values()) h -= p * std::log(p);
  return h / static_cast<double>(fc.rows());
}

struct Sampler {
  VariantPlan plan;
  data::StreamSet streams;
  data::Stream single;
  const data::Dataset* single_ds = nullptr;
  std::size_t batch = 0;
  std::size_t labelled_rows = 0;
  std::size_t steps_per_epoch = 1;

  data::Batch next() {
    if (plan.source_stream && plan.target_stream) return data::make_minibatch(streams, batch, labelled_rows);
    return data::make_single_domain_batch(*single_ds, single, batch, true);
  }
};

Sampler make_sampler(const TrainConfig& cfg, const ExperimentData& d, const VariantPlan& plan) {
  Sampler s;
  s.plan = plan;
  const std::size_t B = cfg.optimizer.batch_size;
  auto all_rows = [](const data::Dataset& ds) {
    std::vector<std::size_t> v(ds.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
    return v;
  };

  if (plan.source_stream && plan.target_stream) {
    std::vector<std::size_t> unlabelled;
    for (std::size_t i = 0; i < d.target_train.size(); ++i)
      if (!std::binary_search(d.kshot.begin(), d.kshot.end(), i)) unlabelled.push_back(i);
    s.streams.source = &d.source_train;
    s.streams.target = &d.target_train;
    s.streams.source_stream = data::Stream(all_rows(d.source_train), make_stream(cfg.seed, "shuffle.source"));
    s.streams.target_unlabelled = data::Stream(unlabelled, make_stream(cfg.seed, "shuffle.target"));
    const bool semi = cfg.scenario == ScenarioKind::SemiDLSTL && plan.target_supervised && !d.kshot.empty();
    if (semi) {
      s.streams.target_labelled = data::Stream(d.kshot, make_stream(cfg.seed, "shuffle.labelled"));
      s.labelled_rows = std::min(cfg.labelled_per_batch, B / 2);
    }
    s.batch = B;
    const std::size_t half = B / 2;
    std::size_t steps = ceil_div(d.source_train.size(), half);
    if (half > s.labelled_rows)
      steps = std::max(steps, ceil_div(unlabelled.size(), half - s.labelled_rows));
    s.steps_per_epoch = steps;
  } else if (plan.source_stream) {
    s.single_ds = &d.source_train;
    s.single = data::Stream(all_rows(d.source_train), make_stream(cfg.seed, "shuffle.source"));
    s.batch = B;
    s.steps_per_epoch = ceil_div(d.source_train.size(), B);
  } else {
    if (d.kshot.empty()) throw ConfigError("variant " + to_string(cfg.variant) + " needs k-shot target labels (k > 0)");
    s.single_ds = &d.target_train;
    s.single = data::Stream(d.kshot, make_stream(cfg.seed, "shuffle.labelled"));
    s.batch = std::min(B, d.kshot.size());
    s.steps_per_epoch = ceil_div(d.kshot.size(), s.batch);
  }
  if (cfg.optimizer.steps_per_epoch) s.steps_per_epoch = *cfg.optimizer.steps_per_epoch;
  return s;
}

losses::Evaluation evaluate_step(const model::ModelParams& params, const data::Batch& batch,
                                 const losses::ObjectiveOptions& opts, std::size_t step) {
  losses::Evaluation ev;
  try {
    ev = losses::evaluate_objective(params, batch, opts);
  } catch (const NumericError& e) {
    throw NumericError("step " + std::to_string(step) + ": " + e.what());
  }
  if (!std::isfinite(ev.report.total)) throw NumericError("step " + std::to_string(step) + ": loss is not finite");
  return ev;
}

void update(model::ModelParams& params, const losses::Evaluation& ev, OptimizerState& state, const TrainConfig& cfg,
            std::size_t step) {
  try {
    optimizer_step(params, ev.grads, state, cfg.optimizer);
  } catch (const NumericError& e) {
    throw NumericError("step " + std::to_string(step) + ": " + e.what());
  }
}

StepRecord make_record(std::size_t step, std::size_t epoch, const losses::Evaluation& ev, const data::Batch& batch,
                       const losses::ObjectiveOptions& opts, const TrainConfig& cfg) {
  StepRecord rec;
  rec.step = step;
  rec.epoch = epoch;
  rec.report = ev.report;
  rec.weights = opts.weights;
  rec.lr = cfg.optimizer.lr;
  rec.source_rows = batch.count(data::Domain::Source);
  rec.target_rows = batch.count(data::Domain::Target);
  rec.labelled_target_rows = batch.labelled_rows_of(data::Domain::Target).size();
  rec.graph_size = ev.graph_size;
  return rec;
}

TrainResult run_loop(const TrainConfig& cfg, const ExperimentData& d, const model::ModelParams& init,
                     Variant variant, std::size_t epochs, bool allow_auto) {
  const VariantPlan plan = plan_for(cfg.scenario, variant);
  losses::ObjectiveOptions opts = cfg.objective();
  opts.variant = variant;

  const bool balance_c = allow_auto && cfg.auto_beta_c && plan.factorisation;
  const bool balance_m = allow_auto && cfg.auto_beta_m && (plan.graph || plan.classic_graph);
  const bool balancing = (balance_c || balance_m) && cfg.optimizer.warmup > 0;
  if (balance_c) opts.weights.beta_c = 1.0;
  if (balance_m) opts.weights.beta_m = 1.0;

  TrainResult res;
  res.params = init;
  if (!res.params.all_finite()) throw NumericError("initial parameters are not finite");

  EpochRecord first = evaluate(res.params, cfg.scenario, d.target_eval, cfg.retrieve_on_cfs);
  first.epoch = 0;
  res.epochs.push_back(first);
  if (epochs == 0) {
    res.weights = opts.weights;
    return res;
  }

  // Warm-up probe: a throwaway run from the same start with the balanced
  // weights at 1. Its medians fix the β's; training then starts afresh.
  if (balancing) {
    model::ModelParams probe = res.params;
    Sampler ps = make_sampler(cfg, d, plan);
    OptimizerState pstate;
    std::vector<losses::LossReport> reports;
    for (std::size_t step = 0; step < cfg.optimizer.warmup; ++step) {
      data::Batch batch = ps.next();
      losses::Evaluation ev = evaluate_step(probe, batch, opts, step);
      res.warmup.push_back(make_record(step, 0, ev, batch, opts, cfg));
      reports.push_back(ev.report);
      update(probe, ev, pstate, cfg, step);
    }
    opts.weights = losses::auto_balance(reports, opts.weights, {balance_c, balance_m});
  }

  Sampler sampler = make_sampler(cfg, d, plan);
  OptimizerState state;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    for (std::size_t s = 0; s < sampler.steps_per_epoch; ++s, ++step) {
      data::Batch batch = sampler.next();
      losses::Evaluation ev = evaluate_step(res.params, batch, opts, step);
      res.steps.push_back(make_record(step, epoch, ev, batch, opts, cfg));
      update(res.params, ev, state, cfg, step);
    }
    EpochRecord er = evaluate(res.params, cfg.scenario, d.target_eval, cfg.retrieve_on_cfs);
    er.epoch = epoch;
    res.epochs.push_back(er);
  }
  res.weights = opts.weights;
  return res;
}

}  // namespace

void OptimizerConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("optimizer.lr must be > 0");
  if (batch_size == 0 || batch_size % 2 != 0) throw ConfigError("optimizer.batch_size must be even and positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0,1)");
  if (!(eps > 0.0)) throw ConfigError("optimizer.eps must be > 0");
  if (steps_per_epoch && *steps_per_epoch == 0) throw ConfigError("optimizer.steps_per_epoch must be > 0");
}

void optimizer_step(model::ModelParams& params, const model::ModelParams& grads, OptimizerState& state,
                    const OptimizerConfig& cfg) {
  std::vector<std::pair<std::string, const Matrix*>> g;
  grads.visit([&](const std::string& name, const Matrix& m) { g.emplace_back(name, &m); });
  for (const auto& [name, m] : g)
    if (!m->all_finite()) throw NumericError("non-finite gradient for parameter " + name);

  if (cfg.kind == OptimizerKind::Adam && state.m.empty()) {
    for (const auto& [name, m] : g) {
      state.m.emplace_back(m->rows(), m->cols());
      state.v.emplace_back(m->rows(), m->cols());
    }
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));

  std::size_t i = 0;
  params.for_each([&](const std::string& name, Matrix& p) {
    const Matrix& gm = *g.at(i).second;
    require_shape(p.same_shape(gm), name.c_str(), p, gm);
    auto pv = p.values();
    auto gv = gm.values();
    if (cfg.kind == OptimizerKind::SGD) {
      for (std::size_t j = 0; j < pv.size(); ++j) pv[j] -= cfg.lr * gv[j];
    } else {
      auto mv = state.m.at(i).values();
      auto vv = state.v.at(i).values();
      for (std::size_t j = 0; j < pv.size(); ++j) {
        mv[j] = cfg.beta1 * mv[j] + (1.0 - cfg.beta1) * gv[j];
        vv[j] = cfg.beta2 * vv[j] + (1.0 - cfg.beta2) * gv[j] * gv[j];
        const double mhat = mv[j] / bc1;
        const double vhat = vv[j] / bc2;
        pv[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
      }
    }
    ++i;
  });
}

void TrainConfig::validate() const {
  optimizer.validate();
  weights.validate();
  graph.validate();
  const VariantPlan plan = plan_for(scenario, variant);
  if (scenario == ScenarioKind::SemiDLSTL && plan.target_stream && k_shot == 0 &&
      (variant == Variant::TrainTarget || variant == Variant::FTTarget))
    throw ConfigError("variant " + to_string(variant) + " needs k > 0");
  if (scenario != ScenarioKind::SemiDLSTL && k_shot != 0)
    throw ConfigError("k-shot labels are only allowed in SemiDLSTL");
}

losses::ObjectiveOptions TrainConfig::objective() const {
  return {scenario, variant, weights, graph, binary_entropy};
}

std::vector<std::size_t> prepare_kshot(const TrainConfig& cfg, const data::Dataset& target_train) {
  if (cfg.scenario != ScenarioKind::SemiDLSTL) return {};
  return data::kshot_sample(target_train, cfg.k_shot, cfg.seed);
}

model::ArchSpec arch_for(const TrainConfig& cfg, const ExperimentData& d, std::vector<std::size_t> hidden,
                         std::size_t feature_dim, std::size_t cfs_dim) {
  model::ArchSpec a;
  a.input_dim = d.source_train.samples.cols();
  a.hidden = std::move(hidden);
  a.feature_dim = feature_dim;
  a.cfs_dim = cfs_dim;
  a.source_classes = d.source_train.label_space.size();
  a.target_classes = cfg.scenario == ScenarioKind::SemiDLSTL ? d.target_train.label_space.size() : 0;
  a.decoder = cfg.variant == Variant::AE;
  a.validate();
  return a;
}

EpochRecord evaluate(const model::ModelParams& params, ScenarioKind scenario, const data::Dataset& target_eval,
                     bool retrieve_on_cfs) {
  EpochRecord r;
  if (target_eval.size() == 0) return r;
  const model::ForwardValues fv = model::forward(params, target_eval.samples);
  r.mid_mass = eval::activation_histogram(fv.fc, 10).mid_mass;
  r.cfs_entropy = plain_factorisation_entropy(fv.fc);
  std::vector<int> idx;
  idx.reserve(target_eval.size());
  for (int l : target_eval.labels) idx.push_back(target_eval.class_index(l));
  switch (scenario) {
    case ScenarioKind::UDA:
      r.accuracy = eval::classification_accuracy(fv.source_logits, idx);
      break;
    case ScenarioKind::SemiDLSTL:
      if (!fv.target_logits) throw ConfigError("SemiDLSTL evaluation needs a target classifier head");
      r.accuracy = eval::classification_accuracy(*fv.target_logits, idx);
      break;
    case ScenarioKind::UnsupDLSTL: {
      const Matrix& rep = retrieve_on_cfs ? fv.fc : fv.features;
      const eval::RetrievalResult rr = eval::retrieval_metrics(rep, target_eval.labels, rep, target_eval.labels, true);
      r.rank1 = rr.rank1;
      r.mAP = rr.mAP;
      break;
    }
  }
  return r;
}

model::ModelParams initial_params(const model::ArchSpec& arch, std::uint64_t seed) {
  Rng rng = make_stream(seed, "init");
  return model::initialise(arch, rng);
}

TrainResult pretrain_source(const TrainConfig& cfg, const ExperimentData& d, const model::ModelParams& init) {
  cfg.validate();
  return run_loop(cfg, d, init, Variant::SourceOnly, cfg.optimizer.pretrain_epochs, false);
}

TrainResult train(const TrainConfig& cfg, const ExperimentData& d, const model::ModelParams& init) {
  cfg.validate();
  return run_loop(cfg, d, init, cfg.variant, cfg.optimizer.epochs, true);
}

PipelineResult run_pipeline(const TrainConfig& cfg, const ExperimentData& d, const model::ArchSpec& arch) {
  cfg.validate();
  const VariantPlan plan = plan_for(cfg.scenario, cfg.variant);
  PipelineResult out;
  model::ModelParams init = initial_params(arch, cfg.seed);
  if (plan.init_from_pretrain) {
    out.pretrain = pretrain_source(cfg, d, init);
    init = out.pretrain.params;
  } else {
    out.pretrain.params = init;
  }
  out.run = train(cfg, d, init);
  return out;
}

}  // namespace cfsm::training
