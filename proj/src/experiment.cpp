#include "cfsm/experiment.hpp"

#include <filesystem>
#include <fstream>

#include "cfsm/error.hpp"
#include "cfsm/eval.hpp"
#include "json.hpp"

#ifndef CFSM_VERSION
#define CFSM_VERSION "unknown"
#endif

namespace cfsm::experiment {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

data::Dataset cap_per_class(const data::Dataset& d, std::size_t cap, std::uint64_t seed) {
  if (cap == 0) return d;
  return data::stratified_split(d, cap, seed).source;
}

data::Dataset load_file(const config::DataConfig& dc, bool test) {
  if (dc.kind == config::DataKind::Idx)
    return test ? data::load_idx(dc.test_images, dc.test_labels) : data::load_idx(dc.train_images, dc.train_labels);
  return data::load_csv(test ? dc.test_csv : dc.train_csv, dc.csv_scale);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

json epoch_json(const training::EpochRecord& r) {
  json j;
  j["epoch"] = r.epoch;
  if (r.accuracy) j["accuracy"] = *r.accuracy;
  if (r.rank1) j["rank1"] = *r.rank1;
  if (r.mAP) j["mAP"] = *r.mAP;
  j["mid_mass"] = r.mid_mass;
  j["cfs_entropy"] = r.cfs_entropy;
  return j;
}

json weights_json(const losses::LossWeights& w) {
  return {{"beta_c", w.beta_c}, {"beta_m", w.beta_m}, {"beta_tgt_ent", w.beta_tgt_ent}, {"beta_ae", w.beta_ae}};
}

// Copies every layer of `from` whose shape fits into `into` (a pretrained
// source model may lack the heads a later variant adds).
void adopt(model::ModelParams& into, const model::ModelParams& from) {
  if (from.arch.input_dim != into.arch.input_dim)
    throw DimensionError("checkpoint input_dim=" + std::to_string(from.arch.input_dim) +
                         " does not match data dim=" + std::to_string(into.arch.input_dim));
  std::vector<std::pair<std::string, const Matrix*>> src;
  from.visit([&](const std::string& n, const Matrix& m) { src.emplace_back(n, &m); });
  into.for_each([&](const std::string& n, Matrix& m) {
    for (const auto& [sn, sm] : src)
      if (sn == n) {
        require_shape(m.same_shape(*sm), ("checkpoint parameter " + n).c_str(), m, *sm);
        m = *sm;
      }
  });
}

void check_fits(const model::ModelParams& p, const training::ExperimentData& d) {
  const std::size_t dim = d.target_eval.samples.cols();
  if (p.arch.input_dim != dim)
    throw DimensionError("checkpoint input_dim=" + std::to_string(p.arch.input_dim) +
                         " does not match data dim=" + std::to_string(dim));
}

std::string manifest(const config::ExperimentConfig& cfg, const std::string& command, const RunSummary& s,
                     const std::vector<std::string>& files) {
  json j;
  j["command"] = command;
  j["code_version"] = code_version();
  j["seed"] = cfg.train.seed;
  j["config"] = json::parse(config::serialise(cfg));
  j["weights"] = weights_json(s.weights);
  j["final"] = epoch_json(s.last);
  j["files"] = files;
  return j.dump(2) + "\n";
}

}  // namespace

std::string code_version() { return CFSM_VERSION; }

training::ExperimentData load_data(const config::ExperimentConfig& cfg) {
  const config::DataConfig& dc = cfg.data;
  const std::uint64_t seed = cfg.train.seed;
  const bool uda = cfg.train.scenario == ScenarioKind::UDA;
  training::ExperimentData d;
  data::Dataset target_pool;
  std::optional<data::Dataset> test_target;

  if (dc.kind == config::DataKind::Synthetic) {
    data::SplitResult s = data::synth_two_domain(dc.synthetic, seed);
    d.source_train = std::move(s.source);
    target_pool = std::move(s.target);
    d.source_eval = d.source_train;
  } else {
    const data::Dataset train = load_file(dc, false);
    data::SplitResult s = data::split_label_space(train, dc.source_classes, dc.target_classes, !uda);
    d.source_train = cap_per_class(s.source, dc.max_per_class, seed);
    target_pool = cap_per_class(s.target, dc.max_per_class, seed);
    d.source_eval = d.source_train;
    if (!dc.test_images.empty() || !dc.test_csv.empty()) {
      const data::Dataset test = load_file(dc, true);
      data::SplitResult t = data::split_label_space(test, dc.source_classes, dc.target_classes, !uda);
      d.source_eval = std::move(t.source);
      test_target = std::move(t.target);
    }
  }

  switch (dc.target_eval) {
    case config::TargetEval::Pool:
      d.target_train = target_pool;
      d.target_eval = target_pool;
      break;
    case config::TargetEval::Holdout: {
      data::SplitResult s = data::stratified_split(target_pool, dc.eval_per_class, seed);
      d.target_eval = std::move(s.source);
      d.target_train = std::move(s.target);
      break;
    }
    case config::TargetEval::TestSet:
      d.target_train = target_pool;
      d.target_eval = *test_target;
      break;
  }
  d.source_train.validate();
  d.target_train.validate();
  d.target_eval.validate();
  d.kshot = training::prepare_kshot(cfg.train, d.target_train);
  return d;
}

model::ArchSpec arch_for(const config::ExperimentConfig& cfg, const training::ExperimentData& d) {
  return training::arch_for(cfg.train, d, cfg.arch.hidden, cfg.arch.feature_dim, cfg.arch.cfs_dim);
}

std::string step_line(const training::StepRecord& r, const std::string& stage) {
  json j;
  j["stage"] = stage;
  j["step"] = r.step;
  j["epoch"] = r.epoch;
  j["total"] = r.report.total;
  j["losses"] = r.report.terms;
  j["betas"] = r.report.weights;
  j["lr"] = r.lr;
  j["source_rows"] = r.source_rows;
  j["target_rows"] = r.target_rows;
  j["labelled_target_rows"] = r.labelled_target_rows;
  j["graph_size"] = r.graph_size;
  return j.dump();
}

std::string epoch_line(const training::EpochRecord& r, const std::string& stage) {
  json j = epoch_json(r);
  j["stage"] = stage;
  return j.dump();
}

void write_histogram_csv(const model::ModelParams& p, const training::ExperimentData& d, const std::string& path,
                         std::size_t bins) {
  const eval::Histogram h = eval::activation_histogram(model::forward(p, d.target_eval.samples).fc, bins);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  out << "bin_low,bin_high,count\n";
  for (std::size_t i = 0; i < bins; ++i) out << h.edges[i] << ',' << h.edges[i + 1] << ',' << h.counts[i] << '\n';
}

void write_topk_csv(const model::ModelParams& p, const training::ExperimentData& d, const std::string& path,
                    std::size_t k) {
  const Matrix& a = d.source_train.samples;
  const Matrix& b = d.target_eval.samples;
  Matrix both(a.rows() + b.rows(), a.cols());
  std::copy(a.values().begin(), a.values().end(), both.values().begin());
  std::copy(b.values().begin(), b.values().end(), both.values().begin() + static_cast<std::ptrdiff_t>(a.size()));
  std::vector<data::Domain> dom(a.rows(), data::Domain::Source);
  dom.resize(both.rows(), data::Domain::Target);
  const auto top = eval::top_k_by_factor(model::forward(p, both).fc, std::min(k, both.rows()), dom);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  out.precision(17);
  out << "factor,rank,index,domain,activation\n";
  for (std::size_t f = 0; f < top.size(); ++f)
    for (std::size_t r = 0; r < top[f].size(); ++r) {
      const auto& e = top[f][r];
      const std::size_t local = e.domain == data::Domain::Source ? e.index : e.index - a.rows();
      out << f << ',' << r << ',' << local << ',' << data::to_string(e.domain) << ',' << e.activation << '\n';
    }
}

RunSummary run_pretrain(const config::ExperimentConfig& cfg, const std::string& out_dir) {
  const training::ExperimentData d = load_data(cfg);
  const model::ArchSpec arch = arch_for(cfg, d);
  fs::create_directories(out_dir);
  const fs::path out(out_dir);

  const training::TrainResult r =
      training::pretrain_source(cfg.train, d, training::initial_params(arch, cfg.train.seed));
  std::string metrics, epochs;
  for (const auto& s : r.steps) metrics += step_line(s, "pretrain") + "\n";
  for (const auto& e : r.epochs) epochs += epoch_line(e, "pretrain") + "\n";
  write_text(out / "metrics.jsonl", metrics);
  write_text(out / "epochs.jsonl", epochs);
  model::save_checkpoint(r.params, (out / "pretrain_checkpoint.json").string());

  RunSummary s{r.epochs.front(), r.epochs.back(), r.weights, (out / "pretrain_checkpoint.json").string()};
  write_text(out / "manifest.json",
             manifest(cfg, "pretrain", s, {"metrics.jsonl", "epochs.jsonl", "pretrain_checkpoint.json"}));
  return s;
}

RunSummary run_train(const config::ExperimentConfig& cfg, const std::string& out_dir,
                     const std::optional<std::string>& init_checkpoint) {
  const training::ExperimentData d = load_data(cfg);
  const model::ArchSpec arch = arch_for(cfg, d);
  fs::create_directories(out_dir);
  const fs::path out(out_dir);

  std::string metrics, epochs;
  model::ModelParams init = training::initial_params(arch, cfg.train.seed);
  if (init_checkpoint) {
    adopt(init, model::load_checkpoint(*init_checkpoint));
  } else if (plan_for(cfg.train.scenario, cfg.train.variant).init_from_pretrain) {
    const training::TrainResult pre = training::pretrain_source(cfg.train, d, init);
    for (const auto& s : pre.steps) metrics += step_line(s, "pretrain") + "\n";
    for (const auto& e : pre.epochs) epochs += epoch_line(e, "pretrain") + "\n";
    init = pre.params;
  }
  const training::TrainResult r = training::train(cfg.train, d, init);
  for (const auto& s : r.warmup) metrics += step_line(s, "warmup") + "\n";
  for (const auto& s : r.steps) metrics += step_line(s, "train") + "\n";
  for (const auto& e : r.epochs) epochs += epoch_line(e, "train") + "\n";

  write_text(out / "metrics.jsonl", metrics);
  write_text(out / "epochs.jsonl", epochs);
  model::save_checkpoint(r.params, (out / "checkpoint.json").string());
  write_histogram_csv(r.params, d, (out / "histogram.csv").string());
  write_topk_csv(r.params, d, (out / "topk.csv").string());

  RunSummary s{r.epochs.front(), r.epochs.back(), r.weights, (out / "checkpoint.json").string()};
  write_text(out / "manifest.json",
             manifest(cfg, "train", s,
                      {"metrics.jsonl", "epochs.jsonl", "checkpoint.json", "histogram.csv", "topk.csv"}));
  return s;
}

std::string run_eval(const config::ExperimentConfig& cfg, const std::string& checkpoint,
                     const std::optional<std::string>& out_dir) {
  const training::ExperimentData d = load_data(cfg);
  const model::ModelParams p = model::load_checkpoint(checkpoint);
  check_fits(p, d);
  const training::EpochRecord r = training::evaluate(p, cfg.train.scenario, d.target_eval, cfg.train.retrieve_on_cfs);
  json j = epoch_json(r);
  j.erase("epoch");
  j["scenario"] = to_string(cfg.train.scenario);
  j["mode"] = eval_mode(cfg.train.scenario) == EvalMode::Retrieval ? "retrieval" : "classification";
  j["target_rows"] = d.target_eval.size();
  if (p.arch.source_classes == d.source_eval.label_space.size() && d.source_eval.size() > 0) {
    const model::ForwardValues fv = model::forward(p, d.source_eval.samples);
    std::vector<int> idx;
    for (int l : d.source_eval.labels) idx.push_back(d.source_eval.class_index(l));
    j["source_accuracy"] = eval::classification_accuracy(fv.source_logits, idx);
  }
  const std::string text = j.dump(2) + "\n";
  if (out_dir) {
    fs::create_directories(*out_dir);
    write_text(fs::path(*out_dir) / "eval.json", text);
  }
  return text;
}

void run_inspect(const config::ExperimentConfig& cfg, const std::string& checkpoint, const std::string& out_dir) {
  const training::ExperimentData d = load_data(cfg);
  const model::ModelParams p = model::load_checkpoint(checkpoint);
  check_fits(p, d);
  fs::create_directories(out_dir);
  write_histogram_csv(p, d, (fs::path(out_dir) / "histogram.csv").string());
  write_topk_csv(p, d, (fs::path(out_dir) / "topk.csv").string());
}

}  // namespace cfsm::experiment
