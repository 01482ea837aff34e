#include "cfsm/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "cfsm/error.hpp"
#include "json.hpp"

namespace cfsm::config {

using nlohmann::json;

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Strict object reader: every key must be consumed, so typos surface as errors.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  template <class T>
  T req(const std::string& key) {
    if (!j_.contains(key)) throw ConfigError("missing required field '" + join(path_, key) + "'");
    return as<T>(key);
  }

  template <class T>
  T opt(const std::string& key, T fallback) {
    if (!j_.contains(key)) return fallback;
    return as<T>(key);
  }

  Reader child(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) return Reader(empty_, join(path_, key));
    return Reader(j_.at(key), join(path_, key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown field '" + join(path_, it.key()) + "'");
  }

  std::string field(const std::string& key) const { return join(path_, key); }

 private:
  template <class T>
  T as(const std::string& key) {
    seen_.insert(key);
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, std::size_t>) {
        if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, std::uint64_t>) {
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("");
      }
      return v.get<T>();
    } catch (const std::exception&) {
      throw ConfigError("field '" + join(path_, key) + "' has the wrong type (got " + v.dump() + ")");
    }
  }

  std::string where() const { return path_.empty() ? "config" : "'" + path_ + "'"; }

  static inline const json empty_ = json::object();
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string data_kind_name(DataKind k) {
  switch (k) {
    case DataKind::Synthetic: return "synthetic";
    case DataKind::Idx: return "idx";
    case DataKind::Csv: return "csv";
  }
  return "?";
}

std::string target_eval_name(TargetEval t) {
  switch (t) {
    case TargetEval::Pool: return "pool";
    case TargetEval::Holdout: return "holdout";
    case TargetEval::TestSet: return "test";
  }
  return "?";
}

std::vector<std::vector<int>> patterns_from(const json& j, const std::string& field) {
  try {
    return j.get<std::vector<std::vector<int>>>();
  } catch (const std::exception&) {
    throw ConfigError("field '" + field + "' must be a list of 0/1 lists");
  }
}

std::vector<int> ints_from(const json& j, const std::string& field) {
  try {
    return j.get<std::vector<int>>();
  } catch (const std::exception&) {
    throw ConfigError("field '" + field + "' must be a list of integers");
  }
}

void read_beta(Reader& r, const std::string& key, double& beta, bool& automatic) {
  if (r.has(key) && r.raw(key).is_string()) {
    if (r.raw(key).get<std::string>() != "auto")
      throw ConfigError("field '" + r.field(key) + "' must be a number or \"auto\"");
    automatic = true;
    return;
  }
  beta = r.opt<double>(key, beta);
}

json synth_json(const data::SynthSpec& s) {
  return {{"factors", s.factors},
          {"source_classes", s.source_classes},
          {"target_classes", s.target_classes},
          {"samples_per_class", s.samples_per_class},
          {"input_dim", s.input_dim},
          {"noise", s.noise},
          {"distortion", s.distortion},
          {"nuisance_dims", s.nuisance_dims},
          {"nuisance_scale", s.nuisance_scale},
          {"source_patterns", s.source_patterns},
          {"target_patterns", s.target_patterns},
          {"shared_label_space", s.shared_label_space}};
}

}  // namespace

void ExperimentConfig::validate() const {
  train.validate();
  if (arch.feature_dim == 0 || arch.cfs_dim == 0) throw ConfigError("arch.feature_dim and arch.cfs_dim must be > 0");
  for (std::size_t h : arch.hidden)
    if (h == 0) throw ConfigError("arch.hidden widths must be > 0");
  const bool uda = train.scenario == ScenarioKind::UDA;

  if (data.kind == DataKind::Synthetic) {
    if (uda != data.synthetic.shared_label_space)
      throw ConfigError(uda ? "data.synthetic.shared_label_space must be true for UDA"
                            : "data.synthetic.shared_label_space is only valid for UDA");
  } else {
    if (data.source_classes.empty() || data.target_classes.empty())
      throw ConfigError("data.source_classes and data.target_classes must be non-empty");
    std::vector<int> s = data.source_classes, t = data.target_classes;
    std::sort(s.begin(), s.end());
    std::sort(t.begin(), t.end());
    if (uda && s != t) throw ConfigError("UDA needs identical data.source_classes and data.target_classes");
    if (!uda) {
      std::vector<int> common;
      std::set_intersection(s.begin(), s.end(), t.begin(), t.end(), std::back_inserter(common));
      if (!common.empty())
        throw ConfigError("data.source_classes and data.target_classes overlap (class " + std::to_string(common[0]) +
                          ") in a disjoint-label-space scenario");
    }
    if (data.kind == DataKind::Idx && (data.train_images.empty() || data.train_labels.empty()))
      throw ConfigError("data.train_images and data.train_labels are required for idx data");
    if (data.kind == DataKind::Csv && data.train_csv.empty()) throw ConfigError("data.train_csv is required for csv data");
  }
  if (data.target_eval == TargetEval::Holdout && data.eval_per_class == 0)
    throw ConfigError("data.eval_per_class must be > 0 with target_eval = holdout");
  if (data.target_eval == TargetEval::TestSet) {
    if (data.kind == DataKind::Synthetic) throw ConfigError("data.target_eval = test needs file-backed data");
    if (data.kind == DataKind::Idx && (data.test_images.empty() || data.test_labels.empty()))
      throw ConfigError("data.test_images and data.test_labels are required with target_eval = test");
    if (data.kind == DataKind::Csv && data.test_csv.empty())
      throw ConfigError("data.test_csv is required with target_eval = test");
  }
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

ExperimentConfig parse(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  Reader r(j, "");
  training::TrainConfig& t = c.train;
  t.scenario = scenario_from_string(r.req<std::string>("scenario"));
  t.variant = variant_from_string(r.req<std::string>("variant"));
  t.seed = r.req<std::uint64_t>("seed");
  t.k_shot = r.opt<std::size_t>("k_shot", t.k_shot);
  t.labelled_per_batch = r.opt<std::size_t>("labelled_per_batch", t.labelled_per_batch);
  t.retrieve_on_cfs = r.opt<bool>("retrieve_on_cfs", t.retrieve_on_cfs);
  c.output_dir = r.opt<std::string>("output_dir", c.output_dir);

  {
    Reader a = r.child("arch");
    if (a.has("hidden")) {
      const json& h = a.raw("hidden");
      try {
        c.arch.hidden = h.get<std::vector<std::size_t>>();
      } catch (const std::exception&) {
        throw ConfigError("field 'arch.hidden' must be a list of positive integers");
      }
    }
    c.arch.feature_dim = a.opt<std::size_t>("feature_dim", c.arch.feature_dim);
    c.arch.cfs_dim = a.opt<std::size_t>("cfs_dim", c.arch.cfs_dim);
    a.finish();
  }
  {
    Reader l = r.child("losses");
    read_beta(l, "beta_c", t.weights.beta_c, t.auto_beta_c);
    read_beta(l, "beta_m", t.weights.beta_m, t.auto_beta_m);
    t.weights.beta_tgt_ent = l.opt<double>("beta_tgt_ent", t.weights.beta_tgt_ent);
    t.weights.beta_ae = l.opt<double>("beta_ae", t.weights.beta_ae);
    t.weights.label_smoothing = l.opt<double>("label_smoothing", t.weights.label_smoothing);
    t.weights.triplet_margin = l.opt<double>("triplet_margin", t.weights.triplet_margin);
    t.binary_entropy = l.opt<bool>("binary_entropy", t.binary_entropy);
    l.finish();
  }
  {
    Reader g = r.child("graph");
    t.graph.k = g.opt<std::size_t>("k", t.graph.k);
    if (g.has("sigma") && !g.raw("sigma").is_null()) t.graph.sigma = g.req<double>("sigma");
    t.graph.normalized = g.opt<bool>("normalized", t.graph.normalized);
    t.graph.symmetrize = g.opt<bool>("symmetrize", t.graph.symmetrize);
    t.graph.normalize_by_n = g.opt<bool>("normalize_by_n", t.graph.normalize_by_n);
    t.graph.full_gradient = g.opt<bool>("full_gradient", t.graph.full_gradient);
    g.finish();
  }
  {
    Reader o = r.child("optimizer");
    training::OptimizerConfig& oc = t.optimizer;
    const std::string kind = o.opt<std::string>("kind", "adam");
    if (kind == "adam") oc.kind = training::OptimizerKind::Adam;
    else if (kind == "sgd") oc.kind = training::OptimizerKind::SGD;
    else throw ConfigError("field 'optimizer.kind' must be \"adam\" or \"sgd\"");
    oc.lr = o.opt<double>("lr", oc.lr);
    oc.beta1 = o.opt<double>("beta1", oc.beta1);
    oc.beta2 = o.opt<double>("beta2", oc.beta2);
    oc.eps = o.opt<double>("eps", oc.eps);
    oc.epochs = o.opt<std::size_t>("epochs", oc.epochs);
    oc.pretrain_epochs = o.opt<std::size_t>("pretrain_epochs", oc.pretrain_epochs);
    oc.batch_size = o.opt<std::size_t>("batch_size", oc.batch_size);
    oc.warmup = o.opt<std::size_t>("warmup", oc.warmup);
    if (o.has("steps_per_epoch") && !o.raw("steps_per_epoch").is_null())
      oc.steps_per_epoch = o.req<std::size_t>("steps_per_epoch");
    o.finish();
  }
  {
    Reader d = r.child("data");
    DataConfig& dc = c.data;
    const std::string kind = d.opt<std::string>("kind", "synthetic");
    if (kind == "synthetic") dc.kind = DataKind::Synthetic;
    else if (kind == "idx") dc.kind = DataKind::Idx;
    else if (kind == "csv") dc.kind = DataKind::Csv;
    else throw ConfigError("field 'data.kind' must be synthetic, idx or csv");
    {
      Reader s = d.child("synthetic");
      data::SynthSpec& ss = dc.synthetic;
      ss.factors = s.opt<std::size_t>("factors", ss.factors);
      ss.source_classes = s.opt<std::size_t>("source_classes", ss.source_classes);
      ss.target_classes = s.opt<std::size_t>("target_classes", ss.target_classes);
      ss.samples_per_class = s.opt<std::size_t>("samples_per_class", ss.samples_per_class);
      ss.input_dim = s.opt<std::size_t>("input_dim", ss.input_dim);
      ss.noise = s.opt<double>("noise", ss.noise);
      ss.distortion = s.opt<double>("distortion", ss.distortion);
      ss.nuisance_dims = s.opt<std::size_t>("nuisance_dims", ss.nuisance_dims);
      ss.nuisance_scale = s.opt<double>("nuisance_scale", ss.nuisance_scale);
      if (s.has("source_patterns")) ss.source_patterns = patterns_from(s.raw("source_patterns"), s.field("source_patterns"));
      if (s.has("target_patterns")) ss.target_patterns = patterns_from(s.raw("target_patterns"), s.field("target_patterns"));
      ss.shared_label_space = s.opt<bool>("shared_label_space", ss.shared_label_space);
      s.finish();
    }
    dc.train_images = d.opt<std::string>("train_images", "");
    dc.train_labels = d.opt<std::string>("train_labels", "");
    dc.test_images = d.opt<std::string>("test_images", "");
    dc.test_labels = d.opt<std::string>("test_labels", "");
    dc.train_csv = d.opt<std::string>("train_csv", "");
    dc.test_csv = d.opt<std::string>("test_csv", "");
    dc.csv_scale = d.opt<double>("csv_scale", dc.csv_scale);
    if (d.has("source_classes")) dc.source_classes = ints_from(d.raw("source_classes"), d.field("source_classes"));
    if (d.has("target_classes")) dc.target_classes = ints_from(d.raw("target_classes"), d.field("target_classes"));
    const std::string te = d.opt<std::string>("target_eval", "pool");
    if (te == "pool") dc.target_eval = TargetEval::Pool;
    else if (te == "holdout") dc.target_eval = TargetEval::Holdout;
    else if (te == "test") dc.target_eval = TargetEval::TestSet;
    else throw ConfigError("field 'data.target_eval' must be pool, holdout or test");
    dc.eval_per_class = d.opt<std::size_t>("eval_per_class", dc.eval_per_class);
    dc.max_per_class = d.opt<std::size_t>("max_per_class", dc.max_per_class);
    d.finish();
  }
  r.finish();
  c.validate();
  return c;
}

ExperimentConfig load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string serialise(const ExperimentConfig& c) {
  const training::TrainConfig& t = c.train;
  const training::OptimizerConfig& o = t.optimizer;
  json j;
  j["scenario"] = to_string(t.scenario);
  j["variant"] = to_string(t.variant);
  j["seed"] = t.seed;
  j["k_shot"] = t.k_shot;
  j["labelled_per_batch"] = t.labelled_per_batch;
  j["retrieve_on_cfs"] = t.retrieve_on_cfs;
  j["output_dir"] = c.output_dir;
  j["arch"] = {{"hidden", c.arch.hidden}, {"feature_dim", c.arch.feature_dim}, {"cfs_dim", c.arch.cfs_dim}};
  j["losses"] = {{"beta_c", t.auto_beta_c ? json("auto") : json(t.weights.beta_c)},
                 {"beta_m", t.auto_beta_m ? json("auto") : json(t.weights.beta_m)},
                 {"beta_tgt_ent", t.weights.beta_tgt_ent},
                 {"beta_ae", t.weights.beta_ae},
                 {"label_smoothing", t.weights.label_smoothing},
                 {"triplet_margin", t.weights.triplet_margin},
                 {"binary_entropy", t.binary_entropy}};
  j["graph"] = {{"k", t.graph.k},
                {"sigma", t.graph.sigma ? json(*t.graph.sigma) : json(nullptr)},
                {"normalized", t.graph.normalized},
                {"symmetrize", t.graph.symmetrize},
                {"normalize_by_n", t.graph.normalize_by_n},
                {"full_gradient", t.graph.full_gradient}};
  j["optimizer"] = {{"kind", o.kind == training::OptimizerKind::Adam ? "adam" : "sgd"},
                    {"lr", o.lr},
                    {"beta1", o.beta1},
                    {"beta2", o.beta2},
                    {"eps", o.eps},
                    {"epochs", o.epochs},
                    {"pretrain_epochs", o.pretrain_epochs},
                    {"batch_size", o.batch_size},
                    {"warmup", o.warmup},
                    {"steps_per_epoch", o.steps_per_epoch ? json(*o.steps_per_epoch) : json(nullptr)}};
  const DataConfig& d = c.data;
  j["data"] = {{"kind", data_kind_name(d.kind)},
               {"synthetic", synth_json(d.synthetic)},
               {"train_images", d.train_images},
               {"train_labels", d.train_labels},
               {"test_images", d.test_images},
               {"test_labels", d.test_labels},
               {"train_csv", d.train_csv},
               {"test_csv", d.test_csv},
               {"csv_scale", d.csv_scale},
               {"source_classes", d.source_classes},
               {"target_classes", d.target_classes},
               {"target_eval", target_eval_name(d.target_eval)},
               {"eval_per_class", d.eval_per_class},
               {"max_per_class", d.max_per_class}};
  return j.dump(2) + "\n";
}

}  // namespace cfsm::config
