#include "cfsm/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cfsm/kernels.hpp"
#include "cfsm/log.hpp"

namespace cfsm::losses {

namespace {

// Keeps sqrt differentiable when a mined pair coincides.
constexpr double kDistanceFloor = 1e-12;

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + mid));
  return m;
}

void check_labels(const std::vector<int>& labels, std::size_t rows, std::size_t classes) {
  if (labels.size() != rows)
    throw DimensionError("label count " + std::to_string(labels.size()) + " != logit rows " +
                         std::to_string(rows));
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= classes)
      throw DataError("label " + std::to_string(l) + " outside [0, " + std::to_string(classes) + ")");
}

std::vector<int> labels_at(const data::Batch& b, const std::vector<std::size_t>& rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(b.labels[r]);
  return out;
}

}  // namespace

void LossWeights::validate() const {
  if (beta_c < 0 || beta_m < 0 || beta_tgt_ent < 0 || beta_ae < 0)
    throw ConfigError("loss weights must be nonnegative");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0))
    throw ConfigError("label_smoothing must lie in [0,1)");
  if (!(triplet_margin > 0.0)) throw ConfigError("triplet_margin must be > 0");
}

double LossReport::weighted_sum() const {
  double s = 0.0;
  for (const auto& [k, v] : terms) s += weights.at(k) * v;
  return s;
}

ad::Var supervised_xent(ad::Var logits, const std::vector<int>& labels, double smoothing) {
  const std::size_t n = logits.rows(), c = logits.cols();
  if (n == 0) throw ContractError("supervised_xent on an empty batch");
  check_labels(labels, n, c);
  Matrix q(n, c, smoothing / static_cast<double>(c));
  for (std::size_t i = 0; i < n; ++i) q(i, static_cast<std::size_t>(labels[i])) += 1.0 - smoothing;
  ad::Var target = logits.tape().constant(std::move(q));
  return ad::scale(ad::sum(ad::mul(target, ad::log_softmax(logits))), -1.0 / static_cast<double>(n));
}

ad::Var factorisation_entropy(ad::Var fc, bool binary) {
  for (double v : fc.value().values())
    if (!(v >= 0.0 && v <= 1.0)) throw ContractError("factorisation_entropy: activation outside [0,1]");
  const double inv_n = 1.0 / static_cast<double>(fc.rows());
  ad::Var h = ad::sum(ad::mul(fc, ad::log(fc)));
  if (binary) {
    ad::Var comp = ad::add_scalar(ad::scale(fc, -1.0), 1.0);
    h = ad::add(h, ad::sum(ad::mul(comp, ad::log(comp))));
  }
  return ad::scale(h, -inv_n);
}

ad::Var target_prediction_entropy(ad::Var logits) {
  if (logits.rows() == 0) throw ContractError("target_prediction_entropy on an empty batch");
  ad::Var logp = ad::log_softmax(logits);
  ad::Var p = ad::exp(logp);
  return ad::scale(ad::sum(ad::mul(p, logp)), -1.0 / static_cast<double>(logits.rows()));
}

Triplets mine_batch_hard(const Matrix& features, const std::vector<int>& labels) {
  if (labels.size() != features.rows()) throw DimensionError("triplet labels do not match feature rows");
  const Matrix d2 = kernels::pairwise_sq_dists(features);
  Triplets t;
  const std::size_t n = features.rows();
  for (std::size_t a = 0; a < n; ++a) {
    std::size_t pos = n, neg = n;
    double best_pos = -1.0, best_neg = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      if (labels[j] == labels[a]) {
        if (d2(a, j) > best_pos) best_pos = d2(a, j), pos = j;
      } else if (d2(a, j) < best_neg) {
        best_neg = d2(a, j), neg = j;
      }
    }
    if (pos == n || neg == n) continue;
    t.anchor.push_back(a);
    t.positive.push_back(pos);
    t.negative.push_back(neg);
  }
  return t;
}

ad::Var triplet_loss(ad::Var features, const std::vector<int>& labels, double margin, const Triplets* mined) {
  if (!(margin > 0.0)) throw ContractError("triplet margin must be > 0");
  Triplets local;
  if (!mined) {
    local = mine_batch_hard(features.value(), labels);
    mined = &local;
  }
  if (mined->anchor.empty()) {
    log::warn("triplet_loss: batch has no anchor with both a positive and a negative; loss is 0");
    return features.tape().constant(Matrix::scalar(0.0));
  }
  auto dist = [&](const std::vector<std::size_t>& other) {
    ad::Var diff = ad::sub(ad::gather_rows(features, mined->anchor), ad::gather_rows(features, other));
    return ad::sqrt(ad::add_scalar(ad::row_sum(ad::mul(diff, diff)), kDistanceFloor));
  };
  ad::Var hinge = ad::relu(ad::add_scalar(ad::sub(dist(mined->positive), dist(mined->negative)), margin));
  return ad::mean(hinge);
}

ObjectiveResult composite_objective(ad::Tape& tape, const model::BoundParams& p, const data::Batch& batch,
                                    const ObjectiveOptions& opts, const Frozen* reuse) {
  const VariantPlan plan = plan_for(opts.scenario, opts.variant);
  opts.weights.validate();
  const LossWeights& w = opts.weights;
  if (batch.size() == 0) throw ContractError("composite_objective on an empty batch");

  const auto src_rows = batch.rows_of(data::Domain::Source);
  const auto tgt_rows = batch.rows_of(data::Domain::Target);
  const auto tgt_labelled = batch.labelled_rows_of(data::Domain::Target);
  if (!plan.source_stream && !src_rows.empty())
    throw ConfigError("variant " + to_string(opts.variant) + " does not consume source rows");
  if (!plan.target_stream && !tgt_rows.empty())
    throw ConfigError("variant " + to_string(opts.variant) + " does not consume target rows");
  if (opts.scenario != ScenarioKind::SemiDLSTL && !tgt_labelled.empty())
    throw ConfigError("scenario " + to_string(opts.scenario) + " must not carry target labels into the loss");
  if (batch.labelled_rows_of(data::Domain::Source).size() != src_rows.size())
    throw ContractError("every source row must be labelled");

  ObjectiveResult out;
  ad::Var x = tape.constant(batch.x);
  ad::Var f = model::feature_extract(x, p);
  model::CfsOutput cfs = model::cfs_forward(f, p.cfs);
  const std::size_t n = batch.size();

  std::vector<std::pair<std::string, std::pair<double, ad::Var>>> terms;

  // Supervised: source rows through θ_S, labelled target rows through θ_T.
  std::optional<ad::Var> sup;
  auto add_sup = [&](ad::Var v) { sup = sup ? ad::add(*sup, v) : v; };
  if (plan.source_supervised && !src_rows.empty()) {
    ad::Var logits = model::classify(ad::gather_rows(cfs.z, src_rows), p.source);
    add_sup(supervised_xent(logits, labels_at(batch, src_rows), w.label_smoothing));
  }
  if (plan.target_supervised && !tgt_labelled.empty()) {
    if (!p.target) throw ConfigError("SemiDLSTL needs a target classifier head (target_classes > 0)");
    ad::Var logits = model::classify(ad::gather_rows(cfs.z, tgt_labelled), *p.target);
    add_sup(supervised_xent(logits, labels_at(batch, tgt_labelled), w.label_smoothing));
  }
  if (!sup) throw ContractError("batch has no labelled rows for the supervised term");
  terms.push_back({kSupervised, {1.0, *sup}});

  if (plan.triplet && !src_rows.empty()) {
    const Triplets* mined = reuse && reuse->triplets ? &*reuse->triplets : nullptr;
    ad::Var fs = ad::gather_rows(f, src_rows);
    if (!mined) out.frozen.triplets = mine_batch_hard(fs.value(), labels_at(batch, src_rows));
    else out.frozen.triplets = *mined;
    terms.push_back({kTriplet, {1.0, triplet_loss(fs, labels_at(batch, src_rows), w.triplet_margin,
                                                  &*out.frozen.triplets)}});
  }

  if (plan.factorisation) {
    terms.push_back({kFactorisation, {w.beta_c, factorisation_entropy(cfs.fc, opts.binary_entropy)}});
  }

  if (plan.graph || plan.classic_graph) {
    // Top-down: graph on F_C regularises F. Classic: graph on F regularises F_C.
    ad::Var basis = plan.graph ? cfs.fc : f;
    ad::Var signal = plan.graph ? f : cfs.fc;
    if (reuse && reuse->graph) {
      out.frozen.graph = reuse->graph;
      out.frozen.laplacian = reuse->laplacian;
    } else {
      graph::GraphSpec spec = opts.graph;
      spec.k = std::min(spec.k, n - 1);
      out.frozen.graph = graph::build_similarity_graph(basis.value(), spec);
      out.frozen.laplacian = graph::laplacian(out.frozen.graph->W, opts.graph.normalized);
    }
    ad::Var g = opts.graph.full_gradient
                    ? graph::graph_loss_through_basis(signal, basis, *out.frozen.graph)
                    : graph::graph_loss(signal, *out.frozen.laplacian);
    if (opts.graph.normalize_by_n) g = ad::scale(g, 1.0 / static_cast<double>(n));
    out.graph_size = out.frozen.laplacian->L.rows();
    terms.push_back({kGraph, {w.beta_m, g}});
  }

  if (plan.target_entropy && !tgt_rows.empty()) {
    ad::Var logits = model::classify(ad::gather_rows(cfs.z, tgt_rows), p.source);
    terms.push_back({kTargetEntropy, {w.beta_tgt_ent, target_prediction_entropy(logits)}});
  }

  if (plan.reconstruction) {
    ad::Var f_hat = model::ae_reconstruct(cfs.fc, p.decoder);
    ad::Var target = reuse && reuse->ae_target ? tape.constant(*reuse->ae_target) : f;
    out.frozen.ae_target = target.value();
    terms.push_back({kReconstruction, {w.beta_ae, model::reconstruction_loss(f_hat, target)}});
  }

  std::optional<ad::Var> total;
  for (const auto& [key, wv] : terms) {
    const auto& [weight, var] = wv;
    out.report.terms[key] = var.value().item();
    out.report.weights[key] = weight;
    ad::Var scaled = weight == 1.0 ? var : ad::scale(var, weight);
    total = total ? ad::add(*total, scaled) : scaled;
  }
  out.total = *total;
  out.report.total = out.total.value().item();
  return out;
}

Evaluation evaluate_objective(const model::ModelParams& params, const data::Batch& batch,
                              const ObjectiveOptions& opts, const Frozen* reuse) {
  ad::Tape tape;
  model::BoundParams bound = model::bind(tape, params);
  ObjectiveResult r = composite_objective(tape, bound, batch, opts, reuse);
  tape.backward(r.total);
  return {r.report, model::collect_grads(bound, params), std::move(r.frozen), r.graph_size};
}

double snap_power_of_ten(double x) {
  if (!(x > 0.0)) return 0.0;
  return std::pow(10.0, std::round(std::log10(x)));
}

LossWeights auto_balance(const std::vector<LossReport>& warmup, LossWeights base, BalanceTargets targets) {
  if (warmup.empty()) throw ContractError("auto_balance needs at least one warm-up report");
  auto collect = [&](const char* key) {
    std::vector<double> v;
    for (const LossReport& r : warmup)
      if (auto it = r.terms.find(key); it != r.terms.end()) v.push_back(it->second);
    return v;
  };
  std::vector<double> sup;
  for (const LossReport& r : warmup) {
    double s = r.terms.count(kSupervised) ? r.terms.at(kSupervised) : 0.0;
    if (auto it = r.terms.find(kTriplet); it != r.terms.end()) s += it->second;
    sup.push_back(s);
  }
  const double sup_med = median(sup);

  auto set_beta = [&](const char* key, double& beta, const char* name) {
    const auto v = collect(key);
    if (v.empty()) return;
    const double m = median(v);
    if (m == 0.0) {
      log::warn(std::string("auto_balance: median of '") + key + "' is 0; setting " + name + " = 0");
      beta = 0.0;
      return;
    }
    beta = snap_power_of_ten(sup_med / m);
  };
  if (targets.beta_c) set_beta(kFactorisation, base.beta_c, "beta_c");
  if (targets.beta_m) set_beta(kGraph, base.beta_m, "beta_m");
  return base;
}

}  // namespace cfsm::losses
