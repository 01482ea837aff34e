#include "cfsm/eval.hpp"

#include <algorithm>
#include <numeric>

#include "cfsm/error.hpp"

namespace cfsm::eval {

double classification_accuracy(const Matrix& logits, const std::vector<int>& labels) {
  if (labels.size() != logits.rows())
    throw DimensionError("accuracy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(logits.rows()) + " logit rows");
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    const auto best = std::max_element(row.begin(), row.end()) - row.begin();  // first max wins
    if (best == labels[r]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double average_precision(const std::vector<bool>& relevant) {
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t r = 0; r < relevant.size(); ++r) {
    if (!relevant[r]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(r + 1);
  }
  return hits == 0 ? 0.0 : sum / static_cast<double>(hits);
}

RetrievalResult retrieval_metrics(const Matrix& query, const std::vector<int>& query_ids,
                                  const Matrix& gallery, const std::vector<int>& gallery_ids,
                                  bool exclude_self) {
  require_shape(query.cols() == gallery.cols(), "retrieval_metrics", query, gallery);
  if (query_ids.size() != query.rows() || gallery_ids.size() != gallery.rows())
    throw DimensionError("retrieval_metrics: id counts do not match feature rows");
  if (exclude_self && query.rows() != gallery.rows())
    throw ContractError("exclude_self requires query and gallery to be the same pool");

  const std::size_t nq = query.rows(), ng = gallery.rows();
  RetrievalResult res;
  res.average_precision.resize(nq);
  std::vector<char> top_hit(nq, 0);
  for (std::size_t q = 0; q < nq; ++q) {
    bool any = false;
    for (std::size_t g = 0; g < ng; ++g)
      if (gallery_ids[g] == query_ids[q] && !(exclude_self && g == q)) any = true;
    if (!any) throw DataError("query id " + std::to_string(query_ids[q]) + " has no match in the gallery");
  }

#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t qi = 0; qi < static_cast<std::ptrdiff_t>(nq); ++qi) {
    const std::size_t q = static_cast<std::size_t>(qi);
    std::vector<std::pair<double, std::size_t>> order;
    order.reserve(ng);
    auto qr = query.row(q);
    for (std::size_t g = 0; g < ng; ++g) {
      if (exclude_self && g == q) continue;
      auto gr = gallery.row(g);
      double d = 0.0;
      for (std::size_t c = 0; c < qr.size(); ++c) {
        const double diff = qr[c] - gr[c];
        d += diff * diff;
      }
      order.emplace_back(d, g);
    }
    std::sort(order.begin(), order.end());
    std::vector<bool> rel(order.size());
    for (std::size_t r = 0; r < order.size(); ++r) rel[r] = gallery_ids[order[r].second] == query_ids[q];
    res.average_precision[q] = average_precision(rel);
    top_hit[q] = rel.empty() ? 0 : rel[0];
  }

  double ap_sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t q = 0; q < nq; ++q) {
    ap_sum += res.average_precision[q];
    hits += top_hit[q] ? 1 : 0;
  }
  if (nq > 0) {
    res.mAP = ap_sum / static_cast<double>(nq);
    res.rank1 = static_cast<double>(hits) / static_cast<double>(nq);
  }
  return res;
}

std::size_t Histogram::total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

Histogram activation_histogram(const Matrix& fc, std::size_t bins) {
  if (bins < 2) throw ContractError("activation_histogram needs at least 2 bins");
  Histogram h;
  h.edges.resize(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) h.edges[i] = static_cast<double>(i) / static_cast<double>(bins);
  h.counts.assign(bins, 0);
  std::size_t mid = 0;
  for (double v : fc.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ContractError("activation_histogram: value outside [0,1]");
    auto b = static_cast<std::size_t>(v * static_cast<double>(bins));
    h.counts[std::min(b, bins - 1)]++;
    if (v > 0.1 && v < 0.9) ++mid;
  }
  h.mid_mass = fc.size() ? static_cast<double>(mid) / static_cast<double>(fc.size()) : 0.0;
  return h;
}

std::vector<std::vector<TopEntry>> top_k_by_factor(const Matrix& fc, std::size_t k,
                                                   const std::vector<data::Domain>& domains) {
  if (k > fc.rows())
    throw ContractError("top_k_by_factor: k=" + std::to_string(k) + " exceeds " + std::to_string(fc.rows()) + " rows");
  if (!domains.empty() && domains.size() != fc.rows())
    throw DimensionError("top_k_by_factor: domain tags do not match rows");
  std::vector<std::vector<TopEntry>> out(fc.cols());
  std::vector<std::size_t> idx(fc.rows());
  for (std::size_t c = 0; c < fc.cols(); ++c) {
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                        if (fc(a, c) != fc(b, c)) return fc(a, c) > fc(b, c);
                        return a < b;
                      });
    for (std::size_t r = 0; r < k; ++r)
      out[c].push_back({idx[r], fc(idx[r], c), domains.empty() ? data::Domain::Source : domains[idx[r]]});
  }
  return out;
}

}  // namespace cfsm::eval
