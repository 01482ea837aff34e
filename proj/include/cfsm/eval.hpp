#pragma once

#include <cstddef>
#include <vector>

#include "cfsm/data.hpp"
#include "cfsm/matrix.hpp"

namespace cfsm::eval {

/// Fraction of rows whose argmax logit equals the label (ties → lowest index).
double classification_accuracy(const Matrix& logits, const std::vector<int>& labels);

struct RetrievalResult {
  double rank1 = 0.0;
  double mAP = 0.0;
  std::vector<double> average_precision;  // per query
};

/// Euclidean ranking of the gallery for every query. With `exclude_self`
/// (query and gallery are the same pool) gallery item i is skipped for query i.
/// Ties in distance are broken by lower gallery index.
RetrievalResult retrieval_metrics(const Matrix& query, const std::vector<int>& query_ids,
                                  const Matrix& gallery, const std::vector<int>& gallery_ids,
                                  bool exclude_self = false);

/// AP of a ranked relevance list: mean of precision@rank over relevant hits.
double average_precision(const std::vector<bool>& relevant_in_rank_order);

struct Histogram {
  std::vector<double> edges;  // bins+1 uniform edges over [0,1]
  std::vector<std::size_t> counts;
  double mid_mass = 0.0;      // fraction of entries in (0.1, 0.9)
  std::size_t total() const;
};

Histogram activation_histogram(const Matrix& fc, std::size_t bins);

struct TopEntry {
  std::size_t index;
  double activation;
  data::Domain domain;
};

/// For each column, the k rows with the highest activation, descending, ties
/// by lower row index. `domains` may be empty (all rows tagged Source).
std::vector<std::vector<TopEntry>> top_k_by_factor(const Matrix& fc, std::size_t k,
                                                   const std::vector<data::Domain>& domains = {});

}  // namespace cfsm::eval
