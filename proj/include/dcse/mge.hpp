#pragma once

// Matching-guided embedding: per-turn token matching between a context
// utterance and a response, the refined response representations it yields,
// and the two ways of fusing them across turns.

#include <cstdint>
#include <vector>

#include "dcse/autodiff.hpp"

namespace dcse {

// Token embedding rows with their activity mask (mask.size() == rows).
template <class T>
struct Embedded {
  Var<T> rows;
  Mask mask;
};

template <class T>
struct MatchingMatrix {
  Var<T> values;  // n_u x n_r
  Mask utterance_mask;
  Mask response_mask;
};

// Refined matrices, one per context turn, in session order. Rows of each
// refined matrix are indexed by the tokens of its utterance.
template <class T>
struct RefinedSet {
  std::vector<Embedded<T>> refined;
};

// Two-layer ReLU scorer d -> d -> 1 used by attention aggregation.
template <class T>
struct TurnScorer {
  Parameter<T> w1, b1, w2, b2;

  static TurnScorer init(std::size_t d, std::uint64_t seed);
  std::vector<Parameter<T>*> parameters() { return {&w1, &b1, &w2, &b2}; }
  std::vector<const Parameter<T>*> parameters() const { return {&w1, &b1, &w2, &b2}; }
};

// M = U R^T / sqrt(d), with entries in masked rows or columns set to 0.
template <class T>
MatchingMatrix<T> matching_matrix(const Embedded<T>& utterance, const Embedded<T>& response);

// R_hat = M R (no normalization of M).
template <class T>
Embedded<T> refine(const MatchingMatrix<T>& m, Var<T> response_rows);

// Mean of the refined matrices. Matrices with fewer rows are zero-padded to
// the longest one; the result mask is the union of the turn masks.
template <class T>
Embedded<T> aggregate_mean(const RefinedSet<T>& set);

template <class T>
struct AttentionAggregate {
  Embedded<T> result;
  Var<T> weights;  // 1 x turns, softmax of the per-turn scores
};

// Each refined matrix is mean-pooled over its active rows, scored by the
// two-layer ReLU network, and the turn weights are the softmax of the scores.
template <class T>
AttentionAggregate<T> aggregate_attention(const RefinedSet<T>& set, const TurnScorer<T>& scorer);

}  // namespace dcse
