#include "dcse/mge.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "dcse/error.hpp"

namespace dcse {

template <class T>
TurnScorer<T> TurnScorer<T>::init(std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto xavier = [&rng](std::string name, std::size_t fan_in, std::size_t fan_out) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    Tensor<T> w(fan_in, fan_out);
    for (auto& v : w.data()) v = static_cast<T>(dist(rng));
    return Parameter<T>(std::move(name), std::move(w));
  };
  TurnScorer s;
  s.w1 = xavier("mge.scorer.w1", d, d);
  s.b1 = Parameter<T>("mge.scorer.b1", Tensor<T>(1, d));
  s.w2 = xavier("mge.scorer.w2", d, 1);
  s.b2 = Parameter<T>("mge.scorer.b2", Tensor<T>(1, 1));
  return s;
}

template <class T>
MatchingMatrix<T> matching_matrix(const Embedded<T>& utterance, const Embedded<T>& response) {
  const auto& U = utterance.rows.value();
  const auto& R = response.rows.value();
  if (U.cols() != R.cols() || U.cols() == 0) {
    throw ShapeError("matching_matrix: embedding widths disagree " + U.shape() + " vs " + R.shape());
  }
  const T inv_sqrt_d = T{1} / std::sqrt(static_cast<T>(U.cols()));
  auto m = ad::scale(ad::matmul_nt(utterance.rows, response.rows), inv_sqrt_d);
  m = ad::mask_outer(m, utterance.mask, response.mask);
  return {m, utterance.mask, response.mask};
}

template <class T>
Embedded<T> refine(const MatchingMatrix<T>& m, Var<T> response_rows) {
  const auto& M = m.values.value();
  const auto& R = response_rows.value();
  if (M.cols() != R.rows()) throw ShapeError("refine: matching matrix " + M.shape() + " vs response " + R.shape());
  return {ad::matmul(m.values, response_rows), m.utterance_mask};
}

namespace {

template <class T>
std::size_t max_rows(const RefinedSet<T>& set) {
  if (set.refined.empty()) throw DegenerateError("turn aggregation over an empty refined set");
  std::size_t rows = 0;
  std::size_t cols = set.refined.front().rows.cols();
  for (const auto& e : set.refined) {
    if (e.rows.cols() != cols) throw ShapeError("turn aggregation: refined widths disagree");
    rows = std::max(rows, e.rows.rows());
  }
  return rows;
}

template <class T>
Mask union_mask(const RefinedSet<T>& set, std::size_t rows) {
  Mask out(rows, 0);
  for (const auto& e : set.refined) {
    for (std::size_t i = 0; i < e.mask.size(); ++i) out[i] = out[i] || e.mask[i];
  }
  return out;
}

}  // namespace

template <class T>
Embedded<T> aggregate_mean(const RefinedSet<T>& set) {
  const std::size_t rows = max_rows(set);
  std::vector<Var<T>> padded;
  padded.reserve(set.refined.size());
  for (const auto& e : set.refined) padded.push_back(ad::pad_rows(e.rows, rows));
  return {ad::mean_of<T>(padded), union_mask(set, rows)};
}

template <class T>
AttentionAggregate<T> aggregate_attention(const RefinedSet<T>& set, const TurnScorer<T>& scorer) {
  const std::size_t rows = max_rows(set);
  Tape<T>& tape = *set.refined.front().rows.tape;
  auto w1 = tape.param(scorer.w1);
  auto b1 = tape.param(scorer.b1);
  auto w2 = tape.param(scorer.w2);
  auto b2 = tape.param(scorer.b2);
  std::vector<Var<T>> scores;
  for (const auto& e : set.refined) {
    auto pooled = ad::masked_mean_rows(e.rows, e.mask);
    auto h = ad::relu(ad::add_row(ad::matmul(pooled, w1), b1));
    scores.push_back(ad::add(ad::matmul(h, w2), b2));
  }
  auto alpha = ad::softmax_rows(ad::stack_scalars<T>(scores));
  Var<T> acc{};
  for (std::size_t i = 0; i < set.refined.size(); ++i) {
    auto term = ad::scale_by(ad::pad_rows(set.refined[i].rows, rows), ad::element(alpha, 0, i));
    acc = i == 0 ? term : ad::add(acc, term);
  }
  return {{acc, union_mask(set, rows)}, alpha};
}

#define DCSE_INSTANTIATE_MGE(T)                                                                  \
  template struct TurnScorer<T>;                                                                 \
  template MatchingMatrix<T> matching_matrix<T>(const Embedded<T>&, const Embedded<T>&);         \
  template Embedded<T> refine<T>(const MatchingMatrix<T>&, Var<T>);                              \
  template Embedded<T> aggregate_mean<T>(const RefinedSet<T>&);                                  \
  template AttentionAggregate<T> aggregate_attention<T>(const RefinedSet<T>&, const TurnScorer<T>&);

DCSE_INSTANTIATE_MGE(float)
DCSE_INSTANTIATE_MGE(double)
#undef DCSE_INSTANTIATE_MGE

}  // namespace dcse
