#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "dcse/mge.hpp"
#include "test_util.hpp"

using namespace dcse;
using dcse::testing::random_mask;
using dcse::testing::random_tensor;

namespace {

using TD = Tensor<double>;

Embedded<double> embedded(Tape<double>& t, TD rows, Mask mask) { return {t.constant(std::move(rows)), std::move(mask)}; }

TD eye(std::size_t n) {
  TD e(n, n);
  for (std::size_t i = 0; i < n; ++i) e(i, i) = 1.0;
  return e;
}

}  // namespace

TEST_CASE("matching_matrix hand example") {
  Tape<double> tape;
  auto u = embedded(tape, TD::from_rows({{2}, {0}}), {1, 1});
  auto r = embedded(tape, TD::from_rows({{3}, {1}}), {1, 1});
  CHECK(matching_matrix(u, r).values.value() == TD::from_rows({{6, 2}, {0, 0}}));
}

TEST_CASE("masked response columns are zero") {
  std::mt19937_64 rng(1);
  Tape<double> tape;
  auto u = embedded(tape, random_tensor<double>(2, 3, rng), {1, 1});
  auto r = embedded(tape, random_tensor<double>(2, 3, rng), {1, 0});
  auto m = matching_matrix(u, r).values.value();
  CHECK(m(0, 1) == 0.0);
  CHECK(m(1, 1) == 0.0);
}

TEST_CASE("matching_matrix equals naive scaled dot products") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    Tape<double> tape;
    TD U = random_tensor<double>(5, 4, rng), R = random_tensor<double>(6, 4, rng);
    auto m = matching_matrix(embedded(tape, U, Mask(5, 1)), embedded(tape, R, Mask(6, 1))).values.value();
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 6; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < 4; ++k) s += U(i, k) * R(j, k);
        CHECK(std::abs(m(i, j) - s / 2.0) < 1e-9);
      }
  }
}

TEST_CASE("refine identity, annihilation and naive product") {
  std::mt19937_64 rng(3);
  Tape<double> tape;
  TD R = random_tensor<double>(4, 5, rng);
  auto rv = tape.constant(R);
  MatchingMatrix<double> id{tape.constant(eye(4)), Mask(4, 1), Mask(4, 1)};
  CHECK(refine(id, rv).rows.value() == R);
  MatchingMatrix<double> zero{tape.constant(TD(4, 4)), Mask(4, 1), Mask(4, 1)};
  CHECK(refine(zero, rv).rows.value() == TD(4, 5));

  TD M = random_tensor<double>(3, 4, rng);
  MatchingMatrix<double> mm{tape.constant(M), Mask(3, 1), Mask(4, 1)};
  auto out = refine(mm, rv);
  CHECK(out.mask == Mask(3, 1));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 4; ++k) s += M(i, k) * R(k, j);
      CHECK(std::abs(out.rows.value()(i, j) - s) < 1e-9);
    }
}

TEST_CASE("scale equivariance of the matching matrix") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> cdist(-3.0, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    Tape<double> tape;
    TD U = random_tensor<double>(5, 8, rng), R = random_tensor<double>(6, 8, rng);
    Mask um = random_mask(5, rng), rm = random_mask(6, rng);
    const double c = cdist(rng);
    TD cU = U;
    for (auto& v : cU.data()) v *= c;
    auto base = matching_matrix(embedded(tape, U, um), embedded(tape, R, rm)).values.value();
    auto scaled = matching_matrix(embedded(tape, cU, um), embedded(tape, R, rm)).values.value();
    for (std::size_t i = 0; i < base.size(); ++i) CHECK(std::abs(scaled[i] - c * base[i]) < 1e-9);
  }
}

TEST_CASE("perturbing masked rows changes no unmasked output") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    Tape<double> tape;
    TD U = random_tensor<double>(5, 8, rng), R = random_tensor<double>(6, 8, rng);
    Mask um = random_mask(5, rng), rm = random_mask(6, rng);
    TD U2 = U, R2 = R;
    for (std::size_t i = 0; i < 5; ++i)
      if (!um[i])
        for (auto& v : U2.row(i)) v += 10.0;
    for (std::size_t i = 0; i < 6; ++i)
      if (!rm[i])
        for (auto& v : R2.row(i)) v -= 7.0;
    auto m1 = matching_matrix(embedded(tape, U, um), embedded(tape, R, rm));
    auto m2 = matching_matrix(embedded(tape, U2, um), embedded(tape, R2, rm));
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 6; ++j) {
        if (um[i] && rm[j]) CHECK(std::abs(m1.values.value()(i, j) - m2.values.value()(i, j)) < 1e-9);
        else CHECK(m2.values.value()(i, j) == 0.0);
      }
    auto r1 = refine(m1, tape.constant(R)).rows.value();
    auto r2 = refine(m2, tape.constant(R2)).rows.value();
    for (std::size_t i = 0; i < 5; ++i)
      if (um[i])
        for (std::size_t j = 0; j < 8; ++j) CHECK(std::abs(r1(i, j) - r2(i, j)) < 1e-9);
  }
}

TEST_CASE("aggregate_mean algebra") {
  std::mt19937_64 rng(6);
  Tape<double> tape;
  TD A = random_tensor<double>(3, 4, rng);
  TD negA = A;
  for (auto& v : negA.data()) v = -v;
  RefinedSet<double> same{{embedded(tape, A, Mask(3, 1)), embedded(tape, A, Mask(3, 1))}};
  CHECK(aggregate_mean(same).rows.value() == A);
  RefinedSet<double> cancel{{embedded(tape, A, Mask(3, 1)), embedded(tape, negA, Mask(3, 1))}};
  CHECK(aggregate_mean(cancel).rows.value() == TD(3, 4));

  TD B = random_tensor<double>(3, 4, rng), C = random_tensor<double>(3, 4, rng);
  RefinedSet<double> three{{embedded(tape, A, Mask(3, 1)), embedded(tape, B, Mask(3, 1)), embedded(tape, C, Mask(3, 1))}};
  auto mean = aggregate_mean(three).rows.value();
  for (std::size_t i = 0; i < mean.size(); ++i) CHECK(std::abs(mean[i] - (A[i] + B[i] + C[i]) / 3.0) < 1e-9);

  RefinedSet<double> perm{{embedded(tape, C, Mask(3, 1)), embedded(tape, A, Mask(3, 1)), embedded(tape, B, Mask(3, 1))}};
  CHECK(testing::max_abs_diff(aggregate_mean(perm).rows.value(), mean) < 1e-15);

  CHECK_THROWS_AS(aggregate_mean(RefinedSet<double>{}), DegenerateError);
}

TEST_CASE("uneven turns pad with zeros and take the union mask") {
  Tape<double> tape;
  RefinedSet<double> set{{embedded(tape, TD::from_rows({{2, 2}}), {1}),
                          embedded(tape, TD::from_rows({{4, 4}, {6, 6}, {8, 8}}), {1, 0, 1})}};
  auto out = aggregate_mean(set);
  CHECK(out.rows.value() == TD::from_rows({{3, 3}, {3, 3}, {4, 4}}));
  CHECK(out.mask == Mask{1, 0, 1});
}

TEST_CASE("attention over identical turns is uniform and equals the mean") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    Tape<double> tape;
    const std::size_t turns = 1 + trial % 4;
    TD A = random_tensor<double>(4, 6, rng);
    Mask m = random_mask(4, rng);
    RefinedSet<double> set;
    for (std::size_t k = 0; k < turns; ++k) set.refined.push_back(embedded(tape, A, m));
    auto scorer = TurnScorer<double>::init(6, static_cast<std::uint64_t>(trial));
    auto att = aggregate_attention(set, scorer);
    auto mean = aggregate_mean(set);
    for (std::size_t k = 0; k < turns; ++k) CHECK(std::abs(att.weights.value()[k] - 1.0 / double(turns)) < 1e-12);
    CHECK(testing::max_abs_diff(att.result.rows.value(), mean.rows.value()) < 1e-9);
    CHECK(att.result.mask == mean.mask);
  }
}

TEST_CASE("single turn attention is the turn itself") {
  std::mt19937_64 rng(8);
  Tape<double> tape;
  TD A = random_tensor<double>(3, 4, rng);
  RefinedSet<double> set{{embedded(tape, A, Mask(3, 1))}};
  auto att = aggregate_attention(set, TurnScorer<double>::init(4, 1));
  CHECK(att.weights.value() == TD::from_rows({{1}}));
  CHECK(att.result.rows.value() == A);
}

TEST_CASE("attention weights recomputed by hand") {
  Tape<double> tape;
  // d = 2; turns pool to p1 = (1, 2) and p2 = (-1, 3)
  RefinedSet<double> set{{embedded(tape, TD::from_rows({{1, 2}}), {1}),
                          embedded(tape, TD::from_rows({{-2, 4}, {0, 2}}), {1, 1})}};
  TurnScorer<double> s;
  s.w1 = Parameter<double>("w1", TD::from_rows({{1, -1}, {0.5, 2}}));
  s.b1 = Parameter<double>("b1", TD::from_rows({{0.1, -0.2}}));
  s.w2 = Parameter<double>("w2", TD::from_rows({{0.7}, {-0.3}}));
  s.b2 = Parameter<double>("b2", TD::from_rows({{0.05}}));
  auto att = aggregate_attention(set, s);

  auto score = [](double x, double y) {
    const double h1 = std::max(0.0, x * 1 + y * 0.5 + 0.1);
    const double h2 = std::max(0.0, x * -1 + y * 2 - 0.2);
    return h1 * 0.7 + h2 * -0.3 + 0.05;
  };
  const double s1 = score(1, 2), s2 = score(-1, 3);
  const double a1 = std::exp(s1) / (std::exp(s1) + std::exp(s2));
  const double a2 = 1.0 - a1;
  CHECK(std::abs(att.weights.value()[0] - a1) < 1e-12);
  CHECK(std::abs(att.weights.value()[1] - a2) < 1e-12);
  const auto& out = att.result.rows.value();
  CHECK(std::abs(out(0, 0) - (a1 * 1 + a2 * -2)) < 1e-12);
  CHECK(std::abs(out(0, 1) - (a1 * 2 + a2 * 4)) < 1e-12);
  CHECK(std::abs(out(1, 0) - 0.0) < 1e-12);
  CHECK(std::abs(out(1, 1) - a2 * 2) < 1e-12);
}

TEST_CASE("attention is permutation equivariant") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    Tape<double> tape;
    std::vector<TD> turns;
    std::vector<Mask> masks;
    for (int k = 0; k < 3; ++k) {
      turns.push_back(random_tensor<double>(4, 5, rng));
      masks.push_back(random_mask(4, rng));
    }
    auto scorer = TurnScorer<double>::init(5, 3);
    RefinedSet<double> a{{embedded(tape, turns[0], masks[0]), embedded(tape, turns[1], masks[1]),
                          embedded(tape, turns[2], masks[2])}};
    RefinedSet<double> b{{embedded(tape, turns[2], masks[2]), embedded(tape, turns[0], masks[0]),
                          embedded(tape, turns[1], masks[1])}};
    auto ra = aggregate_attention(a, scorer);
    auto rb = aggregate_attention(b, scorer);
    CHECK(testing::max_abs_diff(ra.result.rows.value(), rb.result.rows.value()) < 1e-12);
    CHECK(std::abs(ra.weights.value()[0] - rb.weights.value()[1]) < 1e-15);
    CHECK(std::abs(ra.weights.value()[2] - rb.weights.value()[0]) < 1e-15);
  }
}
