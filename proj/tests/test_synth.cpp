#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>
#include <string>

#include "dcse/encoder.hpp"
#include "dcse/synth.hpp"

using namespace dcse;

namespace {

bool matches_template(const std::vector<std::string>& tokens, const SynthTemplate& tpl, const std::set<std::string>& slots) {
  if (tokens.size() != tpl.tokens.size()) return false;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tpl.tokens[i] == kSlotToken) {
      if (!slots.count(tokens[i])) return false;
    } else if (tpl.tokens[i] != tokens[i]) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("noise-free utterances reproduce exactly one template") {
  SynthSpec spec;
  spec.intents = 2;
  spec.templates = 1;
  spec.intents_per_domain = 2;
  spec.noise = 0.0;
  spec.sessions = 20;
  spec.eval_per_intent = 120;
  spec.sr_queries = 5;
  auto corpus = synth_corpus(spec);
  const std::set<std::string> slots(corpus.grammar.slots.begin(), corpus.grammar.slots.end());
  std::size_t checked = 0;
  for (const auto& s : corpus.sessions) {
    for (const auto& t : s.turns) {
      REQUIRE(t.intent.has_value());
      std::size_t hits = 0;
      for (const auto& intent : corpus.grammar.intents) hits += matches_template(split_tokens(t.text), intent.templates[0], slots);
      // merged split turns concatenate two realizations
      if (split_tokens(t.text).size() == corpus.grammar.intents[0].templates[0].tokens.size()) {
        CHECK(hits == 1);
        const auto& own = corpus.grammar.intents[std::stoul(t.intent->substr(6))];
        CHECK(matches_template(split_tokens(t.text), own.templates[0], slots));
        ++checked;
      }
    }
  }
  CHECK(checked > 50);
}

TEST_CASE("same seed gives identical corpora and a new seed differs") {
  SynthSpec spec;
  spec.sessions = 50;
  spec.eval_per_intent = 40;
  spec.sr_queries = 10;
  auto a = synth_corpus(spec);
  auto b = synth_corpus(spec);
  CHECK(a.sessions == b.sessions);
  REQUIRE(a.sr.size() == b.sr.size());
  for (std::size_t i = 0; i < a.sr.size(); ++i) {
    CHECK(a.sr[i].query == b.sr[i].query);
    for (std::size_t j = 0; j < a.sr[i].candidates.size(); ++j) {
      CHECK(a.sr[i].candidates[j].text == b.sr[i].candidates[j].text);
      CHECK(a.sr[i].candidates[j].label == b.sr[i].candidates[j].label);
    }
  }
  REQUIRE(a.dsts.size() == b.dsts.size());
  for (std::size_t i = 0; i < a.dsts.size(); ++i) {
    CHECK(a.dsts[i].a == b.dsts[i].a);
    CHECK(a.dsts[i].b == b.dsts[i].b);
    CHECK(a.dsts[i].score == b.dsts[i].score);
  }
  spec.seed = 8;
  CHECK_FALSE(synth_corpus(spec).sessions == a.sessions);
}

TEST_CASE("default corpus: same-intent pairs share content tokens far more often") {
  SynthSpec spec;
  auto corpus = synth_corpus(spec);
  CHECK(corpus.grammar.intents.size() == 20);
  CHECK(corpus.sessions.size() == 500);
  std::set<std::string> function_words(corpus.grammar.fillers.begin(), corpus.grammar.fillers.end());
  function_words.insert(corpus.grammar.slots.begin(), corpus.grammar.slots.end());

  std::vector<std::pair<std::set<std::string>, std::string>> utts;
  for (const auto& u : corpus.eval_pool) {
    std::set<std::string> content;
    for (auto& w : split_tokens(u.text))
      if (!function_words.count(w)) content.insert(w);
    utts.push_back({std::move(content), u.intent});
  }
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> pick(0, utts.size() - 1);
  std::size_t same = 0, same_share = 0, cross = 0, cross_share = 0;
  while (same < 4000 || cross < 4000) {
    const auto& a = utts[pick(rng)];
    const auto& b = utts[pick(rng)];
    if (&a == &b) continue;
    const bool share = std::any_of(a.first.begin(), a.first.end(), [&](const std::string& w) { return b.first.count(w) > 0; });
    if (a.second == b.second) {
      ++same;
      same_share += share;
    } else {
      ++cross;
      cross_share += share;
    }
  }
  const double same_rate = double(same_share) / double(same);
  const double cross_rate = double(cross_share) / double(cross);
  CAPTURE(same_rate);
  CAPTURE(cross_rate);
  // any two templates of an intent share a keyword, which survives noise in
  // both utterances with probability (1 - noise)^2
  const double floor = (1.0 - spec.noise) * (1.0 - spec.noise);
  CHECK(same_rate >= floor);
  CHECK(cross_rate <= 0.02);
}

TEST_CASE("default corpus evaluation sets are well formed") {
  auto corpus = synth_corpus(SynthSpec{});
  CHECK(corpus.sr.size() == 200);
  for (const auto& s : corpus.sr) {
    CHECK(s.candidates.size() == 100);
    std::size_t pos = 0;
    for (const auto& c : s.candidates) {
      pos += c.label;
      CHECK(c.text != s.query);
    }
    CHECK(pos >= 1);
    CHECK(pos <= 30);
  }
  std::set<int> scores;
  for (const auto& p : corpus.dsts) scores.insert(p.score);
  CHECK(scores == std::set<int>{1, 3, 5});
  for (const auto& s : corpus.sessions)
    for (const auto& t : s.turns) CHECK(t.intent.has_value());
}

TEST_CASE("spec validation") {
  SynthSpec bad;
  bad.intents = 0;
  CHECK_THROWS_AS(bad.validate(), UsageError);
  SynthSpec noise;
  noise.noise = 1.5;
  CHECK_THROWS_AS(noise.validate(), UsageError);
  SynthSpec fill;
  fill.fillers_per_template = 40;
  CHECK_THROWS_AS(fill.validate(), UsageError);
  CHECK_NOTHROW(SynthSpec{}.validate());
}
