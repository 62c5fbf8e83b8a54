#include "dcse/synth.hpp"

#include <algorithm>
#include <set>

#include "dcse/error.hpp"

namespace dcse {

namespace {

constexpr std::string_view kConsonants = "bdfgklmnprstvz";
constexpr std::string_view kVowels = "aeiou";

class WordMaker {
 public:
  explicit WordMaker(std::mt19937_64& rng) : rng_(rng) {}

  std::string next() {
    std::uniform_int_distribution<std::size_t> c(0, kConsonants.size() - 1), v(0, kVowels.size() - 1);
    std::uniform_int_distribution<int> syllables(2, 3);
    for (;;) {
      std::string w;
      const int k = syllables(rng_);
      for (int i = 0; i < k; ++i) {
        w += kConsonants[c(rng_)];
        w += kVowels[v(rng_)];
      }
      if (used_.insert(w).second) return w;
    }
  }

  std::vector<std::string> take(std::size_t n) {
    std::vector<std::string> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(next());
    return out;
  }

 private:
  std::mt19937_64& rng_;
  std::set<std::string> used_;
};

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace

void SynthSpec::validate() const {
  if (intents == 0 || templates == 0 || sessions == 0 || turns == 0 || intents_per_domain == 0)
    throw UsageError("synth: all counts must be at least 1");
  if (fillers_per_template > filler_pool) throw UsageError("synth: fillers_per_template exceeds filler_pool");
  if (!(noise >= 0.0 && noise < 1.0)) throw UsageError("synth: noise rate must lie in [0, 1)");
  if (!(follow_cycle >= 0.0 && follow_cycle <= 1.0) || !(split_turn >= 0.0 && split_turn < 1.0))
    throw UsageError("synth: probabilities out of range");
}

SynthGrammar make_grammar(const SynthSpec& spec, std::mt19937_64& rng) {
  WordMaker words(rng);
  SynthGrammar g;
  g.fillers = words.take(spec.filler_pool);
  g.slots = words.take(60);
  constexpr std::size_t kKeywords = 3;
  static constexpr std::size_t kPairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
  for (std::size_t i = 0; i < spec.intents; ++i) {
    SynthIntent intent;
    intent.name = "intent" + std::to_string(i);
    intent.domain = "domain" + std::to_string(i / spec.intents_per_domain);
    intent.keywords = words.take(kKeywords);
    for (std::size_t t = 0; t < spec.templates; ++t) {
      SynthTemplate tpl;
      tpl.tokens.push_back(intent.keywords[kPairs[t % 3][0]]);
      tpl.tokens.push_back(intent.keywords[kPairs[t % 3][1]]);
      for (auto& w : words.take(spec.template_words)) tpl.tokens.push_back(std::move(w));
      std::vector<std::string> fill = g.fillers;
      std::shuffle(fill.begin(), fill.end(), rng);
      tpl.tokens.insert(tpl.tokens.end(), fill.begin(), fill.begin() + static_cast<std::ptrdiff_t>(spec.fillers_per_template));
      tpl.tokens.emplace_back(kSlotToken);
      std::shuffle(tpl.tokens.begin(), tpl.tokens.end(), rng);
      intent.templates.push_back(std::move(tpl));
    }
    g.intents.push_back(std::move(intent));
  }
  return g;
}

std::string realize(const SynthGrammar& grammar, std::size_t intent, std::size_t t, double noise,
                    std::mt19937_64& rng) {
  const auto& tpl = grammar.intents.at(intent).templates.at(t);
  std::bernoulli_distribution flip(noise), coin(0.5);
  std::string out;
  for (const auto& tok : tpl.tokens) {
    std::string w;
    if (tok == kSlotToken) {
      w = grammar.slots[uniform_index(rng, grammar.slots.size())];
    } else if (noise > 0.0 && flip(rng)) {
      const auto& pool = coin(rng) ? grammar.fillers : grammar.slots;
      w = pool[uniform_index(rng, pool.size())];
    } else {
      w = tok;
    }
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

SynthCorpus synth_corpus(const SynthSpec& spec) {
  spec.validate();
  SynthCorpus c;
  std::mt19937_64 grammar_rng(spec.seed);
  c.grammar = make_grammar(spec, grammar_rng);

  const std::size_t domains = (spec.intents + spec.intents_per_domain - 1) / spec.intents_per_domain;
  auto domain_members = [&](std::size_t d) {
    const std::size_t first = d * spec.intents_per_domain;
    return std::pair{first, std::min(spec.intents, first + spec.intents_per_domain)};
  };

  std::mt19937_64 rng(spec.seed ^ 0x5157a7e5ULL);
  std::bernoulli_distribution follow(spec.follow_cycle), split(spec.split_turn);
  auto utter = [&](std::size_t intent) {
    return Turn{Speaker::A, realize(c.grammar, intent, uniform_index(rng, spec.templates), spec.noise, rng),
                c.grammar.intents[intent].name};
  };
  for (std::size_t s = 0; s < spec.sessions; ++s) {
    DialogueSession session{"synth-" + std::to_string(s), {}};
    const auto [first, last] = domain_members(uniform_index(rng, domains));
    const std::size_t width = last - first;
    std::size_t pos = uniform_index(rng, width);
    Speaker speaker = Speaker::A;
    for (std::size_t k = 0; k < spec.turns; ++k) {
      Turn turn = utter(first + pos);
      turn.speaker = speaker;
      session.turns.push_back(turn);
      if (split(rng)) {
        Turn extra = utter(first + pos);
        extra.speaker = speaker;
        session.turns.push_back(std::move(extra));
      }
      speaker = speaker == Speaker::A ? Speaker::B : Speaker::A;
      pos = follow(rng) ? (pos + 1) % width : uniform_index(rng, width);
    }
    c.sessions.push_back(std::move(session));
  }

  std::mt19937_64 eval_rng(spec.seed ^ 0xe7a1ULL);
  for (std::size_t i = 0; i < spec.intents; ++i) {
    for (std::size_t k = 0; k < spec.eval_per_intent; ++k) {
      const std::size_t t = uniform_index(eval_rng, spec.templates);
      c.eval_pool.push_back(
          {realize(c.grammar, i, t, spec.noise, eval_rng), c.grammar.intents[i].name, c.grammar.intents[i].domain});
    }
  }
  SRBuildOptions sr;
  sr.num_queries = spec.sr_queries;
  if (c.eval_pool.size() > sr.per_query) c.sr = build_sr_dataset(c.eval_pool, sr, eval_rng);
  if (domains > 1) c.dsts = build_dsts_dataset(c.eval_pool, DSTSBuildOptions{}, eval_rng);
  return c;
}

}  // namespace dcse
