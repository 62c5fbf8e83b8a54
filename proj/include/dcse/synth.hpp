#pragma once

// Synthetic intent-clustered dialogues. Intents are grouped into domains; a
// session walks through the intents of one domain, each turn realized from
// one of the intent's paraphrase templates with slot filling and token noise.

#include <cstdint>
#include <string>
#include <vector>

#include "dcse/data.hpp"
#include "dcse/eval.hpp"

namespace dcse {

struct SynthSpec {
  std::size_t intents = 20;
  std::size_t templates = 5;
  std::size_t sessions = 500;
  std::size_t turns = 6;
  double noise = 0.2;
  std::uint64_t seed = 7;

  std::size_t intents_per_domain = 4;
  // template layout: 2 intent keywords, template_words words unique to the
  // template, fillers_per_template words from a shared pool, one slot
  std::size_t template_words = 2;
  std::size_t fillers_per_template = 4;
  std::size_t filler_pool = 20;
  // probability that the next turn follows the domain's intent cycle
  double follow_cycle = 0.75;
  // chance of an extra same-speaker turn after a regular one
  double split_turn = 0.05;
  std::size_t eval_per_intent = 100;
  std::size_t sr_queries = 200;

  void validate() const;
};

struct SynthTemplate {
  std::vector<std::string> tokens;  // "<slot>" marks the slot position
};

struct SynthIntent {
  std::string name;
  std::string domain;
  std::vector<std::string> keywords;
  std::vector<SynthTemplate> templates;
};

struct SynthGrammar {
  std::vector<SynthIntent> intents;
  std::vector<std::string> fillers;
  std::vector<std::string> slots;
};

struct SynthCorpus {
  SynthGrammar grammar;
  std::vector<DialogueSession> sessions;
  std::vector<LabeledUtterance> eval_pool;
  std::vector<SRSample> sr;
  std::vector<DSTSPair> dsts;
};

inline constexpr const char* kSlotToken = "<slot>";

SynthGrammar make_grammar(const SynthSpec& spec, std::mt19937_64& rng);

// One realization of template `t` of `intent`.
std::string realize(const SynthGrammar& grammar, std::size_t intent, std::size_t t, double noise, std::mt19937_64& rng);

SynthCorpus synth_corpus(const SynthSpec& spec);

}  // namespace dcse
