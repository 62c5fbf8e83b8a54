#pragma once

// Contrastive training pairs for dialogue responses and the NT-Xent objective.
//
// For a context C and its true response r, the pair (R, R~) is positive: R is
// the response encoded alone, R~ the matching-guided embedding of R under C.
// Each sampled negative r' from another session is put through the same
// process under the same C. A group therefore holds 1 + m_neg pairs, and the
// loss asks the positive pair to have the highest pooled cosine.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dcse/autodiff.hpp"
#include "dcse/data.hpp"
#include "dcse/encoder.hpp"
#include "dcse/mge.hpp"

namespace dcse {

enum class Aggregation { attention, mean };

template <class T>
struct CandidatePair {
  Embedded<T> context_free;
  Embedded<T> context_aware;
  bool is_positive = false;
};

template <class T>
struct ContrastiveGroup {
  std::vector<CandidatePair<T>> pairs;
  std::size_t context_id = 0;
};

// Similarities of one group's pairs and which of them is the positive.
template <class T>
struct SimilarityGroup {
  std::vector<Var<T>> similarities;
  std::size_t positive = 0;
};

// cosine(mean-pool(context_free), mean-pool(context_aware)), each pooled
// over its own mask.
template <class T>
Var<T> pair_similarity(const CandidatePair<T>& pair);

// Mean over groups of -log softmax(s / tau)[positive]. Throws UsageError when
// tau <= 0 and DataError when a group is empty or its positive index is out
// of range.
template <class T>
Var<T> nt_xent_loss(std::span<const SimilarityGroup<T>> groups, T tau);

// Same objective from candidate pairs; each group must hold exactly one
// positive pair and at least two pairs.
template <class T>
Var<T> nt_xent_loss(std::span<const ContrastiveGroup<T>> groups, T tau);

// Text-level training group: context utterances in session order, the true
// response, and negatives drawn from other sessions.
struct GroupSpec {
  std::size_t context_id = 0;
  std::size_t session = 0;
  std::size_t response_index = 0;
  std::vector<std::string> context;
  std::vector<std::size_t> context_indices;  // session positions of `context`
  std::string response;
  std::vector<std::string> negatives;
  std::vector<std::size_t> negative_sessions;
};

// Deterministic stream of GroupSpecs over a preprocessed corpus. Windows are
// visited in a seeded shuffle that is redrawn after every full pass.
// Negatives: a session is drawn uniformly (redrawn while it equals the
// response's session), then an utterance uniformly within it.
class GroupSampler {
 public:
  GroupSampler(const std::vector<DialogueSession>& sessions, std::size_t turn_budget, std::size_t m_neg,
               std::uint64_t seed);

  GroupSpec next();
  std::vector<GroupSpec> next_batch(std::size_t count);
  // Draws one utterance from any session other than `exclude_session`.
  std::pair<std::size_t, std::string> sample_negative(std::size_t exclude_session);

  std::size_t window_count() const { return windows_.size(); }

 private:
  const std::vector<DialogueSession>* sessions_;
  std::vector<ContextWindow> windows_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t m_neg_;
  std::size_t emitted_ = 0;
  std::mt19937_64 rng_;
};

// Convenience wrapper: the first `count` groups of a fresh sampler.
std::vector<GroupSpec> build_groups(const std::vector<DialogueSession>& sessions, std::size_t turn_budget,
                                    std::size_t m_neg, std::uint64_t seed, std::size_t count);

struct TokenizedGroup {
  std::vector<TokenSeq> context;
  std::vector<TokenSeq> candidates;  // candidates[positive] is the true response
  std::size_t positive = 0;
  std::size_t context_id = 0;
};

TokenizedGroup tokenize_group(const GroupSpec& spec, const Vocab& vocab, std::size_t max_len);

// Shared encoder + MGE + optional turn scorer. All utterances and responses
// go through the same encoder parameters.
template <class T>
struct DialogueCseModel {
  EncoderParams<T> encoder;
  TurnScorer<T> scorer;
  Aggregation aggregation = Aggregation::mean;
  // Run on the active token prefix instead of the padded n x d matrices. The
  // two are equal up to rounding because padded rows are masked to zero.
  bool compact = true;

  static DialogueCseModel init(const EncoderConfig& config, Aggregation aggregation, std::uint64_t seed);

  std::vector<Parameter<T>*> parameters();

  ContrastiveGroup<T> build_group(Tape<T>& tape, const TokenizedGroup& group) const;
  Var<T> batch_loss(Tape<T>& tape, std::span<const TokenizedGroup> groups, T tau) const;
};

}  // namespace dcse
