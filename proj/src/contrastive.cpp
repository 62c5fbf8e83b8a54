#include "dcse/contrastive.hpp"

#include <algorithm>
#include <numeric>

#include "dcse/error.hpp"

namespace dcse {

template <class T>
Var<T> pair_similarity(const CandidatePair<T>& pair) {
  auto a = ad::masked_mean_rows(pair.context_free.rows, pair.context_free.mask);
  auto b = ad::masked_mean_rows(pair.context_aware.rows, pair.context_aware.mask);
  return ad::cosine(a, b);
}

template <class T>
Var<T> nt_xent_loss(std::span<const SimilarityGroup<T>> groups, T tau) {
  if (!(tau > T{0})) throw UsageError("nt_xent_loss: temperature must be positive");
  if (groups.empty()) throw DataError("nt_xent_loss: no groups");
  std::vector<Var<T>> losses;
  losses.reserve(groups.size());
  for (const auto& g : groups) {
    if (g.similarities.empty() || g.positive >= g.similarities.size()) {
      throw DataError("nt_xent_loss: group has no valid positive pair");
    }
    auto logits = ad::scale(ad::stack_scalars<T>(g.similarities), T{1} / tau);
    losses.push_back(ad::softmax_cross_entropy(logits, g.positive));
  }
  return ad::mean_of<T>(losses);
}

template <class T>
Var<T> nt_xent_loss(std::span<const ContrastiveGroup<T>> groups, T tau) {
  std::vector<SimilarityGroup<T>> sims;
  sims.reserve(groups.size());
  for (const auto& g : groups) {
    if (g.pairs.size() < 2) throw DataError("nt_xent_loss: a group needs at least two pairs");
    SimilarityGroup<T> s;
    std::size_t positives = 0;
    for (std::size_t j = 0; j < g.pairs.size(); ++j) {
      if (g.pairs[j].is_positive) {
        s.positive = j;
        ++positives;
      }
      s.similarities.push_back(pair_similarity(g.pairs[j]));
    }
    if (positives != 1) {
      throw DataError("nt_xent_loss: group " + std::to_string(g.context_id) + " has " + std::to_string(positives) +
                      " positive pairs, expected exactly one");
    }
    sims.push_back(std::move(s));
  }
  return nt_xent_loss<T>(std::span<const SimilarityGroup<T>>(sims), tau);
}

namespace {

bool has_tokens(const std::string& text) { return !split_tokens(text).empty(); }

}  // namespace

GroupSampler::GroupSampler(const std::vector<DialogueSession>& sessions, std::size_t turn_budget, std::size_t m_neg,
                           std::uint64_t seed)
    : sessions_(&sessions), m_neg_(m_neg), rng_(seed) {
  if (m_neg == 0) throw UsageError("group sampler: at least one negative per group is required");
  if (turn_budget == 0) throw UsageError("group sampler: turn budget must be at least 1");
  if (sessions.size() < 2) throw DataError("group sampler: negatives need at least two sessions");
  for (auto w : extract_all_windows(sessions, turn_budget)) {
    const auto& s = sessions[w.session];
    if (!has_tokens(s.turns[w.response_index].text)) continue;
    std::erase_if(w.context_indices, [&s](std::size_t i) { return !has_tokens(s.turns[i].text); });
    if (w.context_indices.empty()) continue;
    windows_.push_back(std::move(w));
  }
  if (windows_.empty()) throw DataError("group sampler: corpus yields no usable context windows");
  order_.resize(windows_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::shuffle(order_.begin(), order_.end(), rng_);
}

std::pair<std::size_t, std::string> GroupSampler::sample_negative(std::size_t exclude_session) {
  const auto& sessions = *sessions_;
  std::uniform_int_distribution<std::size_t> pick_session(0, sessions.size() - 1);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    const std::size_t s = pick_session(rng_);
    if (s == exclude_session || sessions[s].turns.empty()) continue;
    std::uniform_int_distribution<std::size_t> pick_turn(0, sessions[s].turns.size() - 1);
    const auto& text = sessions[s].turns[pick_turn(rng_)].text;
    if (has_tokens(text)) return {s, text};
  }
  throw DataError("group sampler: could not draw a non-empty negative utterance");
}

GroupSpec GroupSampler::next() {
  if (cursor_ == order_.size()) {
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
  }
  const auto& w = windows_[order_[cursor_++]];
  const auto& s = (*sessions_)[w.session];
  GroupSpec g;
  g.context_id = emitted_++;
  g.session = w.session;
  g.response_index = w.response_index;
  g.context_indices = w.context_indices;
  for (auto i : w.context_indices) g.context.push_back(s.turns[i].text);
  g.response = s.turns[w.response_index].text;
  for (std::size_t j = 0; j < m_neg_; ++j) {
    auto [sess, text] = sample_negative(w.session);
    g.negative_sessions.push_back(sess);
    g.negatives.push_back(std::move(text));
  }
  return g;
}

std::vector<GroupSpec> GroupSampler::next_batch(std::size_t count) {
  std::vector<GroupSpec> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(next());
  return out;
}

std::vector<GroupSpec> build_groups(const std::vector<DialogueSession>& sessions, std::size_t turn_budget,
                                    std::size_t m_neg, std::uint64_t seed, std::size_t count) {
  GroupSampler sampler(sessions, turn_budget, m_neg, seed);
  return sampler.next_batch(count);
}

TokenizedGroup tokenize_group(const GroupSpec& spec, const Vocab& vocab, std::size_t max_len) {
  TokenizedGroup g;
  g.context_id = spec.context_id;
  for (const auto& c : spec.context) g.context.push_back(tokenize(c, vocab, max_len));
  g.candidates.push_back(tokenize(spec.response, vocab, max_len));
  for (const auto& n : spec.negatives) g.candidates.push_back(tokenize(n, vocab, max_len));
  g.positive = 0;
  return g;
}

template <class T>
DialogueCseModel<T> DialogueCseModel<T>::init(const EncoderConfig& config, Aggregation aggregation, std::uint64_t seed) {
  DialogueCseModel m;
  m.encoder = EncoderParams<T>::init(config, seed);
  m.scorer = TurnScorer<T>::init(config.d_model, seed ^ 0x9e3779b97f4a7c15ULL);
  m.aggregation = aggregation;
  return m;
}

template <class T>
std::vector<Parameter<T>*> DialogueCseModel<T>::parameters() {
  auto out = encoder.parameters();
  if (aggregation == Aggregation::attention) {
    for (auto* p : scorer.parameters()) out.push_back(p);
  }
  return out;
}

template <class T>
ContrastiveGroup<T> DialogueCseModel<T>::build_group(Tape<T>& tape, const TokenizedGroup& group) const {
  if (group.context.empty()) throw DataError("build_group: empty context");
  if (group.candidates.size() < 2) throw DataError("build_group: a group needs a positive and at least one negative");
  auto embed = [&](const TokenSeq& seq) -> Embedded<T> {
    if (compact) {
      auto rows = encode_compact(tape, encoder, seq);
      return {rows, Mask(rows.rows(), 1)};
    }
    return {encode(tape, encoder, seq), seq.mask};
  };
  std::vector<Embedded<T>> context;
  context.reserve(group.context.size());
  for (const auto& u : group.context) context.push_back(embed(u));

  ContrastiveGroup<T> out;
  out.context_id = group.context_id;
  for (std::size_t j = 0; j < group.candidates.size(); ++j) {
    auto response = embed(group.candidates[j]);
    RefinedSet<T> set;
    for (const auto& u : context) set.refined.push_back(refine(matching_matrix(u, response), response.rows));
    Embedded<T> aware = aggregation == Aggregation::mean ? aggregate_mean(set) : aggregate_attention(set, scorer).result;
    out.pairs.push_back({response, aware, j == group.positive});
  }
  return out;
}

template <class T>
Var<T> DialogueCseModel<T>::batch_loss(Tape<T>& tape, std::span<const TokenizedGroup> groups, T tau) const {
  std::vector<ContrastiveGroup<T>> built;
  built.reserve(groups.size());
  for (const auto& g : groups) built.push_back(build_group(tape, g));
  return nt_xent_loss<T>(std::span<const ContrastiveGroup<T>>(built), tau);
}

#define DCSE_INSTANTIATE_CONTRASTIVE(T)                                                   \
  template Var<T> pair_similarity<T>(const CandidatePair<T>&);                            \
  template Var<T> nt_xent_loss<T>(std::span<const SimilarityGroup<T>>, T);                \
  template Var<T> nt_xent_loss<T>(std::span<const ContrastiveGroup<T>>, T);               \
  template struct DialogueCseModel<T>;

DCSE_INSTANTIATE_CONTRASTIVE(float)
DCSE_INSTANTIATE_CONTRASTIVE(double)
#undef DCSE_INSTANTIATE_CONTRASTIVE

}  // namespace dcse
