#pragma once

// Siamese context-response matcher used as the comparison model. Context and
// response go through the shared encoder, are mean-pooled, and the features
// [c; r; |c - r|; c * r] feed a ReLU head (4d -> d -> 1) with a sigmoid.

#include <cstdint>
#include <string>
#include <vector>

#include "dcse/contrastive.hpp"
#include "dcse/encoder.hpp"

namespace dcse {

enum class SiameseMode {
  single,  // nearest context utterance, preceding side first
  multi,   // all context utterances joined in session order
};

template <class T>
struct SiameseHead {
  Parameter<T> w1, b1, w2, b2;

  static SiameseHead init(std::size_t d, std::uint64_t seed);
  std::vector<Parameter<T>*> parameters() { return {&w1, &b1, &w2, &b2}; }
  std::vector<const Parameter<T>*> parameters() const { return {&w1, &b1, &w2, &b2}; }
};

// 1 x 4d row [c; r; |c - r|; c * r] from two 1 x d rows.
template <class T>
Var<T> siamese_features(Var<T> c, Var<T> r);

// The context text the model sees. Throws DataError for an empty context.
std::string siamese_context(const GroupSpec& spec, SiameseMode mode);

// context holds the single context sequence; candidates[0] is the positive.
TokenizedGroup tokenize_siamese_group(const GroupSpec& spec, const Vocab& vocab, SiameseMode mode,
                                      std::size_t max_len);

template <class T>
struct SiameseModel {
  EncoderParams<T> encoder;
  SiameseHead<T> head;
  SiameseMode mode = SiameseMode::multi;
  bool compact = true;

  static SiameseModel init(const EncoderConfig& config, SiameseMode mode, std::uint64_t seed);

  std::vector<Parameter<T>*> parameters();

  Var<T> pooled(Tape<T>& tape, const TokenSeq& seq) const;
  Var<T> logit(Tape<T>& tape, const TokenSeq& context, const TokenSeq& response) const;
  // sigmoid(logit), outside any training graph
  T score(const TokenSeq& context, const TokenSeq& response) const;
  // Mean binary cross-entropy over every candidate of every group, the
  // positive labeled 1 and the negatives 0.
  Var<T> batch_loss(Tape<T>& tape, std::span<const TokenizedGroup> groups) const;
};

}  // namespace dcse
