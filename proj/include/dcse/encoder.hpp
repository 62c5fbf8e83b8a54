#pragma once

// Compact pre-norm transformer encoder producing per-token output embeddings
// for a whitespace-tokenized sentence, plus the mean-pooled sentence vector.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dcse/autodiff.hpp"
#include "dcse/data.hpp"

namespace dcse {

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr std::size_t kReserved = 3;

  Vocab();
  // Reserved tokens must occupy ids 0..2 in order.
  static Vocab from_tokens(std::vector<std::string> tokens);
  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  int id(std::string_view token) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Lowercased whitespace tokens.
std::vector<std::string> split_tokens(std::string_view text);

// Most frequent tokens up to max_size entries including the reserved ones;
// equal counts are ordered lexicographically.
Vocab build_vocab(std::span<const std::string> texts, std::size_t max_size);
Vocab build_vocab(const std::vector<DialogueSession>& corpus, std::size_t max_size);

struct TokenSeq {
  std::vector<int> ids;
  Mask mask;

  std::size_t active() const { return mask_count(mask); }
};

// Truncates to n tokens and pads with PAD up to n.
TokenSeq tokenize(std::string_view text, const Vocab& vocab, std::size_t n);

struct EncoderConfig {
  std::size_t vocab_size = 2000;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t ffn_dim = 128;
  std::size_t layers = 4;
  std::size_t max_len = 32;
  double ln_eps = 1e-5;
};

template <class T>
struct EncoderLayer {
  Parameter<T> ln1_gain, ln1_bias;
  Parameter<T> w_qkv, b_qkv;
  Parameter<T> w_out, b_out;
  Parameter<T> ln2_gain, ln2_bias;
  Parameter<T> w_ff1, b_ff1;
  Parameter<T> w_ff2, b_ff2;

  std::vector<Parameter<T>*> parameters();
  std::vector<const Parameter<T>*> parameters() const;
};

template <class T>
struct EncoderParams {
  EncoderConfig config;
  Parameter<T> tok_emb;  // V x d
  Parameter<T> pos_emb;  // n x d
  // layer norm over token + position embedding, ahead of the first block
  Parameter<T> emb_ln_gain, emb_ln_bias;
  std::vector<EncoderLayer<T>> layers;
  Parameter<T> lnf_gain, lnf_bias;

  // Xavier-uniform projections, N(0, 0.02^2) embedding tables, unit
  // layer-norm gains, zero biases.
  static EncoderParams init(const EncoderConfig& config, std::uint64_t seed);

  std::vector<Parameter<T>*> parameters();
  std::vector<const Parameter<T>*> parameters() const;

  template <class U>
  EncoderParams<U> cast() const;
};

// Freezes the embedding tables with their layer norm and layers
// [0, frozen_bottom); freezing all
// layers also freezes the final layer norm. Throws UsageError when
// frozen_bottom exceeds the layer count.
template <class T>
void set_trainable_layers(EncoderParams<T>& params, std::size_t frozen_bottom);

// Per-layer, per-head attention probabilities captured during encode_full.
template <class T>
using AttentionTrace = std::vector<std::vector<Tensor<T>>>;

// Runs the encoder on every one of the seq's n positions, with PAD keys
// removed from attention (logits of masked keys set to -inf). PAD rows of the
// output are defined but meaningless.
template <class T>
Var<T> encode_full(Tape<T>& tape, const EncoderParams<T>& params, const TokenSeq& seq, AttentionTrace<T>* trace = nullptr);

// Output embeddings of the active prefix only (active x d). Equal to the
// active rows of encode_full, since PAD keys carry no attention weight.
template <class T>
Var<T> encode_compact(Tape<T>& tape, const EncoderParams<T>& params, const TokenSeq& seq);

// n x d output: encode_compact followed by zero rows at PAD positions.
// Throws DataError for an all-PAD sequence.
template <class T>
Var<T> encode(Tape<T>& tape, const EncoderParams<T>& params, const TokenSeq& seq);

template <class T>
Var<T> sentence_embedding(Var<T> embeddings, const Mask& mask);

// Mean-pooled sentence vector outside of any training graph.
template <class T>
std::vector<T> embed_sentence(const EncoderParams<T>& params, const TokenSeq& seq);

}  // namespace dcse
