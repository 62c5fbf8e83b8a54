#include "dcse/encoder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <random>

#include "dcse/error.hpp"

namespace dcse {

namespace {
const std::vector<std::string> kReservedTokens = {"[PAD]", "[UNK]", "[CLS]"};
}

Vocab::Vocab() : tokens_(kReservedTokens) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<int>(i));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < kReserved || !std::equal(kReservedTokens.begin(), kReservedTokens.end(), tokens.begin())) {
    throw DataError("vocab must start with the reserved tokens [PAD], [UNK], [CLS]");
  }
  Vocab v;
  v.tokens_ = std::move(tokens);
  v.index_.clear();
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!v.index_.emplace(v.tokens_[i], static_cast<int>(i)).second) {
      throw DataError("duplicate vocab token '" + v.tokens_[i] + "' at id " + std::to_string(i));
    }
  }
  return v;
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read vocab file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return from_tokens(std::move(tokens));
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocab file " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

int Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocab build_vocab(std::span<const std::string> texts, std::size_t max_size) {
  if (texts.empty()) throw DataError("build_vocab: empty corpus");
  if (max_size < Vocab::kReserved) throw UsageError("build_vocab: max_size smaller than the reserved token count");
  std::map<std::string, std::size_t> counts;
  for (const auto& t : texts) {
    for (auto& tok : split_tokens(t)) ++counts[tok];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens = kReservedTokens;
  for (const auto& [tok, n] : ranked) {
    if (tokens.size() >= max_size) break;
    if (std::find(kReservedTokens.begin(), kReservedTokens.end(), tok) != kReservedTokens.end()) continue;
    tokens.push_back(tok);
  }
  return Vocab::from_tokens(std::move(tokens));
}

Vocab build_vocab(const std::vector<DialogueSession>& corpus, std::size_t max_size) {
  std::vector<std::string> texts;
  for (const auto& s : corpus) {
    for (const auto& t : s.turns) texts.push_back(t.text);
  }
  if (corpus.empty()) throw DataError("build_vocab: empty corpus");
  return build_vocab(texts, max_size);
}

TokenSeq tokenize(std::string_view text, const Vocab& vocab, std::size_t n) {
  if (n == 0) throw UsageError("tokenize: sequence length must be at least 1");
  TokenSeq seq{std::vector<int>(n, Vocab::kPad), Mask(n, 0)};
  const auto toks = split_tokens(text);
  for (std::size_t i = 0; i < toks.size() && i < n; ++i) {
    seq.ids[i] = vocab.id(toks[i]);
    seq.mask[i] = 1;
  }
  return seq;
}

template <class T>
std::vector<Parameter<T>*> EncoderLayer<T>::parameters() {
  return {&ln1_gain, &ln1_bias, &w_qkv, &b_qkv, &w_out, &b_out, &ln2_gain, &ln2_bias, &w_ff1, &b_ff1, &w_ff2, &b_ff2};
}

template <class T>
std::vector<const Parameter<T>*> EncoderLayer<T>::parameters() const {
  return {&ln1_gain, &ln1_bias, &w_qkv, &b_qkv, &w_out, &b_out, &ln2_gain, &ln2_bias, &w_ff1, &b_ff1, &w_ff2, &b_ff2};
}

namespace {

template <class T>
Parameter<T> xavier(std::string name, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  Tensor<T> w(fan_in, fan_out);
  for (auto& v : w.data()) v = static_cast<T>(dist(rng));
  return {std::move(name), std::move(w)};
}

template <class T>
Parameter<T> normal_table(std::string name, std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<T> w(rows, cols);
  for (auto& v : w.data()) v = static_cast<T>(dist(rng));
  return {std::move(name), std::move(w)};
}

template <class T>
Parameter<T> filled(std::string name, std::size_t cols, T value) {
  return {std::move(name), Tensor<T>(1, cols, value)};
}

}  // namespace

template <class T>
EncoderParams<T> EncoderParams<T>::init(const EncoderConfig& config, std::uint64_t seed) {
  if (config.d_model == 0 || config.heads == 0 || config.d_model % config.heads != 0) {
    throw UsageError("encoder: d_model must be a positive multiple of heads");
  }
  if (config.vocab_size < Vocab::kReserved || config.max_len == 0 || config.ffn_dim == 0) {
    throw UsageError("encoder: invalid vocab size, sequence length or feed-forward width");
  }
  std::mt19937_64 rng(seed);
  const std::size_t d = config.d_model;
  const std::size_t f = config.ffn_dim;
  EncoderParams p;
  p.config = config;
  p.tok_emb = normal_table<T>("encoder.tok_emb", config.vocab_size, d, 0.02, rng);
  p.pos_emb = normal_table<T>("encoder.pos_emb", config.max_len, d, 0.02, rng);
  p.emb_ln_gain = filled<T>("encoder.emb_ln_gain", d, T{1});
  p.emb_ln_bias = filled<T>("encoder.emb_ln_bias", d, T{0});
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string pre = "encoder.layer" + std::to_string(l) + ".";
    EncoderLayer<T> layer;
    layer.ln1_gain = filled<T>(pre + "ln1_gain", d, T{1});
    layer.ln1_bias = filled<T>(pre + "ln1_bias", d, T{0});
    layer.w_qkv = xavier<T>(pre + "w_qkv", d, 3 * d, rng);
    layer.b_qkv = filled<T>(pre + "b_qkv", 3 * d, T{0});
    layer.w_out = xavier<T>(pre + "w_out", d, d, rng);
    layer.b_out = filled<T>(pre + "b_out", d, T{0});
    layer.ln2_gain = filled<T>(pre + "ln2_gain", d, T{1});
    layer.ln2_bias = filled<T>(pre + "ln2_bias", d, T{0});
    layer.w_ff1 = xavier<T>(pre + "w_ff1", d, f, rng);
    layer.b_ff1 = filled<T>(pre + "b_ff1", f, T{0});
    layer.w_ff2 = xavier<T>(pre + "w_ff2", f, d, rng);
    layer.b_ff2 = filled<T>(pre + "b_ff2", d, T{0});
    p.layers.push_back(std::move(layer));
  }
  p.lnf_gain = filled<T>("encoder.lnf_gain", d, T{1});
  p.lnf_bias = filled<T>("encoder.lnf_bias", d, T{0});
  return p;
}

template <class T>
std::vector<Parameter<T>*> EncoderParams<T>::parameters() {
  std::vector<Parameter<T>*> out{&tok_emb, &pos_emb, &emb_ln_gain, &emb_ln_bias};
  for (auto& l : layers) {
    for (auto* q : l.parameters()) out.push_back(q);
  }
  out.push_back(&lnf_gain);
  out.push_back(&lnf_bias);
  return out;
}

template <class T>
std::vector<const Parameter<T>*> EncoderParams<T>::parameters() const {
  std::vector<const Parameter<T>*> out{&tok_emb, &pos_emb, &emb_ln_gain, &emb_ln_bias};
  for (const auto& l : layers) {
    for (const auto* q : l.parameters()) out.push_back(q);
  }
  out.push_back(&lnf_gain);
  out.push_back(&lnf_bias);
  return out;
}

template <class T>
template <class U>
EncoderParams<U> EncoderParams<T>::cast() const {
  EncoderParams<U> out;
  out.config = config;
  auto conv = [](const Parameter<T>& p) {
    Parameter<U> q(p.name, p.value.template cast<U>());
    q.frozen = p.frozen;
    return q;
  };
  out.tok_emb = conv(tok_emb);
  out.pos_emb = conv(pos_emb);
  out.emb_ln_gain = conv(emb_ln_gain);
  out.emb_ln_bias = conv(emb_ln_bias);
  for (const auto& l : layers) {
    EncoderLayer<U> m;
    auto src = l.parameters();
    auto dst = m.parameters();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = conv(*src[i]);
    out.layers.push_back(std::move(m));
  }
  out.lnf_gain = conv(lnf_gain);
  out.lnf_bias = conv(lnf_bias);
  return out;
}

template <class T>
void set_trainable_layers(EncoderParams<T>& params, std::size_t frozen_bottom) {
  const std::size_t L = params.layers.size();
  if (frozen_bottom > L) {
    throw UsageError("frozen_bottom " + std::to_string(frozen_bottom) + " exceeds layer count " + std::to_string(L));
  }
  const bool freeze_tables = frozen_bottom > 0;
  params.tok_emb.frozen = freeze_tables;
  params.pos_emb.frozen = freeze_tables;
  params.emb_ln_gain.frozen = freeze_tables;
  params.emb_ln_bias.frozen = freeze_tables;
  for (std::size_t l = 0; l < L; ++l) {
    for (auto* p : params.layers[l].parameters()) p->frozen = l < frozen_bottom;
  }
  params.lnf_gain.frozen = frozen_bottom == L && L > 0;
  params.lnf_bias.frozen = frozen_bottom == L && L > 0;
}

namespace {

template <class T>
Var<T> run_encoder(Tape<T>& tape, const EncoderParams<T>& params, std::span<const int> ids, const Mask* key_mask,
                   AttentionTrace<T>* trace) {
  const auto& cfg = params.config;
  const std::size_t len = ids.size();
  if (len > cfg.max_len) {
    throw ShapeError("encoder: sequence length " + std::to_string(len) + " exceeds max_len " + std::to_string(cfg.max_len));
  }
  const std::size_t d = cfg.d_model;
  const std::size_t dh = d / cfg.heads;
  const T inv_sqrt_dh = T{1} / std::sqrt(static_cast<T>(dh));
  const T eps = static_cast<T>(cfg.ln_eps);

  auto x = ad::gather_rows(tape.param(params.tok_emb), ids);
  x = ad::add(x, ad::slice_rows(tape.param(params.pos_emb), 0, len));
  x = ad::layer_norm_rows(x, tape.param(params.emb_ln_gain), tape.param(params.emb_ln_bias), eps);

  if (trace != nullptr) trace->clear();
  for (const auto& layer : params.layers) {
    auto h = ad::layer_norm_rows(x, tape.param(layer.ln1_gain), tape.param(layer.ln1_bias), eps);
    auto qkv = ad::add_row(ad::matmul(h, tape.param(layer.w_qkv)), tape.param(layer.b_qkv));
    std::vector<Var<T>> heads;
    heads.reserve(cfg.heads);
    std::vector<Tensor<T>> probs;
    for (std::size_t hd = 0; hd < cfg.heads; ++hd) {
      auto q = ad::slice_cols(qkv, hd * dh, dh);
      auto k = ad::slice_cols(qkv, d + hd * dh, dh);
      auto v = ad::slice_cols(qkv, 2 * d + hd * dh, dh);
      auto p = ad::softmax_rows(ad::scale(ad::matmul_nt(q, k), inv_sqrt_dh), key_mask);
      if (trace != nullptr) probs.push_back(p.value());
      heads.push_back(ad::matmul(p, v));
    }
    if (trace != nullptr) trace->push_back(std::move(probs));
    auto attn = ad::concat_cols<T>(heads);
    attn = ad::add_row(ad::matmul(attn, tape.param(layer.w_out)), tape.param(layer.b_out));
    x = ad::add(x, attn);

    auto h2 = ad::layer_norm_rows(x, tape.param(layer.ln2_gain), tape.param(layer.ln2_bias), eps);
    auto ff = ad::relu(ad::add_row(ad::matmul(h2, tape.param(layer.w_ff1)), tape.param(layer.b_ff1)));
    ff = ad::add_row(ad::matmul(ff, tape.param(layer.w_ff2)), tape.param(layer.b_ff2));
    x = ad::add(x, ff);
  }
  return ad::layer_norm_rows(x, tape.param(params.lnf_gain), tape.param(params.lnf_bias), eps);
}

void require_active(const TokenSeq& seq) {
  if (seq.ids.size() != seq.mask.size()) throw ShapeError("token sequence ids/mask length mismatch");
  if (seq.active() == 0) throw DataError("encode: empty sequence (all positions are PAD)");
}

}  // namespace

template <class T>
Var<T> encode_full(Tape<T>& tape, const EncoderParams<T>& params, const TokenSeq& seq, AttentionTrace<T>* trace) {
  require_active(seq);
  return run_encoder(tape, params, seq.ids, &seq.mask, trace);
}

template <class T>
Var<T> encode_compact(Tape<T>& tape, const EncoderParams<T>& params, const TokenSeq& seq) {
  require_active(seq);
  const std::size_t len = seq.active();
  return run_encoder<T>(tape, params, std::span<const int>(seq.ids.data(), len), nullptr, nullptr);
}

template <class T>
Var<T> encode(Tape<T>& tape, const EncoderParams<T>& params, const TokenSeq& seq) {
  return ad::pad_rows(encode_compact(tape, params, seq), seq.ids.size());
}

template <class T>
Var<T> sentence_embedding(Var<T> embeddings, const Mask& mask) {
  return ad::masked_mean_rows(embeddings, mask);
}

template <class T>
std::vector<T> embed_sentence(const EncoderParams<T>& params, const TokenSeq& seq) {
  Tape<T> tape(false);
  auto e = encode_compact(tape, params, seq);
  auto pooled = ad::masked_mean_rows(e, Mask(e.rows(), 1));
  const auto& v = pooled.value();
  return {v.data().begin(), v.data().end()};
}

template struct EncoderLayer<float>;
template struct EncoderLayer<double>;
template struct EncoderParams<float>;
template struct EncoderParams<double>;
template EncoderParams<double> EncoderParams<float>::cast<double>() const;
template EncoderParams<float> EncoderParams<double>::cast<float>() const;
template EncoderParams<float> EncoderParams<float>::cast<float>() const;
template EncoderParams<double> EncoderParams<double>::cast<double>() const;

#define DCSE_INSTANTIATE_ENCODER(T)                                                              \
  template void set_trainable_layers<T>(EncoderParams<T>&, std::size_t);                          \
  template Var<T> encode_full<T>(Tape<T>&, const EncoderParams<T>&, const TokenSeq&, AttentionTrace<T>*); \
  template Var<T> encode_compact<T>(Tape<T>&, const EncoderParams<T>&, const TokenSeq&);           \
  template Var<T> encode<T>(Tape<T>&, const EncoderParams<T>&, const TokenSeq&);                   \
  template Var<T> sentence_embedding<T>(Var<T>, const Mask&);                                     \
  template std::vector<T> embed_sentence<T>(const EncoderParams<T>&, const TokenSeq&);

DCSE_INSTANTIATE_ENCODER(float)
DCSE_INSTANTIATE_ENCODER(double)
#undef DCSE_INSTANTIATE_ENCODER

}  // namespace dcse
