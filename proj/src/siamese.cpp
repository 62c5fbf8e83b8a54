#include "dcse/siamese.hpp"

#include <cmath>
#include <random>

#include "dcse/error.hpp"

namespace dcse {

template <class T>
SiameseHead<T> SiameseHead<T>::init(std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto xavier = [&rng](std::string name, std::size_t fan_in, std::size_t fan_out) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    Tensor<T> w(fan_in, fan_out);
    for (auto& v : w.data()) v = static_cast<T>(dist(rng));
    return Parameter<T>(std::move(name), std::move(w));
  };
  SiameseHead h;
  h.w1 = xavier("siamese.head.w1", 4 * d, d);
  h.b1 = Parameter<T>("siamese.head.b1", Tensor<T>(1, d));
  h.w2 = xavier("siamese.head.w2", d, 1);
  h.b2 = Parameter<T>("siamese.head.b2", Tensor<T>(1, 1));
  return h;
}

template <class T>
Var<T> siamese_features(Var<T> c, Var<T> r) {
  if (c.rows() != 1 || r.rows() != 1 || c.cols() != r.cols()) {
    throw ShapeError("siamese_features: expected two 1 x d rows, got " + c.value().shape() + " and " +
                     r.value().shape());
  }
  const Var<T> parts[] = {c, r, ad::abs(ad::sub(c, r)), ad::mul(c, r)};
  return ad::concat_cols<T>(parts);
}

std::string siamese_context(const GroupSpec& spec, SiameseMode mode) {
  if (spec.context.empty()) throw DataError("siamese: empty context");
  if (mode == SiameseMode::multi) {
    std::string joined;
    for (const auto& c : spec.context) {
      if (!joined.empty()) joined += ' ';
      joined += c;
    }
    return joined;
  }
  if (spec.context_indices.size() != spec.context.size()) return spec.context.back();
  std::size_t best = 0;
  bool found_before = false;
  for (std::size_t i = 0; i < spec.context.size(); ++i) {
    if (spec.context_indices[i] < spec.response_index) {
      best = i;  // indices are ascending, so the last one before k is nearest
      found_before = true;
    }
  }
  if (!found_before) best = 0;  // first turn after k
  return spec.context[best];
}

TokenizedGroup tokenize_siamese_group(const GroupSpec& spec, const Vocab& vocab, SiameseMode mode,
                                      std::size_t max_len) {
  TokenizedGroup g;
  g.context_id = spec.context_id;
  g.context.push_back(tokenize(siamese_context(spec, mode), vocab, max_len));
  if (g.context.front().active() == 0) throw DataError("siamese: context has no tokens");
  g.candidates.push_back(tokenize(spec.response, vocab, max_len));
  for (const auto& n : spec.negatives) g.candidates.push_back(tokenize(n, vocab, max_len));
  g.positive = 0;
  return g;
}

template <class T>
SiameseModel<T> SiameseModel<T>::init(const EncoderConfig& config, SiameseMode mode, std::uint64_t seed) {
  SiameseModel m;
  m.encoder = EncoderParams<T>::init(config, seed);
  m.head = SiameseHead<T>::init(config.d_model, seed ^ 0x51a3e5eULL);
  m.mode = mode;
  return m;
}

template <class T>
std::vector<Parameter<T>*> SiameseModel<T>::parameters() {
  auto out = encoder.parameters();
  for (auto* p : head.parameters()) out.push_back(p);
  return out;
}

template <class T>
Var<T> SiameseModel<T>::pooled(Tape<T>& tape, const TokenSeq& seq) const {
  if (compact) {
    auto rows = encode_compact(tape, encoder, seq);
    return ad::masked_mean_rows(rows, Mask(rows.rows(), 1));
  }
  return sentence_embedding(encode(tape, encoder, seq), seq.mask);
}

namespace {

template <class T>
Var<T> head_logit(Tape<T>& tape, const SiameseHead<T>& head, Var<T> c, Var<T> r) {
  auto h = ad::relu(ad::add_row(ad::matmul(siamese_features(c, r), tape.param(head.w1)), tape.param(head.b1)));
  return ad::add(ad::matmul(h, tape.param(head.w2)), tape.param(head.b2));
}

}  // namespace

template <class T>
Var<T> SiameseModel<T>::logit(Tape<T>& tape, const TokenSeq& context, const TokenSeq& response) const {
  return head_logit(tape, head, pooled(tape, context), pooled(tape, response));
}

template <class T>
T SiameseModel<T>::score(const TokenSeq& context, const TokenSeq& response) const {
  Tape<T> tape(false);
  const T z = logit(tape, context, response).scalar();
  return T{1} / (T{1} + std::exp(-z));
}

template <class T>
Var<T> SiameseModel<T>::batch_loss(Tape<T>& tape, std::span<const TokenizedGroup> groups) const {
  std::vector<Var<T>> losses;
  for (const auto& g : groups) {
    if (g.context.size() != 1) throw DataError("siamese: a group must carry exactly one context sequence");
    if (g.candidates.size() < 2 || g.positive >= g.candidates.size()) {
      throw DataError("siamese: a group needs a positive and at least one negative");
    }
    const auto c = pooled(tape, g.context.front());
    for (std::size_t j = 0; j < g.candidates.size(); ++j) {
      const auto z = head_logit(tape, head, c, pooled(tape, g.candidates[j]));
      losses.push_back(ad::bce_with_logits(z, j == g.positive ? T{1} : T{0}));
    }
  }
  if (losses.empty()) throw DataError("siamese: empty batch");
  return ad::mean_of<T>(losses);
}

#define DCSE_INSTANTIATE_SIAMESE(T)                     \
  template struct SiameseHead<T>;                       \
  template Var<T> siamese_features<T>(Var<T>, Var<T>);  \
  template struct SiameseModel<T>;

DCSE_INSTANTIATE_SIAMESE(float)
DCSE_INSTANTIATE_SIAMESE(double)
#undef DCSE_INSTANTIATE_SIAMESE

}  // namespace dcse
