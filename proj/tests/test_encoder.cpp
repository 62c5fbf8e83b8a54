#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "dcse/encoder.hpp"
#include "dcse/trainer.hpp"
#include "test_util.hpp"

using namespace dcse;

namespace {

EncoderConfig small_config(std::size_t vocab = 20, std::size_t d = 16, std::size_t n = 8, std::size_t layers = 2) {
  EncoderConfig c;
  c.vocab_size = vocab;
  c.d_model = d;
  c.heads = 4;
  c.ffn_dim = 2 * d;
  c.layers = layers;
  c.max_len = n;
  return c;
}

TokenSeq seq_of(std::vector<int> ids, Mask mask) { return TokenSeq{std::move(ids), std::move(mask)}; }

double norm_of(const Tensor<float>& a, const Tensor<float>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (double(a[i]) - b[i]) * (double(a[i]) - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("build_vocab keeps reserved tokens then frequency order") {
  const std::vector<std::string> texts{"a a b", "a"};
  Vocab v = build_vocab(texts, 10);
  REQUIRE(v.size() == 5);
  CHECK(v.token(0) == "[PAD]");
  CHECK(v.token(1) == "[UNK]");
  CHECK(v.token(2) == "[CLS]");
  CHECK(v.token(3) == "a");
  CHECK(v.token(4) == "b");

  const std::vector<std::string> many{"q q q q w w w e e r t y u i o p"};
  Vocab t = build_vocab(many, 4);
  CHECK(t.size() == 4);
  CHECK(t.token(3) == "q");

  const std::vector<std::string> tie{"zeta alpha"};
  Vocab u = build_vocab(tie, 4);
  CHECK(u.token(3) == "alpha");
  CHECK_THROWS_AS(build_vocab(tie, 2), UsageError);
}

TEST_CASE("tokenize pads, truncates and lowercases") {
  const std::vector<std::string> texts{"hello world a b c d e f"};
  Vocab v = build_vocab(texts, 50);
  TokenSeq s = tokenize("Hello world", v, 4);
  CHECK(s.ids == std::vector<int>{v.id("hello"), v.id("world"), Vocab::kPad, Vocab::kPad});
  CHECK(s.mask == Mask{1, 1, 0, 0});

  TokenSeq e = tokenize("", v, 2);
  CHECK(e.ids == std::vector<int>{Vocab::kPad, Vocab::kPad});
  CHECK(e.mask == Mask{0, 0});

  TokenSeq t = tokenize("a b c d e f", v, 4);
  CHECK(t.ids == std::vector<int>{v.id("a"), v.id("b"), v.id("c"), v.id("d")});
  CHECK(t.mask == Mask{1, 1, 1, 1});
  CHECK(tokenize("nope", v, 2).ids[0] == Vocab::kUnk);
}

TEST_CASE("vocab round-trips through a file and validates reserved ids") {
  const std::vector<std::string> texts{"x y z y"};
  Vocab v = build_vocab(texts, 50);
  const auto path = std::filesystem::temp_directory_path() / "dcse_test_vocab.txt";
  v.save(path);
  CHECK(Vocab::load(path) == v);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(Vocab::from_tokens({"x", "[UNK]", "[CLS]"}), DataError);
  CHECK_THROWS_AS(Vocab::from_tokens({"[PAD]", "[UNK]", "[CLS]", "x", "x"}), DataError);
}

TEST_CASE("encode output shape") {
  auto p = EncoderParams<float>::init(small_config(20, 32, 8), 1);
  Tape<float> tape(false);
  auto out = encode(tape, p, seq_of({3, 4, 5, 0, 0, 0, 0, 0}, {1, 1, 1, 0, 0, 0, 0, 0}));
  CHECK(out.rows() == 8);
  CHECK(out.cols() == 32);
  for (std::size_t i = 3; i < 8; ++i)
    for (std::size_t j = 0; j < 32; ++j) CHECK(out.value()(i, j) == 0.0f);
  CHECK_THROWS_AS(encode(tape, p, seq_of({0, 0}, {0, 0})), DataError);
}

TEST_CASE("zeroed sublayer outputs reduce the encoder to its layer norms") {
  auto cfg = small_config(20, 16, 8);
  auto p = EncoderParams<double>::init(cfg, 3);
  for (auto& l : p.layers) {
    l.w_out.value.fill(0.0);
    l.b_out.value.fill(0.0);
    l.w_ff2.value.fill(0.0);
    l.b_ff2.value.fill(0.0);
  }
  Tape<double> tape(false);
  auto out = encode(tape, p, seq_of({7}, {1}));
  // expected: final layer norm of the embedding layer norm of token + position
  auto ln = [&](std::vector<double> v) {
    double mu = 0.0, var = 0.0;
    for (double e : v) mu += e / 16.0;
    for (double e : v) var += (e - mu) * (e - mu) / 16.0;
    for (double& e : v) e = (e - mu) / std::sqrt(var + cfg.ln_eps);
    return v;
  };
  std::vector<double> x(16);
  for (std::size_t j = 0; j < 16; ++j) x[j] = p.tok_emb.value(7, j) + p.pos_emb.value(0, j);
  const auto expect = ln(ln(x));
  for (std::size_t j = 0; j < 16; ++j) CHECK(out.value()(0, j) == doctest::Approx(expect[j]).epsilon(1e-9));
}

TEST_CASE("encode is deterministic and padding invariant") {
  auto p = EncoderParams<float>::init(small_config(), 5);
  TokenSeq a = seq_of({3, 9, 4, 0, 0, 0}, {1, 1, 1, 0, 0, 0});
  TokenSeq b = seq_of({3, 9, 4, 17, 2, 11}, {1, 1, 1, 0, 0, 0});
  CHECK(embed_sentence(p, a) == embed_sentence(p, a));
  CHECK(embed_sentence(p, a) == embed_sentence(p, b));

  Tape<float> tape(false);
  const Tensor<float> fa = encode_full(tape, p, a).value();
  const Tensor<float> fb = encode_full(tape, p, b).value();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < fa.cols(); ++j) CHECK(fa(i, j) == fb(i, j));
}

TEST_CASE("compact encoding equals the active rows of the full encoding") {
  auto p = EncoderParams<double>::init(small_config(), 6);
  TokenSeq s = seq_of({5, 6, 7, 8, 0, 0, 0, 0}, {1, 1, 1, 1, 0, 0, 0, 0});
  Tape<double> tape(false);
  const auto full = encode_full(tape, p, s).value();
  const auto compact = encode_compact(tape, p, s).value();
  REQUIRE(compact.rows() == 4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < full.cols(); ++j) CHECK(std::abs(full(i, j) - compact(i, j)) < 1e-12);
}

TEST_CASE("attention rows sum to one with zero weight on PAD keys") {
  auto p = EncoderParams<double>::init(small_config(), 7);
  TokenSeq s = seq_of({5, 6, 7, 0, 0, 0, 0, 0}, {1, 1, 1, 0, 0, 0, 0, 0});
  Tape<double> tape(false);
  AttentionTrace<double> trace;
  encode_full(tape, p, s, &trace);
  REQUIRE(trace.size() == 2);
  for (const auto& layer : trace) {
    REQUIRE(layer.size() == 4);
    for (const auto& probs : layer) {
      for (std::size_t i = 0; i < 3; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < probs.cols(); ++j) {
          if (s.mask[j] == 0) CHECK(probs(i, j) == 0.0);
          sum += probs(i, j);
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
      }
    }
  }
}

TEST_CASE("sentence_embedding is the masked mean") {
  Tape<double> tape;
  auto e = tape.constant(Tensor<double>::from_rows({{1, 2}}));
  const Tensor<double> single = sentence_embedding(e, Mask{1}).value();
  CHECK(single == e.value());
  auto x = tape.constant(Tensor<double>::from_rows({{1, 2}, {3, 4}, {100, -100}}));
  auto y = tape.constant(Tensor<double>::from_rows({{1, 2}, {3, 4}, {-7, 9}}));
  const Tensor<double> ex = sentence_embedding(x, Mask{1, 1, 0}).value();
  const Tensor<double> ey = sentence_embedding(y, Mask{1, 1, 0}).value();
  CHECK(ex == ey);
  const Tensor<double> skip = sentence_embedding(x, Mask{1, 0, 1}).value();
  const Tensor<double> mean = ad::masked_mean_rows(x, Mask{1, 0, 1}).value();
  CHECK(skip == mean);
}

TEST_CASE("set_trainable_layers freeze contract") {
  auto p = EncoderParams<float>::init(small_config(20, 16, 8, 2), 1);
  set_trainable_layers(p, 0);
  for (auto* q : p.parameters()) CHECK_FALSE(q->frozen);
  set_trainable_layers(p, 2);
  for (auto* q : p.parameters()) CHECK(q->frozen);
  set_trainable_layers(p, 1);
  CHECK(p.tok_emb.frozen);
  CHECK(p.emb_ln_gain.frozen);
  for (auto* q : p.layers[0].parameters()) CHECK(q->frozen);
  for (auto* q : p.layers[1].parameters()) CHECK_FALSE(q->frozen);
  CHECK_FALSE(p.lnf_gain.frozen);
  CHECK_THROWS_AS(set_trainable_layers(p, 3), UsageError);
}

TEST_CASE("one optimizer step moves only the unfrozen layer") {
  auto p = EncoderParams<float>::init(small_config(20, 16, 8, 2), 2);
  set_trainable_layers(p, 1);
  const auto before = p;
  TokenSeq a = seq_of({3, 4, 5, 6}, {1, 1, 1, 1});
  TokenSeq b = seq_of({7, 8, 9}, {1, 1, 1});
  Tape<float> tape;
  auto ea = sentence_embedding(encode_compact(tape, p, a), Mask(4, 1));
  auto eb = sentence_embedding(encode_compact(tape, p, b), Mask(3, 1));
  tape.backward(ad::cosine(ea, eb));
  auto params = p.parameters();
  AdamState<float> state;
  adam_step<float>(params, state, AdamOptions{1e-3});

  double frozen_norm = 0.0, layer1_norm = 0.0;
  const auto l0a = before.layers[0].parameters();
  const auto l0b = p.layers[0].parameters();
  for (std::size_t i = 0; i < l0a.size(); ++i) frozen_norm += norm_of(l0a[i]->value, l0b[i]->value);
  frozen_norm += norm_of(before.tok_emb.value, p.tok_emb.value);
  const auto l1a = before.layers[1].parameters();
  const auto l1b = p.layers[1].parameters();
  for (std::size_t i = 0; i < l1a.size(); ++i) layer1_norm += norm_of(l1a[i]->value, l1b[i]->value);
  CHECK(frozen_norm == 0.0);
  CHECK(layer1_norm > 0.0);
}

TEST_CASE("parameter set and casting") {
  auto p = EncoderParams<float>::init(small_config(20, 16, 8, 2), 4);
  auto names = p.parameters();
  CHECK(names.size() == 4 + 2 * 12 + 2);
  CHECK(names.front()->name == "encoder.tok_emb");
  auto d = p.cast<double>();
  CHECK(d.tok_emb.value.cast<float>() == p.tok_emb.value);
  CHECK(d.layers.size() == 2);
  CHECK(EncoderParams<float>::init(small_config(20, 16, 8, 2), 4).tok_emb.value == p.tok_emb.value);
  EncoderConfig bad = small_config();
  bad.heads = 5;
  CHECK_THROWS_AS(EncoderParams<float>::init(bad, 1), UsageError);
  Tape<float> tape(false);
  CHECK_THROWS_AS(encode(tape, p, seq_of(std::vector<int>(9, 3), Mask(9, 1))), ShapeError);
}
