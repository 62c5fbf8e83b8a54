#include "dcse/gradcheck_suite.hpp"

#include <cmath>
#include <map>
#include <random>

#include "dcse/contrastive.hpp"
#include "dcse/error.hpp"
#include "dcse/mge.hpp"
#include "dcse/siamese.hpp"

namespace dcse {

GradCheckScale parse_gradcheck_scale(const std::string& s) {
  if (s == "tiny") return GradCheckScale::tiny;
  if (s == "small") return GradCheckScale::small;
  throw UsageError("unknown gradcheck scale \"" + s + "\" (tiny, small)");
}

namespace {

using P = Parameter<double>;
using V = Var<double>;
using Tp = Tape<double>;

class Suite {
 public:
  Suite(std::uint64_t seed, GradCheckOptions options) : rng_(seed), options_(options) {}

  // Entries kept away from 0 so relu and abs stay off their kinks.
  P random(const std::string& name, std::size_t r, std::size_t c, double scale = 1.0) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Tensor<double> t(r, c);
    for (auto& v : t.data()) {
      double x = u(rng_);
      if (std::abs(x) < 0.05) x += x < 0 ? -0.1 : 0.1;
      v = scale * x;
    }
    return P(name, std::move(t));
  }

  Tensor<double> weights(std::size_t r, std::size_t c) { return random("w", r, c).value; }

  // Contracts an op output with fixed random weights, giving every output
  // element a distinct gradient.
  V project(Tp& tape, V out) {
    auto key = std::make_pair(out.rows(), out.cols());
    auto it = proj_.find(key);
    if (it == proj_.end()) it = proj_.emplace(key, weights(out.rows(), out.cols())).first;
    return ad::sum_all(ad::mul(out, tape.constant(it->second)));
  }

  void run(const std::string& name, const ScalarFunction& f, std::vector<P*> params) {
    cases.push_back({name, grad_check(f, params, options_)});
  }

  std::vector<GradCheckCase> cases;
  std::mt19937_64 rng_;

 private:
  GradCheckOptions options_;
  std::map<std::pair<std::size_t, std::size_t>, Tensor<double>> proj_;
};

TokenSeq seq_of(std::vector<int> ids, std::size_t n) {
  TokenSeq s;
  s.ids.assign(n, Vocab::kPad);
  s.mask.assign(n, 0);
  for (std::size_t i = 0; i < ids.size() && i < n; ++i) {
    s.ids[i] = ids[i];
    s.mask[i] = 1;
  }
  return s;
}

void op_cases(Suite& s) {
  {
    auto a = s.random("a", 3, 4), b = s.random("b", 4, 2);
    s.run("matmul", [&](Tp& t) { return s.project(t, ad::matmul(t.param(a), t.param(b))); }, {&a, &b});
  }
  {
    auto a = s.random("a", 3, 4), b = s.random("b", 2, 4);
    s.run("matmul_nt", [&](Tp& t) { return s.project(t, ad::matmul_nt(t.param(a), t.param(b))); }, {&a, &b});
  }
  {
    auto a = s.random("a", 2, 3), b = s.random("b", 2, 3);
    s.run("add", [&](Tp& t) { return s.project(t, ad::add(t.param(a), t.param(b))); }, {&a, &b});
    s.run("sub", [&](Tp& t) { return s.project(t, ad::sub(t.param(a), t.param(b))); }, {&a, &b});
    s.run("mul", [&](Tp& t) { return s.project(t, ad::mul(t.param(a), t.param(b))); }, {&a, &b});
  }
  {
    auto a = s.random("a", 3, 4), r = s.random("row", 1, 4), k = s.random("k", 1, 1);
    s.run("add_row", [&](Tp& t) { return s.project(t, ad::add_row(t.param(a), t.param(r))); }, {&a, &r});
    s.run("scale", [&](Tp& t) { return s.project(t, ad::scale(t.param(a), 0.7)); }, {&a});
    s.run("scale_by", [&](Tp& t) { return s.project(t, ad::scale_by(t.param(a), t.param(k))); }, {&a, &k});
    s.run("relu", [&](Tp& t) { return s.project(t, ad::relu(t.param(a))); }, {&a});
    s.run("abs", [&](Tp& t) { return s.project(t, ad::abs(t.param(a))); }, {&a});
    s.run("sigmoid", [&](Tp& t) { return s.project(t, ad::sigmoid(t.param(a))); }, {&a});
    s.run("softmax_rows", [&](Tp& t) { return s.project(t, ad::softmax_rows(t.param(a))); }, {&a});
    const Mask cols{1, 1, 0, 1};
    s.run("softmax_rows(masked)", [&](Tp& t) { return s.project(t, ad::softmax_rows(t.param(a), &cols)); }, {&a});
  }
  {
    auto x = s.random("x", 3, 5), g = s.random("gain", 1, 5), b = s.random("bias", 1, 5);
    s.run("layer_norm_rows",
          [&](Tp& t) { return s.project(t, ad::layer_norm_rows(t.param(x), t.param(g), t.param(b), 1e-5)); },
          {&x, &g, &b});
    const Mask m{1, 0, 1};
    s.run("masked_mean_rows", [&](Tp& t) { return s.project(t, ad::masked_mean_rows(t.param(x), m)); }, {&x});
  }
  {
    auto u = s.random("u", 1, 5), v = s.random("v", 1, 5);
    s.run("cosine", [&](Tp& t) { return ad::cosine(t.param(u), t.param(v)); }, {&u, &v});
  }
  {
    auto a = s.random("a", 3, 2), b = s.random("b", 3, 3);
    s.run("concat_cols", [&](Tp& t) {
      const V parts[] = {t.param(a), t.param(b)};
      return s.project(t, ad::concat_cols<double>(parts));
    }, {&a, &b});
    s.run("slice_cols", [&](Tp& t) { return s.project(t, ad::slice_cols(t.param(b), 1, 2)); }, {&b});
    s.run("slice_rows", [&](Tp& t) { return s.project(t, ad::slice_rows(t.param(b), 1, 2)); }, {&b});
    s.run("pad_rows", [&](Tp& t) { return s.project(t, ad::pad_rows(t.param(a), 5)); }, {&a});
    const Mask rm{1, 0, 1}, cm{0, 1, 1};
    s.run("mask_outer", [&](Tp& t) { return s.project(t, ad::mask_outer(t.param(b), rm, cm)); }, {&b});
    s.run("sum_all", [&](Tp& t) { return ad::sum_all(t.param(b)); }, {&b});
    s.run("element", [&](Tp& t) { return ad::element(t.param(b), 2, 1); }, {&b});
  }
  {
    auto table = s.random("table", 6, 3);
    const std::vector<int> ids{4, 1, 4, 0};
    s.run("gather_rows", [&](Tp& t) { return s.project(t, ad::gather_rows<double>(t.param(table), ids)); }, {&table});
  }
  {
    auto a = s.random("a", 2, 2), b = s.random("b", 2, 2), x = s.random("x", 1, 1), y = s.random("y", 1, 1);
    s.run("mean_of", [&](Tp& t) {
      const V parts[] = {t.param(a), t.param(b)};
      return s.project(t, ad::mean_of<double>(parts));
    }, {&a, &b});
    s.run("stack_scalars", [&](Tp& t) {
      const V parts[] = {t.param(x), t.param(y), t.param(x)};
      return s.project(t, ad::stack_scalars<double>(parts));
    }, {&x, &y});
  }
  {
    auto z = s.random("logits", 1, 5, 2.0), l = s.random("logit", 1, 1, 2.0);
    s.run("softmax_cross_entropy", [&](Tp& t) { return ad::softmax_cross_entropy(t.param(z), 2); }, {&z});
    s.run("bce_with_logits(1)", [&](Tp& t) { return ad::bce_with_logits(t.param(l), 1.0); }, {&l});
    s.run("bce_with_logits(0)", [&](Tp& t) { return ad::bce_with_logits(t.param(l), 0.0); }, {&l});
  }
}

void mge_cases(Suite& s, std::size_t n, std::size_t d) {
  auto u1 = s.random("u1", n, d), u2 = s.random("u2", n, d), r = s.random("r", n, d);
  Mask mu1(n, 1), mu2(n, 1), mr(n, 1);
  mu1[n - 1] = 0;
  mu2[n - 1] = mu2[n - 2] = 0;
  mr[n - 1] = 0;
  auto refined = [&](Tp& t) {
    const Embedded<double> R{t.param(r), mr};
    RefinedSet<double> set;
    for (auto [p, m] : {std::pair{&u1, &mu1}, std::pair{&u2, &mu2}}) {
      set.refined.push_back(refine(matching_matrix(Embedded<double>{t.param(*p), *m}, R), R.rows));
    }
    return set;
  };
  s.run("matching_matrix+refine", [&](Tp& t) { return s.project(t, refined(t).refined.front().rows); },
        {&u1, &r});
  s.run("aggregate_mean", [&](Tp& t) { return s.project(t, aggregate_mean(refined(t)).rows); }, {&u1, &u2, &r});
  auto scorer = TurnScorer<double>::init(d, s.rng_());
  s.run("aggregate_attention", [&](Tp& t) { return s.project(t, aggregate_attention(refined(t), scorer).result.rows); },
        {&u1, &u2, &r, &scorer.w1, &scorer.b1, &scorer.w2, &scorer.b2});
}

EncoderConfig tiny_config(std::size_t n, std::size_t d) {
  EncoderConfig c;
  c.vocab_size = 12;
  c.d_model = d;
  c.heads = 2;
  c.ffn_dim = 2 * d;
  c.layers = 2;
  c.max_len = n;
  return c;
}

// Larger init keeps the layer-norm inputs well conditioned for differencing.
template <class Params>
void spread_tables(Params& enc, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 0.5);
  for (auto* p : {&enc.tok_emb, &enc.pos_emb}) {
    for (auto& v : p->value.data()) v = g(rng);
  }
}

void model_cases(Suite& s, std::size_t n, std::size_t d) {
  const auto cfg = tiny_config(n, d);
  std::vector<TokenizedGroup> groups(2);
  groups[0].context = {seq_of({3, 4, 5}, n), seq_of({6, 3, 7, 8, 9}, n)};
  groups[0].candidates = {seq_of({5, 10, 3, 4}, n), seq_of({11, 2, 7}, n), seq_of({8, 9, 9, 4, 6, 3}, n)};
  groups[1].context = {seq_of({9, 1, 4, 4}, n), seq_of({7, 5}, n)};
  groups[1].candidates = {seq_of({10, 11, 6}, n), seq_of({3, 3, 8, 5, 1}, n), seq_of({4}, n)};
  groups[1].context_id = 1;

  {
    auto enc = EncoderParams<double>::init(cfg, s.rng_());
    spread_tables(enc, s.rng_);
    const auto seq = seq_of({3, 7, 1, 9}, n);
    s.run("encoder(pooled)", [&](Tp& t) { return s.project(t, sentence_embedding(encode_full(t, enc, seq), seq.mask)); },
          enc.parameters());
  }
  for (auto agg : {Aggregation::mean, Aggregation::attention}) {
    for (bool compact : {false, true}) {
      auto model = DialogueCseModel<double>::init(cfg, agg, s.rng_());
      spread_tables(model.encoder, s.rng_);
      model.compact = compact;
      std::string name = std::string("dialoguecse_loss(") + (agg == Aggregation::mean ? "mean" : "attention") +
                         (compact ? ",compact)" : ",padded)");
      s.run(name, [&](Tp& t) { return model.batch_loss(t, groups, 0.1); }, model.parameters());
    }
  }
  {
    auto model = DialogueCseModel<double>::init(cfg, Aggregation::mean, s.rng_());
    spread_tables(model.encoder, s.rng_);
    set_trainable_layers(model.encoder, 1);
    s.run("dialoguecse_loss(frozen_bottom=1)", [&](Tp& t) { return model.batch_loss(t, groups, 0.1); },
          model.parameters());
  }
  {
    auto model = SiameseModel<double>::init(cfg, SiameseMode::multi, s.rng_());
    spread_tables(model.encoder, s.rng_);
    std::vector<TokenizedGroup> sg = groups;
    for (auto& g : sg) g.context.resize(1);
    s.run("siamese_loss", [&](Tp& t) { return model.batch_loss(t, sg); }, model.parameters());
  }
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(GradCheckScale scale, std::uint64_t seed,
                                               const GradCheckOptions& options) {
  Suite s(seed, options);
  const std::size_t n = scale == GradCheckScale::tiny ? 6 : 8;
  const std::size_t d = scale == GradCheckScale::tiny ? 8 : 16;
  op_cases(s);
  mge_cases(s, n, d);
  model_cases(s, n, d);
  return std::move(s.cases);
}

}  // namespace dcse
