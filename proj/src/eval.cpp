#include "dcse/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <set>
#include <thread>

#include <json.hpp>

#include "dcse/error.hpp"

namespace dcse {

using nlohmann::json;

Bm25Index::Bm25Index(std::vector<std::vector<std::string>> docs, double k1, double b)
    : docs_(std::move(docs)), k1_(k1), b_(b) {
  if (docs_.empty()) throw DataError("bm25: empty document collection");
  if (!(k1 > 0.0)) throw UsageError("bm25: k1 must be positive");
  if (b < 0.0 || b > 1.0) throw UsageError("bm25: b must lie in [0, 1]");
  std::size_t total = 0;
  for (const auto& d : docs_) {
    std::unordered_map<std::string, int> tf;
    for (const auto& t : d) ++tf[t];
    for (const auto& [t, n] : tf) ++df_[t];
    tf_.push_back(std::move(tf));
    lengths_.push_back(d.size());
    total += d.size();
  }
  avgdl_ = static_cast<double>(total) / static_cast<double>(docs_.size());
}

double Bm25Index::idf(const std::string& term) const {
  const double N = static_cast<double>(docs_.size());
  auto it = df_.find(term);
  const double df = it == df_.end() ? 0.0 : static_cast<double>(it->second);
  return std::log((N - df + 0.5) / (df + 0.5) + 1.0);
}

std::vector<double> Bm25Index::scores(std::span<const std::string> query) const {
  std::vector<double> out(docs_.size(), 0.0);
  for (const auto& term : query) {
    if (df_.find(term) == df_.end()) continue;
    const double w = idf(term);
    for (std::size_t i = 0; i < docs_.size(); ++i) {
      auto it = tf_[i].find(term);
      if (it == tf_[i].end()) continue;
      const double tf = it->second;
      const double norm = avgdl_ > 0.0 ? static_cast<double>(lengths_[i]) / avgdl_ : 0.0;
      out[i] += w * tf * (k1_ + 1.0) / (tf + k1_ * (1.0 - b_ + b_ * norm));
    }
  }
  return out;
}

std::vector<double> bm25_scores(std::span<const std::string> query, std::vector<std::vector<std::string>> docs,
                                double k1, double b) {
  return Bm25Index(std::move(docs), k1, b).scores(query);
}

std::vector<SRSample> build_sr_dataset(std::span<const LabeledUtterance> pool, const SRBuildOptions& options,
                                       std::mt19937_64& rng) {
  if (pool.size() < options.per_query + 1) {
    throw DataError("build_sr_dataset: pool of " + std::to_string(pool.size()) + " utterances cannot supply " +
                    std::to_string(options.per_query) + " candidates per query");
  }
  std::vector<std::vector<std::string>> docs;
  docs.reserve(pool.size());
  for (const auto& u : pool) docs.push_back(split_tokens(u.text));
  const Bm25Index index(docs, options.k1, options.b);

  std::vector<std::size_t> queries(pool.size());
  std::iota(queries.begin(), queries.end(), std::size_t{0});
  if (options.num_queries > 0 && options.num_queries < pool.size()) {
    std::shuffle(queries.begin(), queries.end(), rng);
    queries.resize(options.num_queries);
    std::sort(queries.begin(), queries.end());
  }

  std::vector<SRSample> out;
  for (std::size_t q : queries) {
    const auto scores = index.scores(docs[q]);
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (i != q && pool[i].text != pool[q].text) order.push_back(i);
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    SRSample s{pool[q].text, {}};
    std::size_t positives = 0;
    for (std::size_t i : order) {
      if (s.candidates.size() == options.per_query) break;
      const int label = pool[i].intent == pool[q].intent ? 1 : 0;
      if (label == 1) {
        if (positives == options.max_positives) continue;
        ++positives;
      }
      s.candidates.push_back({pool[i].text, label});
    }
    if (s.candidates.size() < options.per_query) {
      throw DataError("build_sr_dataset: not enough negatives to backfill the candidate list of query " +
                      std::to_string(q));
    }
    if (positives > 0) out.push_back(std::move(s));
  }
  return out;
}

namespace {

double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::set<std::string> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::size_t inter = 0;
  for (const auto& t : sa) inter += sb.count(t);
  const std::size_t uni = sa.size() + sb.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

std::vector<DSTSPair> build_dsts_dataset(std::span<const LabeledUtterance> pool, const DSTSBuildOptions& options,
                                         std::mt19937_64& rng) {
  if (pool.size() < 2) throw DataError("build_dsts_dataset: pool too small");
  std::vector<std::vector<std::string>> toks;
  for (const auto& u : pool) toks.push_back(split_tokens(u.text));
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);

  enum class Rel { same_intent, same_group, cross_group };
  auto relation_ok = [&](std::size_t a, std::size_t b, Rel rel) {
    if (pool[a].text == pool[b].text) return false;
    switch (rel) {
      case Rel::same_intent: return pool[a].intent == pool[b].intent;
      case Rel::same_group: return pool[a].intent != pool[b].intent && pool[a].group == pool[b].group;
      case Rel::cross_group: return pool[a].group != pool[b].group;
    }
    return false;
  };

  std::vector<DSTSPair> out;
  // prefer_overlap > 0 keeps the most similar partner, < 0 the least similar
  auto emit = [&](std::size_t count, Rel rel, int score, int prefer_overlap) {
    const std::size_t max_attempts = 20 * (count + 1);
    std::size_t made = 0;
    for (std::size_t attempt = 0; made < count && attempt < max_attempts; ++attempt) {
      const std::size_t a = pick(rng);
      std::size_t best = pool.size();
      double best_key = -2.0;
      const std::size_t tries = prefer_overlap != 0 ? std::max<std::size_t>(options.overlap_candidates, 1) : 1;
      std::size_t found = 0;
      for (std::size_t guard = 0; found < tries && guard < 50 * tries + 50; ++guard) {
        const std::size_t b = pick(rng);
        if (!relation_ok(a, b, rel)) continue;
        ++found;
        const double ov = jaccard(toks[a], toks[b]);
        const double key = prefer_overlap < 0 ? -ov : ov;
        if (key > best_key) {
          best_key = key;
          best = b;
        }
      }
      if (best == pool.size()) continue;
      out.push_back({pool[a].text, pool[best].text, score});
      ++made;
    }
    if (made < count) throw DataError("build_dsts_dataset: pool cannot supply the requested pairs");
  };
  emit(options.same_intent_pairs, Rel::same_intent, 5, -1);
  emit(options.same_group_pairs, Rel::same_group, 3, 1);
  emit(options.cross_group_pairs, Rel::cross_group, 1, 1);
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

double average_precision(std::span<const int> labels) {
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  if (hits == 0) throw DataError("average_precision: ranking has no positive");
  return sum / static_cast<double>(hits);
}

double reciprocal_rank(std::span<const int> labels) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i]) return 1.0 / static_cast<double>(i + 1);
  }
  throw DataError("reciprocal_rank: ranking has no positive");
}

RankingMetrics map_mrr(std::span<const std::vector<int>> rankings) {
  RankingMetrics m;
  for (const auto& r : rankings) {
    if (std::none_of(r.begin(), r.end(), [](int v) { return v != 0; })) {
      ++m.skipped;
      continue;
    }
    m.map += average_precision(r);
    m.mrr += reciprocal_rank(r);
    ++m.queries;
  }
  if (m.queries > 0) {
    m.map /= static_cast<double>(m.queries);
    m.mrr /= static_cast<double>(m.queries);
  }
  return m;
}

std::vector<double> fractional_ranks(std::span<const double> xs) {
  std::vector<std::size_t> idx(xs.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && xs[idx[j + 1]] == xs[idx[i]]) ++j;
    const double r = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ShapeError("pearson: lengths differ");
  if (xs.size() < 2) throw DataError("pearson: need at least two points");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw DegenerateError("correlation undefined for a constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ShapeError("spearman: lengths differ");
  if (xs.size() < 2) throw DataError("spearman: need at least two points");
  const auto rx = fractional_ranks(xs);
  const auto ry = fractional_ranks(ys);
  return pearson(rx, ry);
}

template <class T>
SentenceEmbedder encoder_embedder(const EncoderParams<T>& params, const Vocab& vocab) {
  return [&params, &vocab](const std::string& text) {
    const auto seq = tokenize(text, vocab, params.config.max_len);
    const auto v = embed_sentence(params, seq);
    return std::vector<double>(v.begin(), v.end());
  };
}

template SentenceEmbedder encoder_embedder<float>(const EncoderParams<float>&, const Vocab&);
template SentenceEmbedder encoder_embedder<double>(const EncoderParams<double>&, const Vocab&);

std::unordered_map<std::string, std::vector<double>> embed_unique(const SentenceEmbedder& embedder,
                                                                  const std::vector<std::string>& texts,
                                                                  std::size_t threads) {
  std::vector<std::string> unique;
  {
    std::set<std::string> seen;
    for (const auto& t : texts) {
      if (seen.insert(t).second) unique.push_back(t);
    }
  }
  std::vector<std::vector<double>> vecs(unique.size());
  threads = std::max<std::size_t>(1, std::min(threads, unique.size()));
  if (threads == 1) {
    for (std::size_t i = 0; i < unique.size(); ++i) vecs[i] = embedder(unique[i]);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < unique.size(); i += threads) vecs[i] = embedder(unique[i]);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  std::unordered_map<std::string, std::vector<double>> out;
  for (std::size_t i = 0; i < unique.size(); ++i) out.emplace(std::move(unique[i]), std::move(vecs[i]));
  return out;
}

std::vector<int> rank_candidates(const SRSample& sample,
                                 const std::unordered_map<std::string, std::vector<double>>& embeddings) {
  const auto& q = embeddings.at(sample.query);
  std::vector<double> sims;
  sims.reserve(sample.candidates.size());
  for (const auto& c : sample.candidates) sims.push_back(cosine_value<double>(q, embeddings.at(c.text)));
  std::vector<std::size_t> idx(sims.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return sims[a] > sims[b]; });
  std::vector<int> labels;
  labels.reserve(idx.size());
  for (auto i : idx) labels.push_back(sample.candidates[i].label);
  return labels;
}

RankingMetrics evaluate_sr(const SentenceEmbedder& embedder, std::span<const SRSample> dataset, std::size_t threads) {
  std::vector<std::string> texts;
  for (const auto& s : dataset) {
    texts.push_back(s.query);
    for (const auto& c : s.candidates) texts.push_back(c.text);
  }
  const auto emb = embed_unique(embedder, texts, threads);
  std::vector<std::vector<int>> rankings;
  rankings.reserve(dataset.size());
  for (const auto& s : dataset) rankings.push_back(rank_candidates(s, emb));
  return map_mrr(rankings);
}

double evaluate_dsts(const SentenceEmbedder& embedder, std::span<const DSTSPair> pairs, std::size_t threads) {
  if (pairs.size() < 2) throw DataError("evaluate_dsts: need at least two pairs");
  std::vector<std::string> texts;
  for (const auto& p : pairs) {
    texts.push_back(p.a);
    texts.push_back(p.b);
  }
  const auto emb = embed_unique(embedder, texts, threads);
  std::vector<double> gold, pred;
  for (const auto& p : pairs) {
    gold.push_back(p.score);
    pred.push_back(cosine_value<double>(emb.at(p.a), emb.at(p.b)));
  }
  return spearman(gold, pred);
}

namespace {

template <class F>
void for_each_json_line(const std::filesystem::path& path, F&& fn) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      fn(json::parse(line));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

}  // namespace

std::vector<SRSample> load_sr(const std::filesystem::path& path) {
  std::vector<SRSample> out;
  for_each_json_line(path, [&](const json& j) {
    SRSample s;
    s.query = j.at("query").get<std::string>();
    for (const auto& c : j.at("candidates")) {
      const int label = c.at("label").get<int>();
      if (label != 0 && label != 1) throw DataError("candidate label must be 0 or 1");
      s.candidates.push_back({c.at("text").get<std::string>(), label});
    }
    out.push_back(std::move(s));
  });
  return out;
}

void save_sr(const std::filesystem::path& path, std::span<const SRSample> samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& s : samples) {
    json cands = json::array();
    for (const auto& c : s.candidates) cands.push_back({{"text", c.text}, {"label", c.label}});
    out << json{{"query", s.query}, {"candidates", cands}}.dump() << '\n';
  }
}

std::vector<DSTSPair> load_dsts(const std::filesystem::path& path) {
  std::vector<DSTSPair> out;
  for_each_json_line(path, [&](const json& j) {
    DSTSPair p{j.at("a").get<std::string>(), j.at("b").get<std::string>(), j.at("score").get<int>()};
    if (p.score < 1 || p.score > 5) throw DataError("score must lie in 1..5");
    out.push_back(std::move(p));
  });
  return out;
}

void save_dsts(const std::filesystem::path& path, std::span<const DSTSPair> pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& p : pairs) out << json{{"a", p.a}, {"b", p.b}, {"score", p.score}}.dump() << '\n';
}

std::size_t env_threads() {
  if (const char* env = std::getenv("DCSE_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  return 1;
}

}  // namespace dcse
