#pragma once

// Semantic retrieval (BM25-built candidate pools scored by MAP/MRR) and
// dialogue STS (Spearman correlation against graded relevance).

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dcse/encoder.hpp"

namespace dcse {

struct LabeledUtterance {
  std::string text;
  std::string intent;
  std::string group;  // coarser label (e.g. domain); may be empty
};

struct SRCandidate {
  std::string text;
  int label = 0;
};

struct SRSample {
  std::string query;
  std::vector<SRCandidate> candidates;
};

struct DSTSPair {
  std::string a;
  std::string b;
  int score = 1;
};

class Bm25Index {
 public:
  Bm25Index(std::vector<std::vector<std::string>> docs, double k1 = 1.2, double b = 0.75);

  // Sum over query tokens (repeats included) of
  //   idf(t) * tf(t,d) * (k1 + 1) / (tf(t,d) + k1 * (1 - b + b * |d| / avgdl)),
  // with idf(t) = ln((N - df + 0.5) / (df + 0.5) + 1).
  std::vector<double> scores(std::span<const std::string> query) const;
  double idf(const std::string& term) const;
  std::size_t size() const { return docs_.size(); }

 private:
  std::vector<std::unordered_map<std::string, int>> tf_;
  std::vector<std::size_t> lengths_;
  std::vector<std::vector<std::string>> docs_;
  std::unordered_map<std::string, std::size_t> df_;
  double avgdl_ = 0.0;
  double k1_;
  double b_;
};

std::vector<double> bm25_scores(std::span<const std::string> query, std::vector<std::vector<std::string>> docs,
                                double k1 = 1.2, double b = 0.75);

struct SRBuildOptions {
  std::size_t per_query = 100;
  std::size_t max_positives = 30;
  std::size_t num_queries = 0;  // 0: every utterance is a query
  double k1 = 1.2;
  double b = 0.75;
};

// For each query: the top BM25 candidates from the pool (the query and exact
// copies of its text excluded), labeled 1 iff the intent matches. When more
// than max_positives positives are retrieved, the highest-scoring positives
// are kept and the list is backfilled with the next negatives in BM25 order.
// Queries whose candidate list has no positive are skipped. Throws DataError
// if the pool cannot supply per_query candidates.
std::vector<SRSample> build_sr_dataset(std::span<const LabeledUtterance> pool, const SRBuildOptions& options,
                                       std::mt19937_64& rng);

struct DSTSBuildOptions {
  std::size_t same_intent_pairs = 120;  // score 5
  std::size_t same_group_pairs = 120;   // score 3
  std::size_t cross_group_pairs = 160;  // score 1
  // Partners are picked among this many random candidates of the right
  // relation: the lowest unigram overlap for score 5, the highest for scores
  // 3 and 1, so that lexical overlap alone does not predict the score.
  std::size_t overlap_candidates = 50;
};

std::vector<DSTSPair> build_dsts_dataset(std::span<const LabeledUtterance> pool, const DSTSBuildOptions& options,
                                         std::mt19937_64& rng);

struct RankingMetrics {
  double map = 0.0;
  double mrr = 0.0;
  std::size_t queries = 0;
  std::size_t skipped = 0;  // rankings without any positive
};

// labels in ranked order
double average_precision(std::span<const int> labels);
double reciprocal_rank(std::span<const int> labels);
RankingMetrics map_mrr(std::span<const std::vector<int>> rankings);

// Average ranks (1-based); tied values share the mean of their positions.
std::vector<double> fractional_ranks(std::span<const double> xs);
double pearson(std::span<const double> xs, std::span<const double> ys);
// Pearson correlation of fractional ranks. Throws DegenerateError on a
// constant input and DataError when fewer than two points are given.
double spearman(std::span<const double> xs, std::span<const double> ys);

// Maps a sentence to its embedding. Must be safe to call concurrently when
// evaluation runs with more than one thread.
using SentenceEmbedder = std::function<std::vector<double>(const std::string&)>;

template <class T>
SentenceEmbedder encoder_embedder(const EncoderParams<T>& params, const Vocab& vocab);

// Candidate labels sorted by descending cosine to the query; ties keep input
// order.
std::vector<int> rank_candidates(const SRSample& sample,
                                 const std::unordered_map<std::string, std::vector<double>>& embeddings);

RankingMetrics evaluate_sr(const SentenceEmbedder& embedder, std::span<const SRSample> dataset, std::size_t threads = 1);
double evaluate_dsts(const SentenceEmbedder& embedder, std::span<const DSTSPair> pairs, std::size_t threads = 1);

// Embeds each distinct text once, splitting the work across threads.
std::unordered_map<std::string, std::vector<double>> embed_unique(const SentenceEmbedder& embedder,
                                                                  const std::vector<std::string>& texts,
                                                                  std::size_t threads);

// JSON-lines: {"query": str, "candidates": [{"text": str, "label": 0|1}]}
std::vector<SRSample> load_sr(const std::filesystem::path& path);
void save_sr(const std::filesystem::path& path, std::span<const SRSample> samples);
// JSON-lines: {"a": str, "b": str, "score": 1..5}
std::vector<DSTSPair> load_dsts(const std::filesystem::path& path);
void save_dsts(const std::filesystem::path& path, std::span<const DSTSPair> pairs);

// Worker threads from DCSE_THREADS (default 1).
std::size_t env_threads();

}  // namespace dcse
