#pragma once

// Training loop, Adam, checkpoints and hyper-parameter sweeps for both the
// contrastive model and the siamese baseline.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcse/contrastive.hpp"
#include "dcse/encoder.hpp"
#include "dcse/eval.hpp"
#include "dcse/siamese.hpp"

namespace dcse {

enum class ModelKind { dialoguecse, siamese_single, siamese_multi };
enum class Precision { single, double_precision };

std::string to_string(ModelKind k);
std::string to_string(Aggregation a);
std::string to_string(Precision p);
// Accept both "siamese_multi" and "siamese-multi" spellings.
ModelKind parse_model_kind(const std::string& s);
Aggregation parse_aggregation(const std::string& s);
Precision parse_precision(const std::string& s);

struct TrainConfig {
  ModelKind model = ModelKind::dialoguecse;
  Aggregation aggregation = Aggregation::mean;
  std::size_t batch_size = 20;
  double learning_rate = 5e-5;
  double tau = 0.1;
  std::size_t m_neg = 9;
  std::size_t turn_budget = 3;
  std::size_t frozen_bottom = 0;
  std::size_t steps = 2000;
  std::uint64_t seed = 7;
  Precision precision = Precision::single;
  std::size_t max_seq_len = 32;

  // encoder shape
  std::size_t vocab_size = 2000;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t ffn_dim = 128;
  std::size_t layers = 4;

  // leading share of the preprocessed sessions used for training
  double data_fraction = 1.0;

  void validate() const;
  EncoderConfig encoder_config(std::size_t vocab) const;

  nlohmann::json to_json() const;
  // Missing fields keep their defaults; unknown fields are rejected.
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig load(const std::filesystem::path& path);
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t step = 0;
};

// One bias-corrected Adam update from each parameter's grad slot. Frozen
// parameters are left untouched; an empty grad slot counts as zero. Throws
// ShapeError when a gradient or a moment does not match its parameter.
template <class T>
void adam_step(std::span<Parameter<T>* const> params, AdamState<T>& state, const AdamOptions& options);

struct NamedTensor {
  std::string name;
  Tensor<float> value;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct Checkpoint {
  std::vector<NamedTensor> tensors;
  TrainConfig config;
  std::size_t step = 0;
  std::vector<std::string> vocab;

  const Tensor<float>* find(const std::string& name) const;
  std::vector<unsigned char> serialize() const;
  static Checkpoint deserialize(std::span<const unsigned char> bytes);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

Vocab checkpoint_vocab(const Checkpoint& ckpt);
// Rebuilds the shared encoder. Throws DataError if a tensor is missing or its
// shape does not match the embedded config.
EncoderParams<float> checkpoint_encoder(const Checkpoint& ckpt);
SiameseHead<float> checkpoint_siamese_head(const Checkpoint& ckpt);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> losses;  // one per optimizer step
};

using StepLogger = std::function<void(std::size_t step, double loss)>;

// Preprocesses `sessions`, builds the vocabulary, and runs config.steps Adam
// steps. Throws NumericalError naming the step when the loss is not finite.
TrainResult train(const TrainConfig& config, const std::vector<DialogueSession>& sessions,
                  const StepLogger& log = {});
TrainResult train(const TrainConfig& config, const std::filesystem::path& corpus_path, const StepLogger& log = {});

struct EvalReport {
  RankingMetrics sr;
  std::optional<double> spearman;

  nlohmann::json to_json() const;
};

EvalReport evaluate_checkpoint(const Checkpoint& ckpt, std::span<const SRSample> sr, std::span<const DSTSPair> dsts,
                               std::size_t threads = 1);

enum class SweepAxis { tau, m_neg, turn_budget, data_fraction };

SweepAxis parse_sweep_axis(const std::string& s);
std::string to_string(SweepAxis a);
std::vector<double> default_sweep_values(SweepAxis axis);

struct SweepRow {
  double value = 0.0;
  double map = 0.0;
  double mrr = 0.0;
  double spearman = 0.0;
  double final_loss = 0.0;
  bool ok = false;
  std::string error;
};

struct SweepReport {
  SweepAxis axis = SweepAxis::tau;
  std::vector<SweepRow> rows;

  std::string table() const;
  nlohmann::json to_json() const;
};

TrainConfig with_axis_value(TrainConfig config, SweepAxis axis, double value);

// One training run and evaluation per value, all sharing the base seed.
// Failures are recorded per row instead of aborting the sweep.
SweepReport sweep(const TrainConfig& base, SweepAxis axis, std::span<const double> values,
                  const std::vector<DialogueSession>& sessions, std::span<const SRSample> sr,
                  std::span<const DSTSPair> dsts, std::size_t threads = 1);

}  // namespace dcse
