#include "dcse/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "dcse/error.hpp"

namespace dcse {

using nlohmann::json;

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::dialoguecse: return "dialoguecse";
    case ModelKind::siamese_single: return "siamese_single";
    case ModelKind::siamese_multi: return "siamese_multi";
  }
  return "?";
}

std::string to_string(Aggregation a) { return a == Aggregation::attention ? "attention" : "mean"; }
std::string to_string(Precision p) { return p == Precision::single ? "single" : "double"; }

ModelKind parse_model_kind(const std::string& s) {
  if (s == "dialoguecse") return ModelKind::dialoguecse;
  if (s == "siamese_single" || s == "siamese-single") return ModelKind::siamese_single;
  if (s == "siamese_multi" || s == "siamese-multi") return ModelKind::siamese_multi;
  throw UsageError("unknown model \"" + s + "\" (dialoguecse, siamese-single, siamese-multi)");
}

Aggregation parse_aggregation(const std::string& s) {
  if (s == "attention") return Aggregation::attention;
  if (s == "mean") return Aggregation::mean;
  throw UsageError("unknown aggregation \"" + s + "\" (attention, mean)");
}

Precision parse_precision(const std::string& s) {
  if (s == "single") return Precision::single;
  if (s == "double") return Precision::double_precision;
  throw UsageError("unknown precision \"" + s + "\" (single, double)");
}

void TrainConfig::validate() const {
  if (batch_size == 0 || m_neg == 0 || turn_budget == 0 || max_seq_len == 0)
    throw UsageError("batch_size, m_neg, turn_budget and max_seq_len must be positive");
  if (!(learning_rate > 0.0)) throw UsageError("learning_rate must be positive");
  if (!(tau > 0.0)) throw UsageError("tau must be positive");
  if (d_model == 0 || heads == 0 || d_model % heads != 0) throw UsageError("d_model must be a positive multiple of heads");
  if (ffn_dim == 0 || layers == 0) throw UsageError("ffn_dim and layers must be positive");
  if (vocab_size <= Vocab::kReserved) throw UsageError("vocab_size must exceed the reserved tokens");
  if (frozen_bottom > layers) throw UsageError("frozen_bottom exceeds the layer count");
  if (!(data_fraction > 0.0 && data_fraction <= 1.0)) throw UsageError("data_fraction must lie in (0, 1]");
}

EncoderConfig TrainConfig::encoder_config(std::size_t vocab) const {
  EncoderConfig e;
  e.vocab_size = vocab;
  e.d_model = d_model;
  e.heads = heads;
  e.ffn_dim = ffn_dim;
  e.layers = layers;
  e.max_len = max_seq_len;
  return e;
}

json TrainConfig::to_json() const {
  return json{{"model", to_string(model)},
              {"aggregation", to_string(aggregation)},
              {"batch_size", batch_size},
              {"learning_rate", learning_rate},
              {"tau", tau},
              {"m_neg", m_neg},
              {"turn_budget", turn_budget},
              {"frozen_bottom", frozen_bottom},
              {"steps", steps},
              {"seed", seed},
              {"precision", to_string(precision)},
              {"max_seq_len", max_seq_len},
              {"vocab_size", vocab_size},
              {"d_model", d_model},
              {"heads", heads},
              {"ffn_dim", ffn_dim},
              {"layers", layers},
              {"data_fraction", data_fraction}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  TrainConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "model") c.model = parse_model_kind(v.get<std::string>());
      else if (key == "aggregation") c.aggregation = parse_aggregation(v.get<std::string>());
      else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "tau") c.tau = v.get<double>();
      else if (key == "m_neg") c.m_neg = v.get<std::size_t>();
      else if (key == "turn_budget") c.turn_budget = v.get<std::size_t>();
      else if (key == "frozen_bottom") c.frozen_bottom = v.get<std::size_t>();
      else if (key == "steps") c.steps = v.get<std::size_t>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "precision") c.precision = parse_precision(v.get<std::string>());
      else if (key == "max_seq_len") c.max_seq_len = v.get<std::size_t>();
      else if (key == "vocab_size") c.vocab_size = v.get<std::size_t>();
      else if (key == "d_model") c.d_model = v.get<std::size_t>();
      else if (key == "heads") c.heads = v.get<std::size_t>();
      else if (key == "ffn_dim") c.ffn_dim = v.get<std::size_t>();
      else if (key == "layers") c.layers = v.get<std::size_t>();
      else if (key == "data_fraction") c.data_fraction = v.get<double>();
      else throw UsageError("unknown config field \"" + key + "\"");
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
}

template <class T>
void adam_step(std::span<Parameter<T>* const> params, AdamState<T>& state, const AdamOptions& options) {
  if (state.m.empty() && state.v.empty()) {
    for (auto* p : params) {
      state.m.emplace_back(p->value.rows(), p->value.cols());
      state.v.emplace_back(p->value.rows(), p->value.cols());
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam: optimizer state holds " + std::to_string(state.m.size()) + " moments for " +
                     std::to_string(params.size()) + " parameters");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const T b1 = static_cast<T>(options.beta1);
  const T b2 = static_cast<T>(options.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(options.beta1, t));
  const T c2 = static_cast<T>(1.0 - std::pow(options.beta2, t));
  const T lr = static_cast<T>(options.lr);
  const T eps = static_cast<T>(options.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (!m.same_shape(p.value) || !v.same_shape(p.value)) throw ShapeError("adam: moment shape mismatch for " + p.name);
    if (p.frozen || p.grad.empty()) continue;
    if (!p.grad.same_shape(p.value)) {
      throw ShapeError("adam: gradient " + p.grad.shape() + " does not match " + p.name + " " + p.value.shape());
    }
    auto w = p.value.data();
    auto g = p.grad.data();
    auto md = m.data();
    auto vd = v.data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      md[k] = b1 * md[k] + (T{1} - b1) * g[k];
      vd[k] = b2 * vd[k] + (T{1} - b2) * g[k] * g[k];
      const T mhat = md[k] / c1;
      const T vhat = vd[k] / c2;
      w[k] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template void adam_step<float>(std::span<Parameter<float>* const>, AdamState<float>&, const AdamOptions&);
template void adam_step<double>(std::span<Parameter<double>* const>, AdamState<double>&, const AdamOptions&);

// ---- checkpoints ----

namespace {

constexpr char kMagic[5] = {'D', 'C', 'S', 'E', '1'};

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_f32(std::vector<unsigned char>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  explicit Reader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError("checkpoint: truncated file");
  }
  std::span<const unsigned char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t.value;
  }
  return nullptr;
}

std::vector<unsigned char> Checkpoint::serialize() const {
  std::vector<unsigned char> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put_u32(out, static_cast<std::uint32_t>(t.value.rows()));
    put_u32(out, static_cast<std::uint32_t>(t.value.cols()));
    for (float f : t.value.data()) put_f32(out, f);
  }
  const std::string meta = json{{"config", config.to_json()}, {"step", step}, {"vocab", vocab}}.dump();
  put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out.insert(out.end(), meta.begin(), meta.end());
  return out;
}

Checkpoint Checkpoint::deserialize(std::span<const unsigned char> bytes) {
  Reader r(bytes);
  if (r.str(5) != std::string(kMagic, 5)) throw DataError("checkpoint: bad magic bytes");
  Checkpoint c;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.str(r.u32());
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    if (cols != 0 && rows > (bytes.size() / 4) / cols) throw DataError("checkpoint: tensor " + t.name + " too large");
    t.value = Tensor<float>(rows, cols);
    for (auto& f : t.value.data()) f = r.f32();
    c.tensors.push_back(std::move(t));
  }
  const std::string meta = r.str(r.u32());
  if (!r.done()) throw DataError("checkpoint: trailing bytes");
  try {
    const json j = json::parse(meta);
    c.config = TrainConfig::from_json(j.at("config"));
    c.step = j.at("step").get<std::size_t>();
    c.vocab = j.at("vocab").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: bad metadata: ") + e.what());
  } catch (const UsageError& e) {
    throw DataError(std::string("checkpoint: bad config: ") + e.what());
  }
  return c;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

Vocab checkpoint_vocab(const Checkpoint& ckpt) {
  try {
    return Vocab::from_tokens(ckpt.vocab);
  } catch (const Error& e) {
    throw DataError(std::string("checkpoint vocabulary: ") + e.what());
  }
}

namespace {

void restore(const Checkpoint& ckpt, std::vector<Parameter<float>*> params) {
  for (auto* p : params) {
    const auto* t = ckpt.find(p->name);
    if (t == nullptr) throw DataError("checkpoint: missing tensor " + p->name);
    if (!t->same_shape(p->value)) {
      throw DataError("checkpoint: tensor " + p->name + " is " + t->shape() + ", expected " + p->value.shape());
    }
    p->value = *t;
  }
}

}  // namespace

EncoderParams<float> checkpoint_encoder(const Checkpoint& ckpt) {
  auto params = EncoderParams<float>::init(ckpt.config.encoder_config(ckpt.vocab.size()), 0);
  restore(ckpt, params.parameters());
  return params;
}

SiameseHead<float> checkpoint_siamese_head(const Checkpoint& ckpt) {
  auto head = SiameseHead<float>::init(ckpt.config.d_model, 0);
  restore(ckpt, head.parameters());
  return head;
}

// ---- training ----

namespace {

template <class T>
void append_tensors(Checkpoint& ckpt, const std::vector<Parameter<T>*>& params) {
  for (const auto* p : params) ckpt.tensors.push_back({p->name, p->value.template cast<float>()});
}

std::vector<DialogueSession> training_sessions(const TrainConfig& cfg, const std::vector<DialogueSession>& raw) {
  auto sessions = preprocess(raw);
  if (cfg.data_fraction < 1.0) {
    const auto keep = static_cast<std::size_t>(std::ceil(cfg.data_fraction * static_cast<double>(sessions.size())));
    sessions.resize(std::min(sessions.size(), std::max<std::size_t>(keep, 2)));
  }
  if (sessions.size() < 2) throw DataError("training needs at least two sessions after preprocessing");
  return sessions;
}

template <class T, class Model, class LossFn>
std::vector<double> run_steps(const TrainConfig& cfg, Model& model, GroupSampler& sampler, LossFn&& loss_of,
                              const StepLogger& log) {
  auto params = model.parameters();
  AdamState<T> state;
  const AdamOptions opt{cfg.learning_rate};
  std::vector<double> losses;
  losses.reserve(cfg.steps);
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const auto specs = sampler.next_batch(cfg.batch_size);
    for (auto* p : params) p->grad = Tensor<T>();
    Tape<T> tape;
    const Var<T> loss = loss_of(tape, specs);
    const double value = static_cast<double>(loss.scalar());
    if (!std::isfinite(value)) {
      throw NumericalError("non-finite loss " + std::to_string(value) + " at step " + std::to_string(step));
    }
    tape.backward(loss);
    for (const auto* p : params) {
      if (!p->grad.empty() && !p->grad.all_finite()) {
        throw NumericalError("non-finite gradient for " + p->name + " at step " + std::to_string(step));
      }
    }
    adam_step<T>(params, state, opt);
    losses.push_back(value);
    if (log) log(step, value);
  }
  return losses;
}

template <class T>
TrainResult train_impl(const TrainConfig& cfg, const std::vector<DialogueSession>& raw, const StepLogger& log) {
  cfg.validate();
  const auto sessions = training_sessions(cfg, raw);
  const Vocab vocab = build_vocab(sessions, cfg.vocab_size);
  const auto ecfg = cfg.encoder_config(vocab.size());
  GroupSampler sampler(sessions, cfg.turn_budget, cfg.m_neg, cfg.seed ^ 0x6a09e667f3bcc908ULL);

  TrainResult result;
  result.checkpoint.config = cfg;
  result.checkpoint.step = cfg.steps;
  result.checkpoint.vocab = vocab.tokens();

  if (cfg.model == ModelKind::dialoguecse) {
    auto model = DialogueCseModel<T>::init(ecfg, cfg.aggregation, cfg.seed);
    set_trainable_layers(model.encoder, cfg.frozen_bottom);
    const T tau = static_cast<T>(cfg.tau);
    result.losses = run_steps<T>(cfg, model, sampler, [&](Tape<T>& tape, const std::vector<GroupSpec>& specs) {
      std::vector<TokenizedGroup> groups;
      groups.reserve(specs.size());
      for (const auto& s : specs) groups.push_back(tokenize_group(s, vocab, cfg.max_seq_len));
      return model.batch_loss(tape, groups, tau);
    }, log);
    append_tensors(result.checkpoint, model.encoder.parameters());
    if (cfg.aggregation == Aggregation::attention) append_tensors(result.checkpoint, model.scorer.parameters());
  } else {
    const auto mode = cfg.model == ModelKind::siamese_single ? SiameseMode::single : SiameseMode::multi;
    auto model = SiameseModel<T>::init(ecfg, mode, cfg.seed);
    set_trainable_layers(model.encoder, cfg.frozen_bottom);
    result.losses = run_steps<T>(cfg, model, sampler, [&](Tape<T>& tape, const std::vector<GroupSpec>& specs) {
      std::vector<TokenizedGroup> groups;
      groups.reserve(specs.size());
      for (const auto& s : specs) groups.push_back(tokenize_siamese_group(s, vocab, mode, cfg.max_seq_len));
      return model.batch_loss(tape, groups);
    }, log);
    append_tensors(result.checkpoint, model.encoder.parameters());
    append_tensors(result.checkpoint, model.head.parameters());
  }
  return result;
}

}  // namespace

TrainResult train(const TrainConfig& config, const std::vector<DialogueSession>& sessions, const StepLogger& log) {
  if (config.precision == Precision::double_precision) return train_impl<double>(config, sessions, log);
  return train_impl<float>(config, sessions, log);
}

TrainResult train(const TrainConfig& config, const std::filesystem::path& corpus_path, const StepLogger& log) {
  return train(config, load_corpus(corpus_path), log);
}

json EvalReport::to_json() const {
  json j{{"map", sr.map}, {"mrr", sr.mrr}, {"queries", sr.queries}, {"skipped", sr.skipped}};
  if (spearman) j["spearman"] = *spearman;
  return j;
}

EvalReport evaluate_checkpoint(const Checkpoint& ckpt, std::span<const SRSample> sr, std::span<const DSTSPair> dsts,
                               std::size_t threads) {
  const auto encoder = checkpoint_encoder(ckpt);
  const auto vocab = checkpoint_vocab(ckpt);
  const auto embedder = encoder_embedder(encoder, vocab);
  EvalReport r;
  if (!sr.empty()) r.sr = evaluate_sr(embedder, sr, threads);
  if (!dsts.empty()) r.spearman = evaluate_dsts(embedder, dsts, threads);
  return r;
}

// ---- sweeps ----

SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "tau") return SweepAxis::tau;
  if (s == "m_neg" || s == "neg" || s == "negatives") return SweepAxis::m_neg;
  if (s == "turn_budget" || s == "turns") return SweepAxis::turn_budget;
  if (s == "data_fraction" || s == "data") return SweepAxis::data_fraction;
  throw UsageError("unknown sweep axis \"" + s + "\" (tau, m_neg, turn_budget, data_fraction)");
}

std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::tau: return "tau";
    case SweepAxis::m_neg: return "m_neg";
    case SweepAxis::turn_budget: return "turn_budget";
    case SweepAxis::data_fraction: return "data_fraction";
  }
  return "?";
}

std::vector<double> default_sweep_values(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::tau: return {0.05, 0.1, 0.2, 0.5};
    case SweepAxis::m_neg: return {1, 4, 9, 19};
    case SweepAxis::turn_budget: return {1, 2, 3, 4, 5};
    case SweepAxis::data_fraction: return {0.1, 0.25, 0.5, 1.0};
  }
  return {};
}

TrainConfig with_axis_value(TrainConfig config, SweepAxis axis, double value) {
  auto count = [&](const char* what) {
    if (!(value >= 1.0) || value != std::floor(value)) {
      throw UsageError(std::string(what) + " sweep values must be positive integers");
    }
    return static_cast<std::size_t>(value);
  };
  switch (axis) {
    case SweepAxis::tau: config.tau = value; break;
    case SweepAxis::m_neg: config.m_neg = count("m_neg"); break;
    case SweepAxis::turn_budget: config.turn_budget = count("turn_budget"); break;
    case SweepAxis::data_fraction: config.data_fraction = value; break;
  }
  config.validate();
  return config;
}

std::string SweepReport::table() const {
  std::ostringstream os;
  os << std::left << std::setw(14) << to_string(axis) << std::right << std::setw(9) << "MAP" << std::setw(9) << "MRR"
     << std::setw(10) << "Spearman" << std::setw(11) << "final_loss" << "\n";
  os << std::fixed << std::setprecision(4);
  for (const auto& r : rows) {
    std::ostringstream v;
    v << std::defaultfloat << r.value;
    os << std::left << std::setw(14) << v.str() << std::right;
    if (r.ok) {
      os << std::setw(9) << r.map << std::setw(9) << r.mrr << std::setw(10) << r.spearman << std::setw(11)
         << r.final_loss << "\n";
    } else {
      os << "  failed: " << r.error << "\n";
    }
  }
  return os.str();
}

json SweepReport::to_json() const {
  json rows_json = json::array();
  for (const auto& r : rows) {
    json row{{"value", r.value}, {"ok", r.ok}};
    if (r.ok) {
      row["map"] = r.map;
      row["mrr"] = r.mrr;
      row["spearman"] = r.spearman;
      row["final_loss"] = r.final_loss;
    } else {
      row["error"] = r.error;
    }
    rows_json.push_back(row);
  }
  return json{{"axis", to_string(axis)}, {"rows", rows_json}};
}

SweepReport sweep(const TrainConfig& base, SweepAxis axis, std::span<const double> values,
                  const std::vector<DialogueSession>& sessions, std::span<const SRSample> sr,
                  std::span<const DSTSPair> dsts, std::size_t threads) {
  if (values.empty()) throw UsageError("sweep: no values given");
  SweepReport report;
  report.axis = axis;
  for (double value : values) {
    SweepRow row;
    row.value = value;
    try {
      const auto cfg = with_axis_value(base, axis, value);
      const auto result = train(cfg, sessions);
      const auto ev = evaluate_checkpoint(result.checkpoint, sr, dsts, threads);
      row.map = ev.sr.map;
      row.mrr = ev.sr.mrr;
      row.spearman = ev.spearman.value_or(0.0);
      row.final_loss = result.losses.empty() ? 0.0 : result.losses.back();
      row.ok = true;
    } catch (const Error& e) {
      row.error = e.what();
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace dcse
