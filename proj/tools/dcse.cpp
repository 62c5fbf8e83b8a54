// dcse: corpus synthesis, training, evaluation and gradient checks.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "dcse/error.hpp"
#include "dcse/eval.hpp"
#include "dcse/gradcheck_suite.hpp"
#include "dcse/kernels.hpp"
#include "dcse/synth.hpp"
#include "dcse/trainer.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

fs::path sibling(const fs::path& out, const std::string& suffix) {
  auto stem = out.filename().string();
  if (auto dot = stem.rfind('.'); dot != std::string::npos && dot > 0) stem.resize(dot);
  return out.parent_path() / (stem + suffix);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw dcse::DataError("cannot write " + path.string());
  out << text;
}

struct TrainFlags {
  std::string config;
  std::string model, agg, precision;
  double tau = 0, lr = 0;
  std::size_t neg = 0, turns = 0, steps = 0, batch = 0, frozen = 0;
  std::uint64_t seed = 0;
  CLI::Option *model_opt{}, *agg_opt{}, *prec_opt{}, *tau_opt{}, *lr_opt{}, *neg_opt{}, *turns_opt{}, *steps_opt{},
      *batch_opt{}, *frozen_opt{}, *seed_opt{};

  void add(CLI::App* app) {
    app->add_option("--config", config, "JSON training config")->check(CLI::ExistingFile);
    model_opt = app->add_option("--model", model, "dialoguecse | siamese-single | siamese-multi");
    agg_opt = app->add_option("--agg", agg, "attention | mean");
    prec_opt = app->add_option("--precision", precision, "single | double");
    tau_opt = app->add_option("--tau", tau, "temperature");
    lr_opt = app->add_option("--lr", lr, "learning rate");
    neg_opt = app->add_option("--neg", neg, "negatives per group");
    turns_opt = app->add_option("--turns", turns, "context turn budget");
    steps_opt = app->add_option("--steps", steps, "optimizer steps");
    batch_opt = app->add_option("--batch", batch, "groups per batch");
    frozen_opt = app->add_option("--frozen", frozen, "frozen bottom layers");
    seed_opt = app->add_option("--seed", seed, "random seed");
  }

  dcse::TrainConfig resolve() const {
    dcse::TrainConfig c = config.empty() ? dcse::TrainConfig{} : dcse::TrainConfig::load(config);
    if (*model_opt) c.model = dcse::parse_model_kind(model);
    if (*agg_opt) c.aggregation = dcse::parse_aggregation(agg);
    if (*prec_opt) c.precision = dcse::parse_precision(precision);
    if (*tau_opt) c.tau = tau;
    if (*lr_opt) c.learning_rate = lr;
    if (*neg_opt) c.m_neg = neg;
    if (*turns_opt) c.turn_budget = turns;
    if (*steps_opt) c.steps = steps;
    if (*batch_opt) c.batch_size = batch;
    if (*frozen_opt) c.frozen_bottom = frozen;
    if (*seed_opt) c.seed = seed;
    c.validate();
    return c;
  }
};

std::string metrics_table(const dcse::EvalReport& r, bool sr, bool dsts) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  if (sr) os << "MAP       " << r.sr.map << "\nMRR       " << r.sr.mrr << "\nqueries   " << r.sr.queries << "\n";
  if (dsts && r.spearman) os << "Spearman  " << *r.spearman << "\n";
  return os.str();
}

int run(int argc, char** argv) {
  CLI::App app{"dialogue contrastive sentence embeddings"};
  app.require_subcommand(1, 1);

  // synth
  dcse::SynthSpec spec;
  std::string synth_out, sr_out, dsts_out;
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus with SR and D-STS eval sets");
  synth->add_option("--intents", spec.intents);
  synth->add_option("--templates", spec.templates);
  synth->add_option("--sessions", spec.sessions);
  synth->add_option("--turns", spec.turns, "turns per session");
  synth->add_option("--noise", spec.noise);
  synth->add_option("--seed", spec.seed);
  synth->add_option("--out", synth_out, "corpus JSON-lines")->required();
  synth->add_option("--sr-out", sr_out, "SR eval file (default <out>.sr.jsonl)");
  synth->add_option("--dsts-out", dsts_out, "D-STS eval file (default <out>.dsts.jsonl)");

  // preprocess
  std::string pre_corpus, pre_out;
  auto* pre = app.add_subcommand("preprocess", "merge same-speaker turns and drop short sessions");
  pre->add_option("--corpus", pre_corpus)->required()->check(CLI::ExistingFile);
  pre->add_option("--out", pre_out)->required();

  // train
  TrainFlags train_flags;
  std::string train_corpus, train_out, train_log;
  std::size_t log_every = 100;
  auto* train = app.add_subcommand("train", "train a model and write a checkpoint");
  train_flags.add(train);
  train->add_option("--corpus", train_corpus)->required()->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "checkpoint path")->required();
  train->add_option("--loss-log", train_log, "write per-step losses, one per line");
  train->add_option("--log-every", log_every, "print the running loss every N steps (0: never)");

  // eval-sr / eval-dsts
  std::string ev_ckpt, ev_data, ev_out;
  auto* eval_sr = app.add_subcommand("eval-sr", "MAP/MRR on an SR file");
  auto* eval_dsts = app.add_subcommand("eval-dsts", "Spearman correlation on a D-STS file");
  for (auto* sub : {eval_sr, eval_dsts}) {
    sub->add_option("--ckpt", ev_ckpt)->required()->check(CLI::ExistingFile);
    sub->add_option("--data", ev_data)->required()->check(CLI::ExistingFile);
    sub->add_option("--out", ev_out, "JSON report");
  }

  // embed
  std::string em_ckpt, em_data, em_out;
  auto* embed = app.add_subcommand("embed", "one embedding per input line");
  embed->add_option("--ckpt", em_ckpt)->required()->check(CLI::ExistingFile);
  embed->add_option("--data", em_data, "one sentence per line")->required()->check(CLI::ExistingFile);
  embed->add_option("--out", em_out)->required();

  // sweep
  TrainFlags sweep_flags;
  std::string sw_corpus, sw_sr, sw_dsts, sw_out, sw_axis = "tau";
  std::vector<double> sw_values;
  auto* sweep = app.add_subcommand("sweep", "train and evaluate one model per axis value");
  sweep_flags.add(sweep);
  sweep->add_option("--corpus", sw_corpus)->required()->check(CLI::ExistingFile);
  sweep->add_option("--sr", sw_sr, "SR eval file")->required()->check(CLI::ExistingFile);
  sweep->add_option("--dsts", sw_dsts, "D-STS eval file")->required()->check(CLI::ExistingFile);
  sweep->add_option("--axis", sw_axis, "tau | m_neg | turn_budget | data_fraction");
  sweep->add_option("--values", sw_values, "axis values (default: the standard grid)");
  sweep->add_option("--out", sw_out, "JSON report");

  // gradcheck
  std::string gc_scale = "tiny";
  std::uint64_t gc_seed = 1;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every op and loss");
  gradcheck->add_option("--scale", gc_scale, "tiny | small");
  gradcheck->add_option("--seed", gc_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const std::size_t threads = dcse::env_threads();

  if (*synth) {
    const auto corpus = dcse::synth_corpus(spec);
    const fs::path out = synth_out;
    const fs::path sr_path = sr_out.empty() ? sibling(out, ".sr.jsonl") : fs::path(sr_out);
    const fs::path dsts_path = dsts_out.empty() ? sibling(out, ".dsts.jsonl") : fs::path(dsts_out);
    dcse::save_corpus(out, corpus.sessions);
    dcse::save_sr(sr_path, corpus.sr);
    dcse::save_dsts(dsts_path, corpus.dsts);
    std::cout << "sessions  " << corpus.sessions.size() << "  -> " << out.string() << "\n"
              << "sr        " << corpus.sr.size() << "  -> " << sr_path.string() << "\n"
              << "dsts      " << corpus.dsts.size() << "  -> " << dsts_path.string() << "\n";
    return 0;
  }
  if (*pre) {
    const auto raw = dcse::load_corpus(pre_corpus);
    const auto clean = dcse::preprocess(raw);
    dcse::save_corpus(pre_out, clean);
    std::cout << "kept " << clean.size() << " of " << raw.size() << " sessions\n";
    return 0;
  }
  if (*train) {
    const auto cfg = train_flags.resolve();
    const auto t0 = std::chrono::steady_clock::now();
    double window = 0.0;
    const auto result = dcse::train(cfg, fs::path(train_corpus), [&](std::size_t step, double loss) {
      window += loss;
      if (log_every > 0 && step % log_every == 0) {
        std::cout << "step " << std::setw(6) << step << "  loss " << std::fixed << std::setprecision(5)
                  << window / static_cast<double>(log_every) << std::endl;
        window = 0.0;
      }
    });
    result.checkpoint.save(train_out);
    if (!train_log.empty()) {
      std::ostringstream os;
      os << std::setprecision(9);
      for (double l : result.losses) os << l << "\n";
      write_text(train_log, os.str());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "trained " << cfg.steps << " steps in " << std::fixed << std::setprecision(1) << secs
              << " s (kernels: " << dcse::kernels::isa_name(dcse::kernels::active_isa()) << ") -> " << train_out << "\n";
    return 0;
  }
  if (*eval_sr || *eval_dsts) {
    const auto ckpt = dcse::Checkpoint::load(ev_ckpt);
    dcse::EvalReport r;
    if (*eval_sr) {
      r = dcse::evaluate_checkpoint(ckpt, dcse::load_sr(ev_data), {}, threads);
    } else {
      r = dcse::evaluate_checkpoint(ckpt, {}, dcse::load_dsts(ev_data), threads);
    }
    json j = *eval_sr ? json{{"map", r.sr.map}, {"mrr", r.sr.mrr}, {"queries", r.sr.queries},
                             {"skipped", r.sr.skipped}}
                      : json{{"spearman", *r.spearman}};
    if (!ev_out.empty()) write_text(ev_out, j.dump(2) + "\n");
    std::cout << j.dump() << "\n" << metrics_table(r, eval_sr->parsed(), eval_dsts->parsed());
    return 0;
  }
  if (*embed) {
    const auto ckpt = dcse::Checkpoint::load(em_ckpt);
    const auto encoder = dcse::checkpoint_encoder(ckpt);
    const auto vocab = dcse::checkpoint_vocab(ckpt);
    if (vocab.size() != encoder.config.vocab_size) throw dcse::DataError("vocabulary does not match the checkpoint");
    std::ifstream in(em_data);
    if (!in) throw dcse::DataError("cannot read " + em_data);
    std::ofstream out(em_out, std::ios::binary);
    if (!out) throw dcse::DataError("cannot write " + em_out);
    std::string line;
    std::size_t count = 0;
    char buf[32];
    while (std::getline(in, line)) {
      const auto seq = dcse::tokenize(line, vocab, encoder.config.max_len);
      if (seq.active() == 0) throw dcse::DataError(em_data + ":" + std::to_string(count + 1) + ": line has no tokens");
      const auto v = dcse::embed_sentence(encoder, seq);
      for (std::size_t i = 0; i < v.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v[i]));
        out << (i ? " " : "") << buf;
      }
      out << "\n";
      ++count;
    }
    std::cout << "embedded " << count << " lines (d = " << encoder.config.d_model << ") -> " << em_out << "\n";
    return 0;
  }
  if (*sweep) {
    const auto base = sweep_flags.resolve();
    const auto axis = dcse::parse_sweep_axis(sw_axis);
    if (sw_values.empty()) sw_values = dcse::default_sweep_values(axis);
    const auto report = dcse::sweep(base, axis, sw_values, dcse::load_corpus(sw_corpus), dcse::load_sr(sw_sr),
                                    dcse::load_dsts(sw_dsts), threads);
    if (!sw_out.empty()) write_text(sw_out, report.to_json().dump(2) + "\n");
    std::cout << report.table();
    for (const auto& r : report.rows) {
      if (!r.ok) return 3;
    }
    return 0;
  }
  if (*gradcheck) {
    const auto cases = dcse::run_gradcheck_suite(dcse::parse_gradcheck_scale(gc_scale), gc_seed);
    bool all = true;
    std::cout << std::left << std::setw(38) << "op" << std::right << std::setw(14) << "max rel err" << "  result\n";
    for (const auto& c : cases) {
      all = all && c.report.passed;
      std::cout << std::left << std::setw(38) << c.name << std::right << std::setw(14) << std::scientific
                << std::setprecision(2) << c.report.max_rel_error << "  " << (c.report.passed ? "pass" : "FAIL")
                << "\n";
    }
    std::cout << (all ? "all checks passed\n" : "some checks failed\n");
    return all ? 0 : 3;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const dcse::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const dcse::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const dcse::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
