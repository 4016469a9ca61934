// Command-line surface for the subpopulation-analysis toolkit: corpus
// generation, lexicon extraction, model training, representation dumps, and
// the similarity analyses. All diagnostics go to stderr; machine-readable
// results go to files. Every run writes a manifest recording seeds and
// input/output hashes.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "subpop/cca.hpp"
#include "subpop/corpus.hpp"
#include "subpop/errors.hpp"
#include "subpop/harness.hpp"
#include "subpop/io.hpp"
#include "subpop/lexicon.hpp"
#include "subpop/log.hpp"
#include "subpop/mlm.hpp"

namespace {

using nlohmann::json;
using namespace subpop;

constexpr const char* kToolVersion = "0.1.0";

struct ManifestBuilder {
  RunManifest manifest;
  std::chrono::steady_clock::time_point start;

  explicit ManifestBuilder(int argc, char** argv)
      : start(std::chrono::steady_clock::now()) {
    manifest.tool_version = kToolVersion;
    std::string cmd;
    for (int i = 0; i < argc; ++i) {
      if (i > 0) cmd.push_back(' ');
      cmd += argv[i];
    }
    manifest.command_line = cmd;
  }

  void seed(const std::string& name, std::uint64_t value) {
    manifest.seeds.emplace_back(name, value);
  }
  void input(const std::string& path) {
    manifest.inputs.push_back({path, sha256_file(path)});
  }
  void output(const std::string& path) {
    manifest.outputs.push_back({path, sha256_file(path)});
  }
  void write(const std::string& path) {
    manifest.duration_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    write_manifest(manifest, path);
  }
};

std::string default_manifest_path(const std::string& primary_output) {
  return primary_output + ".manifest.json";
}

std::vector<std::uint64_t> seed_range(std::uint64_t base, int count) {
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < count; ++i) seeds.push_back(base + static_cast<std::uint64_t>(i));
  return seeds;
}

// Flags shared by commands that construct a model.
struct ModelFlags {
  int capacity = 100;
  int base_hidden = 64;
  int layers = 4;
  int max_seq = 32;
  double mask_prob = 0.15;

  void attach(CLI::App* cmd) {
    cmd->add_option("--capacity", capacity, "Capacity percent (10/25/50/75/100)");
    cmd->add_option("--base-hidden", base_hidden, "Base hidden dimension");
    cmd->add_option("--layers", layers, "Number of contextual layers");
    cmd->add_option("--max-seq", max_seq, "Maximum sequence length");
    cmd->add_option("--mask-prob", mask_prob, "Masking probability");
  }

  ModelConfig config(std::uint64_t seed) const {
    ModelConfig cfg;
    cfg.base_hidden_dim = base_hidden;
    cfg.capacity_percent = capacity;
    cfg.n_layers = layers;
    cfg.max_seq_len = max_seq;
    cfg.mask_prob = mask_prob;
    cfg.seed = seed;
    return cfg;
  }
};

std::vector<Probe> load_probes_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open probes file '" + path + "'");
  std::vector<Probe> probes;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    Probe probe;
    try {
      probe.tokens = obj.at("tokens").get<std::vector<std::string>>();
      probe.target = obj.at("target").get<std::string>();
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    probes.push_back(std::move(probe));
  }
  return probes;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Subpopulation analysis toolkit: multi-domain masked language "
               "models compared layer-by-layer with SVCCA"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  // --- gen-corpus ---------------------------------------------------------
  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic multi-domain corpus");
  std::string gen_spec_path, gen_out, gen_manifest;
  std::uint64_t gen_seed = 0;
  gen->add_option("--spec", gen_spec_path, "Synthetic spec JSON (optional; defaults otherwise)");
  gen->add_option("--seed", gen_seed, "Generation seed")->required();
  gen->add_option("--out", gen_out, "Output corpus JSONL")->required();
  gen->add_option("--manifest", gen_manifest, "Manifest path");
  gen->callback([&]() {
    ManifestBuilder mb(argc, argv);
    SynthSpec spec;
    if (!gen_spec_path.empty()) {
      spec = load_synth_spec_json(gen_spec_path);
      mb.input(gen_spec_path);
    }
    Corpus corpus = generate_synthetic_corpus(spec, gen_seed);
    save_corpus_jsonl(corpus, gen_out);
    mb.seed("seed", gen_seed);
    mb.output(gen_out);
    mb.write(gen_manifest.empty() ? default_manifest_path(gen_out) : gen_manifest);
  });

  // --- lexicon -------------------------------------------------------------
  auto* lex = app.add_subcommand("lexicon", "Extract domain-specific and general word sets");
  std::string lex_corpus, lex_out, lex_manifest;
  LexiconThresholds lex_thresholds;
  lex->add_option("--corpus", lex_corpus, "Corpus JSONL")->required();
  lex->add_option("--out", lex_out, "Output lexicon JSON")->required();
  lex->add_option("--t-in", lex_thresholds.t_in, "Min in-domain review count");
  lex->add_option("--t-out", lex_thresholds.t_out, "Max total review count elsewhere");
  lex->add_option("--t-general", lex_thresholds.t_general, "Min review count per domain for general words");
  lex->add_option("--manifest", lex_manifest, "Manifest path");
  lex->callback([&]() {
    ManifestBuilder mb(argc, argv);
    mb.input(lex_corpus);
    Corpus corpus = load_corpus_jsonl(lex_corpus);
    Lexicon lexicon = extract_lexicon(word_doc_frequencies(corpus), lex_thresholds);
    save_lexicon_json(lexicon, lex_out);
    mb.output(lex_out);
    mb.write(lex_manifest.empty() ? default_manifest_path(lex_out) : lex_manifest);
  });

  // --- train -----------------------------------------------------------------
  auto* tr = app.add_subcommand("train", "Train one masked language model");
  std::string tr_train, tr_val, tr_out, tr_vocab_from, tr_model_id = "model";
  std::string tr_report, tr_manifest;
  std::uint64_t tr_init_seed = 0, tr_train_seed = 0;
  ModelFlags tr_flags;
  TrainOptions tr_opt;
  tr->add_option("--train", tr_train, "Training corpus JSONL")->required();
  tr->add_option("--val", tr_val, "Validation corpus JSONL")->required();
  tr->add_option("--out", tr_out, "Output checkpoint")->required();
  tr->add_option("--init-seed", tr_init_seed, "Weight initialization seed")->required();
  tr->add_option("--train-seed", tr_train_seed, "Shuffle/mask seed (0 = derive from init seed)");
  tr->add_option("--vocab-from", tr_vocab_from, "Corpus to build the vocabulary from (default: training corpus)");
  tr->add_option("--model-id", tr_model_id, "Model identifier stored in outputs");
  tr_flags.attach(tr);
  tr->add_option("--lr", tr_opt.lr, "Learning rate");
  tr->add_option("--momentum", tr_opt.momentum, "SGD momentum");
  tr->add_option("--batch-size", tr_opt.batch_size, "Batch size");
  tr->add_option("--max-epochs", tr_opt.max_epochs, "Maximum epochs");
  tr->add_option("--patience", tr_opt.patience, "Early stopping patience");
  tr->add_option("--clip-norm", tr_opt.clip_norm, "Gradient clip (global norm; 0 disables)");
  tr->add_option("--lr-decay", tr_opt.lr_decay, "Per-epoch learning-rate decay factor");
  tr->add_option("--report", tr_report, "Optional training report JSON");
  tr->add_option("--manifest", tr_manifest, "Manifest path");
  tr->callback([&]() {
    ManifestBuilder mb(argc, argv);
    mb.input(tr_train);
    mb.input(tr_val);
    Corpus train_corpus = load_corpus_jsonl(tr_train);
    Corpus val_corpus = load_corpus_jsonl(tr_val);
    Vocab vocab;
    if (tr_vocab_from.empty()) {
      vocab = Vocab::build(train_corpus);
    } else {
      mb.input(tr_vocab_from);
      vocab = Vocab::build(load_corpus_jsonl(tr_vocab_from));
    }
    tr_opt.train_seed = tr_train_seed;
    Model model = init_model(tr_flags.config(tr_init_seed), vocab, tr_model_id);
    TrainReport report = train(model, train_corpus, val_corpus, tr_opt);
    save_checkpoint(model, tr_out);
    mb.seed("init_seed", tr_init_seed);
    mb.seed("train_seed", tr_train_seed);
    mb.output(tr_out);
    if (!tr_report.empty()) {
      json rj;
      rj["train_loss"] = report.train_loss;
      rj["val_loss"] = report.val_loss;
      rj["stopped_epoch"] = report.stopped_epoch;
      rj["best_epoch"] = report.best_epoch;
      atomic_write_text(tr_report, rj.dump(2) + "\n");
      mb.output(tr_report);
    }
    mb.write(tr_manifest.empty() ? default_manifest_path(tr_out) : tr_manifest);
  });

  // --- dump-reps ------------------------------------------------------------------
  auto* dump = app.add_subcommand("dump-reps", "Dump per-layer representations on a corpus");
  std::string dump_model, dump_corpus, dump_prefix, dump_manifest;
  std::vector<int> dump_layers;
  dump->add_option("--model", dump_model, "Checkpoint")->required();
  dump->add_option("--corpus", dump_corpus, "Evaluation corpus JSONL")->required();
  dump->add_option("--layers", dump_layers, "Layer indices (0 = embedding layer)")
      ->required()
      ->delimiter(',');
  dump->add_option("--out-prefix", dump_prefix, "Output prefix; writes <prefix>_l<k>.rep")
      ->required();
  dump->add_option("--manifest", dump_manifest, "Manifest path");
  dump->callback([&]() {
    ManifestBuilder mb(argc, argv);
    mb.input(dump_model);
    mb.input(dump_corpus);
    Model model = load_checkpoint(dump_model);
    Corpus corpus = load_corpus_jsonl(dump_corpus);
    std::set<int> layers(dump_layers.begin(), dump_layers.end());
    std::vector<RepSet> reps = dump_representations(model, corpus, layers);
    for (const RepSet& r : reps) {
      std::string path = dump_prefix + "_l" + std::to_string(r.layer) + ".rep";
      write_repset(r, path);
      mb.output(path);
      mb.output(path + ".bin");
      mb.output(path + ".rows");
    }
    mb.write(dump_manifest.empty() ? default_manifest_path(dump_prefix + ".reps")
                                   : dump_manifest);
  });

  // --- svcca ------------------------------------------------------------------------
  auto* sv = app.add_subcommand("svcca", "SVCCA similarity between two representation dumps");
  std::string sv_x, sv_y, sv_out, sv_subset, sv_manifest;
  double sv_tau = 0.99;
  sv->add_option("--x", sv_x, "First repset manifest")->required();
  sv->add_option("--y", sv_y, "Second repset manifest")->required();
  sv->add_option("--tau", sv_tau, "Variance fraction to keep, in (0, 1]");
  sv->add_option("--subset", sv_subset, "Row mask file: one 0/1 per line");
  sv->add_option("--out", sv_out, "Output report JSON")->required();
  sv->add_option("--manifest", sv_manifest, "Manifest path");
  sv->callback([&]() {
    if (!(sv_tau > 0.0 && sv_tau <= 1.0)) {
      throw CLI::ValidationError("--tau", "must be in (0, 1], got " + format_double(sv_tau));
    }
    ManifestBuilder mb(argc, argv);
    mb.input(sv_x);
    mb.input(sv_y);
    RepSet hx = read_repset(sv_x);
    RepSet hz = read_repset(sv_y);
    SvccaReport report;
    if (sv_subset.empty()) {
      report = svcca_score(hx, hz, sv_tau);
    } else {
      mb.input(sv_subset);
      std::ifstream mask_in(sv_subset);
      if (!mask_in) throw DataError("cannot open mask file '" + sv_subset + "'");
      AttributeMask mask;
      mask.attribute_id = sv_subset;
      std::string line;
      while (std::getline(mask_in, line)) {
        if (line.empty()) continue;
        if (line != "0" && line != "1") {
          throw ParseError("mask file '" + sv_subset + "': lines must be 0 or 1");
        }
        mask.bits.push_back(line == "1" ? 1 : 0);
      }
      report = svcca_subset(hx, hz, mask, sv_tau);
    }
    json rj;
    rj["rho_mean"] = report.rho_mean;
    rj["dirs_kept_x"] = report.dirs_kept_x;
    rj["dirs_kept_y"] = report.dirs_kept_y;
    rj["n_rows"] = report.n_rows;
    rj["rho"] = report.correlations.rho;
    atomic_write_text(sv_out, rj.dump(2) + "\n");
    mb.output(sv_out);
    mb.write(sv_manifest.empty() ? default_manifest_path(sv_out) : sv_manifest);
  });

  // --- dynamics -------------------------------------------------------------------------
  auto* dyn = app.add_subcommand("dynamics", "Training dynamics: per-epoch per-layer SVCCA");
  std::string dyn_plan, dyn_out_dir, dyn_manifest;
  dyn->add_option("--plan", dyn_plan, "Experiment plan JSON")->required();
  dyn->add_option("--out-dir", dyn_out_dir, "Output directory")->required();
  dyn->add_option("--manifest", dyn_manifest, "Manifest path");
  dyn->callback([&]() {
    ManifestBuilder mb(argc, argv);
    mb.input(dyn_plan);
    ExperimentPlan plan = load_plan_json(dyn_plan);
    std::filesystem::create_directories(dyn_out_dir);
    DynamicsTable table = run_training_dynamics(plan);
    std::string csv = (std::filesystem::path(dyn_out_dir) / "dynamics.csv").string();
    write_dynamics_csv(table, csv);
    mb.seed("init_seed", plan.init_seed);
    mb.seed("data_seed", plan.data_seed);
    mb.output(csv);
    mb.write(dyn_manifest.empty()
                 ? (std::filesystem::path(dyn_out_dir) / "manifest.json").string()
                 : dyn_manifest);
  });

  // --- sweep -----------------------------------------------------------------------------
  auto* sw = app.add_subcommand("sweep", "Capacity x data sweep with lexicon subsets");
  std::string sw_plan, sw_out_dir, sw_manifest;
  sw->add_option("--plan", sw_plan, "Experiment plan JSON")->required();
  sw->add_option("--out-dir", sw_out_dir, "Output directory")->required();
  sw->add_option("--manifest", sw_manifest, "Manifest path");
  sw->callback([&]() {
    ManifestBuilder mb(argc, argv);
    mb.input(sw_plan);
    ExperimentPlan plan = load_plan_json(sw_plan);
    std::filesystem::create_directories(sw_out_dir);
    SweepGrid grid = run_sweep(plan);
    std::string csv = (std::filesystem::path(sw_out_dir) / "sweep.csv").string();
    write_sweep_csv(grid, csv);
    mb.seed("init_seed", plan.init_seed);
    mb.seed("data_seed", plan.data_seed);
    mb.output(csv);
    mb.write(sw_manifest.empty()
                 ? (std::filesystem::path(sw_out_dir) / "manifest.json").string()
                 : sw_manifest);
  });

  // --- random-baseline ----------------------------------------------------------------------
  auto* rb = app.add_subcommand("random-baseline",
                                "Depth artifact of untrained models (pairwise SVCCA)");
  std::string rb_corpus, rb_out, rb_summary, rb_manifest;
  int rb_n_models = 10;
  std::uint64_t rb_seed = 1;
  double rb_tau = 0.99;
  int rb_workers = 1;
  ModelFlags rb_flags;
  rb->add_option("--corpus", rb_corpus, "Common test corpus JSONL")->required();
  rb->add_option("--out", rb_out, "Output pair CSV")->required();
  rb->add_option("--summary", rb_summary, "Optional summary JSON");
  rb->add_option("--n-models", rb_n_models, "Number of random models");
  rb->add_option("--seed", rb_seed, "Base seed; model i uses seed+i")->required();
  rb->add_option("--tau", rb_tau, "Variance fraction to keep");
  rb->add_option("--workers", rb_workers, "Parallel workers");
  rb_flags.attach(rb);
  rb->callback([&]() {
    ManifestBuilder mb(argc, argv);
    mb.input(rb_corpus);
    Corpus corpus = load_corpus_jsonl(rb_corpus);
    BaselineReport report = run_random_baseline(
        rb_flags.config(rb_seed), seed_range(rb_seed, rb_n_models), corpus, rb_tau,
        rb_workers);
    write_baseline_csv(report, rb_out);
    mb.seed("seed", rb_seed);
    mb.output(rb_out);
    if (!rb_summary.empty()) {
      json sj;
      sj["n_models"] = report.n_models;
      sj["pair_count"] = report.pair_count;
      sj["mean_diff"] = report.mean_diff;
      sj["std_diff"] = report.std_diff;
      atomic_write_text(rb_summary, sj.dump(2) + "\n");
      mb.output(rb_summary);
    }
    mb.write(rb_manifest.empty() ? default_manifest_path(rb_out) : rb_manifest);
  });

  // --- agreement -------------------------------------------------------------------------------
  auto* ag = app.add_subcommand("agreement",
                                "Behavioral overlap between two models (kNN and predictions)");
  std::string ag_e, ag_c, ag_lexicon, ag_out, ag_probes, ag_corpus, ag_domain, ag_manifest;
  int ag_k = 5;
  std::size_t ag_max_probes = 50;
  ag->add_option("--e", ag_e, "Multi-domain model checkpoint")->required();
  ag->add_option("--c", ag_c, "Control model checkpoint")->required();
  ag->add_option("--lexicon", ag_lexicon, "Lexicon JSON")->required();
  ag->add_option("--k", ag_k, "Neighbor/prediction list size");
  ag->add_option("--probes", ag_probes, "Probe JSONL ({\"tokens\": [...], \"target\": ...})");
  ag->add_option("--corpus", ag_corpus, "Corpus to build probes from (alternative to --probes)");
  ag->add_option("--max-probes", ag_max_probes, "Probe cap per category when using --corpus");
  ag->add_option("--domain", ag_domain, "Restrict domain-specific words to this domain");
  ag->add_option("--out", ag_out, "Output report JSON")->required();
  ag->add_option("--manifest", ag_manifest, "Manifest path");
  ag->callback([&]() {
    ManifestBuilder mb(argc, argv);
    mb.input(ag_e);
    mb.input(ag_c);
    mb.input(ag_lexicon);
    Model e_model = load_checkpoint(ag_e);
    Model c_model = load_checkpoint(ag_c);
    Lexicon lexicon = load_lexicon_json(ag_lexicon);
    std::optional<std::string> domain;
    if (!ag_domain.empty()) domain = ag_domain;
    std::vector<Probe> probes;
    if (!ag_probes.empty()) {
      mb.input(ag_probes);
      probes = load_probes_jsonl(ag_probes);
    } else if (!ag_corpus.empty()) {
      mb.input(ag_corpus);
      probes = make_probes(load_corpus_jsonl(ag_corpus), lexicon, domain, ag_max_probes);
    }
    AgreementReport report =
        run_prediction_agreement(e_model, c_model, lexicon, ag_k, probes, domain);
    write_agreement_json(report, ag_out);
    mb.output(ag_out);
    mb.write(ag_manifest.empty() ? default_manifest_path(ag_out) : ag_manifest);
  });

  // --- pca-view ----------------------------------------------------------------------------------
  auto* pv = app.add_subcommand("pca-view", "2-D PCA view of lexicon-word representations");
  std::string pv_e, pv_c, pv_model, pv_lexicon, pv_out, pv_manifest;
  pv->add_option("--e-rep", pv_e, "Multi-domain model repset manifest")->required();
  pv->add_option("--c-rep", pv_c, "Control model repset manifest")->required();
  pv->add_option("--model", pv_model, "Checkpoint providing the vocabulary")->required();
  pv->add_option("--lexicon", pv_lexicon, "Lexicon JSON")->required();
  pv->add_option("--out", pv_out, "Output CSV")->required();
  pv->add_option("--manifest", pv_manifest, "Manifest path");
  pv->callback([&]() {
    ManifestBuilder mb(argc, argv);
    mb.input(pv_e);
    mb.input(pv_c);
    mb.input(pv_model);
    mb.input(pv_lexicon);
    RepSet e_dump = read_repset(pv_e);
    RepSet c_dump = read_repset(pv_c);
    Model model = load_checkpoint(pv_model);
    Lexicon lexicon = load_lexicon_json(pv_lexicon);
    std::vector<PcaViewRow> rows = emit_pca_views(e_dump, c_dump, lexicon, model.vocab);
    write_pca_csv(rows, pv_out);
    mb.output(pv_out);
    mb.write(pv_manifest.empty() ? default_manifest_path(pv_out) : pv_manifest);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);  // prints the message or requested help text
    return code == 0 ? 0 : 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
