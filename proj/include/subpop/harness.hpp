#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "subpop/cca.hpp"
#include "subpop/corpus.hpp"
#include "subpop/lexicon.hpp"
#include "subpop/mlm.hpp"

namespace subpop {

struct OptimizerSettings {
  double lr = 0.1;
  double momentum = 0.9;
  int batch_size = 32;
  int patience = 10;
  double clip_norm = 1.0;
  double lr_decay = 1.0;
};

// Declarative description of one experiment family: the corpus (synthetic or
// on disk), the capacity/data axes, seeds, and training settings. The
// multi-domain model trains on the union of the per-domain control sets; for
// each domain the two share exactly the same examples.
struct ExperimentPlan {
  std::optional<SynthSpec> synthetic;
  std::string corpus_path;  // used when synthetic is not set
  SplitRatios split_ratios{0.7, 0.15, 0.15};
  std::vector<std::string> domains;  // empty -> every corpus domain

  std::vector<int> capacity_percents{100};
  std::vector<int> data_percents{100};
  int base_train_per_domain = 0;  // 0 -> derived so max(data_percents) fits

  std::uint64_t init_seed = 1;
  std::uint64_t data_seed = 2;
  int epochs = 30;
  OptimizerSettings optimizer;
  double tau = 0.99;

  int base_hidden_dim = 64;
  int n_layers = 4;
  int max_seq_len = 32;
  double mask_prob = 0.15;
  LexiconThresholds lexicon_thresholds;

  std::string cache_dir;  // empty -> retrain every time
  std::string output_dir;
  int workers = 1;

  // Dynamics runs evaluate these epochs (0 = before training). Empty means
  // every epoch from 0 to `epochs`.
  std::vector<int> dynamics_eval_epochs;

  void validate() const;
};

ExperimentPlan load_plan_json(const std::string& path);

// Corpus, splits, shared vocabulary, and lexicon prepared once per plan.
// The vocabulary comes from the full training partition and is shared by
// every model so representation rows stay key-compatible; the lexicon is
// likewise extracted from the full training partition.
struct PreparedData {
  Corpus corpus;
  CorpusSplits splits;
  std::vector<std::string> domains;
  Vocab vocab;
  Lexicon lexicon;
  // Per-domain training example ids in subset order: a cell with data
  // percent p takes the first round(base * p / 100) entries of each list.
  std::map<std::string, std::vector<std::string>> train_order;
  int base_train_per_domain = 0;
};

PreparedData prepare_data(const ExperimentPlan& plan);

// Per-domain train corpora for one data percent, and the union corpus for
// the multi-domain model (identical example sets per domain by construction).
struct CellData {
  Corpus e_train;
  std::map<std::string, Corpus> control_train;
};
CellData cell_data(const ExperimentPlan& plan, const PreparedData& data,
                   int data_percent);

ModelConfig cell_config(const ExperimentPlan& plan, const PreparedData& data,
                        int capacity_percent);

// Trains a model or loads it from the plan's checkpoint cache. The cache key
// hashes the config, seeds, optimizer, epochs, vocabulary, and training
// example ids, so any change retrains.
Model train_or_load(const ExperimentPlan& plan, const PreparedData& data,
                    const ModelConfig& config, const Corpus& train_corpus,
                    const Corpus& val_corpus, const std::string& model_id);

// --- training dynamics ---------------------------------------------------------

struct DynamicsEntry {
  int epoch = 0;
  int layer = 0;
  std::string domain;
  double svcca = 0.0;
};

struct DynamicsTable {
  std::vector<DynamicsEntry> entries;
};

// Trains the multi-domain model and all control models in epoch lockstep
// from a shared initialization, scoring every (epoch, layer, domain) cell on
// the common per-domain test sets. Epoch 0 is the pre-training state.
DynamicsTable run_training_dynamics(const ExperimentPlan& plan,
                                    PreparedData* prepared_out = nullptr);

// --- random-weights baseline ------------------------------------------------------

struct BaselinePair {
  std::string model_a;
  std::string model_b;
  double first_layer_svcca = 0.0;
  double last_layer_svcca = 0.0;
};

struct BaselineReport {
  std::size_t n_models = 0;
  std::size_t pair_count = 0;
  std::vector<BaselinePair> pairs;
  double mean_diff = 0.0;  // mean of (first - last) over pairs
  double std_diff = 0.0;   // population standard deviation
};

// Depth artifact measurement: untrained models with the given seeds are
// compared pairwise at the embedding layer and the last layer on a common
// test corpus. shared_vocab, when given, replaces the vocabulary that would
// otherwise be built from the test corpus.
BaselineReport run_random_baseline(const ModelConfig& config,
                                   const std::vector<std::uint64_t>& seeds,
                                   const Corpus& test_corpus, double tau = 0.99,
                                   int workers = 1,
                                   const Vocab* shared_vocab = nullptr);

// --- capacity x data sweep ----------------------------------------------------------

struct SweepEntry {
  int capacity_percent = 0;
  int data_percent = 0;
  std::string domain;
  int layer = 0;
  std::string subset;  // "all", "general", or "domain_specific"
  std::optional<double> svcca;  // empty -> null marker (subset too small)
};

struct SweepGrid {
  std::vector<SweepEntry> entries;
};

SweepGrid run_sweep(const ExperimentPlan& plan,
                    PreparedData* prepared_out = nullptr);

// --- behavioral agreement ------------------------------------------------------------

struct Probe {
  std::vector<std::string> tokens;  // contains exactly one mask symbol
  std::string target;               // the held-out original word
};

struct AgreementBucket {
  std::size_t count = 0;
  double mean_overlap = 0.0;
};

struct AgreementReport {
  int k = 5;
  AgreementBucket embedding_general;   // kNN overlap at layer 0
  AgreementBucket embedding_specific;
  AgreementBucket prediction_general;  // masked-prediction overlap at the last layer
  AgreementBucket prediction_specific;
  std::size_t skipped = 0;
};

// For every lexicon word present in both vocabularies: overlap@k of the two
// models' embedding nearest neighbors. For every probe: overlap@k of the two
// models' masked predictions. `domain`, when set, restricts the
// domain-specific category to that domain's words.
AgreementReport run_prediction_agreement(
    const Model& e_model, const Model& c_model, const Lexicon& lexicon, int k,
    const std::vector<Probe>& probes,
    const std::optional<std::string>& domain = std::nullopt);

// Builds probes from a corpus: examples containing a lexicon word get that
// word masked out (first eligible position; at most one general and one
// domain-specific probe per example).
std::vector<Probe> make_probes(const Corpus& corpus, const Lexicon& lexicon,
                               const std::optional<std::string>& domain,
                               std::size_t max_per_category);

// --- PCA views --------------------------------------------------------------------------

struct PcaViewRow {
  std::string model;
  std::string category;  // "general" or "domain_specific"
  std::string token;
  double x = 0.0;
  double y = 0.0;
};

// Selects rows whose token is a lexicon word and projects each model's
// selection to 2-D with a per-model PCA fit.
std::vector<PcaViewRow> emit_pca_views(const RepSet& e_dump,
                                       const RepSet& c_dump,
                                       const Lexicon& lexicon,
                                       const Vocab& vocab);

// --- CSV emission ------------------------------------------------------------------------

void write_dynamics_csv(const DynamicsTable& table, const std::string& path);
void write_sweep_csv(const SweepGrid& grid, const std::string& path);
void write_baseline_csv(const BaselineReport& report, const std::string& path);
void write_pca_csv(const std::vector<PcaViewRow>& rows, const std::string& path);
void write_agreement_json(const AgreementReport& report, const std::string& path);

// Builds a row mask over a repset selecting rows whose token belongs to the
// word set.
AttributeMask token_mask(const RepSet& reps, const Vocab& vocab,
                         const std::set<std::string>& words,
                         const std::string& attribute_id);

// Runs fn(0..n-1) across `workers` threads; rethrows the first failure.
void parallel_for(std::size_t n, int workers,
                  const std::function<void(std::size_t)>& fn);

}  // namespace subpop
