#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "subpop/corpus.hpp"
#include "subpop/matrix.hpp"
#include "subpop/repset.hpp"
#include "subpop/rng.hpp"
#include "subpop/vocab.hpp"

namespace subpop {

// Configuration of the small masked language model: an embedding layer
// (layer 0) followed by n_layers blocks of single-head self-attention and a
// two-layer tanh feedforward, both with residual connections, and a softmax
// output head. Capacity scales the hidden width.
struct ModelConfig {
  int vocab_size = 0;
  int base_hidden_dim = 64;
  int capacity_percent = 100;  // one of {10, 25, 50, 75, 100}
  int n_layers = 4;
  int max_seq_len = 32;
  double mask_prob = 0.15;
  std::uint64_t seed = 0;

  int hidden_dim() const;
  void validate() const;

  bool operator==(const ModelConfig& other) const = default;
};

struct LayerParams {
  EigenRowMajor wq, wk, wv, wo;  // h x h
  Eigen::VectorXd bq, bk, bv, bo;
  EigenRowMajor w1;  // h x 4h
  Eigen::VectorXd b1;
  EigenRowMajor w2;  // 4h x h
  Eigen::VectorXd b2;
};

// All trainable tensors; reused for gradients and optimizer state.
struct Parameters {
  EigenRowMajor embedding;      // vocab x h
  EigenRowMajor pos_embedding;  // max_seq_len x h
  std::vector<LayerParams> layers;
  EigenRowMajor head_w;  // h x vocab
  Eigen::VectorXd head_b;

  static Parameters zeros(const ModelConfig& config);
  void set_zero();
};

struct Model {
  ModelConfig config;
  Vocab vocab;
  std::string model_id = "model";
  Parameters params;
};

// Deterministic initialization: every weight matrix is drawn uniformly from
// (-1/sqrt(h), 1/sqrt(h)) in a fixed order; biases start at zero. The same
// (config, seed) always yields bitwise-identical parameters.
Model init_model(const ModelConfig& config, const Vocab& vocab,
                 std::string model_id = "model");

std::size_t parameter_count(const ModelConfig& config);
bool parameters_equal(const Parameters& a, const Parameters& b);
bool all_parameters_finite(const Parameters& p);

// Visits every parameter block in checkpoint order.
// fn(name, data pointer, rows, cols); vectors visit as 1 x n.
void for_each_param(Parameters& p,
                    const std::function<void(const std::string&, double*,
                                             std::size_t, std::size_t)>& fn);
void for_each_param(const Parameters& p,
                    const std::function<void(const std::string&, const double*,
                                             std::size_t, std::size_t)>& fn);

struct TokenizedExample {
  std::string id;
  std::vector<int> ids;
};

// Encodes tokens under the vocabulary (OOV -> unk), truncating to
// max_seq_len tokens per example.
std::vector<TokenizedExample> encode_corpus(const Corpus& corpus,
                                            const Vocab& vocab,
                                            int max_seq_len);

struct MaskTarget {
  int seq = 0;
  int pos = 0;
  int token = 0;  // the original token id to predict
};

struct MaskedBatch {
  std::vector<std::vector<int>> inputs;  // masked token ids
  std::vector<MaskTarget> targets;
};

// Selects each position independently with probability mask_prob; selected
// positions become the mask symbol with probability 0.8, a random real
// vocabulary token with probability 0.1, and stay unchanged otherwise. A
// sequence where nothing was selected gets one uniformly forced target.
MaskedBatch mask_batch(const std::vector<std::vector<int>>& sequences, Rng& rng,
                       double mask_prob, int vocab_size);

struct ForwardResult {
  std::vector<EigenRowMajor> layer_states;  // n_layers+1 entries, rows x h
  EigenRowMajor logits;                     // rows x vocab (if requested)
  std::vector<std::size_t> seq_offsets;     // size sequences+1
};

// Runs the model over unpadded sequences; row r of every state matrix
// corresponds to the token at seq_offsets[s] + position. layer_states[0] is
// the embedding layer (token + position embedding).
ForwardResult forward(const Model& model,
                      const std::vector<std::vector<int>>& sequences,
                      bool with_logits = true);

// Mean masked cross-entropy over the batch targets; accumulates analytic
// gradients into *grads when non-null.
double masked_loss(const Model& model, const MaskedBatch& batch,
                   Parameters* grads = nullptr);

// --- gradient verification -------------------------------------------------

std::vector<double> flatten_parameters(const Parameters& p);
Parameters analytic_gradients(const Model& model, const MaskedBatch& batch);
std::vector<double> finite_difference_gradients(Model& model,
                                                const MaskedBatch& batch,
                                                double step = 1e-5);
// max over entries of |a-n| / max(|a|, |n|, 1e-8)
double max_relative_error(const std::vector<double>& a,
                          const std::vector<double>& b);
// Analytic vs central finite differences over every parameter.
double grad_check(Model& model, const MaskedBatch& batch, double step = 1e-5);

// --- training ----------------------------------------------------------------

struct TrainOptions {
  double lr = 0.1;
  double momentum = 0.9;
  int batch_size = 32;
  int max_epochs = 500;
  int patience = 10;
  // Global-norm gradient clip applied before the momentum update; without a
  // normalization layer the residual stream diverges under plain SGD at
  // useful learning rates. <= 0 disables clipping.
  double clip_norm = 1.0;
  // Per-epoch multiplicative learning-rate decay (1.0 = constant).
  double lr_decay = 1.0;
  std::uint64_t train_seed = 0;  // 0 -> derived from the model config seed
};

struct TrainReport {
  std::vector<double> train_loss;  // per epoch, target-weighted mean
  std::vector<double> val_loss;
  int stopped_epoch = 0;  // epochs actually run
  int best_epoch = 0;     // 1-based; 0 when no epoch ran
};

// Stepwise trainer so callers can interleave epochs across models. Batches
// are built within each domain (the final short batch kept) and the batch
// order is then shuffled, which makes a multi-domain epoch take exactly the
// sum of the per-domain step counts.
class Trainer {
 public:
  Trainer(Model& model, const Corpus& train_corpus, const Corpus& val_corpus,
          const TrainOptions& opt);

  double run_epoch();
  double validation_loss();  // fixed masking: identical masks every call
  int epochs_run() const { return epochs_run_; }
  int steps_last_epoch() const { return steps_last_epoch_; }
  Model& model() { return model_; }

 private:
  Model& model_;
  TrainOptions opt_;
  std::uint64_t seed_;
  std::vector<TokenizedExample> train_examples_;
  std::vector<std::vector<std::size_t>> domain_indices_;
  std::vector<std::vector<int>> val_sequences_;
  Parameters velocity_;
  Rng rng_;
  int epochs_run_ = 0;
  int steps_last_epoch_ = 0;
};

using EpochHook = std::function<void(int epoch, const Model& model)>;

// SGD with momentum on the masked cross-entropy, early stopping on the
// validation loss; the model is left at its best-validation parameters.
TrainReport train(Model& model, const Corpus& train_corpus,
                  const Corpus& val_corpus, const TrainOptions& opt,
                  const EpochHook& hook = {});

// --- analysis ----------------------------------------------------------------

// Per-layer representations on a corpus, computed without any masking and in
// corpus order, so two models with the same vocabulary produce identically
// keyed rows.
std::vector<RepSet> dump_representations(const Model& model,
                                         const Corpus& corpus,
                                         const std::set<int>& layers);

struct ScoredWord {
  std::string word;
  double score = 0.0;  // cosine similarity or probability
};

// Nearest vocabulary words to `word` by cosine similarity of embedding rows,
// excluding the query and the reserved symbols. Ties break on ascending
// token id. candidates, when given, restricts the pool.
std::vector<ScoredWord> knn_embedding(const Model& model,
                                      const std::string& word, int k,
                                      const std::set<std::string>* candidates = nullptr);

// Top-k vocabulary words by output probability at the unique mask position.
std::vector<ScoredWord> predict_masked(const Model& model,
                                       const std::vector<std::string>& tokens,
                                       int top_k);

// --- checkpoint I/O ----------------------------------------------------------

// Binary container: magic "TMLM1", little-endian u64 header length, JSON
// header (config, model id, sorted vocab words, parameter shapes), then raw
// little-endian f64 parameter blocks in for_each_param order, row-major.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace subpop
