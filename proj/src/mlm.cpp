#include "subpop/mlm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "subpop/errors.hpp"
#include "subpop/io.hpp"
#include "subpop/log.hpp"

namespace subpop {

using nlohmann::json;

// --- config ------------------------------------------------------------------

int ModelConfig::hidden_dim() const {
  return static_cast<int>(
      std::lround(base_hidden_dim * capacity_percent / 100.0));
}

void ModelConfig::validate() const {
  static const std::set<int> kCapacities = {10, 25, 50, 75, 100};
  if (kCapacities.count(capacity_percent) == 0) {
    throw ArgumentError("capacity_percent must be one of {10,25,50,75,100}, got " +
                        std::to_string(capacity_percent));
  }
  if (vocab_size < Vocab::kNumSpecials + 1) {
    throw ArgumentError("vocab_size must cover the reserved symbols plus at "
                        "least one word, got " + std::to_string(vocab_size));
  }
  if (base_hidden_dim < 1) throw ArgumentError("base_hidden_dim must be >= 1");
  if (n_layers < 1) throw ArgumentError("n_layers must be >= 1");
  if (max_seq_len < 1) throw ArgumentError("max_seq_len must be >= 1");
  if (!(mask_prob > 0.0 && mask_prob < 1.0)) {
    throw ArgumentError("mask_prob must be in (0, 1)");
  }
  if (hidden_dim() < 4) {
    throw ArgumentError("hidden dim " + std::to_string(hidden_dim()) +
                        " after capacity scaling is below the minimum of 4");
  }
}

// --- parameters ----------------------------------------------------------------

Parameters Parameters::zeros(const ModelConfig& config) {
  int h = config.hidden_dim();
  Parameters p;
  p.embedding = EigenRowMajor::Zero(config.vocab_size, h);
  p.pos_embedding = EigenRowMajor::Zero(config.max_seq_len, h);
  p.layers.resize(static_cast<std::size_t>(config.n_layers));
  for (LayerParams& layer : p.layers) {
    layer.wq = EigenRowMajor::Zero(h, h);
    layer.wk = EigenRowMajor::Zero(h, h);
    layer.wv = EigenRowMajor::Zero(h, h);
    layer.wo = EigenRowMajor::Zero(h, h);
    layer.bq = Eigen::VectorXd::Zero(h);
    layer.bk = Eigen::VectorXd::Zero(h);
    layer.bv = Eigen::VectorXd::Zero(h);
    layer.bo = Eigen::VectorXd::Zero(h);
    layer.w1 = EigenRowMajor::Zero(h, 4 * h);
    layer.b1 = Eigen::VectorXd::Zero(4 * h);
    layer.w2 = EigenRowMajor::Zero(4 * h, h);
    layer.b2 = Eigen::VectorXd::Zero(h);
  }
  p.head_w = EigenRowMajor::Zero(h, config.vocab_size);
  p.head_b = Eigen::VectorXd::Zero(config.vocab_size);
  return p;
}

void Parameters::set_zero() {
  for_each_param(*this, [](const std::string&, double* data, std::size_t rows,
                           std::size_t cols) {
    std::fill(data, data + rows * cols, 0.0);
  });
}

namespace {

template <typename Params, typename Fn>
void visit_params(Params& p, Fn&& fn) {
  fn("embedding", p.embedding.data(), static_cast<std::size_t>(p.embedding.rows()),
     static_cast<std::size_t>(p.embedding.cols()));
  fn("pos_embedding", p.pos_embedding.data(),
     static_cast<std::size_t>(p.pos_embedding.rows()),
     static_cast<std::size_t>(p.pos_embedding.cols()));
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& layer = p.layers[l];
    std::string prefix = "layer" + std::to_string(l) + ".";
    auto mat = [&](const char* name, auto& m) {
      fn(prefix + name, m.data(), static_cast<std::size_t>(m.rows()),
         static_cast<std::size_t>(m.cols()));
    };
    auto vec = [&](const char* name, auto& v) {
      fn(prefix + name, v.data(), 1, static_cast<std::size_t>(v.size()));
    };
    mat("wq", layer.wq);
    vec("bq", layer.bq);
    mat("wk", layer.wk);
    vec("bk", layer.bk);
    mat("wv", layer.wv);
    vec("bv", layer.bv);
    mat("wo", layer.wo);
    vec("bo", layer.bo);
    mat("w1", layer.w1);
    vec("b1", layer.b1);
    mat("w2", layer.w2);
    vec("b2", layer.b2);
  }
  fn("head_w", p.head_w.data(), static_cast<std::size_t>(p.head_w.rows()),
     static_cast<std::size_t>(p.head_w.cols()));
  fn("head_b", p.head_b.data(), 1, static_cast<std::size_t>(p.head_b.size()));
}

}  // namespace

void for_each_param(Parameters& p,
                    const std::function<void(const std::string&, double*,
                                             std::size_t, std::size_t)>& fn) {
  visit_params(p, fn);
}

void for_each_param(const Parameters& p,
                    const std::function<void(const std::string&, const double*,
                                             std::size_t, std::size_t)>& fn) {
  visit_params(p, fn);
}

std::size_t parameter_count(const ModelConfig& config) {
  std::size_t total = 0;
  Parameters p = Parameters::zeros(config);
  for_each_param(static_cast<const Parameters&>(p),
                 [&](const std::string&, const double*, std::size_t rows,
                     std::size_t cols) { total += rows * cols; });
  return total;
}

bool parameters_equal(const Parameters& a, const Parameters& b) {
  std::vector<double> fa = flatten_parameters(a);
  std::vector<double> fb = flatten_parameters(b);
  return fa == fb;
}

bool all_parameters_finite(const Parameters& p) {
  bool ok = true;
  for_each_param(p, [&](const std::string&, const double* data, std::size_t rows,
                        std::size_t cols) {
    for (std::size_t i = 0; i < rows * cols; ++i) {
      if (!std::isfinite(data[i])) ok = false;
    }
  });
  return ok;
}

Model init_model(const ModelConfig& config, const Vocab& vocab,
                 std::string model_id) {
  ModelConfig cfg = config;
  cfg.vocab_size = vocab.size();
  cfg.validate();

  Model model;
  model.config = cfg;
  model.vocab = vocab;
  model.model_id = std::move(model_id);
  model.params = Parameters::zeros(cfg);

  double bound = 1.0 / std::sqrt(static_cast<double>(cfg.hidden_dim()));
  Rng rng(Rng::mix(cfg.seed, "init"));
  for_each_param(model.params, [&](const std::string& name, double* data,
                                   std::size_t rows, std::size_t cols) {
    bool is_bias = name.find(".b") != std::string::npos || name == "head_b";
    if (is_bias) return;  // biases start at zero
    for (std::size_t i = 0; i < rows * cols; ++i) {
      data[i] = rng.uniform(-bound, bound);
    }
  });
  return model;
}

// --- corpus encoding -----------------------------------------------------------

std::vector<TokenizedExample> encode_corpus(const Corpus& corpus,
                                            const Vocab& vocab,
                                            int max_seq_len) {
  std::vector<TokenizedExample> out;
  out.reserve(corpus.examples.size());
  for (const Example& ex : corpus.examples) {
    TokenizedExample enc;
    enc.id = ex.id;
    std::size_t n = std::min(ex.tokens.size(),
                             static_cast<std::size_t>(max_seq_len));
    enc.ids.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      enc.ids.push_back(vocab.encode(ex.tokens[i]));
    }
    out.push_back(std::move(enc));
  }
  return out;
}

// --- masking -------------------------------------------------------------------

MaskedBatch mask_batch(const std::vector<std::vector<int>>& sequences, Rng& rng,
                       double mask_prob, int vocab_size) {
  if (!(mask_prob > 0.0 && mask_prob < 1.0)) {
    throw ArgumentError("mask_prob must be in (0, 1)");
  }
  int n_real = vocab_size - Vocab::kNumSpecials;
  MaskedBatch batch;
  batch.inputs = sequences;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const std::vector<int>& seq = sequences[s];
    if (seq.empty()) {
      warn("mask_batch: skipping empty sequence at index " + std::to_string(s));
      continue;
    }
    std::size_t before = batch.targets.size();
    auto select = [&](std::size_t pos) {
      MaskTarget target;
      target.seq = static_cast<int>(s);
      target.pos = static_cast<int>(pos);
      target.token = seq[pos];
      double branch = rng.unit();
      if (branch < 0.8) {
        batch.inputs[s][pos] = Vocab::kMaskId;
      } else if (branch < 0.9 && n_real > 0) {
        batch.inputs[s][pos] =
            Vocab::kNumSpecials + static_cast<int>(rng.below(static_cast<std::uint64_t>(n_real)));
      }  // else: keep the original token
      batch.targets.push_back(target);
    };
    for (std::size_t pos = 0; pos < seq.size(); ++pos) {
      if (rng.unit() < mask_prob) select(pos);
    }
    if (batch.targets.size() == before) {
      select(static_cast<std::size_t>(rng.below(seq.size())));
    }
  }
  return batch;
}

// --- forward -------------------------------------------------------------------

namespace {

struct LayerCache {
  EigenRowMajor x_in;                 // N x h, input to the block
  EigenRowMajor q, k, v;              // N x h
  std::vector<EigenRowMajor> attn;    // per-sequence softmax weights
  EigenRowMajor ctx;                  // N x h
  EigenRowMajor x_attn;               // N x h, after attention residual
  EigenRowMajor ffn_act;              // N x 4h
};

void stable_softmax_rows(EigenRowMajor& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    double mx = m.row(i).maxCoeff();
    m.row(i) = (m.row(i).array() - mx).exp();
    m.row(i) /= m.row(i).sum();
  }
}

// Core forward pass over concatenated sequences. caches may be null.
void run_layers(const Model& model,
                const std::vector<std::vector<int>>& sequences,
                std::vector<EigenRowMajor>& states,
                std::vector<std::size_t>& offsets,
                std::vector<LayerCache>* caches) {
  const ModelConfig& cfg = model.config;
  const Parameters& p = model.params;
  int h = cfg.hidden_dim();
  double inv_sqrt_h = 1.0 / std::sqrt(static_cast<double>(h));

  offsets.assign(1, 0);
  std::size_t total = 0;
  for (const auto& seq : sequences) {
    if (static_cast<int>(seq.size()) > cfg.max_seq_len) {
      throw ArgumentError("sequence length " + std::to_string(seq.size()) +
                          " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    }
    total += seq.size();
    offsets.push_back(total);
  }
  if (total == 0) throw ArgumentError("forward: no tokens in batch");

  EigenRowMajor x(total, h);
  {
    std::size_t r = 0;
    for (const auto& seq : sequences) {
      for (std::size_t pos = 0; pos < seq.size(); ++pos, ++r) {
        int token = seq[pos];
        if (token < 0 || token >= cfg.vocab_size) {
          throw ArgumentError("token id " + std::to_string(token) +
                              " out of range for vocab size " +
                              std::to_string(cfg.vocab_size));
        }
        x.row(static_cast<Eigen::Index>(r)) =
            p.embedding.row(token) +
            p.pos_embedding.row(static_cast<Eigen::Index>(pos));
      }
    }
  }

  states.clear();
  states.reserve(static_cast<std::size_t>(cfg.n_layers) + 1);
  states.push_back(x);
  if (caches) caches->resize(static_cast<std::size_t>(cfg.n_layers));

  for (int l = 0; l < cfg.n_layers; ++l) {
    const LayerParams& lp = p.layers[static_cast<std::size_t>(l)];
    LayerCache local;
    LayerCache& cache = caches ? (*caches)[static_cast<std::size_t>(l)] : local;

    cache.x_in = x;
    cache.q = (x * lp.wq).rowwise() + lp.bq.transpose();
    cache.k = (x * lp.wk).rowwise() + lp.bk.transpose();
    cache.v = (x * lp.wv).rowwise() + lp.bv.transpose();

    cache.ctx.resize(static_cast<Eigen::Index>(total), h);
    cache.attn.clear();
    cache.attn.reserve(sequences.size());
    for (std::size_t s = 0; s < sequences.size(); ++s) {
      Eigen::Index off = static_cast<Eigen::Index>(offsets[s]);
      Eigen::Index len = static_cast<Eigen::Index>(offsets[s + 1] - offsets[s]);
      if (len == 0) {
        cache.attn.emplace_back();
        continue;
      }
      EigenRowMajor scores =
          cache.q.middleRows(off, len) * cache.k.middleRows(off, len).transpose() *
          inv_sqrt_h;
      stable_softmax_rows(scores);
      cache.ctx.middleRows(off, len) = scores * cache.v.middleRows(off, len);
      cache.attn.push_back(std::move(scores));
    }

    cache.x_attn = x + ((cache.ctx * lp.wo).rowwise() + lp.bo.transpose());
    EigenRowMajor pre = (cache.x_attn * lp.w1).rowwise() + lp.b1.transpose();
    cache.ffn_act = pre.array().tanh();
    x = cache.x_attn + ((cache.ffn_act * lp.w2).rowwise() + lp.b2.transpose());
    states.push_back(x);
  }
}

}  // namespace

ForwardResult forward(const Model& model,
                      const std::vector<std::vector<int>>& sequences,
                      bool with_logits) {
  ForwardResult result;
  run_layers(model, sequences, result.layer_states, result.seq_offsets, nullptr);
  if (with_logits) {
    result.logits = (result.layer_states.back() * model.params.head_w).rowwise() +
                    model.params.head_b.transpose();
  }
  return result;
}

// --- loss and gradients ----------------------------------------------------------

double masked_loss(const Model& model, const MaskedBatch& batch,
                   Parameters* grads) {
  if (batch.targets.empty()) {
    throw ArgumentError("masked_loss: batch has no targets");
  }
  const ModelConfig& cfg = model.config;
  const Parameters& p = model.params;
  int h = cfg.hidden_dim();
  double inv_sqrt_h = 1.0 / std::sqrt(static_cast<double>(h));

  std::vector<EigenRowMajor> states;
  std::vector<std::size_t> offsets;
  std::vector<LayerCache> caches;
  run_layers(model, batch.inputs, states, offsets, grads ? &caches : nullptr);

  Eigen::Index n_targets = static_cast<Eigen::Index>(batch.targets.size());
  EigenRowMajor xt(n_targets, h);
  for (Eigen::Index t = 0; t < n_targets; ++t) {
    const MaskTarget& target = batch.targets[static_cast<std::size_t>(t)];
    std::size_t row = offsets[static_cast<std::size_t>(target.seq)] +
                      static_cast<std::size_t>(target.pos);
    xt.row(t) = states.back().row(static_cast<Eigen::Index>(row));
  }

  EigenRowMajor logits = (xt * p.head_w).rowwise() + p.head_b.transpose();
  EigenRowMajor probs = logits;
  stable_softmax_rows(probs);

  double loss = 0.0;
  for (Eigen::Index t = 0; t < n_targets; ++t) {
    double pt = probs(t, batch.targets[static_cast<std::size_t>(t)].token);
    loss -= std::log(std::max(pt, 1e-300));
  }
  loss /= static_cast<double>(n_targets);
  if (!std::isfinite(loss)) {
    throw NumericalError("masked_loss: non-finite loss");
  }
  if (!grads) return loss;

  Parameters& g = *grads;

  // Output head.
  EigenRowMajor dlogits = probs;
  for (Eigen::Index t = 0; t < n_targets; ++t) {
    dlogits(t, batch.targets[static_cast<std::size_t>(t)].token) -= 1.0;
  }
  dlogits /= static_cast<double>(n_targets);
  g.head_w += xt.transpose() * dlogits;
  g.head_b += dlogits.colwise().sum().transpose();

  EigenRowMajor dxt = dlogits * p.head_w.transpose();
  EigenRowMajor dx = EigenRowMajor::Zero(states.back().rows(), h);
  for (Eigen::Index t = 0; t < n_targets; ++t) {
    const MaskTarget& target = batch.targets[static_cast<std::size_t>(t)];
    std::size_t row = offsets[static_cast<std::size_t>(target.seq)] +
                      static_cast<std::size_t>(target.pos);
    dx.row(static_cast<Eigen::Index>(row)) += dxt.row(t);
  }

  // Transformer blocks, last to first.
  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const LayerParams& lp = p.layers[static_cast<std::size_t>(l)];
    LayerParams& lg = g.layers[static_cast<std::size_t>(l)];
    const LayerCache& cache = caches[static_cast<std::size_t>(l)];

    // Feedforward: x_out = x_attn + tanh(x_attn w1 + b1) w2 + b2
    EigenRowMajor dffn = dx;  // gradient w.r.t. the ffn output
    lg.w2 += cache.ffn_act.transpose() * dffn;
    lg.b2 += dffn.colwise().sum().transpose();
    EigenRowMajor dact = dffn * lp.w2.transpose();
    EigenRowMajor dpre =
        dact.array() * (1.0 - cache.ffn_act.array().square());
    lg.w1 += cache.x_attn.transpose() * dpre;
    lg.b1 += dpre.colwise().sum().transpose();
    EigenRowMajor dx_attn = dx + dpre * lp.w1.transpose();

    // Attention: x_attn = x_in + (ctx wo + bo)
    lg.wo += cache.ctx.transpose() * dx_attn;
    lg.bo += dx_attn.colwise().sum().transpose();
    EigenRowMajor dctx = dx_attn * lp.wo.transpose();

    EigenRowMajor dq = EigenRowMajor::Zero(dctx.rows(), h);
    EigenRowMajor dk = EigenRowMajor::Zero(dctx.rows(), h);
    EigenRowMajor dv = EigenRowMajor::Zero(dctx.rows(), h);
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
      Eigen::Index off = static_cast<Eigen::Index>(offsets[s]);
      Eigen::Index len = static_cast<Eigen::Index>(offsets[s + 1] - offsets[s]);
      if (len == 0) continue;
      const EigenRowMajor& attn = cache.attn[s];
      EigenRowMajor dctx_s = dctx.middleRows(off, len);
      EigenRowMajor dattn = dctx_s * cache.v.middleRows(off, len).transpose();
      dv.middleRows(off, len) = attn.transpose() * dctx_s;
      // softmax backward per row
      EigenRowMajor dscores(len, len);
      for (Eigen::Index i = 0; i < len; ++i) {
        double dot = dattn.row(i).dot(attn.row(i));
        dscores.row(i) =
            attn.row(i).array() * (dattn.row(i).array() - dot);
      }
      dscores *= inv_sqrt_h;
      dq.middleRows(off, len) = dscores * cache.k.middleRows(off, len);
      dk.middleRows(off, len) = dscores.transpose() * cache.q.middleRows(off, len);
    }

    lg.wq += cache.x_in.transpose() * dq;
    lg.bq += dq.colwise().sum().transpose();
    lg.wk += cache.x_in.transpose() * dk;
    lg.bk += dk.colwise().sum().transpose();
    lg.wv += cache.x_in.transpose() * dv;
    lg.bv += dv.colwise().sum().transpose();

    dx = dx_attn + dq * lp.wq.transpose() + dk * lp.wk.transpose() +
         dv * lp.wv.transpose();
  }

  // Embedding layer: states[0] row = embedding[token] + pos_embedding[pos].
  {
    std::size_t r = 0;
    for (std::size_t s = 0; s < batch.inputs.size(); ++s) {
      const std::vector<int>& seq = batch.inputs[s];
      for (std::size_t pos = 0; pos < seq.size(); ++pos, ++r) {
        g.embedding.row(seq[pos]) += dx.row(static_cast<Eigen::Index>(r));
        g.pos_embedding.row(static_cast<Eigen::Index>(pos)) +=
            dx.row(static_cast<Eigen::Index>(r));
      }
    }
  }
  return loss;
}

// --- gradient verification --------------------------------------------------------

std::vector<double> flatten_parameters(const Parameters& p) {
  std::vector<double> flat;
  for_each_param(p, [&](const std::string&, const double* data, std::size_t rows,
                        std::size_t cols) {
    flat.insert(flat.end(), data, data + rows * cols);
  });
  return flat;
}

Parameters analytic_gradients(const Model& model, const MaskedBatch& batch) {
  Parameters grads = Parameters::zeros(model.config);
  masked_loss(model, batch, &grads);
  return grads;
}

std::vector<double> finite_difference_gradients(Model& model,
                                                const MaskedBatch& batch,
                                                double step) {
  std::vector<double> grads;
  grads.reserve(parameter_count(model.config));
  for_each_param(model.params, [&](const std::string&, double* data,
                                   std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows * cols; ++i) {
      double saved = data[i];
      data[i] = saved + step;
      double up = masked_loss(model, batch);
      data[i] = saved - step;
      double down = masked_loss(model, batch);
      data[i] = saved;
      grads.push_back((up - down) / (2.0 * step));
    }
  });
  return grads;
}

double max_relative_error(const std::vector<double>& a,
                          const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw ArgumentError("max_relative_error: size mismatch");
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-8});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

double grad_check(Model& model, const MaskedBatch& batch, double step) {
  std::vector<double> analytic = flatten_parameters(analytic_gradients(model, batch));
  std::vector<double> numeric = finite_difference_gradients(model, batch, step);
  return max_relative_error(analytic, numeric);
}

// --- training -----------------------------------------------------------------------

Trainer::Trainer(Model& model, const Corpus& train_corpus,
                 const Corpus& val_corpus, const TrainOptions& opt)
    : model_(model),
      opt_(opt),
      seed_(opt.train_seed != 0 ? opt.train_seed
                                : Rng::mix(model.config.seed, "train")),
      velocity_(Parameters::zeros(model.config)),
      rng_(Rng::mix(seed_, "epochs")) {
  if (train_corpus.examples.empty() || val_corpus.examples.empty()) {
    throw ArgumentError("training and validation corpora must be non-empty");
  }
  if (opt.batch_size < 1) throw ArgumentError("batch_size must be >= 1");
  if (opt.lr < 0.0) throw ArgumentError("lr must be >= 0");

  train_examples_ = encode_corpus(train_corpus, model.vocab, model.config.max_seq_len);
  domain_indices_.resize(train_corpus.domains.size());
  for (std::size_t d = 0; d < train_corpus.domains.size(); ++d) {
    for (std::size_t i = 0; i < train_corpus.examples.size(); ++i) {
      if (train_corpus.examples[i].domain == train_corpus.domains[d]) {
        domain_indices_[d].push_back(i);
      }
    }
  }
  for (const TokenizedExample& ex : encode_corpus(val_corpus, model.vocab,
                                                  model.config.max_seq_len)) {
    val_sequences_.push_back(ex.ids);
  }
}

double Trainer::run_epoch() {
  std::size_t b = static_cast<std::size_t>(opt_.batch_size);

  // Batches are formed within each domain, then the batch order is shuffled,
  // so an epoch over d domains takes exactly the sum of the per-domain step
  // counts.
  std::vector<std::vector<std::size_t>> batches;
  for (std::vector<std::size_t> indices : domain_indices_) {
    rng_.shuffle(indices);
    for (std::size_t start = 0; start < indices.size(); start += b) {
      std::size_t end = std::min(start + b, indices.size());
      batches.emplace_back(indices.begin() + static_cast<std::ptrdiff_t>(start),
                           indices.begin() + static_cast<std::ptrdiff_t>(end));
    }
  }
  rng_.shuffle(batches);

  double loss_sum = 0.0;
  std::size_t target_count = 0;
  Parameters grads = Parameters::zeros(model_.config);

  // Velocity, gradient, and parameter storage visited in lockstep.
  std::vector<std::pair<double*, std::size_t>> vblocks, gblocks, pblocks;
  auto collect = [](Parameters& p, std::vector<std::pair<double*, std::size_t>>& out) {
    for_each_param(p, [&](const std::string&, double* d, std::size_t r,
                          std::size_t c) { out.emplace_back(d, r * c); });
  };
  collect(velocity_, vblocks);
  collect(grads, gblocks);
  collect(model_.params, pblocks);

  for (const std::vector<std::size_t>& batch_indices : batches) {
    std::vector<std::vector<int>> sequences;
    sequences.reserve(batch_indices.size());
    for (std::size_t idx : batch_indices) {
      sequences.push_back(train_examples_[idx].ids);
    }
    MaskedBatch masked =
        mask_batch(sequences, rng_, model_.config.mask_prob, model_.config.vocab_size);
    if (masked.targets.empty()) continue;

    grads.set_zero();
    double loss = masked_loss(model_, masked, &grads);
    if (!std::isfinite(loss)) {
      throw NumericalError("training diverged (non-finite loss) at epoch " +
                           std::to_string(epochs_run_ + 1));
    }
    loss_sum += loss * static_cast<double>(masked.targets.size());
    target_count += masked.targets.size();

    double grad_scale = 1.0;
    if (opt_.clip_norm > 0.0) {
      double sq = 0.0;
      for (const auto& [g, n] : gblocks) {
        for (std::size_t i = 0; i < n; ++i) sq += g[i] * g[i];
      }
      double norm = std::sqrt(sq);
      if (norm > opt_.clip_norm) grad_scale = opt_.clip_norm / norm;
    }

    double lr = opt_.lr * std::pow(opt_.lr_decay, epochs_run_);
    for (std::size_t block = 0; block < vblocks.size(); ++block) {
      double* v = vblocks[block].first;
      double* g = gblocks[block].first;
      double* p = pblocks[block].first;
      std::size_t n = vblocks[block].second;
      for (std::size_t i = 0; i < n; ++i) {
        v[i] = opt_.momentum * v[i] + grad_scale * g[i];
        p[i] -= lr * v[i];
      }
    }
  }
  if (!all_parameters_finite(model_.params)) {
    throw NumericalError("training diverged (non-finite parameters) at epoch " +
                         std::to_string(epochs_run_ + 1));
  }
  ++epochs_run_;
  steps_last_epoch_ = static_cast<int>(batches.size());
  return target_count > 0 ? loss_sum / static_cast<double>(target_count) : 0.0;
}

double Trainer::validation_loss() {
  // A fresh RNG with a fixed seed each call: every epoch scores the same
  // masked positions, making the early-stopping signal comparable.
  Rng rng(Rng::mix(seed_, "val"));
  std::size_t b = static_cast<std::size_t>(opt_.batch_size);
  double loss_sum = 0.0;
  std::size_t target_count = 0;
  for (std::size_t start = 0; start < val_sequences_.size(); start += b) {
    std::size_t end = std::min(start + b, val_sequences_.size());
    std::vector<std::vector<int>> sequences(
        val_sequences_.begin() + static_cast<std::ptrdiff_t>(start),
        val_sequences_.begin() + static_cast<std::ptrdiff_t>(end));
    MaskedBatch masked =
        mask_batch(sequences, rng, model_.config.mask_prob, model_.config.vocab_size);
    if (masked.targets.empty()) continue;
    double loss = masked_loss(model_, masked);
    loss_sum += loss * static_cast<double>(masked.targets.size());
    target_count += masked.targets.size();
  }
  return target_count > 0 ? loss_sum / static_cast<double>(target_count) : 0.0;
}

TrainReport train(Model& model, const Corpus& train_corpus,
                  const Corpus& val_corpus, const TrainOptions& opt,
                  const EpochHook& hook) {
  if (opt.max_epochs < 1) throw ArgumentError("max_epochs must be >= 1");
  if (opt.patience < 1) throw ArgumentError("patience must be >= 1");

  Trainer trainer(model, train_corpus, val_corpus, opt);
  TrainReport report;
  double best_val = std::numeric_limits<double>::infinity();
  Parameters best_params = model.params;
  int epochs_since_best = 0;

  for (int epoch = 1; epoch <= opt.max_epochs; ++epoch) {
    double train_loss = trainer.run_epoch();
    double val_loss = trainer.validation_loss();
    report.train_loss.push_back(train_loss);
    report.val_loss.push_back(val_loss);
    report.stopped_epoch = epoch;
    if (hook) hook(epoch, model);

    if (val_loss < best_val) {
      best_val = val_loss;
      best_params = model.params;
      report.best_epoch = epoch;
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
      if (epochs_since_best >= opt.patience) break;
    }
  }
  model.params = best_params;
  return report;
}

// --- analysis ------------------------------------------------------------------------

std::vector<RepSet> dump_representations(const Model& model,
                                         const Corpus& corpus,
                                         const std::set<int>& layers) {
  for (int layer : layers) {
    if (layer < 0 || layer > model.config.n_layers) {
      throw ArgumentError("layer " + std::to_string(layer) +
                          " out of range [0, " +
                          std::to_string(model.config.n_layers) + "]");
    }
  }
  if (layers.empty()) throw ArgumentError("dump_representations: no layers requested");
  if (corpus.examples.empty()) {
    throw ArgumentError("dump_representations: empty corpus");
  }

  std::vector<TokenizedExample> encoded =
      encode_corpus(corpus, model.vocab, model.config.max_seq_len);

  std::size_t total_rows = 0;
  for (const TokenizedExample& ex : encoded) total_rows += ex.ids.size();

  int h = model.config.hidden_dim();
  std::vector<RepSet> result;
  for (int layer : layers) {
    RepSet reps;
    reps.layer = layer;
    reps.model_id = model.model_id;
    reps.matrix = Matrix(total_rows, static_cast<std::size_t>(h));
    reps.rows.reserve(total_rows);
    result.push_back(std::move(reps));
  }

  const std::size_t kChunk = 128;
  std::size_t row_base = 0;
  for (std::size_t start = 0; start < encoded.size(); start += kChunk) {
    std::size_t end = std::min(start + kChunk, encoded.size());
    std::vector<std::vector<int>> sequences;
    sequences.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) sequences.push_back(encoded[i].ids);

    ForwardResult fwd = forward(model, sequences, /*with_logits=*/false);
    std::size_t chunk_rows = fwd.seq_offsets.back();

    std::size_t li = 0;
    for (int layer : layers) {
      result[li].matrix.eigen().middleRows(
          static_cast<Eigen::Index>(row_base),
          static_cast<Eigen::Index>(chunk_rows)) =
          fwd.layer_states[static_cast<std::size_t>(layer)];
      ++li;
    }
    for (std::size_t i = start; i < end; ++i) {
      for (std::size_t pos = 0; pos < encoded[i].ids.size(); ++pos) {
        RepRow row;
        row.example_id = encoded[i].id;
        row.position = static_cast<std::int32_t>(pos);
        row.token_id = encoded[i].ids[pos];
        for (RepSet& reps : result) reps.rows.push_back(row);
      }
    }
    row_base += chunk_rows;
  }
  for (RepSet& reps : result) validate_repset(reps);
  return result;
}

std::vector<ScoredWord> knn_embedding(const Model& model,
                                      const std::string& word, int k,
                                      const std::set<std::string>* candidates) {
  if (k < 1) throw ArgumentError("knn_embedding: k must be >= 1");
  if (!model.vocab.contains(word)) {
    throw ArgumentError("knn_embedding: word '" + word + "' not in vocabulary");
  }
  int query_id = model.vocab.encode(word);
  if (model.vocab.is_special(query_id)) {
    throw ArgumentError("knn_embedding: '" + word + "' is a reserved symbol");
  }
  Eigen::RowVectorXd query = model.params.embedding.row(query_id);
  double query_norm = query.norm();

  std::vector<ScoredWord> scored;
  for (int id = Vocab::kNumSpecials; id < model.config.vocab_size; ++id) {
    if (id == query_id) continue;
    const std::string& candidate = model.vocab.word(id);
    if (candidates && candidates->count(candidate) == 0) continue;
    Eigen::RowVectorXd other = model.params.embedding.row(id);
    double denom = query_norm * other.norm();
    double sim = denom > 0.0 ? query.dot(other) / denom : 0.0;
    scored.push_back({candidate, sim});
  }
  // Sort by similarity descending, then ascending token id (vocabulary order
  // equals id order for real words).
  std::stable_sort(scored.begin(), scored.end(),
                   [](const ScoredWord& a, const ScoredWord& b) {
                     return a.score > b.score;
                   });
  if (static_cast<int>(scored.size()) > k) scored.resize(static_cast<std::size_t>(k));
  return scored;
}

std::vector<ScoredWord> predict_masked(const Model& model,
                                       const std::vector<std::string>& tokens,
                                       int top_k) {
  if (top_k < 1) throw ArgumentError("predict_masked: top_k must be >= 1");
  std::vector<int> ids;
  int mask_pos = -1;
  int mask_count = 0;
  for (const std::string& token : tokens) {
    if (token == kMaskToken) {
      ++mask_count;
      mask_pos = static_cast<int>(ids.size());
      ids.push_back(Vocab::kMaskId);
    } else {
      ids.push_back(model.vocab.encode(token));
    }
  }
  if (mask_count != 1) {
    throw ArgumentError("predict_masked: expected exactly one '" +
                        std::string(kMaskToken) + "' token, found " +
                        std::to_string(mask_count));
  }
  if (static_cast<int>(ids.size()) > model.config.max_seq_len) {
    if (mask_pos >= model.config.max_seq_len) {
      throw ArgumentError("predict_masked: mask position " +
                          std::to_string(mask_pos) +
                          " falls beyond max_seq_len " +
                          std::to_string(model.config.max_seq_len));
    }
    ids.resize(static_cast<std::size_t>(model.config.max_seq_len));
  }

  ForwardResult fwd = forward(model, {ids}, /*with_logits=*/true);
  EigenRowMajor probs = fwd.logits.row(mask_pos);
  stable_softmax_rows(probs);

  std::vector<ScoredWord> scored;
  for (int id = Vocab::kNumSpecials; id < model.config.vocab_size; ++id) {
    scored.push_back({model.vocab.word(id), probs(0, id)});
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const ScoredWord& a, const ScoredWord& b) {
                     return a.score > b.score;
                   });
  if (static_cast<int>(scored.size()) > top_k) {
    scored.resize(static_cast<std::size_t>(top_k));
  }
  return scored;
}

// --- checkpoint I/O ---------------------------------------------------------------------

namespace {
constexpr char kMagic[5] = {'T', 'M', 'L', 'M', '1'};
}

void save_checkpoint(const Model& model, const std::string& path) {
  if (!all_parameters_finite(model.params)) {
    throw DataError("refusing to save checkpoint with non-finite parameters");
  }
  json header;
  header["config"] = {{"vocab_size", model.config.vocab_size},
                      {"base_hidden_dim", model.config.base_hidden_dim},
                      {"capacity_percent", model.config.capacity_percent},
                      {"n_layers", model.config.n_layers},
                      {"max_seq_len", model.config.max_seq_len},
                      {"mask_prob", model.config.mask_prob},
                      {"seed", model.config.seed}};
  header["model_id"] = model.model_id;
  header["vocab"] = model.vocab.word_list();
  json params = json::array();
  for_each_param(model.params, [&](const std::string& name, const double*,
                                   std::size_t rows, std::size_t cols) {
    params.push_back({{"name", name}, {"rows", rows}, {"cols", cols}});
  });
  header["params"] = params;
  std::string header_str = header.dump();

  atomic_write_file(path, [&](std::ostream& out) {
    out.write(kMagic, sizeof(kMagic));
    write_u64_le(out, header_str.size());
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for_each_param(model.params, [&](const std::string&, const double* data,
                                     std::size_t rows, std::size_t cols) {
      write_f64le_block(out, data, rows * cols);
    });
  });
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  char magic[5];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("'" + path + "' is not a TMLM1 checkpoint");
  }
  std::uint64_t header_len = read_u64_le(in);
  std::string header_str(header_len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw DataError("checkpoint '" + path + "': truncated header");

  json header;
  try {
    header = json::parse(header_str);
  } catch (const json::exception& e) {
    throw ParseError("checkpoint '" + path + "': bad header: " + e.what());
  }

  Model model;
  try {
    const json& cfg = header.at("config");
    model.config.vocab_size = cfg.at("vocab_size").get<int>();
    model.config.base_hidden_dim = cfg.at("base_hidden_dim").get<int>();
    model.config.capacity_percent = cfg.at("capacity_percent").get<int>();
    model.config.n_layers = cfg.at("n_layers").get<int>();
    model.config.max_seq_len = cfg.at("max_seq_len").get<int>();
    model.config.mask_prob = cfg.at("mask_prob").get<double>();
    model.config.seed = cfg.at("seed").get<std::uint64_t>();
    model.model_id = header.at("model_id").get<std::string>();
    model.vocab = Vocab::from_words(header.at("vocab").get<std::vector<std::string>>());
  } catch (const json::exception& e) {
    throw ParseError("checkpoint '" + path + "': bad header: " + e.what());
  }
  if (model.vocab.size() != model.config.vocab_size) {
    throw DataError("checkpoint '" + path + "': vocab list size " +
                    std::to_string(model.vocab.size()) +
                    " does not match vocab_size " +
                    std::to_string(model.config.vocab_size));
  }
  model.config.validate();
  model.params = Parameters::zeros(model.config);

  // Validate declared shapes against the reconstructed layout.
  std::vector<std::tuple<std::string, std::size_t, std::size_t>> expected;
  for_each_param(static_cast<const Parameters&>(model.params),
                 [&](const std::string& name, const double*, std::size_t rows,
                     std::size_t cols) { expected.emplace_back(name, rows, cols); });
  const json& declared = header.at("params");
  if (declared.size() != expected.size()) {
    throw DataError("checkpoint '" + path + "': expected " +
                    std::to_string(expected.size()) + " parameter blocks, header lists " +
                    std::to_string(declared.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& [name, rows, cols] = expected[i];
    if (declared[i].at("name").get<std::string>() != name ||
        declared[i].at("rows").get<std::size_t>() != rows ||
        declared[i].at("cols").get<std::size_t>() != cols) {
      throw DataError("checkpoint '" + path + "': parameter block " +
                      std::to_string(i) + " ('" + name + "') has unexpected shape");
    }
  }

  for_each_param(model.params, [&](const std::string& name, double* data,
                                   std::size_t rows, std::size_t cols) {
    try {
      read_f64le_block(in, data, rows * cols);
    } catch (const DataError&) {
      throw DataError("checkpoint '" + path + "': truncated while reading '" +
                      name + "'");
    }
  });
  char extra;
  if (in.read(&extra, 1)) {
    throw DataError("checkpoint '" + path + "': trailing bytes after parameters");
  }
  if (!all_parameters_finite(model.params)) {
    throw DataError("checkpoint '" + path + "': non-finite parameters");
  }
  return model;
}

}  // namespace subpop
