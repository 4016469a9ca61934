#include "subpop/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "subpop/errors.hpp"
#include "subpop/io.hpp"
#include "subpop/log.hpp"
#include "subpop/tensor_core.hpp"

namespace subpop {

using nlohmann::json;

// --- plan ---------------------------------------------------------------------

void ExperimentPlan::validate() const {
  if (!synthetic && corpus_path.empty()) {
    throw ArgumentError("plan: either a synthetic spec or a corpus path is required");
  }
  if (synthetic) synthetic->validate();
  if (capacity_percents.empty()) throw ArgumentError("plan: capacity_percents is empty");
  if (data_percents.empty()) throw ArgumentError("plan: data_percents is empty");
  for (int p : data_percents) {
    if (p < 1) throw ArgumentError("plan: data percent must be >= 1, got " + std::to_string(p));
  }
  if (epochs < 1) throw ArgumentError("plan: epochs must be >= 1");
  if (workers < 1) throw ArgumentError("plan: workers must be >= 1");
  if (!(tau > 0.0 && tau <= 1.0)) throw ArgumentError("plan: tau must be in (0, 1]");
  for (int e : dynamics_eval_epochs) {
    if (e < 0 || e > epochs) {
      throw ArgumentError("plan: dynamics eval epoch " + std::to_string(e) +
                          " outside [0, " + std::to_string(epochs) + "]");
    }
  }
}

namespace {

Corpus filter_domain(const Corpus& corpus, const std::string& domain) {
  std::vector<Example> kept;
  for (const Example& ex : corpus.examples) {
    if (ex.domain == domain) kept.push_back(ex);
  }
  if (kept.empty()) {
    throw DataError("no examples for domain '" + domain + "'");
  }
  return Corpus::from_examples(std::move(kept));
}

Corpus filter_domains(const Corpus& corpus, const std::vector<std::string>& domains) {
  std::set<std::string> wanted(domains.begin(), domains.end());
  std::vector<Example> kept;
  for (const Example& ex : corpus.examples) {
    if (wanted.count(ex.domain)) kept.push_back(ex);
  }
  if (kept.empty()) throw DataError("domain filter removed every example");
  return Corpus::from_examples(std::move(kept));
}

std::vector<std::string> sorted_ids(const Corpus& corpus) {
  std::vector<std::string> ids;
  ids.reserve(corpus.examples.size());
  for (const Example& ex : corpus.examples) ids.push_back(ex.id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace

ExperimentPlan load_plan_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open plan file '" + path + "'");
  json obj;
  try {
    in >> obj;
  } catch (const json::exception& e) {
    throw ParseError("plan file '" + path + "': " + e.what());
  }

  static const std::set<std::string> known = {
      "synthetic", "corpus_path", "split_ratios", "domains", "capacity_percents",
      "data_percents", "base_train_per_domain", "init_seed", "data_seed",
      "epochs", "optimizer", "tau", "base_hidden_dim", "n_layers", "max_seq_len",
      "mask_prob", "lexicon_thresholds", "cache_dir", "output_dir", "workers",
      "dynamics_eval_epochs"};
  for (const auto& [key, value] : obj.items()) {
    if (known.count(key) == 0) warn("plan file '" + path + "': ignoring unknown field '" + key + "'");
  }

  ExperimentPlan plan;
  try {
    if (!obj.contains("init_seed") || !obj.contains("data_seed")) {
      throw ArgumentError("plan file '" + path +
                          "': init_seed and data_seed must be explicit");
    }
    plan.init_seed = obj["init_seed"].get<std::uint64_t>();
    plan.data_seed = obj["data_seed"].get<std::uint64_t>();
    if (obj.contains("synthetic"))
      plan.synthetic = parse_synth_spec_json(obj["synthetic"].dump());
    if (obj.contains("corpus_path")) plan.corpus_path = obj["corpus_path"].get<std::string>();
    if (obj.contains("split_ratios")) {
      auto r = obj["split_ratios"].get<std::vector<double>>();
      if (r.size() != 3) throw ArgumentError("split_ratios must have 3 entries");
      plan.split_ratios = {r[0], r[1], r[2]};
    }
    if (obj.contains("domains"))
      plan.domains = obj["domains"].get<std::vector<std::string>>();
    if (obj.contains("capacity_percents"))
      plan.capacity_percents = obj["capacity_percents"].get<std::vector<int>>();
    if (obj.contains("data_percents"))
      plan.data_percents = obj["data_percents"].get<std::vector<int>>();
    if (obj.contains("base_train_per_domain"))
      plan.base_train_per_domain = obj["base_train_per_domain"].get<int>();
    if (obj.contains("epochs")) plan.epochs = obj["epochs"].get<int>();
    if (obj.contains("optimizer")) {
      const json& opt = obj["optimizer"];
      if (opt.contains("lr")) plan.optimizer.lr = opt["lr"].get<double>();
      if (opt.contains("momentum")) plan.optimizer.momentum = opt["momentum"].get<double>();
      if (opt.contains("batch_size")) plan.optimizer.batch_size = opt["batch_size"].get<int>();
      if (opt.contains("patience")) plan.optimizer.patience = opt["patience"].get<int>();
      if (opt.contains("clip_norm")) plan.optimizer.clip_norm = opt["clip_norm"].get<double>();
      if (opt.contains("lr_decay")) plan.optimizer.lr_decay = opt["lr_decay"].get<double>();
    }
    if (obj.contains("tau")) plan.tau = obj["tau"].get<double>();
    if (obj.contains("base_hidden_dim")) plan.base_hidden_dim = obj["base_hidden_dim"].get<int>();
    if (obj.contains("n_layers")) plan.n_layers = obj["n_layers"].get<int>();
    if (obj.contains("max_seq_len")) plan.max_seq_len = obj["max_seq_len"].get<int>();
    if (obj.contains("mask_prob")) plan.mask_prob = obj["mask_prob"].get<double>();
    if (obj.contains("lexicon_thresholds")) {
      const json& t = obj["lexicon_thresholds"];
      if (t.contains("t_in")) plan.lexicon_thresholds.t_in = t["t_in"].get<std::int64_t>();
      if (t.contains("t_out")) plan.lexicon_thresholds.t_out = t["t_out"].get<std::int64_t>();
      if (t.contains("t_general"))
        plan.lexicon_thresholds.t_general = t["t_general"].get<std::int64_t>();
    }
    if (obj.contains("cache_dir")) plan.cache_dir = obj["cache_dir"].get<std::string>();
    if (obj.contains("output_dir")) plan.output_dir = obj["output_dir"].get<std::string>();
    if (obj.contains("workers")) plan.workers = obj["workers"].get<int>();
    if (obj.contains("dynamics_eval_epochs"))
      plan.dynamics_eval_epochs = obj["dynamics_eval_epochs"].get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw ParseError("plan file '" + path + "': " + e.what());
  }
  plan.validate();
  return plan;
}

// --- data preparation ------------------------------------------------------------

PreparedData prepare_data(const ExperimentPlan& plan) {
  plan.validate();
  PreparedData data;
  data.corpus = plan.synthetic ? generate_synthetic_corpus(*plan.synthetic, plan.data_seed)
                               : load_corpus_jsonl(plan.corpus_path);
  if (!plan.domains.empty()) {
    for (const std::string& d : plan.domains) {
      if (!data.corpus.has_domain(d)) {
        throw ArgumentError("plan: domain '" + d + "' not present in corpus");
      }
    }
    data.corpus = filter_domains(data.corpus, plan.domains);
    data.domains = plan.domains;
  } else {
    data.domains = data.corpus.domains;
  }

  data.splits = split_corpus(data.corpus, plan.split_ratios, plan.data_seed);
  data.vocab = Vocab::build(data.splits.train, /*min_freq=*/2);
  data.lexicon =
      extract_lexicon(word_doc_frequencies(data.splits.train), plan.lexicon_thresholds);

  int max_pct = *std::max_element(plan.data_percents.begin(), plan.data_percents.end());
  std::size_t min_train = SIZE_MAX;
  for (const std::string& domain : data.domains) {
    std::vector<std::string> ids;
    for (const Example& ex : data.splits.train.examples) {
      if (ex.domain == domain) ids.push_back(ex.id);
    }
    if (ids.empty()) throw DataError("plan: domain '" + domain + "' has no training examples");
    min_train = std::min(min_train, ids.size());
    Rng rng(Rng::mix(Rng::mix(plan.data_seed, "subset"), domain));
    rng.shuffle(ids);
    data.train_order[domain] = std::move(ids);
  }

  data.base_train_per_domain =
      plan.base_train_per_domain > 0
          ? plan.base_train_per_domain
          : static_cast<int>(min_train * 100 / static_cast<std::size_t>(max_pct));
  if (data.base_train_per_domain < 1) {
    throw ArgumentError("plan: base training size per domain is below 1; "
                        "reduce data percents or enlarge the corpus");
  }
  for (int pct : plan.data_percents) {
    std::size_t need = static_cast<std::size_t>(
        std::llround(data.base_train_per_domain * pct / 100.0));
    if (need < 1) {
      throw ArgumentError("plan: data percent " + std::to_string(pct) +
                          " selects zero examples per domain");
    }
    if (need > min_train) {
      throw ArgumentError("plan: data percent " + std::to_string(pct) + " needs " +
                          std::to_string(need) + " examples per domain but only " +
                          std::to_string(min_train) + " are available");
    }
  }
  return data;
}

CellData cell_data(const ExperimentPlan& plan, const PreparedData& data,
                   int data_percent) {
  std::map<std::string, const Example*> by_id;
  for (const Example& ex : data.splits.train.examples) by_id[ex.id] = &ex;

  std::size_t take = static_cast<std::size_t>(
      std::llround(data.base_train_per_domain * data_percent / 100.0));

  CellData cell;
  std::vector<Example> union_examples;
  for (const std::string& domain : data.domains) {
    const std::vector<std::string>& order = data.train_order.at(domain);
    std::vector<Example> domain_examples;
    for (std::size_t i = 0; i < take && i < order.size(); ++i) {
      domain_examples.push_back(*by_id.at(order[i]));
    }
    union_examples.insert(union_examples.end(), domain_examples.begin(),
                          domain_examples.end());
    cell.control_train[domain] = Corpus::from_examples(std::move(domain_examples));
  }
  cell.e_train = Corpus::from_examples(std::move(union_examples));
  return cell;
}

ModelConfig cell_config(const ExperimentPlan& plan, const PreparedData& data,
                        int capacity_percent) {
  ModelConfig config;
  config.vocab_size = data.vocab.size();
  config.base_hidden_dim = plan.base_hidden_dim;
  config.capacity_percent = capacity_percent;
  config.n_layers = plan.n_layers;
  config.max_seq_len = plan.max_seq_len;
  config.mask_prob = plan.mask_prob;
  config.seed = plan.init_seed;
  config.validate();
  return config;
}

namespace {

TrainOptions train_options(const ExperimentPlan& plan) {
  TrainOptions opt;
  opt.lr = plan.optimizer.lr;
  opt.momentum = plan.optimizer.momentum;
  opt.batch_size = plan.optimizer.batch_size;
  opt.max_epochs = plan.epochs;
  opt.patience = plan.optimizer.patience;
  opt.clip_norm = plan.optimizer.clip_norm;
  opt.lr_decay = plan.optimizer.lr_decay;
  return opt;
}

std::string vocab_digest(const Vocab& vocab) {
  std::string joined;
  for (const std::string& w : vocab.word_list()) {
    joined += w;
    joined.push_back('\n');
  }
  return sha256_hex(joined);
}

}  // namespace

Model train_or_load(const ExperimentPlan& plan, const PreparedData& data,
                    const ModelConfig& config, const Corpus& train_corpus,
                    const Corpus& val_corpus, const std::string& model_id) {
  TrainOptions opt = train_options(plan);
  std::uint64_t resolved_train_seed =
      opt.train_seed != 0 ? opt.train_seed : Rng::mix(config.seed, "train");

  std::string cache_path;
  if (!plan.cache_dir.empty()) {
    json key;
    key["config"] = {{"vocab_size", config.vocab_size},
                     {"base_hidden_dim", config.base_hidden_dim},
                     {"capacity_percent", config.capacity_percent},
                     {"n_layers", config.n_layers},
                     {"max_seq_len", config.max_seq_len},
                     {"mask_prob", config.mask_prob},
                     {"seed", config.seed}};
    key["optimizer"] = {{"lr", opt.lr},
                        {"momentum", opt.momentum},
                        {"batch_size", opt.batch_size},
                        {"max_epochs", opt.max_epochs},
                        {"patience", opt.patience},
                        {"clip_norm", opt.clip_norm},
                        {"lr_decay", opt.lr_decay},
                        {"train_seed", resolved_train_seed}};
    key["train_ids"] = sorted_ids(train_corpus);
    key["val_ids"] = sorted_ids(val_corpus);
    key["vocab"] = vocab_digest(data.vocab);
    std::string digest = sha256_hex(key.dump());

    std::filesystem::create_directories(plan.cache_dir);
    cache_path = (std::filesystem::path(plan.cache_dir) / ("tmlm-" + digest + ".ckpt")).string();
    if (std::filesystem::exists(cache_path)) {
      Model model = load_checkpoint(cache_path);
      if (!(model.config == config)) {
        throw DataError("cache file '" + cache_path + "' holds a different config");
      }
      model.model_id = model_id;
      return model;
    }
  }

  Model model = init_model(config, data.vocab, model_id);
  train(model, train_corpus, val_corpus, opt);
  if (!cache_path.empty()) save_checkpoint(model, cache_path);
  return model;
}

// --- parallel helper ---------------------------------------------------------------

void parallel_for(std::size_t n, int workers,
                  const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  std::size_t pool = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), n);
  if (pool <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> threads;
  threads.reserve(pool);
  for (std::size_t t = 0; t < pool; ++t) {
    threads.emplace_back([&]() {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          return;
        }
      }
    });
  }
  for (std::thread& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

// --- training dynamics ----------------------------------------------------------------

DynamicsTable run_training_dynamics(const ExperimentPlan& plan,
                                    PreparedData* prepared_out) {
  PreparedData data = prepare_data(plan);
  int capacity = plan.capacity_percents.front();
  int pct = plan.data_percents.front();
  CellData cell = cell_data(plan, data, pct);
  ModelConfig config = cell_config(plan, data, capacity);

  // Shared-data invariant: the union model's domain-i examples are exactly
  // the control model's examples.
  for (const std::string& domain : data.domains) {
    Corpus e_side = filter_domain(cell.e_train, domain);
    if (sorted_ids(e_side) != sorted_ids(cell.control_train.at(domain))) {
      throw Error("internal: shared-data invariant violated for domain '" + domain + "'");
    }
  }

  std::vector<int> eval_epochs = plan.dynamics_eval_epochs;
  if (eval_epochs.empty()) {
    for (int e = 0; e <= plan.epochs; ++e) eval_epochs.push_back(e);
  } else {
    std::sort(eval_epochs.begin(), eval_epochs.end());
    eval_epochs.erase(std::unique(eval_epochs.begin(), eval_epochs.end()),
                      eval_epochs.end());
  }
  std::set<int> eval_set(eval_epochs.begin(), eval_epochs.end());

  // Models share the initialization seed; ids differ only for reporting.
  Model e_model = init_model(config, data.vocab, "E");
  std::vector<Model> controls;
  controls.reserve(data.domains.size());
  for (const std::string& domain : data.domains) {
    controls.push_back(init_model(config, data.vocab, "C_" + domain));
  }

  TrainOptions opt = train_options(plan);
  opt.patience = plan.epochs + 1;  // dynamics runs every epoch; no early stop
  opt.max_epochs = plan.epochs;

  std::vector<Corpus> test_sets;
  for (const std::string& domain : data.domains) {
    test_sets.push_back(filter_domain(data.splits.test, domain));
  }

  Trainer e_trainer(e_model, cell.e_train, data.splits.val, opt);
  std::vector<Trainer> control_trainers;
  control_trainers.reserve(data.domains.size());
  for (std::size_t d = 0; d < data.domains.size(); ++d) {
    control_trainers.emplace_back(controls[d], cell.control_train.at(data.domains[d]),
                                  filter_domain(data.splits.val, data.domains[d]), opt);
  }

  std::set<int> all_layers;
  for (int l = 0; l <= config.n_layers; ++l) all_layers.insert(l);

  DynamicsTable table;
  auto evaluate = [&](int epoch) {
    std::vector<std::vector<double>> per_domain(data.domains.size());
    parallel_for(data.domains.size(), plan.workers, [&](std::size_t d) {
      std::vector<RepSet> e_dumps = dump_representations(e_model, test_sets[d], all_layers);
      std::vector<RepSet> c_dumps =
          dump_representations(controls[d], test_sets[d], all_layers);
      std::vector<double> scores;
      scores.reserve(e_dumps.size());
      for (std::size_t li = 0; li < e_dumps.size(); ++li) {
        scores.push_back(svcca_score(e_dumps[li], c_dumps[li], plan.tau).rho_mean);
      }
      per_domain[d] = std::move(scores);
    });
    for (int layer = 0; layer <= config.n_layers; ++layer) {
      for (std::size_t d = 0; d < data.domains.size(); ++d) {
        table.entries.push_back({epoch, layer, data.domains[d],
                                 per_domain[d][static_cast<std::size_t>(layer)]});
      }
    }
  };

  if (eval_set.count(0)) evaluate(0);
  for (int epoch = 1; epoch <= plan.epochs; ++epoch) {
    parallel_for(data.domains.size() + 1, plan.workers, [&](std::size_t job) {
      if (job == 0) {
        e_trainer.run_epoch();
      } else {
        control_trainers[job - 1].run_epoch();
      }
    });
    int control_steps = 0;
    for (Trainer& t : control_trainers) control_steps += t.steps_last_epoch();
    if (e_trainer.steps_last_epoch() != control_steps) {
      throw Error("internal: epoch alignment violated: union model ran " +
                  std::to_string(e_trainer.steps_last_epoch()) +
                  " steps, controls ran " + std::to_string(control_steps));
    }
    if (eval_set.count(epoch)) evaluate(epoch);
  }

  if (prepared_out) *prepared_out = std::move(data);
  return table;
}

// --- random baseline --------------------------------------------------------------------

BaselineReport run_random_baseline(const ModelConfig& config,
                                   const std::vector<std::uint64_t>& seeds,
                                   const Corpus& test_corpus, double tau,
                                   int workers, const Vocab* shared_vocab) {
  if (seeds.size() < 2) {
    throw ArgumentError("random baseline needs at least 2 models");
  }
  {
    std::set<std::uint64_t> distinct(seeds.begin(), seeds.end());
    if (distinct.size() != seeds.size()) {
      warn("random baseline: seeds are not distinct; identical models will "
           "compare at exactly 1");
    }
  }
  Vocab vocab = shared_vocab ? *shared_vocab : Vocab::build(test_corpus, /*min_freq=*/2);
  ModelConfig cfg = config;
  cfg.vocab_size = vocab.size();

  std::set<int> layers = {0, cfg.n_layers};
  std::vector<std::vector<RepSet>> dumps(seeds.size());
  std::vector<std::string> names(seeds.size());
  parallel_for(seeds.size(), workers, [&](std::size_t i) {
    ModelConfig mc = cfg;
    mc.seed = seeds[i];
    std::string pad = std::to_string(i);
    while (pad.size() < 3) pad.insert(pad.begin(), '0');
    names[i] = "rand_" + pad;
    Model model = init_model(mc, vocab, names[i]);
    dumps[i] = dump_representations(model, test_corpus, layers);
  });

  BaselineReport report;
  report.n_models = seeds.size();
  std::vector<std::pair<std::size_t, std::size_t>> index_pairs;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    for (std::size_t j = i + 1; j < seeds.size(); ++j) index_pairs.emplace_back(i, j);
  }
  report.pair_count = index_pairs.size();
  report.pairs.resize(index_pairs.size());
  parallel_for(index_pairs.size(), workers, [&](std::size_t p) {
    auto [i, j] = index_pairs[p];
    BaselinePair pair;
    pair.model_a = names[i];
    pair.model_b = names[j];
    pair.first_layer_svcca = svcca_score(dumps[i][0], dumps[j][0], tau).rho_mean;
    pair.last_layer_svcca = svcca_score(dumps[i][1], dumps[j][1], tau).rho_mean;
    report.pairs[p] = std::move(pair);
  });

  double mean = 0.0;
  for (const BaselinePair& pair : report.pairs) {
    mean += pair.first_layer_svcca - pair.last_layer_svcca;
  }
  mean /= static_cast<double>(report.pairs.size());
  double var = 0.0;
  for (const BaselinePair& pair : report.pairs) {
    double d = pair.first_layer_svcca - pair.last_layer_svcca - mean;
    var += d * d;
  }
  var /= static_cast<double>(report.pairs.size());
  report.mean_diff = mean;
  report.std_diff = std::sqrt(std::max(var, 0.0));
  return report;
}

// --- sweep ---------------------------------------------------------------------------------

SweepGrid run_sweep(const ExperimentPlan& plan, PreparedData* prepared_out) {
  PreparedData data = prepare_data(plan);

  struct TrainJob {
    int capacity = 0;
    int data_percent = 0;
    std::string domain;  // empty -> the union (multi-domain) model
  };
  std::vector<TrainJob> jobs;
  for (int cap : plan.capacity_percents) {
    for (int pct : plan.data_percents) {
      jobs.push_back({cap, pct, ""});
      for (const std::string& domain : data.domains) jobs.push_back({cap, pct, domain});
    }
  }

  std::map<int, CellData> cells;
  for (int pct : plan.data_percents) {
    cells.emplace(pct, cell_data(plan, data, pct));
  }

  // Shared-data invariant before any training.
  for (const auto& [pct, cell] : cells) {
    for (const std::string& domain : data.domains) {
      if (sorted_ids(filter_domain(cell.e_train, domain)) !=
          sorted_ids(cell.control_train.at(domain))) {
        throw Error("internal: shared-data invariant violated for domain '" +
                    domain + "'");
      }
    }
  }

  std::map<std::string, Model> trained;
  std::mutex trained_mutex;
  auto job_name = [](const TrainJob& job) {
    std::string model = job.domain.empty() ? std::string("E") : "C_" + job.domain;
    return model + "@m" + std::to_string(job.capacity) + "_d" +
           std::to_string(job.data_percent);
  };
  parallel_for(jobs.size(), plan.workers, [&](std::size_t idx) {
    const TrainJob& job = jobs[idx];
    const CellData& cell = cells.at(job.data_percent);
    ModelConfig config = cell_config(plan, data, job.capacity);
    Model model =
        job.domain.empty()
            ? train_or_load(plan, data, config, cell.e_train, data.splits.val, "E")
            : train_or_load(plan, data, config, cell.control_train.at(job.domain),
                            filter_domain(data.splits.val, job.domain),
                            "C_" + job.domain);
    std::lock_guard<std::mutex> lock(trained_mutex);
    trained.emplace(job_name(job), std::move(model));
  });

  std::map<std::string, Corpus> test_sets;
  for (const std::string& domain : data.domains) {
    test_sets.emplace(domain, filter_domain(data.splits.test, domain));
  }

  SweepGrid grid;
  const std::vector<std::string> subsets = {"all", "general", "domain_specific"};
  for (int cap : plan.capacity_percents) {
    for (int pct : plan.data_percents) {
      std::set<int> layers = {0, plan.n_layers};
      for (const std::string& domain : data.domains) {
        const Model& e_model =
            trained.at("E@m" + std::to_string(cap) + "_d" + std::to_string(pct));
        const Model& c_model = trained.at("C_" + domain + "@m" + std::to_string(cap) +
                                          "_d" + std::to_string(pct));
        std::vector<RepSet> e_dumps =
            dump_representations(e_model, test_sets.at(domain), layers);
        std::vector<RepSet> c_dumps =
            dump_representations(c_model, test_sets.at(domain), layers);
        for (std::size_t li = 0; li < e_dumps.size(); ++li) {
          int layer = e_dumps[li].layer;
          for (const std::string& subset : subsets) {
            SweepEntry entry;
            entry.capacity_percent = cap;
            entry.data_percent = pct;
            entry.domain = domain;
            entry.layer = layer;
            entry.subset = subset;
            if (subset == "all") {
              entry.svcca = svcca_score(e_dumps[li], c_dumps[li], plan.tau).rho_mean;
            } else {
              const std::set<std::string>& words =
                  subset == "general" ? data.lexicon.general
                                      : data.lexicon.domain_specific.at(domain);
              AttributeMask mask = token_mask(e_dumps[li], data.vocab, words, subset);
              std::size_t selected = mask.count_selected();
              if (words.empty() || selected < 3) {
                warn("sweep: subset '" + subset + "' for domain '" + domain +
                     "' selects " + std::to_string(selected) +
                     " rows; emitting null");
                entry.svcca = std::nullopt;
              } else {
                entry.svcca =
                    svcca_subset(e_dumps[li], c_dumps[li], mask, plan.tau).rho_mean;
              }
            }
            grid.entries.push_back(std::move(entry));
          }
        }
      }
    }
  }
  if (prepared_out) *prepared_out = std::move(data);
  return grid;
}

// --- behavioral agreement ---------------------------------------------------------------

namespace {

double overlap_at_k(const std::vector<ScoredWord>& a,
                    const std::vector<ScoredWord>& b, int k) {
  std::set<std::string> sa, sb;
  for (const ScoredWord& w : a) sa.insert(w.word);
  for (const ScoredWord& w : b) sb.insert(w.word);
  std::size_t common = 0;
  for (const std::string& w : sa) {
    if (sb.count(w)) ++common;
  }
  return static_cast<double>(common) / static_cast<double>(k);
}

struct BucketAccumulator {
  std::size_t count = 0;
  double sum = 0.0;
  void add(double v) {
    ++count;
    sum += v;
  }
  AgreementBucket finish() const {
    return {count, count > 0 ? sum / static_cast<double>(count) : 0.0};
  }
};

}  // namespace

AgreementReport run_prediction_agreement(
    const Model& e_model, const Model& c_model, const Lexicon& lexicon, int k,
    const std::vector<Probe>& probes, const std::optional<std::string>& domain) {
  if (k < 1) throw ArgumentError("agreement: k must be >= 1");

  std::set<std::string> specific_words;
  if (domain) {
    auto it = lexicon.domain_specific.find(*domain);
    if (it == lexicon.domain_specific.end()) {
      throw ArgumentError("agreement: lexicon has no domain '" + *domain + "'");
    }
    specific_words = it->second;
  } else {
    for (const auto& [d, words] : lexicon.domain_specific) {
      specific_words.insert(words.begin(), words.end());
    }
  }

  AgreementReport report;
  report.k = k;
  BucketAccumulator emb_general, emb_specific, pred_general, pred_specific;
  std::size_t skipped = 0;

  auto knn_overlap = [&](const std::string& word) -> std::optional<double> {
    if (!e_model.vocab.contains(word) || !c_model.vocab.contains(word)) {
      ++skipped;
      return std::nullopt;
    }
    return overlap_at_k(knn_embedding(e_model, word, k),
                        knn_embedding(c_model, word, k), k);
  };

  for (const std::string& word : lexicon.general) {
    if (auto overlap = knn_overlap(word)) emb_general.add(*overlap);
  }
  for (const std::string& word : specific_words) {
    if (auto overlap = knn_overlap(word)) emb_specific.add(*overlap);
  }

  for (const Probe& probe : probes) {
    bool is_general = lexicon.is_general(probe.target);
    bool is_specific = specific_words.count(probe.target) > 0;
    if (!is_general && !is_specific) {
      ++skipped;
      continue;
    }
    if (!e_model.vocab.contains(probe.target) ||
        !c_model.vocab.contains(probe.target)) {
      ++skipped;
      continue;
    }
    double overlap = overlap_at_k(predict_masked(e_model, probe.tokens, k),
                                  predict_masked(c_model, probe.tokens, k), k);
    if (is_general) {
      pred_general.add(overlap);
    } else {
      pred_specific.add(overlap);
    }
  }

  report.embedding_general = emb_general.finish();
  report.embedding_specific = emb_specific.finish();
  report.prediction_general = pred_general.finish();
  report.prediction_specific = pred_specific.finish();
  report.skipped = skipped;
  return report;
}

std::vector<Probe> make_probes(const Corpus& corpus, const Lexicon& lexicon,
                               const std::optional<std::string>& domain,
                               std::size_t max_per_category) {
  std::set<std::string> specific_words;
  if (domain) {
    auto it = lexicon.domain_specific.find(*domain);
    if (it != lexicon.domain_specific.end()) specific_words = it->second;
  } else {
    for (const auto& [d, words] : lexicon.domain_specific) {
      specific_words.insert(words.begin(), words.end());
    }
  }

  std::vector<Probe> probes;
  std::size_t n_general = 0, n_specific = 0;
  for (const Example& ex : corpus.examples) {
    if (n_general >= max_per_category && n_specific >= max_per_category) break;
    bool took_general = false, took_specific = false;
    for (std::size_t pos = 0; pos < ex.tokens.size(); ++pos) {
      const std::string& word = ex.tokens[pos];
      bool general = !took_general && n_general < max_per_category &&
                     lexicon.is_general(word);
      bool specific = !took_specific && n_specific < max_per_category &&
                      specific_words.count(word) > 0;
      if (!general && !specific) continue;
      Probe probe;
      probe.tokens = ex.tokens;
      probe.tokens[pos] = kMaskToken;
      probe.target = word;
      probes.push_back(std::move(probe));
      if (general) {
        took_general = true;
        ++n_general;
      } else {
        took_specific = true;
        ++n_specific;
      }
    }
  }
  return probes;
}

// --- PCA views ------------------------------------------------------------------------------

std::vector<PcaViewRow> emit_pca_views(const RepSet& e_dump,
                                       const RepSet& c_dump,
                                       const Lexicon& lexicon,
                                       const Vocab& vocab) {
  require_aligned(e_dump, c_dump);
  bool lexicon_empty = lexicon.general.empty();
  for (const auto& [d, words] : lexicon.domain_specific) {
    if (!words.empty()) lexicon_empty = false;
  }
  if (lexicon_empty) throw ArgumentError("pca view: lexicon has no words");

  std::vector<std::size_t> selected;
  std::vector<std::string> categories;
  std::vector<std::string> tokens;
  for (std::size_t i = 0; i < e_dump.rows.size(); ++i) {
    const std::string& word = vocab.word(e_dump.rows[i].token_id);
    if (lexicon.is_general(word)) {
      selected.push_back(i);
      categories.push_back("general");
      tokens.push_back(word);
    } else if (lexicon.is_specific_to_any(word)) {
      selected.push_back(i);
      categories.push_back("domain_specific");
      tokens.push_back(word);
    }
  }
  if (selected.size() < 3) {
    throw InsufficientDataError("pca view: only " + std::to_string(selected.size()) +
                                " rows match the lexicon (need >= 3)");
  }

  auto project = [&](const RepSet& dump) {
    Matrix sub(selected.size(), dump.matrix.cols());
    for (std::size_t i = 0; i < selected.size(); ++i) {
      for (std::size_t j = 0; j < dump.matrix.cols(); ++j) {
        sub(i, j) = dump.matrix(selected[i], j);
      }
    }
    return pca_project(sub, 2);
  };

  std::vector<PcaViewRow> rows;
  for (const RepSet* dump : {&e_dump, &c_dump}) {
    PcaProjection proj = project(*dump);
    for (std::size_t i = 0; i < selected.size(); ++i) {
      rows.push_back({dump->model_id, categories[i], tokens[i],
                      proj.coords(i, 0), proj.coords(i, 1)});
    }
  }
  return rows;
}

// --- CSV emission ------------------------------------------------------------------------------

void write_dynamics_csv(const DynamicsTable& table, const std::string& path) {
  atomic_write_file(path, [&](std::ostream& out) {
    out << "epoch,layer,domain,svcca\n";
    for (const DynamicsEntry& e : table.entries) {
      out << e.epoch << ',' << e.layer << ',' << e.domain << ','
          << format_double(e.svcca) << '\n';
    }
  });
}

void write_sweep_csv(const SweepGrid& grid, const std::string& path) {
  atomic_write_file(path, [&](std::ostream& out) {
    out << "capacity,data,domain,layer,subset,svcca\n";
    for (const SweepEntry& e : grid.entries) {
      out << e.capacity_percent << ',' << e.data_percent << ',' << e.domain << ','
          << e.layer << ',' << e.subset << ','
          << (e.svcca ? format_double(*e.svcca) : "NA") << '\n';
    }
  });
}

void write_baseline_csv(const BaselineReport& report, const std::string& path) {
  atomic_write_file(path, [&](std::ostream& out) {
    out << "model_a,model_b,first,last,diff\n";
    for (const BaselinePair& p : report.pairs) {
      out << p.model_a << ',' << p.model_b << ','
          << format_double(p.first_layer_svcca) << ','
          << format_double(p.last_layer_svcca) << ','
          << format_double(p.first_layer_svcca - p.last_layer_svcca) << '\n';
    }
  });
}

void write_pca_csv(const std::vector<PcaViewRow>& rows, const std::string& path) {
  atomic_write_file(path, [&](std::ostream& out) {
    out << "model,category,token,x,y\n";
    for (const PcaViewRow& row : rows) {
      out << row.model << ',' << row.category << ',' << row.token << ','
          << format_double(row.x) << ',' << format_double(row.y) << '\n';
    }
  });
}

void write_agreement_json(const AgreementReport& report, const std::string& path) {
  auto bucket = [](const AgreementBucket& b) {
    return json{{"count", b.count}, {"mean_overlap", b.mean_overlap}};
  };
  json obj;
  obj["k"] = report.k;
  obj["embedding_knn"] = {{"general", bucket(report.embedding_general)},
                          {"domain_specific", bucket(report.embedding_specific)}};
  obj["masked_prediction"] = {{"general", bucket(report.prediction_general)},
                              {"domain_specific", bucket(report.prediction_specific)}};
  obj["skipped"] = report.skipped;
  atomic_write_text(path, obj.dump(2) + "\n");
}

AttributeMask token_mask(const RepSet& reps, const Vocab& vocab,
                         const std::set<std::string>& words,
                         const std::string& attribute_id) {
  AttributeMask mask;
  mask.attribute_id = attribute_id;
  mask.bits.reserve(reps.rows.size());
  for (const RepRow& row : reps.rows) {
    mask.bits.push_back(words.count(vocab.word(row.token_id)) ? 1 : 0);
  }
  return mask;
}

}  // namespace subpop
