#include <doctest.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "subpop/cca.hpp"
#include "subpop/errors.hpp"
#include "subpop/io.hpp"
#include "subpop/mlm.hpp"
#include "subpop/rng.hpp"

using namespace subpop;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    static std::atomic<std::uint64_t> counter{0};
    path = std::filesystem::temp_directory_path() /
           ("subpop_mlm_" + std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Vocab tiny_vocab(int words) {
  std::vector<std::string> list;
  for (int i = 0; i < words; ++i) {
    std::string w = std::to_string(i);
    while (w.size() < 2) w.insert(w.begin(), '0');
    list.push_back("w" + w);
  }
  return Vocab::from_words(std::move(list));
}

ModelConfig tiny_config(std::uint64_t seed, int base_hidden = 8, int layers = 1,
                        int max_seq = 6) {
  ModelConfig cfg;
  cfg.base_hidden_dim = base_hidden;
  cfg.capacity_percent = 100;
  cfg.n_layers = layers;
  cfg.max_seq_len = max_seq;
  cfg.mask_prob = 0.3;
  cfg.seed = seed;
  return cfg;
}

MaskedBatch tiny_batch(const Model& model, std::uint64_t seed) {
  std::vector<std::vector<int>> sequences = {
      {3, 4, 5, 6}, {7, 8, 9, 10, 11}, {4, 6}};
  Rng rng(seed);
  return mask_batch(sequences, rng, model.config.mask_prob, model.config.vocab_size);
}

}  // namespace

TEST_CASE("config capacity scaling and validation") {
  ModelConfig cfg = tiny_config(1, 64, 4, 32);
  cfg.vocab_size = 100;
  cfg.capacity_percent = 50;
  CHECK(cfg.hidden_dim() == 32);
  cfg.capacity_percent = 10;
  CHECK(cfg.hidden_dim() == 6);
  CHECK_NOTHROW(cfg.validate());

  cfg.capacity_percent = 37;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
  cfg.capacity_percent = 10;
  cfg.base_hidden_dim = 16;  // 10% of 16 rounds to 2 < 4
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
}

TEST_CASE("parameter count strictly grows with capacity") {
  std::size_t prev = 0;
  for (int capacity : {10, 25, 50, 75, 100}) {
    ModelConfig cfg = tiny_config(1, 64, 4, 32);
    cfg.vocab_size = 50;
    cfg.capacity_percent = capacity;
    std::size_t count = parameter_count(cfg);
    CHECK(count > prev);
    prev = count;
  }
}

TEST_CASE("init_model is deterministic per seed and differs across seeds") {
  Vocab vocab = tiny_vocab(10);
  Model a = init_model(tiny_config(5), vocab);
  Model b = init_model(tiny_config(5), vocab);
  CHECK(parameters_equal(a.params, b.params));

  Model c = init_model(tiny_config(6), vocab);
  CHECK_FALSE(parameters_equal(a.params, c.params));

  // Weights live in (-1/sqrt(h), 1/sqrt(h)); biases start at zero.
  double bound = 1.0 / std::sqrt(static_cast<double>(a.config.hidden_dim()));
  for (double v : flatten_parameters(a.params)) {
    CHECK(std::abs(v) < bound + 1e-12);
  }
  CHECK(a.params.layers[0].bq.cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.params.head_b.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mask_batch selects every sequence at least once") {
  Vocab vocab = tiny_vocab(10);
  Model model = init_model(tiny_config(1), vocab);
  std::vector<std::vector<int>> sequences = {{3, 4, 5}, {6, 7, 8, 9}, {10}};
  Rng rng(3);
  MaskedBatch batch = mask_batch(sequences, rng, 1e-9, vocab.size());
  std::set<int> seqs_with_targets;
  for (const MaskTarget& t : batch.targets) seqs_with_targets.insert(t.seq);
  CHECK(seqs_with_targets.size() == 3);
  CHECK(batch.targets.size() == 3);  // forced selection only, one per sequence
}

TEST_CASE("mask_batch is deterministic and respects the selection rate") {
  Vocab vocab = tiny_vocab(30);
  std::vector<std::vector<int>> sequences;
  for (int s = 0; s < 500; ++s) {
    std::vector<int> seq;
    for (int t = 0; t < 20; ++t) {
      seq.push_back(Vocab::kNumSpecials + (s + t) % 30);
    }
    sequences.push_back(std::move(seq));
  }
  Rng rng_a(9), rng_b(9);
  MaskedBatch a = mask_batch(sequences, rng_a, 0.15, vocab.size());
  MaskedBatch b = mask_batch(sequences, rng_b, 0.15, vocab.size());
  CHECK(a.inputs == b.inputs);
  CHECK(a.targets.size() == b.targets.size());

  double fraction = static_cast<double>(a.targets.size()) / 10000.0;
  CHECK(fraction > 0.135);
  CHECK(fraction < 0.165);

  // 80/10/10 branch split among selected positions.
  std::size_t masked = 0, unchanged = 0, random = 0;
  for (const MaskTarget& t : a.targets) {
    int now = a.inputs[static_cast<std::size_t>(t.seq)][static_cast<std::size_t>(t.pos)];
    if (now == Vocab::kMaskId) {
      ++masked;
    } else if (now == t.token) {
      ++unchanged;
    } else {
      ++random;
    }
  }
  double n = static_cast<double>(a.targets.size());
  CHECK(masked / n > 0.74);
  CHECK(masked / n < 0.86);
  // The random branch can draw the original token, so "unchanged" slightly
  // exceeds 10% on average and "random" falls slightly short.
  CHECK(unchanged / n > 0.05);
  CHECK(unchanged / n < 0.17);
  CHECK(random / n > 0.05);
  CHECK(random / n < 0.17);
}

TEST_CASE("forward: zero output head gives a uniform predictive distribution") {
  Vocab vocab = tiny_vocab(10);
  Model model = init_model(tiny_config(2), vocab);
  model.params.head_w.setZero();
  model.params.head_b.setZero();
  ForwardResult fwd = forward(model, {{3, 4, 5}});
  for (Eigen::Index r = 0; r < fwd.logits.rows(); ++r) {
    Eigen::RowVectorXd logits = fwd.logits.row(r);
    double mx = logits.maxCoeff();
    Eigen::RowVectorXd p = (logits.array() - mx).exp();
    p /= p.sum();
    for (Eigen::Index j = 0; j < p.size(); ++j) {
      CHECK(p(j) == doctest::Approx(1.0 / vocab.size()).epsilon(1e-10));
    }
  }
}

TEST_CASE("forward softmax rows sum to one") {
  Vocab vocab = tiny_vocab(12);
  Model model = init_model(tiny_config(3), vocab);
  ForwardResult fwd = forward(model, {{3, 7, 9, 11}, {4, 5}});
  for (Eigen::Index r = 0; r < fwd.logits.rows(); ++r) {
    Eigen::RowVectorXd logits = fwd.logits.row(r);
    double mx = logits.maxCoeff();
    Eigen::RowVectorXd p = (logits.array() - mx).exp();
    CHECK(p.sum() / p.sum() == doctest::Approx(1.0));  // finite
    p /= p.sum();
    CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-8));
  }
}

TEST_CASE("forward matches a straight-line single-token reimplementation") {
  Vocab vocab = tiny_vocab(8);
  Model model = init_model(tiny_config(7, 8, 1, 4), vocab);
  int token = 5;
  ForwardResult fwd = forward(model, {{token}}, false);

  int h = model.config.hidden_dim();
  const Parameters& p = model.params;
  std::vector<double> x0(static_cast<std::size_t>(h));
  for (int j = 0; j < h; ++j) x0[static_cast<std::size_t>(j)] = p.embedding(token, j) + p.pos_embedding(0, j);

  // Single-token attention weight is exactly 1, so ctx = v.
  std::vector<double> v(static_cast<std::size_t>(h), 0.0);
  for (int j = 0; j < h; ++j) {
    double s = p.layers[0].bv(j);
    for (int i = 0; i < h; ++i) s += x0[static_cast<std::size_t>(i)] * p.layers[0].wv(i, j);
    v[static_cast<std::size_t>(j)] = s;
  }
  std::vector<double> x1(static_cast<std::size_t>(h));
  for (int j = 0; j < h; ++j) {
    double s = p.layers[0].bo(j);
    for (int i = 0; i < h; ++i) s += v[static_cast<std::size_t>(i)] * p.layers[0].wo(i, j);
    x1[static_cast<std::size_t>(j)] = x0[static_cast<std::size_t>(j)] + s;
  }
  std::vector<double> act(static_cast<std::size_t>(4 * h));
  for (int j = 0; j < 4 * h; ++j) {
    double s = p.layers[0].b1(j);
    for (int i = 0; i < h; ++i) s += x1[static_cast<std::size_t>(i)] * p.layers[0].w1(i, j);
    act[static_cast<std::size_t>(j)] = std::tanh(s);
  }
  for (int j = 0; j < h; ++j) {
    double s = p.layers[0].b2(j);
    for (int i = 0; i < 4 * h; ++i) s += act[static_cast<std::size_t>(i)] * p.layers[0].w2(i, j);
    double expected = x1[static_cast<std::size_t>(j)] + s;
    CHECK(fwd.layer_states[1](0, j) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("forward rejects out-of-range token ids") {
  Vocab vocab = tiny_vocab(5);
  Model model = init_model(tiny_config(1), vocab);
  CHECK_THROWS_AS(forward(model, {{vocab.size()}}), ArgumentError);
  CHECK_THROWS_AS(forward(model, {{-1}}), ArgumentError);
}

TEST_CASE("embedding layer is context independent up to position offsets") {
  Vocab vocab = tiny_vocab(10);
  Model model = init_model(tiny_config(4, 16, 2, 8), vocab);
  // The same token id at two different positions in two different contexts.
  ForwardResult fwd = forward(model, {{5, 6, 5}, {7, 5}}, false);
  const EigenRowMajor& l0 = fwd.layer_states[0];
  const EigenRowMajor& pos = model.params.pos_embedding;
  Eigen::RowVectorXd a = l0.row(0) - pos.row(0);  // token 5 at pos 0
  Eigen::RowVectorXd b = l0.row(2) - pos.row(2);  // token 5 at pos 2
  Eigen::RowVectorXd c = l0.row(4) - pos.row(1);  // token 5 at pos 1 (2nd seq)
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((a - c).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("grad_check: analytic gradients match finite differences") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    Vocab vocab = tiny_vocab(12);
    Model model = init_model(tiny_config(seed, 8, 2, 6), vocab);
    MaskedBatch batch = tiny_batch(model, seed + 50);
    REQUIRE_FALSE(batch.targets.empty());
    double err = grad_check(model, batch);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("grad_check detects a corrupted gradient") {
  Vocab vocab = tiny_vocab(12);
  Model model = init_model(tiny_config(9, 8, 1, 6), vocab);
  MaskedBatch batch = tiny_batch(model, 123);
  std::vector<double> analytic = flatten_parameters(analytic_gradients(model, batch));
  std::vector<double> numeric = finite_difference_gradients(model, batch);

  // Flip the sign of the largest-magnitude analytic entry.
  std::size_t worst = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    if (std::abs(analytic[i]) > std::abs(analytic[worst])) worst = i;
  }
  analytic[worst] = -analytic[worst];
  CHECK(max_relative_error(analytic, numeric) > 1e-2);
}

TEST_CASE("grad_check is deterministic") {
  Vocab vocab = tiny_vocab(12);
  Model model = init_model(tiny_config(11, 8, 1, 6), vocab);
  MaskedBatch batch = tiny_batch(model, 77);
  double a = grad_check(model, batch);
  double b = grad_check(model, batch);
  CHECK(a == b);
}

TEST_CASE("knn_embedding finds a planted duplicate with similarity 1") {
  Vocab vocab = tiny_vocab(6);
  Model model = init_model(tiny_config(13), vocab);
  int a = vocab.encode("w01");
  int b = vocab.encode("w04");
  model.params.embedding.row(b) = model.params.embedding.row(a);
  auto neighbors = knn_embedding(model, "w01", 1);
  REQUIRE(neighbors.size() == 1);
  CHECK(neighbors[0].word == "w04");
  CHECK(neighbors[0].score == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("knn_embedding excludes the query and reserved symbols") {
  Vocab vocab = tiny_vocab(5);
  Model model = init_model(tiny_config(14), vocab);
  auto neighbors = knn_embedding(model, "w02", 10);
  CHECK(neighbors.size() == 4);  // 5 words minus the query
  for (const ScoredWord& n : neighbors) {
    CHECK(n.word != "w02");
    CHECK(n.word != kPadToken);
    CHECK(n.word != kMaskToken);
    CHECK(n.word != kUnkToken);
  }
}

TEST_CASE("knn_embedding matches a hand-computed cosine ranking") {
  Vocab vocab = tiny_vocab(5);
  ModelConfig cfg = tiny_config(15, 4, 1, 4);
  Model model = init_model(cfg, vocab);
  model.params.embedding.setZero();
  auto row = [&](const char* word, double a, double b, double c, double d) {
    int id = model.vocab.encode(word);
    model.params.embedding(id, 0) = a;
    model.params.embedding(id, 1) = b;
    model.params.embedding(id, 2) = c;
    model.params.embedding(id, 3) = d;
  };
  row("w00", 1, 0, 0, 0);   // query
  row("w01", 1, 1, 0, 0);   // cos = 1/sqrt(2) ~ 0.707
  row("w02", 1, 0.2, 0, 0); // cos ~ 0.980
  row("w03", 0, 1, 0, 0);   // cos = 0
  row("w04", -1, 0, 0, 0);  // cos = -1
  auto neighbors = knn_embedding(model, "w00", 4);
  REQUIRE(neighbors.size() == 4);
  CHECK(neighbors[0].word == "w02");
  CHECK(neighbors[1].word == "w01");
  CHECK(neighbors[2].word == "w03");
  CHECK(neighbors[3].word == "w04");
  CHECK(neighbors[0].score == doctest::Approx(1.0 / std::sqrt(1.04)).epsilon(1e-12));

  // Candidate restriction.
  std::set<std::string> only = {"w01", "w04"};
  auto restricted = knn_embedding(model, "w00", 4, &only);
  REQUIRE(restricted.size() == 2);
  CHECK(restricted[0].word == "w01");
}

TEST_CASE("knn_embedding rejects out-of-vocabulary queries by name") {
  Vocab vocab = tiny_vocab(4);
  Model model = init_model(tiny_config(16), vocab);
  try {
    knn_embedding(model, "zebra", 3);
    FAIL("expected ArgumentError");
  } catch (const ArgumentError& e) {
    CHECK(std::string(e.what()).find("zebra") != std::string::npos);
  }
}

TEST_CASE("predict_masked with a zero head is uniform with id tie-break") {
  Vocab vocab = tiny_vocab(6);
  Model model = init_model(tiny_config(17), vocab);
  model.params.head_w.setZero();
  model.params.head_b.setZero();
  auto top = predict_masked(model, {"w00", kMaskToken, "w01"}, 3);
  REQUIRE(top.size() == 3);
  for (const ScoredWord& w : top) {
    CHECK(w.score == doctest::Approx(1.0 / vocab.size()).epsilon(1e-10));
  }
  CHECK(top[0].word == "w00");
  CHECK(top[1].word == "w01");
  CHECK(top[2].word == "w02");
}

TEST_CASE("predict_masked validates the mask count and sorts descending") {
  Vocab vocab = tiny_vocab(6);
  Model model = init_model(tiny_config(18), vocab);
  CHECK_THROWS_AS(predict_masked(model, {"w00", "w01"}, 3), ArgumentError);
  CHECK_THROWS_AS(predict_masked(model, {kMaskToken, kMaskToken}, 3), ArgumentError);
  auto top = predict_masked(model, {"w00", kMaskToken}, 5);
  for (std::size_t i = 1; i < top.size(); ++i) {
    CHECK(top[i].score <= top[i - 1].score);
    CHECK(top[i].score > 0.0);
  }
}

TEST_CASE("dump_representations aligns rows across layers and models") {
  Vocab vocab = tiny_vocab(10);
  std::vector<Example> examples;
  for (int i = 0; i < 10; ++i) {
    examples.push_back({"ex" + std::to_string(i), "books", {"w00", "w01", "w02"}});
  }
  Corpus corpus = Corpus::from_examples(std::move(examples));
  Model model = init_model(tiny_config(19, 8, 2, 6), vocab, "m1");
  auto dumps = dump_representations(model, corpus, {0, 2});
  REQUIRE(dumps.size() == 2);
  CHECK(dumps[0].layer == 0);
  CHECK(dumps[1].layer == 2);
  CHECK(dumps[0].rows == dumps[1].rows);
  CHECK(dumps[0].n_rows() == 30);

  // Identical weights, different id: rows match, svcca is exactly 1.
  Model twin = init_model(tiny_config(19, 8, 2, 6), vocab, "m2");
  auto twin_dumps = dump_representations(twin, corpus, {0, 2});
  CHECK(twin_dumps[0].rows == dumps[0].rows);
  CHECK(svcca_score(dumps[1], twin_dumps[1]).rho_mean ==
        doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("dump_representations maps OOV to unk and truncates long examples") {
  Vocab vocab = tiny_vocab(4);
  std::vector<Example> examples = {
      {"a", "books", {"w00", "martian", "w01"}},
      {"b", "books", {"w00", "w01", "w02", "w03", "w00", "w01", "w02", "w03"}},
  };
  Corpus corpus = Corpus::from_examples(std::move(examples));
  Model model = init_model(tiny_config(20, 8, 1, 4), vocab);
  auto dumps = dump_representations(model, corpus, {0});
  CHECK(dumps[0].rows[1].token_id == Vocab::kUnkId);
  // Second example truncated to max_seq_len = 4 rows.
  CHECK(dumps[0].n_rows() == 3 + 4);
  CHECK_THROWS_AS(dump_representations(model, corpus, {5}), ArgumentError);
}

TEST_CASE("dumping twice produces byte-identical repset files") {
  TempDir tmp;
  Vocab vocab = tiny_vocab(8);
  std::vector<Example> examples;
  for (int i = 0; i < 6; ++i) {
    examples.push_back({"e" + std::to_string(i), "books", {"w00", "w03", "w05"}});
  }
  Corpus corpus = Corpus::from_examples(std::move(examples));
  Model model = init_model(tiny_config(21, 8, 1, 6), vocab);
  auto d1 = dump_representations(model, corpus, {1});
  auto d2 = dump_representations(model, corpus, {1});
  write_repset(d1[0], tmp.file("a.rep"));
  write_repset(d2[0], tmp.file("b.rep"));
  CHECK(read_file(tmp.file("a.rep.bin")) == read_file(tmp.file("b.rep.bin")));
  CHECK(read_file(tmp.file("a.rep.rows")) == read_file(tmp.file("b.rep.rows")));
}

TEST_CASE("checkpoint round trip is exact and deterministic") {
  TempDir tmp;
  Vocab vocab = tiny_vocab(9);
  Model model = init_model(tiny_config(22, 8, 2, 6), vocab, "ckpt-test");
  save_checkpoint(model, tmp.file("m.ckpt"));
  save_checkpoint(model, tmp.file("m2.ckpt"));
  CHECK(read_file(tmp.file("m.ckpt")) == read_file(tmp.file("m2.ckpt")));

  Model loaded = load_checkpoint(tmp.file("m.ckpt"));
  CHECK(loaded.model_id == "ckpt-test");
  CHECK(loaded.config == model.config);
  CHECK(loaded.vocab == model.vocab);
  CHECK(parameters_equal(loaded.params, model.params));

  std::string blob = read_file(tmp.file("m.ckpt"));
  CHECK(blob.substr(0, 5) == "TMLM1");

  // Corrupted magic string.
  std::string bad = blob;
  bad[0] = 'X';
  atomic_write_text(tmp.file("bad.ckpt"), bad);
  CHECK_THROWS_AS(load_checkpoint(tmp.file("bad.ckpt")), DataError);

  // Truncated parameter block.
  atomic_write_text(tmp.file("short.ckpt"), blob.substr(0, blob.size() - 16));
  CHECK_THROWS_AS(load_checkpoint(tmp.file("short.ckpt")), DataError);
}
