#include "subpop/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "subpop/errors.hpp"
#include "subpop/io.hpp"
#include "subpop/log.hpp"
#include "subpop/rng.hpp"

namespace subpop {

using nlohmann::json;

bool Corpus::has_domain(const std::string& name) const {
  return std::find(domains.begin(), domains.end(), name) != domains.end();
}

std::size_t Corpus::domain_count(const std::string& name) const {
  std::size_t n = 0;
  for (const Example& ex : examples) {
    if (ex.domain == name) ++n;
  }
  return n;
}

Corpus Corpus::from_examples(std::vector<Example> examples) {
  Corpus corpus;
  std::set<std::string> ids;
  std::set<std::string> seen_domains;
  for (const Example& ex : examples) {
    if (ex.tokens.empty()) {
      throw DataError("example '" + ex.id + "' has no tokens");
    }
    if (!ids.insert(ex.id).second) {
      throw DataError("duplicate example id '" + ex.id + "'");
    }
    if (seen_domains.insert(ex.domain).second) {
      corpus.domains.push_back(ex.domain);
    }
  }
  corpus.examples = std::move(examples);
  return corpus;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&]() {
    if (current.empty()) return;
    std::size_t begin = 0;
    std::size_t end = current.size();
    while (begin < end && std::ispunct(static_cast<unsigned char>(current[begin])))
      ++begin;
    while (end > begin && std::ispunct(static_cast<unsigned char>(current[end - 1])))
      --end;
    if (end > begin) tokens.push_back(current.substr(begin, end - begin));
    current.clear();
  };
  for (char raw : text) {
    unsigned char c = static_cast<unsigned char>(raw);
    if (std::isspace(c)) {
      flush();
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return tokens;
}

Corpus load_corpus_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file '" + path + "'");

  std::vector<Example> examples;
  std::set<std::string> warned_fields;
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
    if (!obj.is_object() || !obj.contains("id") || !obj.contains("domain") ||
        !obj.contains("text") || !obj["id"].is_string() ||
        !obj["domain"].is_string() || !obj["text"].is_string()) {
      throw ParseError(path + ":" + std::to_string(line_no) +
                       ": expected object with string fields id, domain, text");
    }
    for (const auto& [key, value] : obj.items()) {
      if (key != "id" && key != "domain" && key != "text" &&
          warned_fields.insert(key).second) {
        warn(path + ": ignoring unknown field '" + key + "'");
      }
    }
    Example ex;
    ex.id = obj["id"].get<std::string>();
    ex.domain = obj["domain"].get<std::string>();
    ex.tokens = tokenize(obj["text"].get<std::string>());
    if (ex.tokens.empty()) {
      throw ParseError(path + ":" + std::to_string(line_no) +
                       ": example '" + ex.id + "' has no tokens after tokenization");
    }
    examples.push_back(std::move(ex));
  }
  if (examples.empty()) throw DataError("corpus file '" + path + "' is empty");
  return Corpus::from_examples(std::move(examples));
}

void save_corpus_jsonl(const Corpus& corpus, const std::string& path) {
  atomic_write_file(path, [&](std::ostream& out) {
    for (const Example& ex : corpus.examples) {
      std::string text;
      for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
        if (i > 0) text.push_back(' ');
        text += ex.tokens[i];
      }
      json obj;
      obj["id"] = ex.id;
      obj["domain"] = ex.domain;
      obj["text"] = text;
      out << obj.dump() << "\n";
    }
  });
}

CorpusSplits split_corpus(const Corpus& corpus, const SplitRatios& ratios,
                          std::uint64_t seed) {
  if (!(ratios.train > 0.0 && ratios.val > 0.0 && ratios.test > 0.0)) {
    throw ArgumentError("split ratios must all be positive");
  }
  double sum = ratios.train + ratios.val + ratios.test;
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ArgumentError("split ratios must sum to 1, got " + std::to_string(sum));
  }

  // destination per example: 0 train, 1 val, 2 test
  std::vector<int> dest(corpus.examples.size(), 0);
  for (const std::string& domain : corpus.domains) {
    std::vector<std::size_t> indices;
    for (std::size_t i = 0; i < corpus.examples.size(); ++i) {
      if (corpus.examples[i].domain == domain) indices.push_back(i);
    }
    Rng rng(Rng::mix(Rng::mix(seed, "split"), domain));
    rng.shuffle(indices);
    std::size_t n = indices.size();
    std::size_t n_train = static_cast<std::size_t>(
        std::llround(static_cast<double>(n) * ratios.train));
    std::size_t n_train_val = static_cast<std::size_t>(
        std::llround(static_cast<double>(n) * (ratios.train + ratios.val)));
    n_train = std::min(n_train, n);
    n_train_val = std::min(std::max(n_train_val, n_train), n);
    for (std::size_t j = 0; j < n; ++j) {
      dest[indices[j]] = j < n_train ? 0 : (j < n_train_val ? 1 : 2);
    }
  }

  std::array<std::vector<Example>, 3> parts;
  for (std::size_t i = 0; i < corpus.examples.size(); ++i) {
    parts[static_cast<std::size_t>(dest[i])].push_back(corpus.examples[i]);
  }
  CorpusSplits splits;
  splits.train = Corpus::from_examples(std::move(parts[0]));
  splits.val = Corpus::from_examples(std::move(parts[1]));
  splits.test = Corpus::from_examples(std::move(parts[2]));
  return splits;
}

CorpusSplits load_and_split(const std::string& path, const SplitRatios& ratios,
                            std::uint64_t seed) {
  return split_corpus(load_corpus_jsonl(path), ratios, seed);
}

void SynthSpec::validate() const {
  if (n_domains < 1) throw ArgumentError("synthetic spec: need >= 1 domain");
  if (reviews_per_domain < 1)
    throw ArgumentError("synthetic spec: need >= 1 review per domain");
  if (general_vocab_size < 1 || specific_vocab_size < 1)
    throw ArgumentError("synthetic spec: vocabulary sizes must be >= 1");
  if (tokens_min < 1 || tokens_max < tokens_min)
    throw ArgumentError("synthetic spec: invalid tokens per review range");
  if (!(general_ratio >= 0.0 && general_ratio <= 1.0))
    throw ArgumentError("synthetic spec: general_ratio must be in [0, 1]");
  if (!(zipf_exponent > 0.0))
    throw ArgumentError("synthetic spec: zipf_exponent must be > 0");
  if (!domain_names.empty() && domain_names.size() != n_domains)
    throw ArgumentError("synthetic spec: domain_names size does not match n_domains");
}

std::vector<std::string> SynthSpec::resolved_domain_names() const {
  if (!domain_names.empty()) return domain_names;
  std::vector<std::string> names;
  names.reserve(n_domains);
  for (std::size_t i = 0; i < n_domains; ++i) {
    names.push_back("domain_" + std::to_string(i));
  }
  return names;
}

namespace {

// Cumulative Zipf weights over ranks 1..n with exponent s.
std::vector<double> zipf_cumulative(std::size_t n, double s) {
  std::vector<double> cum(n);
  double running = 0.0;
  for (std::size_t r = 1; r <= n; ++r) {
    running += 1.0 / std::pow(static_cast<double>(r), s);
    cum[r - 1] = running;
  }
  for (double& c : cum) c /= running;
  return cum;
}

std::size_t sample_cumulative(const std::vector<double>& cum, double u) {
  auto it = std::lower_bound(cum.begin(), cum.end(), u);
  if (it == cum.end()) return cum.size() - 1;
  return static_cast<std::size_t>(it - cum.begin());
}

std::string padded_index(std::size_t i, int width) {
  std::string s = std::to_string(i);
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

}  // namespace

Corpus generate_synthetic_corpus(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::vector<std::string> domains = spec.resolved_domain_names();

  std::vector<std::string> general_words;
  general_words.reserve(spec.general_vocab_size);
  for (std::size_t i = 0; i < spec.general_vocab_size; ++i) {
    general_words.push_back("gen" + padded_index(i, 4));
  }
  std::vector<std::vector<std::string>> specific_words(domains.size());
  for (std::size_t d = 0; d < domains.size(); ++d) {
    specific_words[d].reserve(spec.specific_vocab_size);
    for (std::size_t i = 0; i < spec.specific_vocab_size; ++i) {
      specific_words[d].push_back(domains[d] + "_w" + padded_index(i, 4));
    }
  }

  std::vector<double> general_cum =
      zipf_cumulative(spec.general_vocab_size, spec.zipf_exponent);
  std::vector<double> specific_cum =
      zipf_cumulative(spec.specific_vocab_size, spec.zipf_exponent);

  Rng rng(Rng::mix(seed, "synthetic-corpus"));
  std::vector<Example> examples;
  examples.reserve(domains.size() * spec.reviews_per_domain);
  std::size_t span = spec.tokens_max - spec.tokens_min + 1;
  for (std::size_t d = 0; d < domains.size(); ++d) {
    for (std::size_t r = 0; r < spec.reviews_per_domain; ++r) {
      Example ex;
      ex.id = domains[d] + "-" + padded_index(r, 6);
      ex.domain = domains[d];
      std::size_t length = spec.tokens_min + rng.below(span);
      ex.tokens.reserve(length);
      for (std::size_t t = 0; t < length; ++t) {
        if (rng.unit() < spec.general_ratio) {
          ex.tokens.push_back(general_words[sample_cumulative(general_cum, rng.unit())]);
        } else {
          ex.tokens.push_back(
              specific_words[d][sample_cumulative(specific_cum, rng.unit())]);
        }
      }
      examples.push_back(std::move(ex));
    }
  }
  return Corpus::from_examples(std::move(examples));
}

SynthSpec parse_synth_spec_json(const std::string& json_text) {
  json obj;
  try {
    obj = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("synthetic spec: ") + e.what());
  }
  SynthSpec spec;
  try {
    if (obj.contains("n_domains")) spec.n_domains = obj["n_domains"].get<std::size_t>();
    if (obj.contains("reviews_per_domain"))
      spec.reviews_per_domain = obj["reviews_per_domain"].get<std::size_t>();
    if (obj.contains("general_vocab_size"))
      spec.general_vocab_size = obj["general_vocab_size"].get<std::size_t>();
    if (obj.contains("specific_vocab_size"))
      spec.specific_vocab_size = obj["specific_vocab_size"].get<std::size_t>();
    if (obj.contains("tokens_min")) spec.tokens_min = obj["tokens_min"].get<std::size_t>();
    if (obj.contains("tokens_max")) spec.tokens_max = obj["tokens_max"].get<std::size_t>();
    if (obj.contains("general_ratio")) spec.general_ratio = obj["general_ratio"].get<double>();
    if (obj.contains("zipf_exponent")) spec.zipf_exponent = obj["zipf_exponent"].get<double>();
    if (obj.contains("domain_names"))
      spec.domain_names = obj["domain_names"].get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("synthetic spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

SynthSpec load_synth_spec_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open synthetic spec '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_synth_spec_json(text);
}

AttributeMask attribute_mask(const Corpus& corpus, const std::string& domain) {
  if (!corpus.has_domain(domain)) {
    std::string known;
    for (std::size_t i = 0; i < corpus.domains.size(); ++i) {
      if (i > 0) known += ", ";
      known += corpus.domains[i];
    }
    throw ArgumentError("unknown domain '" + domain + "'; corpus domains: " + known);
  }
  AttributeMask mask;
  mask.attribute_id = domain;
  mask.bits.reserve(corpus.examples.size());
  for (const Example& ex : corpus.examples) {
    mask.bits.push_back(ex.domain == domain ? 1 : 0);
  }
  return mask;
}

}  // namespace subpop
