#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "subpop/attribute_mask.hpp"

namespace subpop {

// One pre-tokenized document. Tokens are lowercased with edge punctuation
// stripped; the list is never empty.
struct Example {
  std::string id;
  std::string domain;
  std::vector<std::string> tokens;
};

// An immutable collection of examples. domains lists the distinct domain
// names in order of first appearance; example ids are unique.
struct Corpus {
  std::vector<Example> examples;
  std::vector<std::string> domains;

  std::size_t size() const { return examples.size(); }
  bool has_domain(const std::string& name) const;
  std::size_t domain_count(const std::string& name) const;

  // Builds a corpus from examples, deriving the domain list and validating
  // id uniqueness and non-empty token lists.
  static Corpus from_examples(std::vector<Example> examples);
};

// Lowercase, split on whitespace, strip leading/trailing punctuation from
// each token, drop tokens that become empty.
std::vector<std::string> tokenize(const std::string& text);

// JSON Lines corpus file: one {"id":..., "domain":..., "text":...} object
// per line. Unknown fields warn once per field name; malformed lines raise
// ParseError with the line number.
Corpus load_corpus_jsonl(const std::string& path);
void save_corpus_jsonl(const Corpus& corpus, const std::string& path);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct CorpusSplits {
  Corpus train;
  Corpus val;
  Corpus test;
};

// Per-domain stratified split, deterministic in the seed. Each domain is
// shuffled and cut independently; the three parts partition the input and
// preserve original corpus order within each part.
CorpusSplits split_corpus(const Corpus& corpus, const SplitRatios& ratios,
                          std::uint64_t seed);

// load_corpus_jsonl followed by split_corpus.
CorpusSplits load_and_split(const std::string& path, const SplitRatios& ratios,
                            std::uint64_t seed);

// Recipe for a synthetic multi-domain corpus: shared review structure,
// disjoint per-domain vocabularies, Zipf-weighted token draws.
struct SynthSpec {
  std::size_t n_domains = 5;
  std::size_t reviews_per_domain = 200;
  std::size_t general_vocab_size = 120;
  std::size_t specific_vocab_size = 40;  // per domain
  std::size_t tokens_min = 8;
  std::size_t tokens_max = 20;
  double general_ratio = 0.7;  // probability a token is drawn from the shared vocabulary
  double zipf_exponent = 1.1;
  std::vector<std::string> domain_names;  // optional; defaults to domain_0..

  void validate() const;
  std::vector<std::string> resolved_domain_names() const;
};

Corpus generate_synthetic_corpus(const SynthSpec& spec, std::uint64_t seed);

// SynthSpec from a JSON object string / file; unset fields keep defaults.
SynthSpec parse_synth_spec_json(const std::string& json_text);
SynthSpec load_synth_spec_json(const std::string& path);

// bits[j] is true iff examples[j].domain == domain, in corpus order.
AttributeMask attribute_mask(const Corpus& corpus, const std::string& domain);

}  // namespace subpop
