#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "subpop/corpus.hpp"

namespace subpop {

// Per-word counts over a corpus: review-level document frequency per domain
// (each example counted at most once per word) and total token frequency.
struct WordStats {
  std::vector<std::int64_t> doc_freq_per_domain;  // indexed like FreqTable::domains
  std::int64_t token_freq = 0;
};

struct FreqTable {
  std::vector<std::string> domains;
  std::map<std::string, WordStats> words;  // sorted for deterministic output

  std::int64_t doc_freq(const std::string& word, const std::string& domain) const;
  std::int64_t token_freq(const std::string& word) const;
};

FreqTable word_doc_frequencies(const Corpus& corpus);

struct LexiconThresholds {
  std::int64_t t_in = 20;
  std::int64_t t_out = 10;
  std::int64_t t_general = 20;
};

// Domain-specific and general word sets. The domain-specific sets are
// pairwise disjoint and disjoint from the general set.
struct Lexicon {
  std::map<std::string, std::set<std::string>> domain_specific;
  std::set<std::string> general;
  LexiconThresholds thresholds;

  bool is_general(const std::string& word) const {
    return general.count(word) > 0;
  }
  bool is_specific_to(const std::string& word, const std::string& domain) const;
  bool is_specific_to_any(const std::string& word) const;
};

// A word is specific to domain d when its document frequency in d is at
// least t_in and its document frequency summed over all other domains is at
// most t_out; it is general when its document frequency reaches t_general in
// every domain. If degenerate thresholds make a word eligible for several
// sets, domain-specific membership wins (highest in-domain count, then
// domain order), keeping the sets disjoint.
Lexicon extract_lexicon(const FreqTable& freq, const LexiconThresholds& thresholds);

// JSON lexicon file with sorted word arrays.
void save_lexicon_json(const Lexicon& lexicon, const std::string& path);
Lexicon load_lexicon_json(const std::string& path);

}  // namespace subpop
