#include "subpop/lexicon.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "subpop/errors.hpp"
#include "subpop/io.hpp"

namespace subpop {

using nlohmann::json;

std::int64_t FreqTable::doc_freq(const std::string& word,
                                 const std::string& domain) const {
  auto it = words.find(word);
  if (it == words.end()) return 0;
  auto dit = std::find(domains.begin(), domains.end(), domain);
  if (dit == domains.end()) return 0;
  return it->second.doc_freq_per_domain[static_cast<std::size_t>(
      dit - domains.begin())];
}

std::int64_t FreqTable::token_freq(const std::string& word) const {
  auto it = words.find(word);
  return it == words.end() ? 0 : it->second.token_freq;
}

FreqTable word_doc_frequencies(const Corpus& corpus) {
  if (corpus.examples.empty()) {
    throw ArgumentError("word_doc_frequencies: empty corpus");
  }
  FreqTable table;
  table.domains = corpus.domains;
  std::map<std::string, std::size_t> domain_index;
  for (std::size_t i = 0; i < corpus.domains.size(); ++i) {
    domain_index[corpus.domains[i]] = i;
  }
  for (const Example& ex : corpus.examples) {
    std::size_t d = domain_index.at(ex.domain);
    std::set<std::string> distinct;
    for (const std::string& token : ex.tokens) {
      WordStats& stats = table.words[token];
      if (stats.doc_freq_per_domain.empty()) {
        stats.doc_freq_per_domain.assign(table.domains.size(), 0);
      }
      stats.token_freq += 1;
      if (distinct.insert(token).second) {
        stats.doc_freq_per_domain[d] += 1;
      }
    }
  }
  return table;
}

bool Lexicon::is_specific_to(const std::string& word,
                             const std::string& domain) const {
  auto it = domain_specific.find(domain);
  return it != domain_specific.end() && it->second.count(word) > 0;
}

bool Lexicon::is_specific_to_any(const std::string& word) const {
  for (const auto& [domain, words] : domain_specific) {
    if (words.count(word) > 0) return true;
  }
  return false;
}

Lexicon extract_lexicon(const FreqTable& freq,
                        const LexiconThresholds& thresholds) {
  if (thresholds.t_in < 1 || thresholds.t_out < 0 || thresholds.t_general < 1) {
    throw ArgumentError("extract_lexicon: thresholds must be >= 1 (t_out >= 0)");
  }
  Lexicon lex;
  lex.thresholds = thresholds;
  for (const std::string& domain : freq.domains) {
    lex.domain_specific[domain];  // every domain appears, possibly empty
  }

  for (const auto& [word, stats] : freq.words) {
    std::int64_t total = 0;
    for (std::int64_t c : stats.doc_freq_per_domain) total += c;

    // Candidate domains for specificity; pick the highest in-domain count,
    // ties resolved by domain order, so the sets stay disjoint under any
    // threshold combination.
    std::size_t best = freq.domains.size();
    for (std::size_t d = 0; d < freq.domains.size(); ++d) {
      std::int64_t inside = stats.doc_freq_per_domain[d];
      std::int64_t outside = total - inside;
      if (inside >= thresholds.t_in && outside <= thresholds.t_out) {
        if (best == freq.domains.size() ||
            inside > stats.doc_freq_per_domain[best]) {
          best = d;
        }
      }
    }
    if (best < freq.domains.size()) {
      lex.domain_specific[freq.domains[best]].insert(word);
      continue;  // specificity wins over generality
    }

    bool general = !freq.domains.empty();
    for (std::int64_t c : stats.doc_freq_per_domain) {
      if (c < thresholds.t_general) {
        general = false;
        break;
      }
    }
    if (general) lex.general.insert(word);
  }
  return lex;
}

void save_lexicon_json(const Lexicon& lexicon, const std::string& path) {
  json obj;
  obj["thresholds"] = {{"t_in", lexicon.thresholds.t_in},
                       {"t_out", lexicon.thresholds.t_out},
                       {"t_general", lexicon.thresholds.t_general}};
  obj["general"] = std::vector<std::string>(lexicon.general.begin(),
                                            lexicon.general.end());
  json specific = json::object();
  for (const auto& [domain, words] : lexicon.domain_specific) {
    specific[domain] = std::vector<std::string>(words.begin(), words.end());
  }
  obj["domain_specific"] = specific;
  atomic_write_text(path, obj.dump(2) + "\n");
}

Lexicon load_lexicon_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open lexicon file '" + path + "'");
  json obj;
  try {
    in >> obj;
  } catch (const json::exception& e) {
    throw ParseError("lexicon file '" + path + "': " + e.what());
  }
  Lexicon lex;
  try {
    lex.thresholds.t_in = obj.at("thresholds").at("t_in").get<std::int64_t>();
    lex.thresholds.t_out = obj.at("thresholds").at("t_out").get<std::int64_t>();
    lex.thresholds.t_general =
        obj.at("thresholds").at("t_general").get<std::int64_t>();
    for (const auto& w : obj.at("general")) {
      lex.general.insert(w.get<std::string>());
    }
    for (const auto& [domain, words] : obj.at("domain_specific").items()) {
      std::set<std::string>& target = lex.domain_specific[domain];
      for (const auto& w : words) target.insert(w.get<std::string>());
    }
  } catch (const json::exception& e) {
    throw ParseError("lexicon file '" + path + "': " + e.what());
  }
  return lex;
}

}  // namespace subpop
