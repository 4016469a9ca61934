#include "subpop/vocab.hpp"

#include <algorithm>
#include <map>

#include "subpop/errors.hpp"

namespace subpop {

Vocab Vocab::from_words(std::vector<std::string> words) {
  if (!std::is_sorted(words.begin(), words.end())) {
    throw ArgumentError("vocabulary word list must be sorted");
  }
  if (std::adjacent_find(words.begin(), words.end()) != words.end()) {
    throw ArgumentError("vocabulary word list contains duplicates");
  }
  Vocab v;
  v.id_to_word_ = {kPadToken, kMaskToken, kUnkToken};
  for (std::string& w : words) {
    if (w == kPadToken || w == kMaskToken || w == kUnkToken) {
      throw ArgumentError("vocabulary word list contains reserved symbol '" + w + "'");
    }
    v.id_to_word_.push_back(std::move(w));
  }
  for (std::size_t i = 0; i < v.id_to_word_.size(); ++i) {
    v.word_to_id_[v.id_to_word_[i]] = static_cast<int>(i);
  }
  return v;
}

Vocab Vocab::build(const Corpus& corpus, int min_freq) {
  std::map<std::string, int> counts;
  for (const Example& ex : corpus.examples) {
    for (const std::string& token : ex.tokens) counts[token] += 1;
  }
  std::vector<std::string> words;
  for (const auto& [word, count] : counts) {
    if (count >= min_freq) words.push_back(word);
  }
  return from_words(std::move(words));
}

int Vocab::encode(const std::string& word) const {
  auto it = word_to_id_.find(word);
  return it == word_to_id_.end() ? kUnkId : it->second;
}

bool Vocab::contains(const std::string& word) const {
  return word_to_id_.count(word) > 0;
}

std::vector<std::string> Vocab::word_list() const {
  return {id_to_word_.begin() + kNumSpecials, id_to_word_.end()};
}

}  // namespace subpop
