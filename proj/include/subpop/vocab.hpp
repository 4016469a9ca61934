#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "subpop/corpus.hpp"

namespace subpop {

inline constexpr const char* kPadToken = "<pad>";
inline constexpr const char* kMaskToken = "<mask>";
inline constexpr const char* kUnkToken = "<unk>";

// Word-level vocabulary: three reserved symbols followed by the real words
// in sorted order, so the id assignment is deterministic.
class Vocab {
 public:
  static constexpr int kPadId = 0;
  static constexpr int kMaskId = 1;
  static constexpr int kUnkId = 2;
  static constexpr int kNumSpecials = 3;

  Vocab() = default;

  // words must be sorted and unique; reserved symbols are added in front.
  static Vocab from_words(std::vector<std::string> words);

  // Keeps words whose total token frequency is >= min_freq.
  static Vocab build(const Corpus& corpus, int min_freq = 2);

  int size() const { return static_cast<int>(id_to_word_.size()); }
  int encode(const std::string& word) const;
  bool contains(const std::string& word) const;
  const std::string& word(int id) const { return id_to_word_.at(static_cast<std::size_t>(id)); }
  bool is_special(int id) const { return id < kNumSpecials; }

  // The real words (reserved symbols excluded), sorted.
  std::vector<std::string> word_list() const;

  bool operator==(const Vocab& other) const {
    return id_to_word_ == other.id_to_word_;
  }

 private:
  std::vector<std::string> id_to_word_;
  std::unordered_map<std::string, int> word_to_id_;
};

}  // namespace subpop
