#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace graft {

// Word-level tokenization: split on whitespace, detach the punctuation
// characters . , ; : ! ? ( ) " ' into standalone tokens.
std::vector<std::string> word_tokenize(std::string_view text, bool lowercase = false);

// Collapse whitespace runs to single spaces and trim the ends.
std::string normalize_whitespace(std::string_view text);

/// Token <-> id table with reserved special tokens in the lowest ids.
/// Immutable after construction; encode/decode are safe to call concurrently.
class Vocab {
 public:
  enum SpecialId : int {
    kUnk = 0,
    kEos = 1,
    kQuery = 2,
    kPad = 3,
    kSepHead = 4,
    kSepPred = 5,
    kSepTail = 6,
    kSepKey = 7,
    kSepValue = 8,
  };
  static constexpr int kNumSpecials = 9;

  static const std::vector<std::string>& special_surfaces();

  // Builds a vocabulary over the corpus lines: specials first, then every
  // token with frequency >= min_freq ordered by descending frequency with
  // lexicographic tie-break. Throws data_error on an empty corpus.
  static Vocab build(const std::vector<std::string>& corpus_lines, int min_freq,
                     bool lowercase = false);

  int id(std::string_view token) const;  // kUnk when absent
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  bool lowercase() const { return lowercase_; }

  std::vector<int> encode(std::string_view text) const;
  std::string decode(std::span<const int> ids) const;

  // One token per line, line number = id.
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path, bool lowercase = false);

 private:
  Vocab() = default;
  void index_tokens();

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  bool lowercase_ = false;
};

}  // namespace graft
