#include "graft/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "graft/errors.hpp"

namespace graft {

namespace {

bool is_detached_punct(char c) {
  switch (c) {
    case '.':
    case ',':
    case ';':
    case ':':
    case '!':
    case '?':
    case '(':
    case ')':
    case '"':
    case '\'':
      return true;
    default:
      return false;
  }
}

}  // namespace

std::vector<std::string> word_tokenize(std::string_view text, bool lowercase) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (is_detached_punct(c)) {
      flush();
      out.emplace_back(1, c);
    } else {
      cur.push_back(lowercase ? static_cast<char>(std::tolower(static_cast<unsigned char>(c)))
                              : c);
    }
  }
  flush();
  return out;
}

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.push_back(c);
    }
  }
  return out;
}

const std::vector<std::string>& Vocab::special_surfaces() {
  static const std::vector<std::string> surfaces = {
      "⟨unk⟩", "⟨eos⟩", "⟨query⟩",
      "⟨pad⟩", "⟨H⟩",   "⟨P⟩",
      "⟨T⟩",   "⟨K⟩",   "⟨V⟩"};
  return surfaces;
}

Vocab Vocab::build(const std::vector<std::string>& corpus_lines, int min_freq, bool lowercase) {
  if (min_freq < 1) throw config_error("build_vocab: min_freq must be >= 1");
  // std::map keeps tokens sorted, which gives the lexicographic tie-break
  // for free after the stable sort by frequency.
  std::map<std::string, long> freq;
  for (const auto& line : corpus_lines) {
    for (auto& tok : word_tokenize(line, lowercase)) ++freq[tok];
  }
  if (freq.empty()) throw data_error("build_vocab: empty corpus");

  Vocab v;
  v.lowercase_ = lowercase;
  v.tokens_ = special_surfaces();
  for (const auto& s : v.tokens_) freq.erase(s);  // specials never re-enter

  std::vector<std::pair<std::string, long>> items(freq.begin(), freq.end());
  std::stable_sort(items.begin(), items.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  for (auto& [tok, count] : items) {
    if (count >= min_freq) v.tokens_.push_back(tok);
  }
  v.index_tokens();
  return v;
}

void Vocab::index_tokens() {
  ids_.clear();
  ids_.reserve(tokens_.size());
  for (int i = 0; i < static_cast<int>(tokens_.size()); ++i) ids_[tokens_[i]] = i;
}

int Vocab::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= static_cast<int>(tokens_.size()))
    throw data_error("Vocab::token: id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

std::vector<int> Vocab::encode(std::string_view text) const {
  std::vector<int> ids;
  for (auto& tok : word_tokenize(text, lowercase_)) ids.push_back(id(tok));
  return ids;
}

std::string Vocab::decode(std::span<const int> ids) const {
  std::string out;
  for (int i : ids) {
    if (!out.empty()) out.push_back(' ');
    out += token(i);
  }
  return out;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream f(path);
  if (!f) throw io_error("cannot write vocabulary file " + path.string());
  for (const auto& t : tokens_) f << t << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path, bool lowercase) {
  std::ifstream f(path);
  if (!f) throw io_error("cannot read vocabulary file " + path.string());
  Vocab v;
  v.lowercase_ = lowercase;
  std::string line;
  while (std::getline(f, line)) v.tokens_.push_back(line);
  if (v.tokens_.size() < kNumSpecials)
    throw data_error("vocabulary file " + path.string() + " is missing special tokens");
  v.index_tokens();
  return v;
}

}  // namespace graft
