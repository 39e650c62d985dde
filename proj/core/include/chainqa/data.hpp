#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "chainqa/common.hpp"

namespace chainqa {

struct Passage {
  std::string id;
  std::string title;
  std::string text;
};

/// Immutable, id-sorted corpus. Row order is ascending passage id, so index
/// rows and tie-breaking never depend on insertion order.
class PassageStore {
 public:
  PassageStore() = default;
  /// Sorts by id; rejects duplicate ids, empty ids and empty texts.
  explicit PassageStore(std::vector<Passage> passages);

  std::size_t size() const { return passages_.size(); }
  const Passage& row(std::size_t i) const { return passages_.at(i); }
  const Passage* find(std::string_view id) const;
  std::optional<std::size_t> row_of(std::string_view id) const;
  const std::vector<Passage>& passages() const { return passages_; }

 private:
  std::vector<Passage> passages_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

struct Question {
  std::string id;
  std::string text;
  std::vector<std::string> answers;       // at least one entry
  std::vector<std::string> gold_chain;    // evaluation-only; empty when absent
};

/// Lowercase, split on maximal runs of non-alphanumeric bytes, drop empties.
std::vector<std::string> tokenize(std::string_view text);

struct TokenSpan {
  std::string token;
  std::size_t begin = 0;  // byte offsets into the source string
  std::size_t end = 0;
};

/// tokenize() plus the byte range each token was cut from.
std::vector<TokenSpan> tokenize_spans(std::string_view text);

/// token -> id map with id 0 reserved for unknown tokens. Known tokens are
/// sorted lexicographically before id assignment, so the mapping is a pure
/// function of the corpus and question texts.
class Vocabulary {
 public:
  static constexpr int kUnkId = 0;

  Vocabulary();
  /// `known` must be sorted, unique, and not contain the UNK marker.
  explicit Vocabulary(std::vector<std::string> known);

  int id(std::string_view token) const;
  std::size_t size() const { return tokens_.size(); }  // known + UNK
  const std::vector<std::string>& tokens() const { return tokens_; }  // position == id

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

Vocabulary build_vocab(const PassageStore& store, const std::vector<Question>& questions);

std::vector<int> token_ids(const Vocabulary& vocab, std::string_view text);

struct GenConfig {
  std::size_t num_passages = 2000;
  std::size_t num_train = 300;
  std::size_t num_dev = 100;
  int hops = 2;
  double distractor_fraction = 0.2;
  std::size_t entities_per_layer = 150;
  int relations = 4;  // outgoing relation slots per entity and hop
  std::uint64_t seed = 42;
};

struct SyntheticData {
  PassageStore store;
  std::vector<Question> train;
  std::vector<Question> dev;
};

/// Layered entity world. Each question follows a unique relation path from a
/// start entity; hop-t passages name the source and target entity, the final
/// hop contains the answer string verbatim. Dedicated distractor passages
/// carry answer strings off-chain, and filler biographies share the start
/// entities' names without being evidence. Deterministic given the seed.
SyntheticData generate_synthetic(const GenConfig& cfg);

PassageStore load_passages(const std::filesystem::path& path);
std::vector<Question> load_questions(const std::filesystem::path& path);
void save_passages(const std::filesystem::path& path, const PassageStore& store);
void save_questions(const std::filesystem::path& path, const std::vector<Question>& questions);

/// Gold chains, when present, must have `hops` pieces and reference known ids.
void validate_gold_chains(const std::vector<Question>& questions, const PassageStore& store,
                          int hops);

}  // namespace chainqa
