#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "chainqa/data.hpp"
#include "chainqa/encoder.hpp"
#include "chainqa/mat.hpp"

namespace chainqa {

/// Exact maximum-inner-product search over offline-encoded passages. Rows are
/// ordered by ascending passage id; ties in search scores break toward the
/// lower id. No approximation anywhere.
class DenseIndex {
 public:
  DenseIndex() = default;
  /// Direct construction from raw vectors (tests, cache loading). `ids` must
  /// be unique; rows are reordered to ascending id if needed.
  DenseIndex(std::vector<std::string> ids, Mat vectors);

  static DenseIndex build(const EncoderParams& params, const Vocabulary& vocab,
                          const PassageStore& store);
  /// Re-encodes every passage with the given parameters and bumps
  /// params_version. The refreshed contents replace the old atomically from
  /// the caller's perspective (no partially refreshed state is observable).
  void refresh(const EncoderParams& params, const Vocabulary& vocab, const PassageStore& store);

  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return vectors_.cols; }
  /// Monotone refresh counter (1 after build, +1 per refresh).
  std::uint64_t params_version() const { return params_version_; }
  /// Revision of the encoder parameters the rows were encoded with.
  std::uint64_t encoder_revision() const { return encoder_revision_; }

  /// The k largest dot products, score descending, ties by ascending passage
  /// id. k = 0 yields an empty list; k > |D| saturates.
  std::vector<std::pair<std::string, double>> search(std::span<const double> query,
                                                     std::size_t k) const;
  /// Same, skipping the given passage ids.
  std::vector<std::pair<std::string, double>> search(std::span<const double> query, std::size_t k,
                                                     std::span<const std::string> exclude) const;

  const Mat& vectors() const { return vectors_; }
  const std::vector<std::string>& ids() const { return ids_; }
  std::span<const double> vector_of(std::string_view id) const;

  /// Little-endian binary cache: header {format version, |D|, d,
  /// params_version, encoder revision}, id table, then row-major doubles.
  void save(const std::filesystem::path& path) const;
  static DenseIndex load(const std::filesystem::path& path);

 private:
  std::vector<std::string> ids_;
  Mat vectors_;
  std::unordered_map<std::string, std::size_t> row_of_;
  std::uint64_t params_version_ = 0;
  std::uint64_t encoder_revision_ = 0;

  void rebuild_lookup();
};

/// TF-IDF cosine index: tf = raw count, idf = ln((N+1)/(df+1)) + 1, passage
/// and query vectors L2-normalized. Serves as the unsupervised baseline and
/// the warm-start miner.
class LexicalIndex {
 public:
  LexicalIndex() = default;
  static LexicalIndex build(const PassageStore& store);

  std::size_t size() const { return ids_.size(); }
  double idf(std::string_view term) const;

  /// Cosine scores, descending, ties by ascending passage id. Unmatched
  /// passages keep score 0 and still fill the tail of the list.
  std::vector<std::pair<std::string, double>> search(std::string_view query_text,
                                                     std::size_t k) const;

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::uint32_t> df_;
  // term -> (row, L2-normalized tf-idf weight)
  std::unordered_map<std::string, std::vector<std::pair<std::uint32_t, double>>> postings_;
};

}  // namespace chainqa
