#include "chainqa/index.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <map>
#include <numeric>

#include "chainqa/io.hpp"

namespace chainqa {

namespace {

void sort_rows_by_id(std::vector<std::string>& ids, Mat& vectors) {
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
  std::vector<std::string> sorted_ids(ids.size());
  Mat sorted(vectors.rows, vectors.cols);
  for (std::size_t i = 0; i < order.size(); ++i) {
    sorted_ids[i] = std::move(ids[order[i]]);
    std::copy_n(vectors.row(order[i]).data(), vectors.cols, sorted.row(i).data());
  }
  ids = std::move(sorted_ids);
  vectors = std::move(sorted);
}

}  // namespace

DenseIndex::DenseIndex(std::vector<std::string> ids, Mat vectors)
    : ids_(std::move(ids)), vectors_(std::move(vectors)) {
  if (ids_.size() != vectors_.rows) throw DataError("DenseIndex: id/row count mismatch");
  sort_rows_by_id(ids_, vectors_);
  rebuild_lookup();
  params_version_ = 1;
}

void DenseIndex::rebuild_lookup() {
  row_of_.clear();
  row_of_.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!row_of_.emplace(ids_[i], i).second)
      throw DataError("DenseIndex: duplicate passage id '" + ids_[i] + "'");
  }
}

DenseIndex DenseIndex::build(const EncoderParams& params, const Vocabulary& vocab,
                             const PassageStore& store) {
  if (store.size() == 0) throw DataError("DenseIndex::build: empty store");
  DenseIndex index;
  index.ids_.reserve(store.size());
  index.vectors_ = Mat(store.size(), params.dim);
  for (std::size_t i = 0; i < store.size(); ++i) {  // store rows are already id-sorted
    const Passage& p = store.row(i);
    index.ids_.push_back(p.id);
    const Vec v = encode_passage(params, vocab, p);
    std::copy(v.begin(), v.end(), index.vectors_.row(i).data());
  }
  index.rebuild_lookup();
  index.params_version_ = 1;
  index.encoder_revision_ = params.revision;
  return index;
}

void DenseIndex::refresh(const EncoderParams& params, const Vocabulary& vocab,
                         const PassageStore& store) {
  DenseIndex fresh = build(params, vocab, store);
  fresh.params_version_ = params_version_ + 1;
  *this = std::move(fresh);
}

std::vector<std::pair<std::string, double>> DenseIndex::search(std::span<const double> query,
                                                               std::size_t k) const {
  return search(query, k, {});
}

std::vector<std::pair<std::string, double>> DenseIndex::search(
    std::span<const double> query, std::size_t k, std::span<const std::string> exclude) const {
  if (query.size() != vectors_.cols) throw DataError("dense search: query dimension mismatch");
  std::vector<std::pair<std::string, double>> out;
  if (k == 0) return out;

  std::vector<double> scores(ids_.size());
  for (std::size_t r = 0; r < ids_.size(); ++r) scores[r] = dot(vectors_.row(r), query);

  std::vector<std::size_t> rows;
  rows.reserve(ids_.size());
  if (exclude.empty()) {
    rows.resize(ids_.size());
    std::iota(rows.begin(), rows.end(), 0);
  } else {
    std::vector<char> skip(ids_.size(), 0);
    for (const std::string& id : exclude) {
      auto it = row_of_.find(id);
      if (it != row_of_.end()) skip[it->second] = 1;
    }
    for (std::size_t r = 0; r < ids_.size(); ++r) {
      if (!skip[r]) rows.push_back(r);
    }
  }

  const std::size_t take = std::min(k, rows.size());
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;  // rows ascend with passage id
  };
  std::partial_sort(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(take), rows.end(),
                    better);
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.emplace_back(ids_[rows[i]], scores[rows[i]]);
  return out;
}

std::span<const double> DenseIndex::vector_of(std::string_view id) const {
  auto it = row_of_.find(std::string(id));
  if (it == row_of_.end()) throw DataError("DenseIndex: unknown passage id '" + std::string(id) + "'");
  return vectors_.row(it->second);
}

// --- binary cache -----------------------------------------------------------

namespace {

constexpr char kIndexMagic[4] = {'C', 'Q', 'I', 'X'};
constexpr std::uint32_t kIndexFormatVersion = 1;

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
std::uint32_t get_u32(const std::string& buf, std::size_t& pos) {
  if (pos + 4 > buf.size()) throw DataError("index cache truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
  return v;
}
std::uint64_t get_u64(const std::string& buf, std::size_t& pos) {
  if (pos + 8 > buf.size()) throw DataError("index cache truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
  return v;
}

}  // namespace

void DenseIndex::save(const std::filesystem::path& path) const {
  std::string buf;
  buf.append(kIndexMagic, 4);
  put_u32(buf, kIndexFormatVersion);
  put_u64(buf, ids_.size());
  put_u64(buf, vectors_.cols);
  put_u64(buf, params_version_);
  put_u64(buf, encoder_revision_);
  for (const std::string& id : ids_) {
    put_u32(buf, static_cast<std::uint32_t>(id.size()));
    buf += id;
  }
  for (double d : vectors_.a) put_u64(buf, std::bit_cast<std::uint64_t>(d));
  write_file_atomic(path, buf);
}

DenseIndex DenseIndex::load(const std::filesystem::path& path) {
  const std::string buf = read_file(path);
  if (buf.size() < 4 || std::memcmp(buf.data(), kIndexMagic, 4) != 0)
    throw DataError("not an index cache: " + path.string());
  std::size_t pos = 4;
  const std::uint32_t version = get_u32(buf, pos);
  if (version != kIndexFormatVersion)
    throw DataError("unsupported index cache version " + std::to_string(version));
  const std::uint64_t count = get_u64(buf, pos);
  const std::uint64_t dim = get_u64(buf, pos);
  const std::uint64_t params_version = get_u64(buf, pos);
  const std::uint64_t revision = get_u64(buf, pos);
  std::vector<std::string> ids;
  ids.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t len = get_u32(buf, pos);
    if (pos + len > buf.size()) throw DataError("index cache truncated");
    ids.emplace_back(buf.data() + pos, len);
    pos += len;
  }
  Mat vectors(count, dim);
  for (double& d : vectors.a) d = std::bit_cast<double>(get_u64(buf, pos));
  DenseIndex index(std::move(ids), std::move(vectors));
  index.params_version_ = params_version;
  index.encoder_revision_ = revision;
  return index;
}

// --- lexical ----------------------------------------------------------------

LexicalIndex LexicalIndex::build(const PassageStore& store) {
  if (store.size() == 0) throw DataError("LexicalIndex::build: empty store");
  LexicalIndex index;
  index.ids_.reserve(store.size());

  std::vector<std::map<std::string, double>> tf(store.size());
  for (std::size_t r = 0; r < store.size(); ++r) {
    const Passage& p = store.row(r);
    index.ids_.push_back(p.id);
    for (const auto& t : tokenize(p.title)) tf[r][t] += 1.0;
    for (const auto& t : tokenize(p.text)) tf[r][t] += 1.0;
    for (const auto& [term, _] : tf[r]) ++index.df_[term];
  }

  const double n1 = static_cast<double>(store.size()) + 1.0;
  for (std::size_t r = 0; r < store.size(); ++r) {
    double norm_sq = 0.0;
    for (auto& [term, count] : tf[r]) {
      const double idf = std::log(n1 / (static_cast<double>(index.df_[term]) + 1.0)) + 1.0;
      count *= idf;
      norm_sq += count * count;
    }
    const double inv_norm = norm_sq > 0.0 ? 1.0 / std::sqrt(norm_sq) : 0.0;
    for (const auto& [term, weight] : tf[r]) {
      index.postings_[term].emplace_back(static_cast<std::uint32_t>(r), weight * inv_norm);
    }
  }
  return index;
}

double LexicalIndex::idf(std::string_view term) const {
  auto it = df_.find(std::string(term));
  const double df = it == df_.end() ? 0.0 : static_cast<double>(it->second);
  return std::log((static_cast<double>(ids_.size()) + 1.0) / (df + 1.0)) + 1.0;
}

std::vector<std::pair<std::string, double>> LexicalIndex::search(std::string_view query_text,
                                                                 std::size_t k) const {
  std::vector<std::pair<std::string, double>> out;
  if (k == 0) return out;

  std::map<std::string, double> qtf;
  for (const auto& t : tokenize(query_text)) qtf[t] += 1.0;
  double norm_sq = 0.0;
  for (auto& [term, count] : qtf) {
    count *= idf(term);
    norm_sq += count * count;
  }
  const double inv_norm = norm_sq > 0.0 ? 1.0 / std::sqrt(norm_sq) : 0.0;

  std::vector<double> scores(ids_.size(), 0.0);
  for (const auto& [term, weight] : qtf) {
    auto it = postings_.find(term);
    if (it == postings_.end()) continue;
    const double qw = weight * inv_norm;
    for (const auto& [row, pw] : it->second) scores[row] += qw * pw;
  }

  std::vector<std::size_t> rows(ids_.size());
  std::iota(rows.begin(), rows.end(), 0);
  const std::size_t take = std::min(k, rows.size());
  std::partial_sort(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(take), rows.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.emplace_back(ids_[rows[i]], scores[rows[i]]);
  return out;
}

}  // namespace chainqa
