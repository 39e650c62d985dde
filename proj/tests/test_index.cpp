#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "chainqa/index.hpp"
#include "test_util.hpp"

using namespace chainqa;
using namespace chainqa::testutil;
namespace fs = std::filesystem;

namespace {

// Brute-force oracle: full argsort with the same dot-accumulation order and
// the same (score desc, id asc) comparator.
std::vector<std::pair<std::string, double>> argsort_oracle(const std::vector<std::string>& ids,
                                                           const Mat& vectors,
                                                           std::span<const double> query,
                                                           std::size_t k) {
  std::vector<double> scores(ids.size());
  for (std::size_t r = 0; r < ids.size(); ++r) scores[r] = dot(vectors.row(r), query);
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  });
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t i = 0; i < std::min(k, order.size()); ++i)
    out.emplace_back(ids[order[i]], scores[order[i]]);
  return out;
}

std::vector<std::string> numbered_ids(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "p%04zu", i);
    ids.push_back(buf);
  }
  return ids;
}

}  // namespace

TEST_CASE("dense_search equals the brute-force argsort oracle") {
  std::mt19937_64 rng(123);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  const std::size_t d = 16, n = 200;
  Mat vectors(n, d);
  for (double& v : vectors.a) v = dist(rng);
  const DenseIndex index(numbered_ids(n), vectors);

  for (int trial = 0; trial < 20; ++trial) {
    Vec q(d);
    for (double& v : q) v = dist(rng);
    for (std::size_t k : {std::size_t{1}, std::size_t{10}, n, n + 5}) {
      const auto got = index.search(q, k);
      const auto want = argsort_oracle(index.ids(), index.vectors(), q, k);
      REQUIRE(got.size() == want.size());
      for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i].first == want[i].first);
        CHECK(got[i].second == want[i].second);
      }
    }
  }
}

TEST_CASE("dense_search edge cases") {
  Mat vectors(3, 2);
  vectors(0, 0) = 1.0;
  vectors(1, 0) = 2.0;
  vectors(2, 0) = 3.0;
  const DenseIndex index({"b", "a", "c"}, vectors);  // constructor re-sorts by id

  SUBCASE("k = 0 gives an empty list") { CHECK(index.search(Vec{1, 0}, 0).empty()); }
  SUBCASE("k > |D| saturates") {
    const auto hits = index.search(Vec{1, 0}, 10);
    REQUIRE(hits.size() == 3);
  }
  SUBCASE("zero query vector ties everything; order is ascending id") {
    const auto hits = index.search(Vec{0, 0}, 3);
    REQUIRE(hits.size() == 3);
    CHECK(hits[0].first == "a");
    CHECK(hits[1].first == "b");
    CHECK(hits[2].first == "c");
    for (const auto& [id, score] : hits) CHECK(score == 0.0);
  }
  SUBCASE("exclusion removes chain members") {
    const std::vector<std::string> skip{"c"};
    const auto hits = index.search(Vec{1, 0}, 3, skip);
    REQUIRE(hits.size() == 2);
    CHECK(hits[0].first != "c");
    CHECK(hits[1].first != "c");
  }
}

TEST_CASE("build produces one row per passage, ordered by id, matching encode_passage") {
  const TinyWorld w = make_tiny_world(31, 50, 12);
  std::mt19937_64 rng(7);
  const EncoderParams params = random_encoder(w.vocab, 8, rng);
  const DenseIndex index = DenseIndex::build(params, w.vocab, w.store);

  REQUIRE(index.size() == w.store.size());
  CHECK(index.params_version() == 1);
  for (std::size_t i = 0; i < w.store.size(); ++i) {
    CHECK(index.ids()[i] == w.store.row(i).id);
    const Vec fresh = encode_passage(params, w.vocab, w.store.row(i));
    const auto row = index.vectors().row(i);
    for (std::size_t c = 0; c < fresh.size(); ++c) CHECK(row[c] == fresh[c]);
  }

  SUBCASE("identical params build identical matrices") {
    const DenseIndex again = DenseIndex::build(params, w.vocab, w.store);
    CHECK(again.vectors().a == index.vectors().a);
  }
  SUBCASE("insertion order does not matter (rows are id-sorted)") {
    std::vector<Passage> shuffled = w.store.passages();
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const PassageStore permuted(shuffled);
    const DenseIndex other = DenseIndex::build(params, w.vocab, permuted);
    CHECK(other.ids() == index.ids());
    CHECK(other.vectors().a == index.vectors().a);
  }
  SUBCASE("1-passage store builds a 1 x d index") {
    const PassageStore one({w.store.row(0)});
    const DenseIndex small = DenseIndex::build(params, w.vocab, one);
    CHECK(small.size() == 1);
    CHECK(small.dim() == 8);
  }
}

TEST_CASE("refresh re-encodes and bumps the version") {
  const TinyWorld w = make_tiny_world(37, 20, 10);
  std::mt19937_64 rng(8);
  EncoderParams params = random_encoder(w.vocab, 4, rng);
  DenseIndex index = DenseIndex::build(params, w.vocab, w.store);
  const Mat before = index.vectors();

  index.refresh(params, w.vocab, w.store);
  CHECK(index.params_version() == 2);
  CHECK(index.vectors().a == before.a);  // unchanged params, identical matrix

  OptState opt = OptState::zeros_like(params, AdamConfig{.lr = 1e-2});
  EncGradients g = EncGradients::zeros_like(params);
  g.w_q(0, 0) = 1.0;
  g.emb(1, 0) = -0.5;
  opt_step(params, g, opt);
  index.refresh(params, w.vocab, w.store);
  CHECK(index.params_version() == 3);
  CHECK(index.encoder_revision() == params.revision);
  const DenseIndex rebuilt = DenseIndex::build(params, w.vocab, w.store);
  CHECK(index.vectors().a == rebuilt.vectors().a);
}

TEST_CASE("index cache round-trips bitwise") {
  const TinyWorld w = make_tiny_world(41, 15, 9);
  std::mt19937_64 rng(9);
  const EncoderParams params = random_encoder(w.vocab, 4, rng);
  DenseIndex index = DenseIndex::build(params, w.vocab, w.store);
  index.refresh(params, w.vocab, w.store);  // version 2

  const fs::path path = fs::temp_directory_path() / "chainqa_index.bin";
  index.save(path);
  const DenseIndex loaded = DenseIndex::load(path);
  CHECK(loaded.ids() == index.ids());
  CHECK(loaded.vectors().a == index.vectors().a);
  CHECK(loaded.params_version() == index.params_version());
  CHECK(loaded.encoder_revision() == index.encoder_revision());
  fs::remove(path);
}

TEST_CASE("lexical index: idf formula and ranking") {
  PassageStore store({{"p1", "", "apple banana"}, {"p2", "", "banana cherry"}});
  const LexicalIndex lex = LexicalIndex::build(store);

  SUBCASE("idf of a term in one of two passages") {
    CHECK(lex.idf("apple") == doctest::Approx(std::log(1.5) + 1.0).epsilon(1e-9));
  }
  SUBCASE("unique shared term ranks its passage first") {
    const auto hits = lex.search("cherry pie", 2);
    REQUIRE(!hits.empty());
    CHECK(hits[0].first == "p2");
    CHECK(hits[0].second > 0.0);
  }
  SUBCASE("no known terms: zero scores in ascending id order") {
    const auto hits = lex.search("zzz qqq", 2);
    REQUIRE(hits.size() == 2);
    CHECK(hits[0].first == "p1");
    CHECK(hits[1].first == "p2");
    CHECK(hits[0].second == 0.0);
    CHECK(hits[1].second == 0.0);
  }
}

TEST_CASE("lexical index: adding an irrelevant passage never displaces an exact match") {
  PassageStore store({{"p1", "", "unique token here"}, {"p2", "", "other words"}});
  const LexicalIndex lex = LexicalIndex::build(store);
  REQUIRE(lex.search("unique token", 1)[0].first == "p1");

  PassageStore bigger({{"p1", "", "unique token here"},
                       {"p2", "", "other words"},
                       {"p3", "", "completely unrelated filler"}});
  const LexicalIndex lex2 = LexicalIndex::build(bigger);
  CHECK(lex2.search("unique token", 1)[0].first == "p1");
}
