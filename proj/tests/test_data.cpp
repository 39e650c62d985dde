#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "chainqa/data.hpp"
#include "chainqa/io.hpp"
#include "chainqa/metrics.hpp"
#include "chainqa/normalize.hpp"

using namespace chainqa;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const char* name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove(p);
  return p;
}

std::string join_tokens(const std::vector<std::string>& toks) {
  std::string s;
  for (const auto& t : toks) {
    if (!s.empty()) s += ' ';
    s += t;
  }
  return s;
}

}  // namespace

TEST_CASE("tokenize lowercases and splits on non-alphanumeric runs") {
  CHECK(tokenize("The Mist (2007)") == std::vector<std::string>{"the", "mist", "2007"});
  CHECK(tokenize("") == std::vector<std::string>{});
  CHECK(tokenize("Sang-Wook Cheong") == std::vector<std::string>{"sang", "wook", "cheong"});
  CHECK(tokenize("  --  ") == std::vector<std::string>{});
}

TEST_CASE("tokenize is idempotent through join") {
  for (const char* s : {"The Mist (2007)", "a,b;;c", "Hello   WORLD-42", "x"}) {
    const auto once = tokenize(s);
    CHECK(tokenize(join_tokens(once)) == once);
  }
}

TEST_CASE("tokenize_spans reconstructs source substrings") {
  const std::string text = "Rutgers University, founded 1766";
  const auto spans = tokenize_spans(text);
  REQUIRE(spans.size() == 4);
  CHECK(text.substr(spans[0].begin, spans[1].end - spans[0].begin) == "Rutgers University");
  CHECK(spans[3].token == "1766");
}

TEST_CASE("build_vocab covers corpus and question tokens with stable ids") {
  PassageStore store({{"p1", "", "a b"}, {"p2", "", "b c"}});
  std::vector<Question> qs{{"q1", "c d", {"x"}, {}}};
  const Vocabulary v1 = build_vocab(store, qs);
  CHECK(v1.size() == 5);  // a b c d + UNK
  CHECK(v1.id("a") != Vocabulary::kUnkId);
  CHECK(v1.id("d") != Vocabulary::kUnkId);
  CHECK(v1.id("zzz") == Vocabulary::kUnkId);

  const Vocabulary v2 = build_vocab(store, qs);
  CHECK(v1.tokens() == v2.tokens());

  const Vocabulary empty = build_vocab(PassageStore{}, {});
  CHECK(empty.size() == 1);
}

TEST_CASE("PassageStore rejects duplicates and orders by id") {
  CHECK_THROWS_AS(PassageStore({{"p1", "", "x"}, {"p1", "", "y"}}), DataError);
  CHECK_THROWS_AS(PassageStore({{"p1", "", ""}}), DataError);
  PassageStore store({{"p2", "", "b"}, {"p1", "", "a"}});
  CHECK(store.row(0).id == "p1");
  CHECK(store.row(1).id == "p2");
  CHECK(store.find("p2")->text == "b");
  CHECK(store.find("p9") == nullptr);
}

TEST_CASE("generate_synthetic produces verifiable gold chains") {
  GenConfig cfg;
  cfg.num_passages = 800;
  cfg.num_train = 60;
  cfg.num_dev = 20;
  cfg.entities_per_layer = 50;
  cfg.relations = 3;
  const SyntheticData data = generate_synthetic(cfg);
  CHECK(data.store.size() == cfg.num_passages);
  CHECK(data.train.size() == cfg.num_train);
  CHECK(data.dev.size() == cfg.num_dev);

  std::vector<Question> all = data.train;
  all.insert(all.end(), data.dev.begin(), data.dev.end());
  for (const Question& q : all) {
    REQUIRE(q.gold_chain.size() == 2);
    const Passage* hop1 = data.store.find(q.gold_chain[0]);
    const Passage* hop2 = data.store.find(q.gold_chain[1]);
    REQUIRE(hop1 != nullptr);
    REQUIRE(hop2 != nullptr);
    // final gold passage carries the answer verbatim
    CHECK(hop2->text.find(q.answers[0]) != std::string::npos);
    // evaluating a question's own gold chain against itself scores 1
    RetrievedChains r{q.id, {EvidenceChain{q.gold_chain, {0.0, 0.0}, 0.0}}};
    const std::vector<RetrievedChains> retr{r};
    const std::vector<Question> one{q};
    CHECK(chain_recall(retr, one) == 1.0);
    CHECK(answer_recall(retr, one, data.store) == 1.0);
  }
}

TEST_CASE("generate_synthetic single-hop chains have length 1") {
  GenConfig cfg;
  cfg.num_passages = 600;
  cfg.num_train = 40;
  cfg.num_dev = 10;
  cfg.hops = 1;
  cfg.entities_per_layer = 40;
  cfg.relations = 10;
  const SyntheticData data = generate_synthetic(cfg);
  for (const Question& q : data.train) CHECK(q.gold_chain.size() == 1);
}

TEST_CASE("generate_synthetic distractor count verified by corpus scan") {
  GenConfig cfg;
  cfg.num_passages = 1000;
  cfg.num_train = 80;
  cfg.num_dev = 20;
  cfg.entities_per_layer = 60;
  cfg.relations = 3;
  cfg.distractor_fraction = 0.2;
  const SyntheticData data = generate_synthetic(cfg);

  std::vector<Question> all = data.train;
  all.insert(all.end(), data.dev.begin(), data.dev.end());

  // Brute-force scan: passages containing some question's answer while lying
  // on no gold chain of that question.
  std::size_t off_chain_answer_bearing = 0;
  for (std::size_t i = 0; i < data.store.size(); ++i) {
    const Passage& p = data.store.row(i);
    bool counts = false;
    for (const Question& q : all) {
      if (!text_contains_answer(p.text, q.answers)) continue;
      if (std::find(q.gold_chain.begin(), q.gold_chain.end(), p.id) == q.gold_chain.end()) {
        counts = true;
        break;
      }
    }
    if (counts) ++off_chain_answer_bearing;
  }
  CHECK(off_chain_answer_bearing >= 200);
}

TEST_CASE("generate_synthetic is deterministic and rejects impossible configs") {
  GenConfig cfg;
  cfg.num_passages = 600;
  cfg.num_train = 40;
  cfg.num_dev = 10;
  cfg.entities_per_layer = 40;
  cfg.relations = 3;
  const SyntheticData a = generate_synthetic(cfg);
  const SyntheticData b = generate_synthetic(cfg);
  REQUIRE(a.store.size() == b.store.size());
  for (std::size_t i = 0; i < a.store.size(); ++i) {
    CHECK(a.store.row(i).id == b.store.row(i).id);
    CHECK(a.store.row(i).text == b.store.row(i).text);
  }
  for (std::size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].text == b.train[i].text);

  GenConfig too_small = cfg;
  too_small.num_passages = 100;  // cannot fit link passages
  CHECK_THROWS_AS(generate_synthetic(too_small), DataError);

  GenConfig too_few_paths = cfg;
  too_few_paths.entities_per_layer = 2;
  too_few_paths.relations = 1;
  too_few_paths.num_passages = 600;
  CHECK_THROWS_AS(generate_synthetic(too_few_paths), DataError);  // 2 paths < 50 questions
}

TEST_CASE("passages and questions round-trip through JSONL") {
  GenConfig cfg;
  cfg.num_passages = 600;
  cfg.num_train = 30;
  cfg.num_dev = 10;
  cfg.entities_per_layer = 40;
  cfg.relations = 3;
  const SyntheticData data = generate_synthetic(cfg);

  const fs::path pfile = temp_file("chainqa_passages.jsonl");
  const fs::path qfile = temp_file("chainqa_questions.jsonl");
  save_passages(pfile, data.store);
  save_questions(qfile, data.train);

  const PassageStore store2 = load_passages(pfile);
  REQUIRE(store2.size() == data.store.size());
  for (std::size_t i = 0; i < store2.size(); ++i) {
    CHECK(store2.row(i).id == data.store.row(i).id);
    CHECK(store2.row(i).title == data.store.row(i).title);
    CHECK(store2.row(i).text == data.store.row(i).text);
  }
  const auto qs2 = load_questions(qfile);
  REQUIRE(qs2.size() == data.train.size());
  for (std::size_t i = 0; i < qs2.size(); ++i) {
    CHECK(qs2[i].id == data.train[i].id);
    CHECK(qs2[i].text == data.train[i].text);
    CHECK(qs2[i].answers == data.train[i].answers);
    CHECK(qs2[i].gold_chain == data.train[i].gold_chain);
  }
  fs::remove(pfile);
  fs::remove(qfile);
}

TEST_CASE("loaders report the offending line") {
  const fs::path f = temp_file("chainqa_bad.jsonl");

  write_file_atomic(f, "{\"id\":\"p1\",\"title\":\"t\",\"text\":\"x\"}\nnot json\n");
  try {
    load_passages(f);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }

  write_file_atomic(f, "{\"id\":\"q1\",\"question\":\"who\"}\n");
  try {
    load_questions(f);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 1") != std::string::npos);
    CHECK(std::string(e.what()).find("answers") != std::string::npos);
  }

  write_file_atomic(f,
                    "{\"id\":\"p1\",\"title\":\"\",\"text\":\"x\"}\n"
                    "{\"id\":\"p1\",\"title\":\"\",\"text\":\"y\"}\n");
  CHECK_THROWS_AS(load_passages(f), DataError);
  fs::remove(f);
}
