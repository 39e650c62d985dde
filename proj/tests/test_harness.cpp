#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "chainqa/checkpoint.hpp"
#include "chainqa/io.hpp"
#include "chainqa/metrics.hpp"
#include "chainqa/normalize.hpp"
#include "test_util.hpp"

using namespace chainqa;
using namespace chainqa::testutil;
namespace fs = std::filesystem;

TEST_CASE("normalize_answer") {
  CHECK(normalize_answer("The Yankees!") == "yankees");
  CHECK(normalize_answer("a  Dog") == "dog");
  CHECK(normalize_answer("Rutgers University") == normalize_answer("rutgers university"));
  CHECK(normalize_answer("an apple, a day") == "apple day");
  CHECK(normalize_answer("") == "");
}

TEST_CASE("answer presence is token-level, not substring") {
  const std::vector<std::string> mist{"mist"};
  CHECK(text_contains_answer("The Mist (2007)", mist));
  CHECK_FALSE(text_contains_answer("a mistake was made", mist));
  const std::vector<std::string> ru{"Rutgers University"};
  CHECK(text_contains_answer("he works at rutgers university now", ru));
  CHECK_FALSE(text_contains_answer("rutgers college and harvard university", ru));
}

namespace {

RetrievedChains make_retrieval(const std::string& qid,
                               std::vector<std::vector<std::string>> chains) {
  RetrievedChains r;
  r.question_id = qid;
  for (auto& pieces : chains) {
    EvidenceChain c;
    c.piece_ids = std::move(pieces);
    c.step_scores.assign(c.piece_ids.size(), 0.0);
    r.chains.push_back(std::move(c));
  }
  return r;
}

}  // namespace

TEST_CASE("recall metric fixtures") {
  PassageStore store({{"g1", "", "first gold piece"},
                      {"g2", "", "second gold piece holds the answer alpha"},
                      {"x1", "", "noise"},
                      {"x2", "", "more noise"}});
  Question q{"q1", "find alpha", {"alpha"}, {"g1", "g2"}};
  const std::vector<Question> qs{q};

  SUBCASE("all gold retrieved: everything is 1") {
    const std::vector<RetrievedChains> retr{make_retrieval("q1", {{"g1", "g2"}})};
    CHECK(answer_recall(retr, qs, store) == 1.0);
    CHECK(passage_recall(retr, qs) == 1.0);
    CHECK(chain_recall(retr, qs) == 1.0);
  }
  SUBCASE("one of two gold pieces: passage recall 1, chain recall 0") {
    const std::vector<RetrievedChains> retr{make_retrieval("q1", {{"g1", "x1"}})};
    CHECK(passage_recall(retr, qs) == 1.0);
    CHECK(chain_recall(retr, qs) == 0.0);
    CHECK(answer_recall(retr, qs, store) == 0.0);  // answer only lives in g2
  }
  SUBCASE("gold split across chains counts for set containment, not single-chain") {
    const std::vector<RetrievedChains> retr{make_retrieval("q1", {{"g1", "x1"}, {"x2", "g2"}})};
    CHECK(chain_recall(retr, qs, /*single_chain=*/false) == 1.0);
    CHECK(chain_recall(retr, qs, /*single_chain=*/true) == 0.0);
  }
  SUBCASE("no overlap gives zero") {
    const std::vector<RetrievedChains> retr{make_retrieval("q1", {{"x1", "x2"}})};
    CHECK(passage_recall(retr, qs) == 0.0);
    CHECK(chain_recall(retr, qs) == 0.0);
  }
  SUBCASE("empty retrievals give zero") {
    const std::vector<RetrievedChains> retr;
    CHECK(answer_recall(retr, qs, store) == 0.0);
  }
  SUBCASE("counting fixture: 7 of 10") {
    std::vector<Question> many;
    std::vector<RetrievedChains> retr;
    for (int i = 0; i < 10; ++i) {
      Question qq{"m" + std::to_string(i), "find alpha", {"alpha"}, {}};
      many.push_back(qq);
      retr.push_back(make_retrieval(qq.id, {{i < 7 ? "g2" : "x1"}}));
    }
    CHECK(answer_recall(retr, many, store) == doctest::Approx(0.7));
  }
}

TEST_CASE("chain recall <= passage recall on random instances") {
  std::mt19937_64 rng(19);
  PassageStore store([] {
    std::vector<Passage> ps;
    for (int i = 0; i < 12; ++i)
      ps.push_back(Passage{"p" + std::to_string(i), "", "text " + std::to_string(i)});
    return ps;
  }());
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Question> qs;
    std::vector<RetrievedChains> retr;
    for (int i = 0; i < 6; ++i) {
      Question q{"q" + std::to_string(i), "t", {"zzz"}, {}};
      q.gold_chain = {"p" + std::to_string(rng() % 12), "p" + std::to_string(rng() % 12)};
      qs.push_back(q);
      std::vector<std::vector<std::string>> chains;
      for (int c = 0; c < 3; ++c)
        chains.push_back({"p" + std::to_string(rng() % 12), "p" + std::to_string(rng() % 12)});
      retr.push_back(make_retrieval(qs.back().id, std::move(chains)));
    }
    CHECK(chain_recall(retr, qs) <= passage_recall(retr, qs));
  }
}

TEST_CASE("exact match fixtures") {
  std::vector<Question> qs{{"q1", "", {"the mist"}, {}},
                           {"q2", "", {"New York"}, {}},
                           {"q3", "", {"the mist"}, {}}};
  std::vector<Prediction> preds{{"q1", "The Mist", 0.5, 0.5},
                                {"q2", "New Jersey", 0.5, 0.5},
                                {"q3", "mist", 0.5, 0.5}};
  // q1: exact after normalization; q2: different entity; q3: "mist" == "the mist"
  // after article removal.
  CHECK(exact_match_score(preds, qs) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("evaluate produces a consistent report and valid JSON") {
  PassageStore store({{"g1", "", "gold alpha"}, {"x1", "", "noise"}});
  std::vector<Question> qs{{"q1", "find alpha", {"alpha"}, {"g1"}},
                           {"q2", "find beta", {"beta"}, {}}};
  std::vector<RetrievedChains> retr{make_retrieval("q1", {{"g1"}}),
                                    make_retrieval("q2", {{"x1"}})};
  std::vector<Prediction> preds{{"q1", "alpha", 0.9, 0.9}};
  const MetricsReport rep = evaluate(retr, preds, qs, store, 10);
  CHECK(rep.num_questions == 2);
  CHECK(rep.num_with_gold == 1);  // q2 excluded from gold metrics, counted here
  CHECK(rep.answer_recall == doctest::Approx(0.5));
  CHECK(rep.passage_recall == doctest::Approx(1.0));
  CHECK(rep.chain_recall <= rep.passage_recall);
  CHECK(rep.exact_match == doctest::Approx(0.5));

  const fs::path path = fs::temp_directory_path() / "chainqa_report.json";
  save_report(path, rep);
  const std::string body = read_file(path);
  CHECK(body.find("\"schema_version\"") != std::string::npos);
  CHECK(body.find("\"chain_recall\"") != std::string::npos);
  fs::remove(path);
}

TEST_CASE("checkpoint round-trips bitwise and rejects corruption") {
  const TinyWorld w = make_tiny_world(121, 10, 8);
  std::mt19937_64 rng(3);

  Checkpoint cp;
  cp.vocab = w.vocab;
  cp.enc = random_encoder(w.vocab, 4, rng);
  cp.enc.revision = 17;
  cp.enc_opt = OptState::zeros_like(cp.enc, AdamConfig{.lr = 3e-4});
  randomize(cp.enc_opt.m_emb, rng);
  cp.enc_opt.step = 42;
  cp.reader = random_reader(w.vocab, 4, rng);
  cp.reader_opt = ReaderOptState::zeros_like(cp.reader);
  randomize(cp.reader_opt.v_wint, rng);
  cp.em.iterations = 5;
  cp.em.filter_mode = FilterMode::answer;
  cp.em.lr = 0.005;
  cp.seed = 777;
  cp.iteration = 3;
  cp.reader_bootstrapped = true;

  const fs::path path = fs::temp_directory_path() / "chainqa_ckpt.bin";
  save_checkpoint(path, cp);
  const Checkpoint back = load_checkpoint(path);

  CHECK(back.vocab.tokens() == cp.vocab.tokens());
  CHECK(back.enc.emb.a == cp.enc.emb.a);
  CHECK(back.enc.w_q.a == cp.enc.w_q.a);
  CHECK(back.enc.w_p.a == cp.enc.w_p.a);
  CHECK(back.enc.revision == 17);
  CHECK(back.enc_opt.m_emb.a == cp.enc_opt.m_emb.a);
  CHECK(back.enc_opt.step == 42);
  CHECK(back.enc_opt.cfg.lr == 3e-4);
  CHECK(back.reader.w_int.a == cp.reader.w_int.a);
  CHECK(back.reader.w_rank == cp.reader.w_rank);
  CHECK(back.reader_opt.v_wint.a == cp.reader_opt.v_wint.a);
  CHECK(back.em.iterations == 5);
  CHECK(back.em.filter_mode == FilterMode::answer);
  CHECK(back.em.lr == 0.005);
  CHECK(back.seed == 777);
  CHECK(back.iteration == 3);
  CHECK(back.reader_bootstrapped);

  SUBCASE("truncated file fails the checksum") {
    std::string bytes = read_file(path);
    bytes.resize(bytes.size() / 2);
    const fs::path broken = fs::temp_directory_path() / "chainqa_ckpt_broken.bin";
    write_file_atomic(broken, bytes);
    CHECK_THROWS_AS(load_checkpoint(broken), DataError);
    fs::remove(broken);
  }
  SUBCASE("flipped payload byte fails the checksum") {
    std::string bytes = read_file(path);
    bytes[bytes.size() - 3] ^= 0x40;
    const fs::path broken = fs::temp_directory_path() / "chainqa_ckpt_flip.bin";
    write_file_atomic(broken, bytes);
    CHECK_THROWS_AS(load_checkpoint(broken), DataError);
    fs::remove(broken);
  }
  SUBCASE("unknown version is refused") {
    std::string bytes = read_file(path);
    bytes[4] = 99;  // format version lives after the 4-byte magic
    const fs::path broken = fs::temp_directory_path() / "chainqa_ckpt_ver.bin";
    write_file_atomic(broken, bytes);
    CHECK_THROWS_AS(load_checkpoint(broken), DataError);
    fs::remove(broken);
  }
  fs::remove(path);
}
