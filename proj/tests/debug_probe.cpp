// Scratch probe for development. Not part of any test target's default run.
#include <cstdio>
#include <numeric>

#include "chainqa/data.hpp"
#include "chainqa/encoder.hpp"
#include "chainqa/index.hpp"
#include "chainqa/normalize.hpp"
#include "chainqa/retriever.hpp"
#include "chainqa/trainer.hpp"

using namespace chainqa;

int main() {
  GenConfig gen;
  gen.num_passages = 2000;
  gen.num_train = 300;
  gen.num_dev = 100;
  gen.seed = 42;
  const SyntheticData data = generate_synthetic(gen);

  std::vector<Question> all = data.train;
  all.insert(all.end(), data.dev.begin(), data.dev.end());
  const Vocabulary vocab = build_vocab(data.store, all);
  std::printf("vocab size %zu\n", vocab.size());

  EmConfig cfg;
  cfg.seed = 42;
  EncoderParams enc = init_encoder(vocab, cfg.dim, cfg.seed);
  OptState opt = OptState::zeros_like(enc, AdamConfig{.lr = cfg.lr});

  const Question& q = data.train[0];
  std::printf("q: %s\n   answers[0]: %s\n   gold: %s -> %s\n", q.text.c_str(),
              q.answers[0].c_str(), q.gold_chain[0].c_str(), q.gold_chain[1].c_str());
  const Passage* g1 = data.store.find(q.gold_chain[0]);
  const Passage* g2 = data.store.find(q.gold_chain[1]);
  std::printf("g1: [%s] %s\ng2: [%s] %s\n", g1->title.c_str(), g1->text.c_str(),
              g2->title.c_str(), g2->text.c_str());

  DenseIndex index = DenseIndex::build(enc, vocab, data.store);
  const Vec qv = encode_query(enc, vocab, q.text);
  double qnorm = std::sqrt(dot(qv, qv));
  std::printf("qv norm %.6e\n", qnorm);
  auto hits = index.search(qv, 10);
  std::printf("random-init hop1 top10:\n");
  for (const auto& [pid, s] : hits) {
    const Passage* p = data.store.find(pid);
    std::printf("  %s %.6e [%s]\n", pid.c_str(), s, p->text.substr(0, 60).c_str());
  }
  const double gold_sim = similarity(qv, index.vector_of(q.gold_chain[0]));
  std::printf("gold1 sim %.6e (rank?)\n", gold_sim);

  // warm start
  const LexicalIndex lex = LexicalIndex::build(data.store);
  std::size_t pseudo = 0;
  for (const Question& tq : data.train) {
    for (const auto& [pid, score] : lex.search(tq.text, cfg.warmstart_lexical_topk)) {
      if (text_contains_answer(data.store.find(pid)->text, tq.answers)) {
        ++pseudo;
        break;
      }
    }
  }
  std::printf("warm-start pseudo-positives: %zu / %zu\n", pseudo, data.train.size());

  enc = warm_start(std::move(enc), opt, lex, data.store, data.train, vocab, cfg);
  index = DenseIndex::build(enc, vocab, data.store);
  const Vec qv2 = encode_query(enc, vocab, q.text);
  hits = index.search(qv2, 10);
  std::printf("post-warm hop1 top10:\n");
  for (const auto& [pid, s] : hits) {
    const Passage* p = data.store.find(pid);
    std::printf("  %s %.6e [%s]\n", pid.c_str(), s, p->text.substr(0, 60).c_str());
  }

  // beam retrieval, answer-bearing chain fraction
  RetrievalConfig rcfg;
  rcfg.n_hops = 2;
  rcfg.beam_width = 50;
  rcfg.top_k = 50;
  std::size_t with_answer = 0, gold_found = 0;
  for (std::size_t i = 0; i < 50; ++i) {
    const Question& tq = data.train[i];
    const auto chains = beam_search_retrieve(index, enc, vocab, data.store, tq, rcfg);
    bool any = false, gold = false;
    for (const auto& c : chains) {
      if (answer_match(c, tq.answers, data.store)) any = true;
      if (c.piece_ids == tq.gold_chain) gold = true;
    }
    if (any) ++with_answer;
    if (gold) ++gold_found;
  }
  std::printf("post-warm top-50 beam: answer-bearing %zu/50, exact gold %zu/50\n", with_answer,
              gold_found);
  return 0;
}
