#include <doctest.h>

#include <cmath>

#include "chainqa/encoder.hpp"
#include "chainqa/retriever.hpp"
#include "test_util.hpp"

using namespace chainqa;
using namespace chainqa::testutil;

namespace {

Vocabulary small_vocab() {
  return Vocabulary({"x", "y", "z"});
}

}  // namespace

TEST_CASE("encode_passage: mean embedding through the passage projection") {
  const Vocabulary vocab = small_vocab();
  EncoderParams p = init_encoder(vocab, 2, 7);
  p.emb.row(vocab.id("x"))[0] = 1.0;
  p.emb.row(vocab.id("x"))[1] = 0.0;

  SUBCASE("identity projection, single token") {
    const Vec v = encode_passage(p, vocab, Passage{"p", "", "x"});
    CHECK(v[0] == doctest::Approx(1.0));
    CHECK(v[1] == doctest::Approx(0.0));
  }
  SUBCASE("two tokens average") {
    p.emb.row(vocab.id("x"))[0] = 2.0;
    p.emb.row(vocab.id("y"))[1] = 2.0;
    const Vec v = encode_passage(p, vocab, Passage{"p", "", "x y"});
    CHECK(v[0] == doctest::Approx(1.0));
    CHECK(v[1] == doctest::Approx(1.0));
  }
  SUBCASE("unknown tokens hit the zero UNK row") {
    const Vec v = encode_passage(p, vocab, Passage{"p", "", "unknown words only"});
    CHECK(v[0] == 0.0);
    CHECK(v[1] == 0.0);
  }
}

TEST_CASE("encode_query applies the query projection") {
  const Vocabulary vocab = small_vocab();
  EncoderParams p = init_encoder(vocab, 2, 7);
  p.emb.row(vocab.id("x"))[0] = 3.0;
  p.emb.row(vocab.id("x"))[1] = 4.0;

  Vec v = encode_query(p, vocab, "x");
  CHECK(v[0] == doctest::Approx(3.0));
  CHECK(v[1] == doctest::Approx(4.0));

  for (std::size_t i = 0; i < 2; ++i) p.w_q(i, i) = 2.0;
  v = encode_query(p, vocab, "x");
  CHECK(v[0] == doctest::Approx(6.0));
  CHECK(v[1] == doctest::Approx(8.0));
}

TEST_CASE("similarity is the dot product") {
  CHECK(similarity(Vec{1, 2}, Vec{3, 4}) == doctest::Approx(11.0));
  CHECK(similarity(Vec{5, -2}, Vec{0, 0}) == 0.0);
  CHECK(similarity(Vec{1, 2}, Vec{3, 4}) == similarity(Vec{3, 4}, Vec{1, 2}));
  CHECK_THROWS_AS(similarity(Vec{1}, Vec{1, 2}), DataError);
}

TEST_CASE("nll_loss closed forms") {
  const TinyWorld w = make_tiny_world(11, 6, 8);
  std::mt19937_64 rng(3);
  const EncoderParams params = random_encoder(w.vocab, 3, rng);
  const Question& q = w.questions[0];

  SUBCASE("zero negatives give exactly zero") {
    const EvidenceChain pos = random_chain(w.store, 2, rng);
    CHECK(nll_loss(params, w.vocab, q, pos, {}, w.store) == 0.0);
  }
  SUBCASE("identical negative gives ln 2 per step") {
    EvidenceChain pos = random_chain(w.store, 1, rng);
    CHECK(nll_loss(params, w.vocab, q, pos, {pos}, w.store) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
    EvidenceChain pos2 = random_chain(w.store, 2, rng);
    CHECK(nll_loss(params, w.vocab, q, pos2, {pos2}, w.store) ==
          doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("empty positive chain is an error") {
    CHECK_THROWS_AS(nll_loss(params, w.vocab, q, EvidenceChain{}, {}, w.store), DataError);
  }
}

TEST_CASE("raising the positive step score strictly decreases the loss") {
  // Disjoint token worlds so the boost cannot leak into the negative's score.
  PassageStore store({{"p1", "", "pos"}, {"p2", "", "neg"}});
  Question q{"q", "ask", {"pos"}, {}};
  const Vocabulary vocab = build_vocab(store, {q});
  EncoderParams params = init_encoder(vocab, 2, 7);
  params.emb.row(vocab.id("ask"))[0] = 1.0;
  params.emb.row(vocab.id("pos"))[0] = 0.2;
  params.emb.row(vocab.id("neg"))[0] = 0.4;

  const EvidenceChain pos{{"p1"}, {0.0}, 0.0};
  const EvidenceChain neg{{"p2"}, {0.0}, 0.0};
  const double base = nll_loss(params, vocab, q, pos, {neg}, store);
  CHECK(base > 0.0);

  double prev = base;
  for (double boost : {0.3, 0.6, 1.2}) {
    EncoderParams boosted = params;
    boosted.emb.row(vocab.id("pos"))[0] = 0.2 + boost;  // raises only the positive score
    const double loss = nll_loss(boosted, vocab, q, pos, {neg}, store);
    CHECK(loss < prev);
    prev = loss;
  }
}

TEST_CASE("nll_loss stays finite for large similarity magnitudes") {
  const Vocabulary vocab = small_vocab();
  EncoderParams p = init_encoder(vocab, 2, 7);
  p.emb.row(vocab.id("x"))[0] = 1000.0;  // similarity ~ 1e6 after both sides
  p.emb.row(vocab.id("y"))[0] = -1000.0;
  PassageStore store({{"p1", "", "x"}, {"p2", "", "y"}});
  Question q{"q", "x", {"x"}, {}};
  EvidenceChain pos{{"p1"}, {0.0}, 0.0};
  EvidenceChain neg{{"p2"}, {0.0}, 0.0};
  const double loss = nll_loss(p, build_vocab(store, {q}), q, pos, {neg}, store);
  CHECK(std::isfinite(loss));
  CHECK(loss >= 0.0);
}

TEST_CASE("nll_gradients match central finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed * 97 + 1);
    const std::size_t dim = 2 + seed % 3;              // <= 4
    const std::size_t n = 1 + seed % 2;                // hops <= 2
    const std::size_t negs = seed % 3;                 // <= 2 negatives
    const TinyWorld w = make_tiny_world(seed, 6, 8);
    EncoderParams params = random_encoder(w.vocab, dim, rng);

    ChainSupervision sup;
    sup.question = &w.questions[0];
    sup.positive = random_chain(w.store, n, rng);
    for (std::size_t i = 0; i < negs; ++i) sup.negatives.push_back(random_chain(w.store, n, rng));
    const std::vector<ChainSupervision> batch{sup};

    const auto [loss, grads] = nll_gradients(params, w.vocab, batch, w.store);
    CHECK(std::isfinite(loss));

    const auto loss_fn = [&]() {
      return nll_loss(params, w.vocab, *sup.question, sup.positive, sup.negatives, w.store);
    };
    CHECK(fd_check_block(loss_fn, params.emb.a, grads.emb.a) < 1e-4);
    CHECK(fd_check_block(loss_fn, params.w_q.a, grads.w_q.a) < 1e-4);
    CHECK(fd_check_block(loss_fn, params.w_p.a, grads.w_p.a) < 1e-4);
  }
}

TEST_CASE("nll_gradients on a zero-negative batch are exactly zero") {
  const TinyWorld w = make_tiny_world(17, 5, 6);
  std::mt19937_64 rng(2);
  const EncoderParams params = random_encoder(w.vocab, 3, rng);
  ChainSupervision sup;
  sup.question = &w.questions[0];
  sup.positive = random_chain(w.store, 2, rng);
  const std::vector<ChainSupervision> batch{sup};
  const auto [loss, grads] = nll_gradients(params, w.vocab, batch, w.store);
  CHECK(loss == 0.0);
  for (double g : grads.emb.a) CHECK(g == 0.0);
  for (double g : grads.w_q.a) CHECK(g == 0.0);
  for (double g : grads.w_p.a) CHECK(g == 0.0);
}

TEST_CASE("doubling w_q doubles every step score (recomputation oracle)") {
  const TinyWorld w = make_tiny_world(19, 6, 8);
  std::mt19937_64 rng(9);
  EncoderParams params = random_encoder(w.vocab, 3, rng);
  const Question& q = w.questions[0];
  const EvidenceChain pos = random_chain(w.store, 2, rng);
  const EvidenceChain neg = random_chain(w.store, 2, rng);

  EncoderParams doubled = params;
  for (double& v : doubled.w_q.a) v *= 2.0;

  // Reference: recompute the per-step log-sum-exp from raw similarities,
  // doubling each score by hand.
  auto step_scores = [&](const EncoderParams& pp, const EvidenceChain& chain, std::size_t t) {
    std::vector<Passage> prefix;
    for (std::size_t i = 0; i < t; ++i) prefix.push_back(*w.store.find(chain.piece_ids[i]));
    const Vec qv = encode_query(pp, w.vocab, compose_query(q, prefix));
    return similarity(qv, encode_passage(pp, w.vocab, *w.store.find(chain.piece_ids[t])));
  };
  double expected = 0.0;
  for (std::size_t t = 0; t < 2; ++t) {
    const double sp = 2.0 * step_scores(params, pos, t);
    const double sn = 2.0 * step_scores(params, neg, t);
    expected += logsumexp(Vec{sp, sn}) - sp;
  }
  const double actual = nll_loss(doubled, w.vocab, q, pos, {neg}, w.store);
  CHECK(actual == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("opt_step implements the bias-corrected adaptive update") {
  const Vocabulary vocab = small_vocab();
  EncoderParams p = init_encoder(vocab, 2, 7);
  OptState st = OptState::zeros_like(p, AdamConfig{.lr = 1e-3});

  SUBCASE("first step with unit gradient moves by ~ -lr") {
    const double before = p.emb(1, 0);
    EncGradients g = EncGradients::zeros_like(p);
    g.emb(1, 0) = 1.0;
    opt_step(p, g, st);
    CHECK(p.emb(1, 0) == doctest::Approx(before - 1e-3).epsilon(1e-6));
    CHECK(p.revision == 1);
  }
  SUBCASE("zero gradients leave parameters unchanged") {
    const EncoderParams before = p;
    const EncGradients g = EncGradients::zeros_like(p);
    for (int i = 0; i < 5; ++i) opt_step(p, g, st);
    CHECK(p.emb.a == before.emb.a);
    CHECK(p.w_q.a == before.w_q.a);
  }
  SUBCASE("two identical runs give bitwise-identical trajectories") {
    const TinyWorld w = make_tiny_world(23, 6, 8);
    auto run = [&]() {
      std::mt19937_64 rng(4);
      EncoderParams params = random_encoder(w.vocab, 3, rng);
      OptState opt = OptState::zeros_like(params, AdamConfig{.lr = 1e-3});
      ChainSupervision sup;
      sup.question = &w.questions[0];
      sup.positive = random_chain(w.store, 2, rng);
      sup.negatives.push_back(random_chain(w.store, 2, rng));
      const std::vector<ChainSupervision> batch{sup};
      for (int i = 0; i < 8; ++i) {
        const auto [loss, grads] = nll_gradients(params, w.vocab, batch, w.store);
        (void)loss;
        opt_step(params, grads, opt);
      }
      return params;
    };
    const EncoderParams a = run();
    const EncoderParams b = run();
    CHECK(a.emb.a == b.emb.a);
    CHECK(a.w_q.a == b.w_q.a);
    CHECK(a.w_p.a == b.w_p.a);
  }
}
