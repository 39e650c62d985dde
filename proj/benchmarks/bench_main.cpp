#include <benchmark/benchmark.h>

#include <random>

#include "chainqa/data.hpp"
#include "chainqa/encoder.hpp"
#include "chainqa/index.hpp"
#include "chainqa/retriever.hpp"

namespace {

using namespace chainqa;

struct World {
  SyntheticData data;
  Vocabulary vocab;
  EncoderParams enc;
  DenseIndex index;

  explicit World(std::size_t passages) {
    GenConfig cfg;
    cfg.num_passages = passages;
    cfg.entities_per_layer = std::max<std::size_t>(40, passages / 14);
    cfg.num_train = 64;
    cfg.num_dev = 16;
    data = generate_synthetic(cfg);
    std::vector<Question> all = data.train;
    all.insert(all.end(), data.dev.begin(), data.dev.end());
    vocab = build_vocab(data.store, all);
    enc = init_encoder(vocab, 64, 1);
    index = DenseIndex::build(enc, vocab, data.store);
  }
};

World& world(std::size_t passages) {
  static World small(2000);
  static World large(20000);
  return passages <= 2000 ? small : large;
}

void BM_DenseSearch(benchmark::State& state) {
  World& w = world(static_cast<std::size_t>(state.range(0)));
  const Vec qv = encode_query(w.enc, w.vocab, w.data.train[0].text);
  for (auto _ : state) {
    benchmark::DoNotOptimize(w.index.search(qv, 10));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(w.index.size()));
}
BENCHMARK(BM_DenseSearch)->Arg(2000)->Arg(20000);

void BM_BuildIndex(benchmark::State& state) {
  World& w = world(2000);
  for (auto _ : state) {
    benchmark::DoNotOptimize(DenseIndex::build(w.enc, w.vocab, w.data.store));
  }
}
BENCHMARK(BM_BuildIndex);

void BM_BeamRetrieve(benchmark::State& state) {
  World& w = world(2000);
  RetrievalConfig rcfg;
  rcfg.beam_width = static_cast<std::size_t>(state.range(0));
  rcfg.top_k = rcfg.beam_width;
  std::size_t qi = 0;
  for (auto _ : state) {
    const Question& q = w.data.train[qi++ % w.data.train.size()];
    benchmark::DoNotOptimize(
        beam_search_retrieve(w.index, w.enc, w.vocab, w.data.store, q, rcfg));
  }
}
BENCHMARK(BM_BeamRetrieve)->Arg(10)->Arg(50);

void BM_NllGradients(benchmark::State& state) {
  World& w = world(2000);
  RetrievalConfig rcfg;
  rcfg.beam_width = 4;
  rcfg.top_k = 4;
  std::vector<ChainSupervision> batch;
  for (std::size_t i = 0; i < 32; ++i) {
    const Question& q = w.data.train[i];
    auto chains = beam_search_retrieve(w.index, w.enc, w.vocab, w.data.store, q, rcfg);
    ChainSupervision sup;
    sup.question = &q;
    sup.positive = chains[0];
    sup.negatives.assign(chains.begin() + 1, chains.end());
    batch.push_back(std::move(sup));
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(nll_gradients(w.enc, w.vocab, batch, w.data.store));
  }
}
BENCHMARK(BM_NllGradients);

}  // namespace

BENCHMARK_MAIN();
