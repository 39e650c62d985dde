#include "chainqa/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <unordered_map>

#include <json.hpp>

#include "chainqa/io.hpp"
#include "chainqa/normalize.hpp"

namespace chainqa {

using nlohmann::json;

namespace {

std::unordered_map<std::string, const Question*> question_map(
    const std::vector<Question>& questions) {
  std::unordered_map<std::string, const Question*> m;
  for (const Question& q : questions) m[q.id] = &q;
  return m;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

// In-batch negatives: everyone else's positive chain, skipping exact
// duplicates of the example's own positive.
std::vector<ChainSupervision> build_encoder_batch(
    const std::vector<const TrainExample*>& batch,
    const std::unordered_map<std::string, const Question*>& qmap) {
  std::vector<ChainSupervision> sups;
  sups.reserve(batch.size());
  for (const TrainExample* ex : batch) {
    auto it = qmap.find(ex->question_id);
    if (it == qmap.end())
      throw DataError("m_step: unknown question id '" + ex->question_id + "'");
    ChainSupervision sup;
    sup.question = it->second;
    sup.positive = ex->positive;
    sup.negatives = ex->negatives;
    for (const TrainExample* other : batch) {
      if (other == ex) continue;
      if (other->positive.piece_ids == ex->positive.piece_ids) continue;
      sup.negatives.push_back(other->positive);
    }
    sups.push_back(std::move(sup));
  }
  return sups;
}

}  // namespace

bool answer_match(const EvidenceChain& chain, std::span<const std::string> answers,
                  const PassageStore& store, bool final_hop_only) {
  if (chain.piece_ids.empty()) return false;
  const std::size_t first = final_hop_only ? chain.piece_ids.size() - 1 : 0;
  for (std::size_t i = first; i < chain.piece_ids.size(); ++i) {
    const Passage* p = store.find(chain.piece_ids[i]);
    if (!p) throw DataError("answer_match: unknown passage '" + chain.piece_ids[i] + "'");
    if (text_contains_answer(p->text, answers)) return true;
  }
  return false;
}

bool reader_filter(const ReaderParams& reader, const Vocabulary& vocab, const Question& question,
                   const EvidenceChain& chain, const PassageStore& store) {
  const EvidenceChain chains[] = {chain};
  const SpanPrediction pred = predict_answer(reader, vocab, question, chains, store);
  const std::string got = normalize_answer(pred.answer_text);
  return std::any_of(question.answers.begin(), question.answers.end(),
                     [&](const std::string& a) { return normalize_answer(a) == got; });
}

EncoderParams warm_start(EncoderParams params, OptState& opt, const LexicalIndex& lex,
                         const PassageStore& store, const std::vector<Question>& train,
                         const Vocabulary& vocab, const EmConfig& cfg) {
  std::vector<ChainSupervision> examples;
  for (const Question& q : train) {
    const auto hits = lex.search(q.text, cfg.warmstart_lexical_topk);
    for (const auto& [pid, score] : hits) {
      const Passage* p = store.find(pid);
      if (p && text_contains_answer(p->text, q.answers)) {
        ChainSupervision sup;
        sup.question = &q;
        sup.positive.piece_ids = {pid};
        sup.positive.step_scores = {score};
        sup.positive.chain_score = score;
        examples.push_back(std::move(sup));
        break;  // highest-scoring match only
      }
    }
  }
  if (examples.empty()) return params;

  for (int epoch = 0; epoch < cfg.warmstart_epochs; ++epoch) {
    auto rng = make_rng(cfg.seed, {kStreamWarmStart, static_cast<std::uint64_t>(epoch)});
    const auto order = shuffled_indices(examples.size(), rng);
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      std::vector<ChainSupervision> batch;
      batch.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        ChainSupervision sup = examples[order[i]];
        for (std::size_t j = begin; j < end; ++j) {
          if (j == i) continue;
          const ChainSupervision& other = examples[order[j]];
          if (other.positive.piece_ids == sup.positive.piece_ids) continue;
          sup.negatives.push_back(other.positive);
        }
        batch.push_back(std::move(sup));
      }
      const auto [loss, grads] = nll_gradients(params, vocab, batch, store);
      (void)loss;
      opt_step(params, grads, opt);
    }
  }
  return params;
}

void bootstrap_reader(TrainerState& state, const PassageStore& store,
                      const std::vector<Question>& train, const EmConfig& cfg) {
  RetrievalConfig rcfg;
  rcfg.n_hops = cfg.n_hops;
  rcfg.beam_width = cfg.reader_bootstrap_k;
  rcfg.top_k = cfg.reader_bootstrap_k;

  struct Candidate {
    const Question* question;
    std::vector<EvidenceChain> positives;
    std::vector<EvidenceChain> negatives;
  };
  std::vector<Candidate> candidates;
  for (const Question& q : train) {
    const auto chains = beam_search_retrieve(state.index, state.enc, state.vocab, store, q, rcfg);
    Candidate c;
    c.question = &q;
    for (const EvidenceChain& chain : chains) {
      if (answer_match(chain, q.answers, store, cfg.answer_match_final_hop_only)) {
        c.positives.push_back(chain);
      } else if (c.negatives.size() < cfg.negatives_per_question) {
        c.negatives.push_back(chain);
      }
    }
    if (!c.positives.empty()) candidates.push_back(std::move(c));
  }
  if (candidates.empty())
    throw DataError(
        "bootstrap_reader: no question retrieved answer-bearing evidence; generate an easier "
        "dataset (more passages per entity, fewer hops, or a larger retrieval depth)");

  state.reader = init_reader(state.enc.emb, cfg.dim, cfg.seed);
  state.reader_opt = ReaderOptState::zeros_like(state.reader, AdamConfig{.lr = cfg.lr});

  for (int epoch = 0; epoch < cfg.reader_bootstrap_epochs; ++epoch) {
    auto rng = make_rng(cfg.seed, {kStreamBootstrap, static_cast<std::uint64_t>(epoch)});
    std::vector<ReaderSupervision> sups;
    sups.reserve(candidates.size());
    for (const Candidate& c : candidates) {
      ReaderSupervision sup;
      sup.question = c.question;
      sup.positive = c.positives.size() == 1
                         ? c.positives[0]
                         : c.positives[rng() % c.positives.size()];
      sup.negatives = c.negatives;
      sups.push_back(std::move(sup));
    }
    const auto order = shuffled_indices(sups.size(), rng);
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      std::vector<ReaderSupervision> batch;
      for (std::size_t i = begin; i < end; ++i) batch.push_back(sups[order[i]]);
      const auto [loss, grads] = reader_gradients(state.reader, state.vocab, batch, store);
      (void)loss;
      reader_opt_step(state.reader, grads, state.reader_opt);
    }
  }
  state.reader_ready = true;
}

EStepResult e_step(const TrainerState& state, const PassageStore& store,
                   const std::vector<Question>& train, const EmConfig& cfg, int iteration) {
  if (cfg.filter_mode == FilterMode::answer_reader && !state.reader_ready)
    throw DataError("e_step: reader filter requested before the reader was bootstrapped");

  RetrievalConfig rcfg;
  rcfg.n_hops = cfg.n_hops;
  rcfg.beam_width = cfg.k_estep;
  rcfg.top_k = cfg.k_estep;

  auto rng = make_rng(cfg.seed, {kStreamEStep, static_cast<std::uint64_t>(iteration)});

  EStepResult res;
  std::size_t gold_matches = 0, used_with_gold_denominator = 0;
  for (const Question& q : train) {
    const auto chains = beam_search_retrieve(state.index, state.enc, state.vocab, store, q, rcfg);

    ExampleAudit audit;
    audit.question_id = q.id;

    std::vector<const EvidenceChain*> survivors;  // filter-passing positives, score order
    std::vector<const EvidenceChain*> non_matching;
    for (const EvidenceChain& chain : chains) {
      FilterVerdict v;
      v.piece_ids = chain.piece_ids;
      v.chain_score = chain.chain_score;
      v.answer_match = answer_match(chain, q.answers, store, cfg.answer_match_final_hop_only);
      if (!v.answer_match) {
        non_matching.push_back(&chain);
        v.outcome = "negative";
      } else if (cfg.filter_mode == FilterMode::answer_reader) {
        v.reader_ok = reader_filter(state.reader, state.vocab, q, chain, store);
        if (v.reader_ok) {
          survivors.push_back(&chain);
          v.outcome = "positive";
        } else {
          v.outcome = "dropped";
        }
      } else {
        survivors.push_back(&chain);
        v.outcome = "positive";
      }
      audit.verdicts.push_back(std::move(v));
    }

    const EvidenceChain* positive = nullptr;
    if (cfg.filter_mode == FilterMode::none) {
      positive = chains.empty() ? nullptr : &chains[0];  // top-1 regardless of the answer
    } else if (!survivors.empty()) {
      positive = cfg.positive_selection == PositiveSelection::top1
                     ? survivors[0]
                     : survivors[rng() % survivors.size()];
    }

    if (positive && cfg.gold_only &&
        (q.gold_chain.empty() || positive->piece_ids != q.gold_chain)) {
      positive = nullptr;
    }

    if (positive) {
      std::vector<EvidenceChain> negatives;
      for (const EvidenceChain* neg : non_matching) {
        if (negatives.size() == cfg.negatives_per_question) break;
        if (neg->piece_ids == positive->piece_ids) continue;
        negatives.push_back(*neg);
      }
      if (!negatives.empty()) {
        TrainExample ex;
        ex.question_id = q.id;
        ex.positive = *positive;
        ex.negatives = std::move(negatives);
        res.examples.push_back(std::move(ex));
        audit.used = true;
        ++used_with_gold_denominator;
        if (!q.gold_chain.empty() && positive->piece_ids == q.gold_chain) ++gold_matches;
      }
    }
    res.audits.push_back(std::move(audit));
  }

  res.used_fraction = train.empty() ? 0.0
                                    : static_cast<double>(res.examples.size()) /
                                          static_cast<double>(train.size());
  res.gold_match_fraction =
      used_with_gold_denominator == 0
          ? 0.0
          : static_cast<double>(gold_matches) / static_cast<double>(used_with_gold_denominator);
  return res;
}

void m_step(TrainerState& state, const PassageStore& store, const std::vector<Question>& train,
            const std::vector<TrainExample>& examples, const EmConfig& cfg, int iteration) {
  if (examples.empty()) throw DataError("m_step: no training examples");
  const auto qmap = question_map(train);

  try {
    for (int epoch = 0; epoch < cfg.epochs_per_mstep; ++epoch) {
      auto rng = make_rng(cfg.seed, {kStreamMStepEncoder, static_cast<std::uint64_t>(iteration),
                                     static_cast<std::uint64_t>(epoch)});
      const auto order = shuffled_indices(examples.size(), rng);
      for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
        const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
        std::vector<const TrainExample*> batch;
        for (std::size_t i = begin; i < end; ++i) batch.push_back(&examples[order[i]]);
        const auto sups = build_encoder_batch(batch, qmap);
        const auto [loss, grads] = nll_gradients(state.enc, state.vocab, sups, store);
        (void)loss;
        opt_step(state.enc, grads, state.enc_opt);
      }
    }

    // Reader updates train only on positives that actually carry an answer
    // occurrence (under filter_mode=none they may not).
    std::vector<const TrainExample*> readable;
    for (const TrainExample& ex : examples) {
      auto it = qmap.find(ex.question_id);
      if (it == qmap.end()) throw DataError("m_step: unknown question id '" + ex.question_id + "'");
      if (answer_match(ex.positive, it->second->answers, store, false)) readable.push_back(&ex);
    }
    if (!readable.empty() && state.reader_ready) {
      if (cfg.reader_share_embeddings) state.reader.emb = state.enc.emb;
      for (int epoch = 0; epoch < cfg.epochs_per_mstep; ++epoch) {
        auto rng = make_rng(cfg.seed, {kStreamMStepReader, static_cast<std::uint64_t>(iteration),
                                       static_cast<std::uint64_t>(epoch)});
        const auto order = shuffled_indices(readable.size(), rng);
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
          const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
          std::vector<ReaderSupervision> batch;
          for (std::size_t i = begin; i < end; ++i) {
            const TrainExample* ex = readable[order[i]];
            ReaderSupervision sup;
            sup.question = qmap.at(ex->question_id);
            sup.positive = ex->positive;
            sup.negatives = ex->negatives;
            batch.push_back(std::move(sup));
          }
          const auto [loss, grads] = reader_gradients(state.reader, state.vocab, batch, store);
          (void)loss;
          reader_opt_step(state.reader, grads, state.reader_opt);
        }
      }
      if (cfg.reader_share_embeddings) {
        state.enc.emb = state.reader.emb;
        ++state.enc.revision;
      }
    }
  } catch (const NumericError& e) {
    throw NumericError("m_step iteration " + std::to_string(iteration) + ": " + e.what());
  }

  state.index.refresh(state.enc, state.vocab, store);
}

std::vector<double> margin_diagnostics(const TrainerState& state, const PassageStore& store,
                                       const std::vector<Question>& dev) {
  std::vector<double> margins;
  for (const Question& q : dev) {
    if (q.gold_chain.empty()) continue;
    const Vec qv = encode_query(state.enc, state.vocab, q.text);
    const double gold_sim = similarity(qv, state.index.vector_of(q.gold_chain[0]));
    const auto top = state.index.search(qv, 10, q.gold_chain);
    if (top.empty()) continue;
    double mean = 0.0;
    for (const auto& [pid, score] : top) mean += score;
    mean /= static_cast<double>(top.size());
    margins.push_back(gold_sim - mean);
  }
  (void)store;
  return margins;
}

std::vector<EmbeddingRow> dump_embeddings(const TrainerState& state, const Question& question,
                                          std::size_t k) {
  std::vector<EmbeddingRow> rows;
  EmbeddingRow qrow;
  qrow.label = "Q";
  qrow.vec = encode_query(state.enc, state.vocab, question.text);
  rows.push_back(std::move(qrow));
  for (const auto& [pid, score] : state.index.search(rows[0].vec, k)) {
    (void)score;
    EmbeddingRow row;
    row.label = "P:" + pid;
    row.gold = std::find(question.gold_chain.begin(), question.gold_chain.end(), pid) !=
               question.gold_chain.end();
    const auto v = state.index.vector_of(pid);
    row.vec.assign(v.begin(), v.end());
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_embeddings_tsv(const std::filesystem::path& path, std::span<const EmbeddingRow> rows) {
  std::string buf;
  char num[40];
  for (const EmbeddingRow& row : rows) {
    buf += row.label;
    buf += '\t';
    buf += row.gold ? '1' : '0';
    for (double v : row.vec) {
      std::snprintf(num, sizeof(num), "\t%.17g", v);
      buf += num;
    }
    buf += '\n';
  }
  write_file_atomic(path, buf);
}

std::vector<RetrievedChains> retrieve_all(const TrainerState& state, const PassageStore& store,
                                          std::span<const Question> questions,
                                          const RetrievalConfig& rcfg) {
  std::vector<RetrievedChains> out;
  out.reserve(questions.size());
  for (const Question& q : questions) {
    RetrievedChains r;
    r.question_id = q.id;
    r.chains = beam_search_retrieve(state.index, state.enc, state.vocab, store, q, rcfg);
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

IterationStats eval_iteration(const TrainerState& state, const PassageStore& store,
                              const std::vector<Question>& dev, const EmConfig& cfg,
                              int iteration) {
  IterationStats st;
  st.iteration = iteration;
  st.eval_k = cfg.eval_k;
  if (!dev.empty()) {
    RetrievalConfig rcfg;
    rcfg.n_hops = cfg.n_hops;
    rcfg.beam_width = cfg.eval_k;
    rcfg.top_k = cfg.eval_k;
    const auto retrievals = retrieve_all(state, store, dev, rcfg);
    st.answer_recall = answer_recall(retrievals, dev, store);
    st.passage_recall = passage_recall(retrievals, dev);
    st.chain_recall = chain_recall(retrievals, dev);
    const auto margins = margin_diagnostics(state, store, dev);
    if (!margins.empty()) {
      st.mean_margin = std::accumulate(margins.begin(), margins.end(), 0.0) /
                       static_cast<double>(margins.size());
    }
  }
  return st;
}

std::string iteration_file(const char* stem, int iteration, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_iter%04d%s", stem, iteration, ext);
  return buf;
}

void write_examples_dump(const std::filesystem::path& path, const EStepResult& es) {
  std::string buf;
  std::unordered_map<std::string, const TrainExample*> by_id;
  for (const TrainExample& ex : es.examples) by_id[ex.question_id] = &ex;
  for (const ExampleAudit& audit : es.audits) {
    json verdicts = json::array();
    for (const FilterVerdict& v : audit.verdicts) {
      verdicts.push_back(json{{"pieces", v.piece_ids},
                              {"chain_score", v.chain_score},
                              {"answer_match", v.answer_match},
                              {"reader_ok", v.reader_ok},
                              {"outcome", v.outcome}});
    }
    json j{{"question_id", audit.question_id}, {"used", audit.used},
           {"verdicts", std::move(verdicts)}};
    auto it = by_id.find(audit.question_id);
    if (it != by_id.end()) {
      const TrainExample* ex = it->second;
      j["positive"] = json{{"pieces", ex->positive.piece_ids},
                           {"chain_score", ex->positive.chain_score}};
      json negs = json::array();
      for (const EvidenceChain& n : ex->negatives)
        negs.push_back(json{{"pieces", n.piece_ids}, {"chain_score", n.chain_score}});
      j["negatives"] = std::move(negs);
    }
    buf += j.dump();
    buf += '\n';
  }
  write_file_atomic(path, buf);
}

// Shared tail of run_em/resume_em: iterations start_iter..cfg.iterations.
EmRunResult run_loop(TrainerState state, const PassageStore& store,
                     const std::vector<Question>& train, const std::vector<Question>& dev,
                     const EmConfig& cfg, int start_iter, std::vector<IterationStats> stats,
                     const std::filesystem::path& artifacts_dir) {
  const bool write_artifacts = !artifacts_dir.empty();
  if (write_artifacts) std::filesystem::create_directories(artifacts_dir);

  auto dump_iteration = [&](int iter, const EStepResult* es) {
    if (!write_artifacts) return;
    save_stats(artifacts_dir / "stats.json", stats);
    if (es) write_examples_dump(artifacts_dir / iteration_file("examples", iter, ".jsonl"), *es);
    save_checkpoint(artifacts_dir / iteration_file("checkpoint", iter, ".ckpt"),
                    checkpoint_from_state(state, cfg, iter));
  };

  if (start_iter == 0) {
    stats.push_back(eval_iteration(state, store, dev, cfg, 0));
    dump_iteration(0, nullptr);
    start_iter = 1;
  }

  double best_recall = -1.0;
  int stalled = 0;
  for (const IterationStats& st : stats) best_recall = std::max(best_recall, st.chain_recall);

  for (int iter = start_iter; iter <= cfg.iterations; ++iter) {
    EStepResult es = e_step(state, store, train, cfg, iter);
    m_step(state, store, train, es.examples, cfg, iter);

    IterationStats st = eval_iteration(state, store, dev, cfg, iter);
    st.used_fraction = es.used_fraction;
    st.gold_match_fraction = es.gold_match_fraction;
    st.num_examples = es.examples.size();
    stats.push_back(st);
    dump_iteration(iter, &es);

    if (cfg.early_stop) {
      if (st.chain_recall - best_recall < cfg.early_stop_min_delta) {
        ++stalled;
      } else {
        stalled = 0;
      }
      best_recall = std::max(best_recall, st.chain_recall);
      if (stalled >= cfg.early_stop_patience) break;
    }
  }

  return EmRunResult{std::move(state), std::move(stats)};
}

}  // namespace

EmRunResult run_em(const PassageStore& store, const std::vector<Question>& train,
                   const std::vector<Question>& dev, const EmConfig& cfg,
                   const std::filesystem::path& artifacts_dir) {
  if (store.size() == 0) throw DataError("run_em: empty passage store");
  if (train.empty()) throw DataError("run_em: no training questions");
  validate_gold_chains(train, store, cfg.n_hops);
  validate_gold_chains(dev, store, cfg.n_hops);

  TrainerState state;
  std::vector<Question> all = train;
  all.insert(all.end(), dev.begin(), dev.end());
  state.vocab = build_vocab(store, all);
  state.enc = init_encoder(state.vocab, cfg.dim, cfg.seed);
  state.enc_opt = OptState::zeros_like(state.enc, AdamConfig{.lr = cfg.lr});

  if (cfg.init_mode == InitMode::lexical_warmstart) {
    const LexicalIndex lex = LexicalIndex::build(store);
    state.enc = warm_start(std::move(state.enc), state.enc_opt, lex, store, train, state.vocab, cfg);
  }
  state.index = DenseIndex::build(state.enc, state.vocab, store);
  bootstrap_reader(state, store, train, cfg);

  return run_loop(std::move(state), store, train, dev, cfg, 0, {}, artifacts_dir);
}

EmRunResult resume_em(const PassageStore& store, const std::vector<Question>& train,
                      const std::vector<Question>& dev, const Checkpoint& cp,
                      const std::filesystem::path& artifacts_dir) {
  TrainerState state = state_from_checkpoint(cp, store);
  if (!cp.reader_bootstrapped) bootstrap_reader(state, store, train, cp.em);
  const int start_iter = cp.iteration == 0 ? 0 : cp.iteration + 1;
  return run_loop(std::move(state), store, train, dev, cp.em, start_iter, {}, artifacts_dir);
}

TrainerState state_from_checkpoint(const Checkpoint& cp, const PassageStore& store) {
  TrainerState state;
  state.vocab = cp.vocab;
  state.enc = cp.enc;
  state.enc_opt = cp.enc_opt;
  state.reader = cp.reader;
  state.reader_opt = cp.reader_opt;
  state.reader_ready = cp.reader_bootstrapped;
  state.index = DenseIndex::build(state.enc, state.vocab, store);
  return state;
}

Checkpoint checkpoint_from_state(const TrainerState& state, const EmConfig& cfg, int iteration) {
  Checkpoint cp;
  cp.vocab = state.vocab;
  cp.enc = state.enc;
  cp.enc_opt = state.enc_opt;
  cp.reader = state.reader;
  cp.reader_opt = state.reader_opt;
  cp.em = cfg;
  cp.seed = cfg.seed;
  cp.iteration = iteration;
  cp.reader_bootstrapped = state.reader_ready;
  return cp;
}

std::string stats_to_json(std::span<const IterationStats> stats) {
  json arr = json::array();
  for (const IterationStats& st : stats) {
    arr.push_back(json{{"iteration", st.iteration},
                       {"used_fraction", st.used_fraction},
                       {"gold_match_fraction", st.gold_match_fraction},
                       {"num_examples", st.num_examples},
                       {"answer_recall", st.answer_recall},
                       {"passage_recall", st.passage_recall},
                       {"chain_recall", st.chain_recall},
                       {"mean_margin", st.mean_margin},
                       {"k", st.eval_k}});
  }
  json j{{"schema_version", 1}, {"stats", std::move(arr)}};
  return j.dump(2) + "\n";
}

void save_stats(const std::filesystem::path& path, std::span<const IterationStats> stats) {
  write_file_atomic(path, stats_to_json(stats));
}

}  // namespace chainqa
