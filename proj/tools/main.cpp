// chainqa command line: data generation, training, retrieval, answering,
// evaluation and diagnostics for the evidence-mining QA pipeline.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "chainqa/chain.hpp"
#include "chainqa/io.hpp"
#include "chainqa/checkpoint.hpp"
#include "chainqa/data.hpp"
#include "chainqa/index.hpp"
#include "chainqa/metrics.hpp"
#include "chainqa/normalize.hpp"
#include "chainqa/reader.hpp"
#include "chainqa/retriever.hpp"
#include "chainqa/trainer.hpp"

namespace fs = std::filesystem;
using namespace chainqa;

namespace {

// CHAINQA_SEED wins over flags and config files.
void apply_seed_override(std::uint64_t& seed) {
  if (const char* env = std::getenv("CHAINQA_SEED")) {
    seed = std::strtoull(env, nullptr, 10);
  }
}

struct EmFlags {
  EmConfig cfg;
  std::string filter_mode = "answer+reader";
  std::string positive_selection = "top1";
  std::string init_mode = "lexical_warmstart";
  bool no_early_stop = false;

  void resolve() {
    cfg.filter_mode = parse_filter_mode(filter_mode);
    cfg.positive_selection = parse_positive_selection(positive_selection);
    cfg.init_mode = parse_init_mode(init_mode);
    if (no_early_stop) cfg.early_stop = false;
    apply_seed_override(cfg.seed);
  }
};

void add_em_options(CLI::App* cmd, EmFlags& f) {
  cmd->add_option("--iterations", f.cfg.iterations, "EM iterations (0 = baseline stats only)");
  cmd->add_option("--k-estep", f.cfg.k_estep, "E-step retrieval depth");
  cmd->add_option("--filter-mode", f.filter_mode, "none | answer | answer+reader");
  cmd->add_option("--positive-selection", f.positive_selection, "top1 | sample_topk");
  cmd->add_option("--negatives", f.cfg.negatives_per_question, "mined negatives per question");
  cmd->add_option("--init-mode", f.init_mode, "lexical_warmstart | random");
  cmd->add_option("--bootstrap-k", f.cfg.reader_bootstrap_k, "reader bootstrap retrieval depth");
  cmd->add_option("--bootstrap-epochs", f.cfg.reader_bootstrap_epochs, "reader bootstrap epochs");
  cmd->add_option("--epochs", f.cfg.epochs_per_mstep, "epochs per M-step");
  cmd->add_option("--seed", f.cfg.seed, "master seed");
  cmd->add_option("--hops", f.cfg.n_hops, "retrieval steps per chain");
  cmd->add_option("--dim", f.cfg.dim, "embedding dimension");
  cmd->add_option("--batch-size", f.cfg.batch_size, "mini-batch size");
  cmd->add_option("--lr", f.cfg.lr, "learning rate");
  cmd->add_option("--eval-k", f.cfg.eval_k, "dev retrieval depth for per-iteration metrics");
  cmd->add_option("--warmstart-topk", f.cfg.warmstart_lexical_topk, "lexical mining depth");
  cmd->add_option("--warmstart-epochs", f.cfg.warmstart_epochs, "warm start epochs");
  cmd->add_flag("--final-hop-only", f.cfg.answer_match_final_hop_only,
                "answer matching looks at the final hop only");
  cmd->add_flag("--gold-only", f.cfg.gold_only, "keep only mined positives equal to gold (ablation)");
  cmd->add_flag("--share-embeddings", f.cfg.reader_share_embeddings,
                "reader shares the encoder's embedding table");
  cmd->add_flag("--no-early-stop", f.no_early_stop, "always run the full iteration budget");
  cmd->add_option("--early-stop-delta", f.cfg.early_stop_min_delta,
                  "minimum chain-recall improvement that resets the stall counter");
  cmd->add_option("--early-stop-patience", f.cfg.early_stop_patience,
                  "stalled iterations before stopping");
}

TrainerState state_from_checkpoint_file(const fs::path& ckpt, const PassageStore& store,
                                        const std::string& index_cache) {
  const Checkpoint cp = load_checkpoint(ckpt);
  TrainerState state;
  state.vocab = cp.vocab;
  state.enc = cp.enc;
  state.enc_opt = cp.enc_opt;
  state.reader = cp.reader;
  state.reader_opt = cp.reader_opt;
  state.reader_ready = cp.reader_bootstrapped;
  if (!index_cache.empty() && fs::exists(index_cache)) {
    DenseIndex cached = DenseIndex::load(index_cache);
    if (cached.encoder_revision() == state.enc.revision && cached.size() == store.size() &&
        cached.dim() == state.enc.dim) {
      state.index = std::move(cached);
      return state;
    }
  }
  state.index = DenseIndex::build(state.enc, state.vocab, store);
  if (!index_cache.empty()) state.index.save(index_cache);
  return state;
}

void print_stats_line(const IterationStats& st) {
  std::printf(
      "iter %2d  used %.3f  gold_match %.3f  answer_r %.3f  passage_r %.3f  chain_r %.3f  "
      "margin %+.5f\n",
      st.iteration, st.used_fraction, st.gold_match_fraction, st.answer_recall, st.passage_recall,
      st.chain_recall, st.mean_margin);
}

int run(int argc, char** argv) {
  CLI::App app{"weakly-supervised multi-hop QA: dense retriever + reader trained by hard-EM "
               "evidence mining"};
  app.require_subcommand(1);
  app.set_config("--config", "", "read options from a key=value (TOML-style) file");

  // --- gen-data ---
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus and question sets");
  GenConfig gcfg;
  std::string gen_out;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--num-passages", gcfg.num_passages);
  gen->add_option("--num-train", gcfg.num_train);
  gen->add_option("--num-dev", gcfg.num_dev);
  gen->add_option("--hops", gcfg.hops);
  gen->add_option("--distractor-fraction", gcfg.distractor_fraction);
  gen->add_option("--entities", gcfg.entities_per_layer);
  gen->add_option("--relations", gcfg.relations);
  gen->add_option("--seed", gcfg.seed);

  // --- warm-start ---
  auto* warm = app.add_subcommand("warm-start", "initialize the retriever from lexical pseudo-labels");
  std::string warm_passages, warm_train, warm_out;
  EmFlags warm_flags;
  warm->add_option("--passages", warm_passages)->required();
  warm->add_option("--train", warm_train)->required();
  warm->add_option("--out", warm_out, "checkpoint path")->required();
  add_em_options(warm, warm_flags);

  // --- train ---
  auto* train = app.add_subcommand("train", "run the full hard-EM training loop");
  std::string train_passages, train_train, train_dev, train_out, train_resume;
  EmFlags train_flags;
  train->add_option("--passages", train_passages)->required();
  train->add_option("--train", train_train)->required();
  train->add_option("--dev", train_dev)->required();
  train->add_option("--out", train_out, "artifacts directory")->required();
  train->add_option("--resume", train_resume, "checkpoint to resume from");
  add_em_options(train, train_flags);

  // --- retrieve ---
  auto* retrieve = app.add_subcommand("retrieve", "beam-search evidence chains for questions");
  std::string r_ckpt, r_passages, r_questions, r_out, r_cache;
  std::size_t r_topk = 10, r_beam = 0;
  int r_hops = 0;
  retrieve->add_option("--checkpoint", r_ckpt)->required();
  retrieve->add_option("--passages", r_passages)->required();
  retrieve->add_option("--questions", r_questions)->required();
  retrieve->add_option("--out", r_out)->required();
  retrieve->add_option("--top-k", r_topk, "chains per question");
  retrieve->add_option("--beam", r_beam, "beam width (default: top-k)");
  retrieve->add_option("--hops", r_hops, "override hop count (default: from checkpoint)");
  retrieve->add_option("--index-cache", r_cache, "binary index cache path");

  // --- answer ---
  auto* answer = app.add_subcommand("answer", "rerank retrieved chains and extract answer spans");
  std::string a_ckpt, a_passages, a_questions, a_out, a_rerank_out, a_cache;
  std::size_t a_pool = 100, a_rerank_top = 10;
  answer->add_option("--checkpoint", a_ckpt)->required();
  answer->add_option("--passages", a_passages)->required();
  answer->add_option("--questions", a_questions)->required();
  answer->add_option("--out", a_out, "predictions JSONL")->required();
  answer->add_option("--pool", a_pool, "retrieval pool fed to the reranker");
  answer->add_option("--rerank-top", a_rerank_top, "chains kept after reranking");
  answer->add_option("--reranked-out", a_rerank_out, "optionally dump the reranked chains");
  answer->add_option("--index-cache", a_cache, "binary index cache path");

  // --- eval ---
  auto* eval = app.add_subcommand("eval", "score retrievals/predictions against gold data");
  std::string e_questions, e_passages, e_retrievals, e_predictions, e_out;
  std::size_t e_k = 10;
  bool e_single_chain = false;
  eval->add_option("--questions", e_questions)->required();
  eval->add_option("--passages", e_passages)->required();
  eval->add_option("--retrievals", e_retrievals)->required();
  eval->add_option("--predictions", e_predictions);
  eval->add_option("--out", e_out, "report JSON")->required();
  eval->add_option("--k", e_k, "reported retrieval depth");
  eval->add_flag("--single-chain", e_single_chain,
                 "chain recall requires all gold pieces inside one retrieved chain");

  // --- ablate ---
  auto* ablate = app.add_subcommand("ablate", "sweep filter modes and related ablations");
  std::string ab_passages, ab_train, ab_dev, ab_out, ab_modes = "none,answer,answer+reader";
  bool ab_sample = false, ab_gold_only = false;
  EmFlags ab_flags;
  ablate->add_option("--passages", ab_passages)->required();
  ablate->add_option("--train", ab_train)->required();
  ablate->add_option("--dev", ab_dev)->required();
  ablate->add_option("--out", ab_out, "report directory")->required();
  ablate->add_option("--modes", ab_modes, "comma-separated filter modes");
  ablate->add_flag("--with-sample-topk", ab_sample, "also sweep positive_selection=sample_topk");
  ablate->add_flag("--with-gold-only", ab_gold_only, "also run the gold-only ablation");
  add_em_options(ablate, ab_flags);

  // --- baseline-tfidf ---
  auto* tfidf = app.add_subcommand("baseline-tfidf", "unsupervised lexical retrieval baseline");
  std::string t_passages, t_questions, t_out;
  std::size_t t_topk = 10;
  tfidf->add_option("--passages", t_passages)->required();
  tfidf->add_option("--questions", t_questions)->required();
  tfidf->add_option("--out", t_out)->required();
  tfidf->add_option("--top-k", t_topk);

  // --- dump-embeddings ---
  auto* dump = app.add_subcommand("dump-embeddings", "export query/passage vectors as TSV");
  std::string d_ckpt, d_passages, d_questions, d_qid, d_out, d_cache;
  std::size_t d_k = 10;
  dump->add_option("--checkpoint", d_ckpt)->required();
  dump->add_option("--passages", d_passages)->required();
  dump->add_option("--questions", d_questions)->required();
  dump->add_option("--question-id", d_qid, "default: first question in the file");
  dump->add_option("--k", d_k, "passages per dump");
  dump->add_option("--out", d_out)->required();
  dump->add_option("--index-cache", d_cache, "binary index cache path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 1;
  }

  if (gen->parsed()) {
    apply_seed_override(gcfg.seed);
    const SyntheticData data = generate_synthetic(gcfg);
    fs::create_directories(gen_out);
    save_passages(fs::path(gen_out) / "passages.jsonl", data.store);
    save_questions(fs::path(gen_out) / "train.jsonl", data.train);
    save_questions(fs::path(gen_out) / "dev.jsonl", data.dev);
    std::printf("wrote %zu passages, %zu train / %zu dev questions to %s\n", data.store.size(),
                data.train.size(), data.dev.size(), gen_out.c_str());
  } else if (warm->parsed()) {
    warm_flags.resolve();
    const EmConfig& cfg = warm_flags.cfg;
    const PassageStore store = load_passages(warm_passages);
    const std::vector<Question> train_qs = load_questions(warm_train);
    TrainerState state;
    state.vocab = build_vocab(store, train_qs);
    state.enc = init_encoder(state.vocab, cfg.dim, cfg.seed);
    state.enc_opt = OptState::zeros_like(state.enc, AdamConfig{.lr = cfg.lr});
    const LexicalIndex lex = LexicalIndex::build(store);
    state.enc = warm_start(std::move(state.enc), state.enc_opt, lex, store, train_qs, state.vocab, cfg);
    state.reader = init_reader(state.enc.emb, cfg.dim, cfg.seed);
    state.reader_opt = ReaderOptState::zeros_like(state.reader, AdamConfig{.lr = cfg.lr});
    save_checkpoint(warm_out, checkpoint_from_state(state, cfg, 0));
    std::printf("warm-started encoder saved to %s\n", warm_out.c_str());
  } else if (train->parsed()) {
    train_flags.resolve();
    const PassageStore store = load_passages(train_passages);
    const std::vector<Question> train_qs = load_questions(train_train);
    const std::vector<Question> dev_qs = load_questions(train_dev);
    EmRunResult result;
    if (!train_resume.empty()) {
      Checkpoint cp = load_checkpoint(train_resume);
      result = resume_em(store, train_qs, dev_qs, cp, train_out);
    } else {
      result = run_em(store, train_qs, dev_qs, train_flags.cfg, train_out);
    }
    for (const IterationStats& st : result.stats) print_stats_line(st);
  } else if (retrieve->parsed()) {
    const PassageStore store = load_passages(r_passages);
    const std::vector<Question> questions = load_questions(r_questions);
    const TrainerState state = state_from_checkpoint_file(r_ckpt, store, r_cache);
    const Checkpoint cp = load_checkpoint(r_ckpt);
    RetrievalConfig rcfg;
    rcfg.n_hops = r_hops > 0 ? r_hops : cp.em.n_hops;
    rcfg.top_k = r_topk;
    rcfg.beam_width = std::max(r_beam, r_topk);
    const auto retrievals = retrieve_all(state, store, questions, rcfg);
    save_retrievals(r_out, retrievals);
    std::printf("wrote %zu retrievals to %s\n", retrievals.size(), r_out.c_str());
  } else if (answer->parsed()) {
    const PassageStore store = load_passages(a_passages);
    const std::vector<Question> questions = load_questions(a_questions);
    const TrainerState state = state_from_checkpoint_file(a_ckpt, store, a_cache);
    const Checkpoint cp = load_checkpoint(a_ckpt);
    RetrievalConfig rcfg;
    rcfg.n_hops = cp.em.n_hops;
    rcfg.top_k = a_pool;
    rcfg.beam_width = a_pool;
    std::vector<Prediction> predictions;
    std::vector<RetrievedChains> reranked;
    for (const Question& q : questions) {
      const auto chains =
          beam_search_retrieve(state.index, state.enc, state.vocab, store, q, rcfg);
      if (chains.empty()) continue;
      const Vec probs = rerank(state.reader, state.vocab, q, chains, store);
      std::vector<std::size_t> order(chains.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t x, std::size_t y) { return probs[x] > probs[y]; });
      const std::size_t keep = std::min(a_rerank_top, order.size());
      std::vector<EvidenceChain> top;
      for (std::size_t i = 0; i < keep; ++i) top.push_back(chains[order[i]]);
      const SpanPrediction span = predict_answer(state.reader, state.vocab, q, top, store);
      predictions.push_back(Prediction{q.id, span.answer_text, span.span_prob, span.rerank_prob});
      if (!a_rerank_out.empty()) reranked.push_back(RetrievedChains{q.id, std::move(top)});
    }
    save_predictions(a_out, predictions);
    if (!a_rerank_out.empty()) save_retrievals(a_rerank_out, reranked);
    std::printf("wrote %zu predictions to %s\n", predictions.size(), a_out.c_str());
  } else if (eval->parsed()) {
    const PassageStore store = load_passages(e_passages);
    const std::vector<Question> questions = load_questions(e_questions);
    const auto retrievals = load_retrievals(e_retrievals);
    std::vector<Prediction> predictions;
    if (!e_predictions.empty()) predictions = load_predictions(e_predictions);
    const MetricsReport rep = evaluate(retrievals, predictions, questions, store, e_k, e_single_chain);
    save_report(e_out, rep);
    std::printf("answer_recall %.4f  passage_recall %.4f  chain_recall %.4f  exact_match %.4f\n",
                rep.answer_recall, rep.passage_recall, rep.chain_recall, rep.exact_match);
  } else if (ablate->parsed()) {
    ab_flags.resolve();
    const PassageStore store = load_passages(ab_passages);
    const std::vector<Question> train_qs = load_questions(ab_train);
    const std::vector<Question> dev_qs = load_questions(ab_dev);
    fs::create_directories(ab_out);

    struct Variant {
      std::string name;
      EmConfig cfg;
    };
    std::vector<Variant> variants;
    std::stringstream modes(ab_modes);
    std::string mode;
    while (std::getline(modes, mode, ',')) {
      if (mode.empty()) continue;
      EmConfig cfg = ab_flags.cfg;
      cfg.filter_mode = parse_filter_mode(mode);
      variants.push_back({"filter=" + mode, cfg});
    }
    if (ab_sample) {
      EmConfig cfg = ab_flags.cfg;
      cfg.positive_selection = PositiveSelection::sample_topk;
      variants.push_back({"positive=sample_topk", cfg});
    }
    if (ab_gold_only) {
      EmConfig cfg = ab_flags.cfg;
      cfg.gold_only = true;
      variants.push_back({"gold_only", cfg});
    }

    nlohmann::json runs = nlohmann::json::array();
    for (const Variant& v : variants) {
      std::printf("== %s ==\n", v.name.c_str());
      const EmRunResult result = run_em(store, train_qs, dev_qs, v.cfg);
      for (const IterationStats& st : result.stats) print_stats_line(st);
      runs.push_back(nlohmann::json{{"variant", v.name},
                                    {"filter_mode", to_string(v.cfg.filter_mode)},
                                    {"positive_selection", to_string(v.cfg.positive_selection)},
                                    {"gold_only", v.cfg.gold_only},
                                    {"stats", nlohmann::json::parse(stats_to_json(result.stats))}});
    }
    nlohmann::json report{{"schema_version", 1}, {"runs", std::move(runs)}};
    write_file_atomic(fs::path(ab_out) / "ablate_report.json", report.dump(2) + "\n");
    std::printf("wrote %s/ablate_report.json\n", ab_out.c_str());
  } else if (tfidf->parsed()) {
    const PassageStore store = load_passages(t_passages);
    const std::vector<Question> questions = load_questions(t_questions);
    const LexicalIndex lex = LexicalIndex::build(store);
    std::vector<RetrievedChains> retrievals;
    for (const Question& q : questions) {
      RetrievedChains r;
      r.question_id = q.id;
      for (const auto& [pid, score] : lex.search(q.text, t_topk)) {
        EvidenceChain c;
        c.piece_ids = {pid};
        c.step_scores = {score};
        c.chain_score = score;
        r.chains.push_back(std::move(c));
      }
      retrievals.push_back(std::move(r));
    }
    save_retrievals(t_out, retrievals);
    std::printf("wrote %zu retrievals to %s\n", retrievals.size(), t_out.c_str());
  } else if (dump->parsed()) {
    const PassageStore store = load_passages(d_passages);
    const std::vector<Question> questions = load_questions(d_questions);
    if (questions.empty()) throw DataError("dump-embeddings: empty question file");
    const TrainerState state = state_from_checkpoint_file(d_ckpt, store, d_cache);
    const Question* q = &questions.front();
    if (!d_qid.empty()) {
      q = nullptr;
      for (const Question& cand : questions) {
        if (cand.id == d_qid) {
          q = &cand;
          break;
        }
      }
      if (!q) throw DataError("dump-embeddings: question id '" + d_qid + "' not found");
    }
    const auto rows = dump_embeddings(state, *q, d_k);
    write_embeddings_tsv(d_out, rows);
    std::printf("wrote %zu rows to %s\n", rows.size(), d_out.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const StaleIndexError& e) {
    std::cerr << "stale index: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
