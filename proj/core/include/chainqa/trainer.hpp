#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "chainqa/checkpoint.hpp"
#include "chainqa/data.hpp"
#include "chainqa/em_config.hpp"
#include "chainqa/encoder.hpp"
#include "chainqa/index.hpp"
#include "chainqa/metrics.hpp"
#include "chainqa/reader.hpp"
#include "chainqa/retriever.hpp"

namespace chainqa {

/// E-step output for one question: the surviving positive chain and the
/// hardest mined negatives. The positive passed every active filter; every
/// negative failed answer matching.
struct TrainExample {
  std::string question_id;
  EvidenceChain positive;
  std::vector<EvidenceChain> negatives;
};

struct FilterVerdict {
  std::vector<std::string> piece_ids;
  double chain_score = 0.0;
  bool answer_match = false;
  bool reader_ok = false;  // meaningful only when the reader filter ran
  std::string outcome;     // "positive" | "negative" | "dropped"
};

struct ExampleAudit {
  std::string question_id;
  bool used = false;
  std::vector<FilterVerdict> verdicts;
};

struct IterationStats {
  int iteration = 0;
  double used_fraction = 0.0;
  double gold_match_fraction = 0.0;
  std::size_t num_examples = 0;
  double answer_recall = 0.0;
  double passage_recall = 0.0;
  double chain_recall = 0.0;
  double mean_margin = 0.0;
  std::size_t eval_k = 10;
};

struct TrainerState {
  Vocabulary vocab;
  EncoderParams enc;
  OptState enc_opt;
  ReaderParams reader;
  ReaderOptState reader_opt;
  DenseIndex index;
  bool reader_ready = false;
};

/// Lexical pseudo-labels: for each question, the highest-scoring passage in
/// the lexical top-k that contains an answer string becomes a single-hop
/// positive; the encoder trains on these pairs with in-batch negatives.
/// Questions without a pseudo-positive are skipped; with none at all the
/// parameters come back unchanged.
EncoderParams warm_start(EncoderParams params, OptState& opt, const LexicalIndex& lex,
                         const PassageStore& store, const std::vector<Question>& train,
                         const Vocabulary& vocab, const EmConfig& cfg);

/// Retrieves top reader_bootstrap_k chains per question, keeps answer-bearing
/// ones, and trains a fresh reader on them (sampling one positive per epoch
/// when several survive). Installs the reader into the state.
void bootstrap_reader(TrainerState& state, const PassageStore& store,
                      const std::vector<Question>& train, const EmConfig& cfg);

/// True iff some normalized answer occurs as a token subsequence of a
/// piece's normalized text (`final_hop_only` restricts to the last piece).
bool answer_match(const EvidenceChain& chain, std::span<const std::string> answers,
                  const PassageStore& store, bool final_hop_only = false);

/// True iff the reader's predicted answer on this single chain matches a
/// gold answer after normalization.
bool reader_filter(const ReaderParams& reader, const Vocabulary& vocab, const Question& question,
                   const EvidenceChain& chain, const PassageStore& store);

struct EStepResult {
  std::vector<TrainExample> examples;
  double used_fraction = 0.0;
  double gold_match_fraction = 0.0;
  std::vector<ExampleAudit> audits;
};

EStepResult e_step(const TrainerState& state, const PassageStore& store,
                   const std::vector<Question>& train, const EmConfig& cfg, int iteration);

/// Mini-batch updates of the retriever (step-wise NLL with mined plus
/// in-batch negatives) and reader (rerank + span MML), then a synchronous
/// index refresh.
void m_step(TrainerState& state, const PassageStore& store, const std::vector<Question>& train,
            const std::vector<TrainExample>& examples, const EmConfig& cfg, int iteration);

/// Per dev question with a gold chain: hop-1 similarity of the gold first
/// passage minus the mean similarity of the 10 highest-scoring non-gold
/// passages.
std::vector<double> margin_diagnostics(const TrainerState& state, const PassageStore& store,
                                       const std::vector<Question>& dev);

struct EmbeddingRow {
  std::string label;  // "Q" or "P:<passage id>"
  bool gold = false;
  Vec vec;
};

/// Query vector plus the hop-1 top-k passage vectors, gold-flagged.
std::vector<EmbeddingRow> dump_embeddings(const TrainerState& state, const Question& question,
                                          std::size_t k);
void write_embeddings_tsv(const std::filesystem::path& path, std::span<const EmbeddingRow> rows);

std::vector<RetrievedChains> retrieve_all(const TrainerState& state, const PassageStore& store,
                                          std::span<const Question> questions,
                                          const RetrievalConfig& rcfg);

struct EmRunResult {
  TrainerState state;
  std::vector<IterationStats> stats;
};

/// Full loop: initialize (warm start + reader bootstrap), then alternate
/// E/M steps, recording stats per iteration. When artifacts_dir is set,
/// writes stats.json, per-iteration example dumps and checkpoints.
EmRunResult run_em(const PassageStore& store, const std::vector<Question>& train,
                   const std::vector<Question>& dev, const EmConfig& cfg,
                   const std::filesystem::path& artifacts_dir = {});

/// Continue a checkpointed run; reproduces the uninterrupted trajectory
/// exactly (streams are re-derived from the stored seed and iteration).
EmRunResult resume_em(const PassageStore& store, const std::vector<Question>& train,
                      const std::vector<Question>& dev, const Checkpoint& cp,
                      const std::filesystem::path& artifacts_dir = {});

TrainerState state_from_checkpoint(const Checkpoint& cp, const PassageStore& store);
Checkpoint checkpoint_from_state(const TrainerState& state, const EmConfig& cfg, int iteration);

std::string stats_to_json(std::span<const IterationStats> stats);
void save_stats(const std::filesystem::path& path, std::span<const IterationStats> stats);

}  // namespace chainqa
