#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "chainqa/chain.hpp"
#include "chainqa/data.hpp"
#include "chainqa/mat.hpp"
#include "chainqa/opt.hpp"

namespace chainqa {

/// Pairwise question-evidence model. Every sequence token is mixed with the
/// mean question embedding through a tanh interaction layer; the pooled
/// vector drives chain reranking and the per-token vectors drive span
/// start/end classifiers.
struct ReaderParams {
  std::size_t dim = 64;
  std::size_t max_span_len = 10;  // answers are short entity strings
  Mat emb;                        // |V| x d token embeddings (reader-owned)
  Mat w_int;                      // d x 3d interaction projection
  Vec w_rank, w_start, w_end;     // d
  std::uint64_t revision = 0;
};

/// Fresh interaction/classifier weights; embeddings start from `emb_init`
/// (typically a copy of the encoder's current embedding table).
ReaderParams init_reader(const Mat& emb_init, std::size_t dim, std::uint64_t seed,
                         std::size_t max_span_len = 10);

struct TokenOrigin {
  enum class Kind : std::uint8_t { cls, question, title, evidence };
  Kind kind = Kind::cls;
  std::int32_t piece = -1;      // index into the chain, -1 for cls/question
  std::size_t char_begin = 0;   // byte range into the source piece text/title
  std::size_t char_end = 0;
};

struct JointEncoding {
  Mat u;                            // L x d interaction vectors
  Vec cls_vec;                      // mean over all rows of u
  Vec qbar;                         // mean question-token embedding
  std::vector<int> token_ids;       // -1 at the cls position
  std::vector<TokenOrigin> origin;  // per position
  std::size_t length() const { return u.rows; }
};

JointEncoding encode_joint(const ReaderParams& rp, const Vocabulary& vocab,
                           const Question& question, std::span<const Passage> pieces);

/// Softmax over per-chain logits cls_vec . w_rank, across this question's
/// candidate chains.
Vec rerank(const ReaderParams& rp, const Vocabulary& vocab, const Question& question,
           std::span<const EvidenceChain> chains, const PassageStore& store);

/// P(start) and P(end): softmax over all positions of U w_start / U w_end.
std::pair<Vec, Vec> span_scores(const ReaderParams& rp, const JointEncoding& enc);

struct SpanPrediction {
  std::size_t chain_index = 0;
  std::size_t start = 0, end = 0;  // token positions, start <= end
  std::string answer_text;         // exact source substring
  double span_prob = 0.0;          // P(start) * P(end)
  double rerank_prob = 0.0;
};

/// Highest-rerank chain (ties: lower index), then the best valid span inside
/// it: start <= end, length < max_span_len, endpoints inside one evidence
/// region. Span ties break toward the earlier start, then the shorter span.
SpanPrediction predict_answer(const ReaderParams& rp, const Vocabulary& vocab,
                              const Question& question, std::span<const EvidenceChain> chains,
                              const PassageStore& store);

/// -log P(positive | all chains) - log sum of span probabilities over every
/// evidence span whose normalized text equals a normalized answer (maximum
/// marginal likelihood). Throws if the positive chain has no occurrence.
double reader_loss(const ReaderParams& rp, const Vocabulary& vocab, const Question& question,
                   const EvidenceChain& positive, std::span<const EvidenceChain> negatives,
                   std::span<const std::string> answers, const PassageStore& store);

struct ReaderSupervision {
  const Question* question = nullptr;
  EvidenceChain positive;
  std::vector<EvidenceChain> negatives;
};

struct ReaderGradients {
  Mat emb, w_int;
  Vec w_rank, w_start, w_end;
  static ReaderGradients zeros_like(const ReaderParams& rp);
};

std::pair<double, ReaderGradients> reader_gradients(const ReaderParams& rp,
                                                    const Vocabulary& vocab,
                                                    std::span<const ReaderSupervision> batch,
                                                    const PassageStore& store);

struct ReaderOptState {
  AdamConfig cfg;
  std::int64_t step = 0;
  Mat m_emb, v_emb, m_wint, v_wint;
  Vec m_rank, v_rank, m_start, v_start, m_end, v_end;
  static ReaderOptState zeros_like(const ReaderParams& rp, AdamConfig cfg = {});
};

void reader_opt_step(ReaderParams& rp, const ReaderGradients& grads, ReaderOptState& state);

}  // namespace chainqa
