#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "chainqa/chain.hpp"
#include "chainqa/data.hpp"
#include "chainqa/mat.hpp"
#include "chainqa/opt.hpp"

namespace chainqa {

/// Dual encoder: shared token embeddings, one linear projection per side.
/// A query/passage vector is its projection applied to the mean token
/// embedding, so passage vectors can be computed offline and scored by dot
/// product.
struct EncoderParams {
  std::size_t dim = 64;
  Mat emb;   // |V| x d; row 0 is the unknown-token row (zero at init)
  Mat w_q;   // d x d query projection
  Mat w_p;   // d x d passage projection
  std::uint64_t revision = 0;  // bumped by every optimizer step
};

/// Embedding rows ~ U(-0.5/d, 0.5/d) except the zero UNK row; both
/// projections start at identity so the shared-token lexical signal passes
/// through untrained.
EncoderParams init_encoder(const Vocabulary& vocab, std::size_t dim, std::uint64_t seed);

/// Mean embedding of the given token ids; empty input yields the zero vector.
Vec mean_embedding(const Mat& emb, std::span<const int> ids);

Vec encode_passage(const EncoderParams& params, const Vocabulary& vocab, const Passage& passage);
Vec encode_query(const EncoderParams& params, const Vocabulary& vocab, std::string_view query_text);

/// Dot product; throws on dimension mismatch.
double similarity(std::span<const double> qv, std::span<const double> pv);

struct EncGradients {
  Mat emb, w_q, w_p;
  static EncGradients zeros_like(const EncoderParams& p);
};

/// One step-wise contrastive training instance: a positive chain and the
/// negative chains it is scored against (each negative conditions on its own
/// prefix). Negatives shorter than the positive simply drop out of the later
/// steps.
struct ChainSupervision {
  const Question* question = nullptr;
  EvidenceChain positive;
  std::vector<EvidenceChain> negatives;
};

/// Sum over steps t of -log softmax of the positive step score against the
/// negatives' step scores, computed in log-sum-exp form. Zero negatives give
/// exactly 0.
double nll_loss(const EncoderParams& params, const Vocabulary& vocab, const Question& question,
                const EvidenceChain& positive, const std::vector<EvidenceChain>& negatives,
                const PassageStore& store);

/// Mean batch loss and its analytic gradient w.r.t. emb, w_q, w_p.
std::pair<double, EncGradients> nll_gradients(const EncoderParams& params, const Vocabulary& vocab,
                                              std::span<const ChainSupervision> batch,
                                              const PassageStore& store);

struct OptState {
  AdamConfig cfg;
  std::int64_t step = 0;
  Mat m_emb, v_emb, m_wq, v_wq, m_wp, v_wp;
  static OptState zeros_like(const EncoderParams& p, AdamConfig cfg = {});
};

void opt_step(EncoderParams& params, const EncGradients& grads, OptState& state);

}  // namespace chainqa
