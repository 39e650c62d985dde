#pragma once

#include <span>
#include <string>
#include <vector>

#include "chainqa/chain.hpp"
#include "chainqa/data.hpp"
#include "chainqa/encoder.hpp"
#include "chainqa/index.hpp"

namespace chainqa {

struct RetrievalConfig {
  int n_hops = 2;
  std::size_t beam_width = 10;
  std::size_t top_k = 10;  // must be <= beam_width
  /// Chain score combiner. `sum` adds raw step scores (the log of the product
  /// of exponentiated scores); `product` multiplies them and is only sensible
  /// for scoring variants that stay positive.
  enum class Combine { sum, product } score_combine = Combine::sum;
};

/// Question text followed by each piece's title and text, joined with single
/// spaces. The bag-of-tokens encoder makes the separator choice cosmetic, but
/// the order of pieces matters.
std::string compose_query(const Question& question, std::span<const Passage> pieces);

/// Beam search over evidence chains. Hop 1 expands the bare question to
/// beam_width candidates; each later hop re-composes the query from the chain
/// so far and expands by beam_width, skipping passages already in that chain.
/// Chains are ranked by chain_score (ties: lexicographic piece-id sequence);
/// the top_k best full-length chains come back sorted.
std::vector<EvidenceChain> beam_search_retrieve(const DenseIndex& index,
                                                const EncoderParams& params,
                                                const Vocabulary& vocab, const PassageStore& store,
                                                const Question& question,
                                                const RetrievalConfig& cfg);

}  // namespace chainqa
