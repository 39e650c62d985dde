#include "chainqa/retriever.hpp"

#include <algorithm>

namespace chainqa {

std::string compose_query(const Question& question, std::span<const Passage> pieces) {
  std::string out = question.text;
  for (const Passage& p : pieces) {
    if (!p.title.empty()) {
      out += ' ';
      out += p.title;
    }
    out += ' ';
    out += p.text;
  }
  return out;
}

namespace {

bool chain_less(const EvidenceChain& a, const EvidenceChain& b) {
  if (a.chain_score != b.chain_score) return a.chain_score > b.chain_score;
  return a.piece_ids < b.piece_ids;
}

}  // namespace

std::vector<EvidenceChain> beam_search_retrieve(const DenseIndex& index,
                                                const EncoderParams& params,
                                                const Vocabulary& vocab, const PassageStore& store,
                                                const Question& question,
                                                const RetrievalConfig& cfg) {
  if (cfg.n_hops < 1) throw DataError("beam search: n_hops must be >= 1");
  if (cfg.beam_width < 1 || cfg.top_k < 1) throw DataError("beam search: beam_width and top_k must be >= 1");
  if (cfg.top_k > cfg.beam_width) throw DataError("beam search: top_k exceeds beam_width");
  if (store.size() < static_cast<std::size_t>(cfg.n_hops))
    throw DataError("beam search: store smaller than the number of hops");
  if (index.encoder_revision() != params.revision)
    throw StaleIndexError("beam search: index is stale for the given encoder parameters");

  const bool product = cfg.score_combine == RetrievalConfig::Combine::product;
  std::vector<EvidenceChain> beam;

  for (int hop = 0; hop < cfg.n_hops; ++hop) {
    std::vector<EvidenceChain> expanded;
    const auto expand = [&](const EvidenceChain& prefix) {
      std::vector<Passage> pieces = resolve_pieces(prefix, store);
      const Vec qv = encode_query(params, vocab, compose_query(question, pieces));
      // Ask for enough extra hits to cover the skipped in-chain passages.
      const auto hits = index.search(qv, cfg.beam_width + prefix.piece_ids.size(),
                                     prefix.piece_ids);
      std::size_t taken = 0;
      for (const auto& [pid, score] : hits) {
        if (taken++ == cfg.beam_width) break;
        EvidenceChain next = prefix;
        next.piece_ids.push_back(pid);
        next.step_scores.push_back(score);
        next.chain_score = product ? (hop == 0 ? score : next.chain_score * score)
                                   : next.chain_score + score;
        expanded.push_back(std::move(next));
      }
    };

    if (hop == 0) {
      expand(EvidenceChain{});
    } else {
      for (const EvidenceChain& prefix : beam) expand(prefix);
    }

    std::sort(expanded.begin(), expanded.end(), chain_less);
    if (expanded.size() > cfg.beam_width) expanded.resize(cfg.beam_width);
    beam = std::move(expanded);
    if (beam.empty()) break;
  }

  if (beam.size() > cfg.top_k) beam.resize(cfg.top_k);
  return beam;
}

}  // namespace chainqa
