#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "chainqa/data.hpp"

namespace chainqa {

/// Ordered sequence of evidence pieces with per-hop raw similarity scores.
/// chain_score is the sum of step_scores (see RetrievalConfig::score_combine).
struct EvidenceChain {
  std::vector<std::string> piece_ids;
  std::vector<double> step_scores;
  double chain_score = 0.0;
};

std::vector<Passage> resolve_pieces(const EvidenceChain& chain, const PassageStore& store);

struct RetrievedChains {
  std::string question_id;
  std::vector<EvidenceChain> chains;
};

struct Prediction {
  std::string question_id;
  std::string answer;
  double span_prob = 0.0;
  double rerank_prob = 0.0;
};

void save_retrievals(const std::filesystem::path& path, std::span<const RetrievedChains> rows);
std::vector<RetrievedChains> load_retrievals(const std::filesystem::path& path);
void save_predictions(const std::filesystem::path& path, std::span<const Prediction> rows);
std::vector<Prediction> load_predictions(const std::filesystem::path& path);

}  // namespace chainqa
