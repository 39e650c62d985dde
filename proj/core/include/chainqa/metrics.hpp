#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "chainqa/chain.hpp"
#include "chainqa/data.hpp"
#include "chainqa/normalize.hpp"

namespace chainqa {

struct QuestionOutcome {
  std::string question_id;
  bool answer_hit = false;
  std::optional<bool> passage_hit;  // unset when the question has no gold chain
  std::optional<bool> chain_hit;
  std::optional<bool> exact_match;  // unset when there is no prediction
};

struct MetricsReport {
  std::size_t k = 10;
  double answer_recall = 0.0;
  double passage_recall = 0.0;
  double chain_recall = 0.0;
  double exact_match = 0.0;
  std::size_t num_questions = 0;
  std::size_t num_with_gold = 0;
  std::size_t num_predictions = 0;
  bool single_chain_containment = false;
  std::vector<QuestionOutcome> per_question;
};

/// Fraction of questions with an answer string (token-subsequence after
/// normalization) in any retrieved piece.
double answer_recall(std::span<const RetrievedChains> retrievals,
                     std::span<const Question> questions, const PassageStore& store);

/// Fraction of gold-annotated questions with at least one gold passage among
/// the retrieved pieces.
double passage_recall(std::span<const RetrievedChains> retrievals,
                      std::span<const Question> questions);

/// Fraction of gold-annotated questions whose every gold passage appears
/// among the retrieved pieces (set containment across the top-k chains by
/// default; `single_chain` requires one chain to contain them all).
double chain_recall(std::span<const RetrievedChains> retrievals,
                    std::span<const Question> questions, bool single_chain = false);

/// Fraction of questions whose normalized prediction equals a normalized
/// gold answer.
double exact_match_score(std::span<const Prediction> predictions,
                         std::span<const Question> questions);

MetricsReport evaluate(std::span<const RetrievedChains> retrievals,
                       std::span<const Prediction> predictions,
                       std::span<const Question> questions, const PassageStore& store,
                       std::size_t k, bool single_chain = false);

void save_report(const std::filesystem::path& path, const MetricsReport& report);

}  // namespace chainqa
