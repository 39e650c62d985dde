#include "chainqa/metrics.hpp"

#include <algorithm>
#include <set>
#include <unordered_map>

#include <json.hpp>

#include "chainqa/io.hpp"

namespace chainqa {

using nlohmann::json;

namespace {

std::unordered_map<std::string, const RetrievedChains*> by_question(
    std::span<const RetrievedChains> retrievals) {
  std::unordered_map<std::string, const RetrievedChains*> m;
  for (const RetrievedChains& r : retrievals) m[r.question_id] = &r;
  return m;
}

bool answer_hit_for(const RetrievedChains* r, const Question& q, const PassageStore& store) {
  if (!r) return false;
  for (const EvidenceChain& chain : r->chains) {
    for (const std::string& pid : chain.piece_ids) {
      const Passage* p = store.find(pid);
      if (p && text_contains_answer(p->text, q.answers)) return true;
    }
  }
  return false;
}

std::set<std::string> retrieved_piece_set(const RetrievedChains* r) {
  std::set<std::string> s;
  if (r) {
    for (const EvidenceChain& chain : r->chains) s.insert(chain.piece_ids.begin(), chain.piece_ids.end());
  }
  return s;
}

bool passage_hit_for(const RetrievedChains* r, const Question& q) {
  const auto pieces = retrieved_piece_set(r);
  return std::any_of(q.gold_chain.begin(), q.gold_chain.end(),
                     [&](const std::string& g) { return pieces.count(g) > 0; });
}

bool chain_hit_for(const RetrievedChains* r, const Question& q, bool single_chain) {
  if (!r) return false;
  if (single_chain) {
    for (const EvidenceChain& chain : r->chains) {
      const std::set<std::string> pieces(chain.piece_ids.begin(), chain.piece_ids.end());
      if (std::all_of(q.gold_chain.begin(), q.gold_chain.end(),
                      [&](const std::string& g) { return pieces.count(g) > 0; }))
        return true;
    }
    return false;
  }
  const auto pieces = retrieved_piece_set(r);
  return std::all_of(q.gold_chain.begin(), q.gold_chain.end(),
                     [&](const std::string& g) { return pieces.count(g) > 0; });
}

bool em_hit_for(const Prediction& p, const Question& q) {
  const std::string pred = normalize_answer(p.answer);
  return std::any_of(q.answers.begin(), q.answers.end(),
                     [&](const std::string& a) { return normalize_answer(a) == pred; });
}

}  // namespace

double answer_recall(std::span<const RetrievedChains> retrievals,
                     std::span<const Question> questions, const PassageStore& store) {
  if (questions.empty()) return 0.0;
  const auto lookup = by_question(retrievals);
  std::size_t hits = 0;
  for (const Question& q : questions) {
    auto it = lookup.find(q.id);
    if (answer_hit_for(it == lookup.end() ? nullptr : it->second, q, store)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(questions.size());
}

double passage_recall(std::span<const RetrievedChains> retrievals,
                      std::span<const Question> questions) {
  const auto lookup = by_question(retrievals);
  std::size_t with_gold = 0, hits = 0;
  for (const Question& q : questions) {
    if (q.gold_chain.empty()) continue;
    ++with_gold;
    auto it = lookup.find(q.id);
    if (passage_hit_for(it == lookup.end() ? nullptr : it->second, q)) ++hits;
  }
  return with_gold == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(with_gold);
}

double chain_recall(std::span<const RetrievedChains> retrievals,
                    std::span<const Question> questions, bool single_chain) {
  const auto lookup = by_question(retrievals);
  std::size_t with_gold = 0, hits = 0;
  for (const Question& q : questions) {
    if (q.gold_chain.empty()) continue;
    ++with_gold;
    auto it = lookup.find(q.id);
    if (chain_hit_for(it == lookup.end() ? nullptr : it->second, q, single_chain)) ++hits;
  }
  return with_gold == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(with_gold);
}

double exact_match_score(std::span<const Prediction> predictions,
                         std::span<const Question> questions) {
  if (questions.empty()) return 0.0;
  std::unordered_map<std::string, const Prediction*> lookup;
  for (const Prediction& p : predictions) lookup[p.question_id] = &p;
  std::size_t hits = 0;
  for (const Question& q : questions) {
    auto it = lookup.find(q.id);
    if (it != lookup.end() && em_hit_for(*it->second, q)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(questions.size());
}

MetricsReport evaluate(std::span<const RetrievedChains> retrievals,
                       std::span<const Prediction> predictions,
                       std::span<const Question> questions, const PassageStore& store,
                       std::size_t k, bool single_chain) {
  MetricsReport rep;
  rep.k = k;
  rep.num_questions = questions.size();
  rep.num_predictions = predictions.size();
  rep.single_chain_containment = single_chain;

  const auto chain_lookup = by_question(retrievals);
  std::unordered_map<std::string, const Prediction*> pred_lookup;
  for (const Prediction& p : predictions) pred_lookup[p.question_id] = &p;

  std::size_t answer_hits = 0, passage_hits = 0, chain_hits = 0, em_hits = 0;
  for (const Question& q : questions) {
    QuestionOutcome out;
    out.question_id = q.id;
    auto rit = chain_lookup.find(q.id);
    const RetrievedChains* r = rit == chain_lookup.end() ? nullptr : rit->second;
    out.answer_hit = answer_hit_for(r, q, store);
    if (out.answer_hit) ++answer_hits;
    if (!q.gold_chain.empty()) {
      ++rep.num_with_gold;
      out.passage_hit = passage_hit_for(r, q);
      out.chain_hit = chain_hit_for(r, q, single_chain);
      if (*out.passage_hit) ++passage_hits;
      if (*out.chain_hit) ++chain_hits;
    }
    auto pit = pred_lookup.find(q.id);
    if (pit != pred_lookup.end()) {
      out.exact_match = em_hit_for(*pit->second, q);
      if (*out.exact_match) ++em_hits;
    }
    rep.per_question.push_back(std::move(out));
  }

  const auto frac = [](std::size_t n, std::size_t d) {
    return d == 0 ? 0.0 : static_cast<double>(n) / static_cast<double>(d);
  };
  rep.answer_recall = frac(answer_hits, rep.num_questions);
  rep.passage_recall = frac(passage_hits, rep.num_with_gold);
  rep.chain_recall = frac(chain_hits, rep.num_with_gold);
  rep.exact_match = frac(em_hits, rep.num_questions);
  return rep;
}

void save_report(const std::filesystem::path& path, const MetricsReport& rep) {
  json per = json::array();
  for (const QuestionOutcome& q : rep.per_question) {
    json j{{"question_id", q.question_id}, {"answer_hit", q.answer_hit}};
    if (q.passage_hit) j["passage_hit"] = *q.passage_hit;
    if (q.chain_hit) j["chain_hit"] = *q.chain_hit;
    if (q.exact_match) j["exact_match"] = *q.exact_match;
    per.push_back(std::move(j));
  }
  json j{{"schema_version", 1},
         {"k", rep.k},
         {"answer_recall", rep.answer_recall},
         {"passage_recall", rep.passage_recall},
         {"chain_recall", rep.chain_recall},
         {"exact_match", rep.exact_match},
         {"num_questions", rep.num_questions},
         {"num_with_gold", rep.num_with_gold},
         {"num_predictions", rep.num_predictions},
         {"single_chain_containment", rep.single_chain_containment},
         {"per_question", std::move(per)}};
  write_file_atomic(path, j.dump(2) + "\n");
}

}  // namespace chainqa
