#include "chainqa/chain.hpp"

#include <fstream>

#include <json.hpp>

#include "chainqa/io.hpp"

namespace chainqa {

using nlohmann::json;

std::vector<Passage> resolve_pieces(const EvidenceChain& chain, const PassageStore& store) {
  std::vector<Passage> out;
  out.reserve(chain.piece_ids.size());
  for (const std::string& pid : chain.piece_ids) {
    const Passage* p = store.find(pid);
    if (!p) throw DataError("chain references unknown passage '" + pid + "'");
    out.push_back(*p);
  }
  return out;
}

namespace {

json chain_to_json(const EvidenceChain& c) {
  return json{{"pieces", c.piece_ids}, {"step_scores", c.step_scores}, {"chain_score", c.chain_score}};
}

EvidenceChain chain_from_json(const json& j) {
  EvidenceChain c;
  for (const auto& p : j.at("pieces")) c.piece_ids.push_back(p.get<std::string>());
  for (const auto& s : j.at("step_scores")) c.step_scores.push_back(s.get<double>());
  c.chain_score = j.at("chain_score").get<double>();
  return c;
}

}  // namespace

void save_retrievals(const std::filesystem::path& path, std::span<const RetrievedChains> rows) {
  std::string buf;
  for (const RetrievedChains& r : rows) {
    json chains = json::array();
    for (const EvidenceChain& c : r.chains) chains.push_back(chain_to_json(c));
    json j{{"question_id", r.question_id}, {"chains", std::move(chains)}};
    buf += j.dump();
    buf += '\n';
  }
  write_file_atomic(path, buf);
}

std::vector<RetrievedChains> load_retrievals(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path.string());
  std::vector<RetrievedChains> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      RetrievedChains r;
      r.question_id = j.at("question_id").get<std::string>();
      for (const auto& c : j.at("chains")) r.chains.push_back(chain_from_json(c));
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw DataError(path.string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void save_predictions(const std::filesystem::path& path, std::span<const Prediction> rows) {
  std::string buf;
  for (const Prediction& p : rows) {
    json j{{"question_id", p.question_id},
           {"answer", p.answer},
           {"span_prob", p.span_prob},
           {"rerank_prob", p.rerank_prob}};
    buf += j.dump();
    buf += '\n';
  }
  write_file_atomic(path, buf);
}

std::vector<Prediction> load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path.string());
  std::vector<Prediction> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      Prediction p;
      p.question_id = j.at("question_id").get<std::string>();
      p.answer = j.at("answer").get<std::string>();
      p.span_prob = j.value("span_prob", 0.0);
      p.rerank_prob = j.value("rerank_prob", 0.0);
      out.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw DataError(path.string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace chainqa
