#include "chainqa/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "chainqa/io.hpp"

namespace chainqa {

using nlohmann::json;

PassageStore::PassageStore(std::vector<Passage> passages) : passages_(std::move(passages)) {
  std::sort(passages_.begin(), passages_.end(),
            [](const Passage& a, const Passage& b) { return a.id < b.id; });
  by_id_.reserve(passages_.size());
  for (std::size_t i = 0; i < passages_.size(); ++i) {
    const Passage& p = passages_[i];
    if (p.id.empty()) throw DataError("passage with empty id");
    if (p.text.empty()) throw DataError("passage '" + p.id + "' has empty text");
    if (!by_id_.emplace(p.id, i).second)
      throw DataError("duplicate passage id '" + p.id + "'");
  }
}

const Passage* PassageStore::find(std::string_view id) const {
  auto it = by_id_.find(std::string(id));
  return it == by_id_.end() ? nullptr : &passages_[it->second];
}

std::optional<std::size_t> PassageStore::row_of(std::string_view id) const {
  auto it = by_id_.find(std::string(id));
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

std::vector<TokenSpan> tokenize_spans(std::string_view text) {
  std::vector<TokenSpan> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (!std::isalnum(c)) {
      ++i;
      continue;
    }
    std::size_t j = i;
    std::string tok;
    while (j < text.size() && std::isalnum(static_cast<unsigned char>(text[j]))) {
      tok.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[j]))));
      ++j;
    }
    out.push_back(TokenSpan{std::move(tok), i, j});
    i = j;
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  for (auto& ts : tokenize_spans(text)) out.push_back(std::move(ts.token));
  return out;
}

Vocabulary::Vocabulary() : tokens_{"<unk>"} {}

Vocabulary::Vocabulary(std::vector<std::string> known) {
  tokens_.reserve(known.size() + 1);
  tokens_.push_back("<unk>");
  ids_.reserve(known.size());
  for (auto& t : known) {
    const int id = static_cast<int>(tokens_.size());
    if (!ids_.emplace(t, id).second) throw DataError("vocabulary token repeated: " + t);
    tokens_.push_back(std::move(t));
  }
}

int Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnkId : it->second;
}

Vocabulary build_vocab(const PassageStore& store, const std::vector<Question>& questions) {
  std::set<std::string> seen;
  for (const Passage& p : store.passages()) {
    for (auto& t : tokenize(p.title)) seen.insert(std::move(t));
    for (auto& t : tokenize(p.text)) seen.insert(std::move(t));
  }
  for (const Question& q : questions) {
    for (auto& t : tokenize(q.text)) seen.insert(std::move(t));
  }
  return Vocabulary(std::vector<std::string>(seen.begin(), seen.end()));
}

std::vector<int> token_ids(const Vocabulary& vocab, std::string_view text) {
  std::vector<int> ids;
  for (const auto& t : tokenize(text)) ids.push_back(vocab.id(t));
  return ids;
}

// ---------------------------------------------------------------------------
// Synthetic world generation
// ---------------------------------------------------------------------------

namespace {

const char* const kSyllables[] = {
    "ba", "den", "kor", "mal", "tir", "vex", "zan", "lor", "qui", "fen",
    "gar", "hul", "ist", "jov", "kel", "lum", "mir", "nox", "oda", "pel",
    "rud", "sev", "tam", "urn", "vol", "wex", "yar", "zem", "bri", "cla",
    "dro", "eph", "fra", "gli", "hem", "ilo", "jun", "kra", "lyn", "mos"};
constexpr std::size_t kNumSyllables = sizeof(kSyllables) / sizeof(kSyllables[0]);

class WordMint {
 public:
  explicit WordMint(std::mt19937_64& rng) : rng_(rng) {}

  std::string fresh() {
    for (int attempt = 0; attempt < 10000; ++attempt) {
      const int parts = 2 + static_cast<int>(rng_() % 2);
      std::string w;
      for (int p = 0; p < parts; ++p) w += kSyllables[rng_() % kNumSyllables];
      if (used_.insert(w).second) return w;
    }
    throw DataError("generate_synthetic: word pool exhausted; reduce world size");
  }

 private:
  std::mt19937_64& rng_;
  std::unordered_set<std::string> used_;
};

std::string entity_name(WordMint& mint) { return mint.fresh() + " " + mint.fresh(); }

std::string passage_id(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "p%06zu", i);
  return buf;
}

}  // namespace

SyntheticData generate_synthetic(const GenConfig& cfg) {
  const int n = cfg.hops;
  const std::size_t E = cfg.entities_per_layer;
  const std::size_t R = static_cast<std::size_t>(cfg.relations);
  const std::size_t num_q = cfg.num_train + cfg.num_dev;

  if (n < 1) throw DataError("generate_synthetic: hops must be >= 1");
  if (R < 1) throw DataError("generate_synthetic: relations must be >= 1");
  if (E < 2) throw DataError("generate_synthetic: entities_per_layer must be >= 2");
  if (E < R)
    throw DataError("generate_synthetic: entities_per_layer < relations (cannot pick distinct link targets)");
  if (cfg.distractor_fraction < 0.0 || cfg.distractor_fraction > 1.0)
    throw DataError("generate_synthetic: distractor_fraction outside [0,1]");
  if (num_q == 0) throw DataError("generate_synthetic: no questions requested");

  const std::size_t link_count = static_cast<std::size_t>(n) * E * R;
  const std::size_t distractor_count = static_cast<std::size_t>(
      std::ceil(cfg.distractor_fraction * static_cast<double>(cfg.num_passages)));
  if (link_count + distractor_count > cfg.num_passages)
    throw DataError("generate_synthetic: num_passages too small for " + std::to_string(link_count) +
                    " link passages + " + std::to_string(distractor_count) + " distractors");

  double tuple_space = static_cast<double>(E);
  for (int t = 0; t < n; ++t) tuple_space *= static_cast<double>(R);
  if (tuple_space < static_cast<double>(num_q))
    throw DataError("generate_synthetic: fewer relation paths than requested questions");

  auto rng = make_rng(cfg.seed, {kStreamGen});
  WordMint mint(rng);

  // Entities per layer, relation wording per hop. Question-side relation
  // words are disjoint from passage-side words: the mapping between them is
  // what the retriever has to learn, since plain term matching cannot see it.
  std::vector<std::vector<std::string>> names(static_cast<std::size_t>(n) + 1);
  for (auto& layer : names) {
    layer.reserve(E);
    for (std::size_t i = 0; i < E; ++i) layer.push_back(entity_name(mint));
  }
  std::vector<std::string> layer_noun(static_cast<std::size_t>(n) + 1);
  for (auto& w : layer_noun) w = mint.fresh();
  std::vector<std::vector<std::string>> rel_passage(n), rel_question(n);
  for (int t = 0; t < n; ++t) {
    for (std::size_t r = 0; r < R; ++r) {
      rel_passage[t].push_back(mint.fresh());
      rel_question[t].push_back(mint.fresh());
    }
  }

  // link[t][e][r] = entity index in layer t+1 reached from entity e of layer t
  // via relation slot r; targets are distinct per source entity.
  std::vector<std::vector<std::vector<std::size_t>>> link(n);
  for (int t = 0; t < n; ++t) {
    link[t].resize(E);
    for (std::size_t e = 0; e < E; ++e) {
      std::vector<std::size_t> pool(E);
      for (std::size_t i = 0; i < E; ++i) pool[i] = i;
      std::shuffle(pool.begin(), pool.end(), rng);
      link[t][e].assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(R));
    }
  }

  std::vector<Passage> passages;
  passages.reserve(cfg.num_passages);
  // link_pid[t][e][r] = passage id describing that edge
  std::vector<std::vector<std::vector<std::string>>> link_pid(n);
  for (int t = 0; t < n; ++t) {
    link_pid[t].resize(E, std::vector<std::string>(R));
    for (std::size_t e = 0; e < E; ++e) {
      for (std::size_t r = 0; r < R; ++r) {
        const std::string& src = names[t][e];
        const std::string& dst = names[t + 1][link[t][e][r]];
        Passage p;
        p.id = passage_id(passages.size());
        p.title = src;
        // Short and glue-free: with mean-pooled encodings, every extra token
        // dilutes the name-overlap signal the first untrained hops rely on.
        p.text = src + " " + rel_passage[t][r] + " " + dst + " " + layer_noun[t + 1];
        link_pid[t][e][r] = p.id;
        passages.push_back(std::move(p));
      }
    }
  }

  // Questions: distinct relation paths (e0, r_1..r_n).
  std::vector<std::uint64_t> tuples;
  {
    std::uint64_t total = E;
    for (int t = 0; t < n; ++t) total *= R;
    if (total <= (1u << 22)) {
      tuples.resize(total);
      for (std::uint64_t i = 0; i < total; ++i) tuples[i] = i;
      std::shuffle(tuples.begin(), tuples.end(), rng);
      tuples.resize(num_q);
    } else {
      std::unordered_set<std::uint64_t> picked;
      while (picked.size() < num_q) picked.insert(rng() % total);
      tuples.assign(picked.begin(), picked.end());
      std::sort(tuples.begin(), tuples.end());
      std::shuffle(tuples.begin(), tuples.end(), rng);
    }
  }

  std::vector<Question> train, dev;
  std::vector<std::size_t> answer_entities;  // layer-n indices used as answers
  for (std::size_t qi = 0; qi < num_q; ++qi) {
    std::uint64_t code = tuples[qi];
    std::vector<std::size_t> rels(n);
    for (int t = n - 1; t >= 0; --t) {
      rels[t] = code % R;
      code /= R;
    }
    const std::size_t e0 = static_cast<std::size_t>(code);

    Question q;
    std::size_t cur = e0;
    std::string text = names[0][e0];
    for (int t = 0; t < n; ++t) {
      text += " " + rel_question[t][rels[t]];
      q.gold_chain.push_back(link_pid[t][cur][rels[t]]);
      cur = link[t][cur][rels[t]];
    }
    q.text = std::move(text);
    q.answers.push_back(names[n][cur]);
    answer_entities.push_back(cur);

    char buf[16];
    if (qi < cfg.num_train) {
      std::snprintf(buf, sizeof(buf), "qt%04zu", qi);
      q.id = buf;
      train.push_back(std::move(q));
    } else {
      std::snprintf(buf, sizeof(buf), "qd%04zu", qi - cfg.num_train);
      q.id = buf;
      dev.push_back(std::move(q));
    }
  }

  std::sort(answer_entities.begin(), answer_entities.end());
  answer_entities.erase(std::unique(answer_entities.begin(), answer_entities.end()),
                        answer_entities.end());

  // Distractors: answer strings in an off-chain context. Each lists several
  // answer entities next to a bridge-layer name, so it is reachable at the
  // final hop and survives answer matching while carrying competing spans.
  for (std::size_t dcount = 0; dcount < distractor_count; ++dcount) {
    const std::size_t bridge_layer = static_cast<std::size_t>(n) - 1;
    const std::string& b = names[bridge_layer][rng() % E];
    const std::size_t want = 3 + rng() % 3;
    std::vector<std::size_t> listed;
    while (listed.size() < std::min(want, answer_entities.size())) {
      const std::size_t cand = answer_entities[rng() % answer_entities.size()];
      if (std::find(listed.begin(), listed.end(), cand) == listed.end())
        listed.push_back(cand);
    }
    Passage p;
    p.id = passage_id(passages.size());
    char title[16];
    std::snprintf(title, sizeof(title), "roll%04zu", dcount);
    p.title = title;
    p.text = b;
    for (std::size_t listed_idx : listed) p.text += " " + names[n][listed_idx];
    passages.push_back(std::move(p));
  }

  // Filler biographies share start-entity names without being evidence.
  std::vector<std::string> hobby, place;
  for (int i = 0; i < 12; ++i) hobby.push_back(mint.fresh());
  for (int i = 0; i < 12; ++i) place.push_back(mint.fresh());
  while (passages.size() < cfg.num_passages) {
    const std::string& e = names[0][rng() % E];
    Passage p;
    p.id = passage_id(passages.size());
    p.title = e;
    p.text = e + " " + hobby[rng() % hobby.size()] + " " + place[rng() % place.size()] + " " +
             hobby[rng() % hobby.size()] + " " + place[rng() % place.size()];
    passages.push_back(std::move(p));
  }

  SyntheticData out;
  out.store = PassageStore(std::move(passages));
  out.train = std::move(train);
  out.dev = std::move(dev);
  return out;
}

// ---------------------------------------------------------------------------
// JSONL files
// ---------------------------------------------------------------------------

namespace {

json parse_line(const std::string& line, const std::filesystem::path& path, std::size_t lineno) {
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw DataError(path.string() + " line " + std::to_string(lineno) + ": " + e.what());
  }
}

std::string require_string(const json& j, const char* key, const std::filesystem::path& path,
                           std::size_t lineno) {
  if (!j.contains(key) || !j[key].is_string())
    throw DataError(path.string() + " line " + std::to_string(lineno) + ": missing string field '" +
                    key + "'");
  return j[key].get<std::string>();
}

bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(),
                     [](unsigned char c) { return std::isspace(c) != 0; });
}

}  // namespace

PassageStore load_passages(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path.string());
  std::vector<Passage> passages;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    const json j = parse_line(line, path, lineno);
    Passage p;
    p.id = require_string(j, "id", path, lineno);
    p.title = require_string(j, "title", path, lineno);
    p.text = require_string(j, "text", path, lineno);
    if (p.text.empty())
      throw DataError(path.string() + " line " + std::to_string(lineno) + ": empty text");
    passages.push_back(std::move(p));
  }
  return PassageStore(std::move(passages));
}

std::vector<Question> load_questions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path.string());
  std::vector<Question> out;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    const json j = parse_line(line, path, lineno);
    Question q;
    q.id = require_string(j, "id", path, lineno);
    q.text = require_string(j, "question", path, lineno);
    if (!j.contains("answers") || !j["answers"].is_array() || j["answers"].empty())
      throw DataError(path.string() + " line " + std::to_string(lineno) +
                      ": question '" + q.id + "' has no answers");
    for (const auto& a : j["answers"]) q.answers.push_back(a.get<std::string>());
    if (j.contains("gold_chain")) {
      for (const auto& g : j["gold_chain"]) q.gold_chain.push_back(g.get<std::string>());
    }
    if (!ids.insert(q.id).second)
      throw DataError(path.string() + " line " + std::to_string(lineno) + ": duplicate question id '" +
                      q.id + "'");
    out.push_back(std::move(q));
  }
  return out;
}

void save_passages(const std::filesystem::path& path, const PassageStore& store) {
  std::string buf;
  for (const Passage& p : store.passages()) {
    json j{{"id", p.id}, {"title", p.title}, {"text", p.text}};
    buf += j.dump();
    buf += '\n';
  }
  write_file_atomic(path, buf);
}

void save_questions(const std::filesystem::path& path, const std::vector<Question>& questions) {
  std::string buf;
  for (const Question& q : questions) {
    json j{{"id", q.id}, {"question", q.text}, {"answers", q.answers}};
    if (!q.gold_chain.empty()) j["gold_chain"] = q.gold_chain;
    buf += j.dump();
    buf += '\n';
  }
  write_file_atomic(path, buf);
}

void validate_gold_chains(const std::vector<Question>& questions, const PassageStore& store,
                          int hops) {
  for (const Question& q : questions) {
    if (q.answers.empty()) throw DataError("question '" + q.id + "' has no answers");
    if (q.gold_chain.empty()) continue;
    if (q.gold_chain.size() != static_cast<std::size_t>(hops))
      throw DataError("question '" + q.id + "' gold chain has " +
                      std::to_string(q.gold_chain.size()) + " pieces, expected " +
                      std::to_string(hops));
    for (const std::string& pid : q.gold_chain) {
      if (!store.find(pid))
        throw DataError("question '" + q.id + "' gold chain references unknown passage '" + pid +
                        "'");
    }
  }
}

}  // namespace chainqa
