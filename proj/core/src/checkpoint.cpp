#include "chainqa/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "chainqa/io.hpp"

namespace chainqa {

FilterMode parse_filter_mode(const std::string& s) {
  if (s == "none") return FilterMode::none;
  if (s == "answer") return FilterMode::answer;
  if (s == "answer+reader" || s == "answer_reader") return FilterMode::answer_reader;
  throw DataError("unknown filter mode '" + s + "' (none | answer | answer+reader)");
}
std::string to_string(FilterMode m) {
  switch (m) {
    case FilterMode::none: return "none";
    case FilterMode::answer: return "answer";
    case FilterMode::answer_reader: return "answer+reader";
  }
  return "?";
}
PositiveSelection parse_positive_selection(const std::string& s) {
  if (s == "top1") return PositiveSelection::top1;
  if (s == "sample_topk" || s == "sample-topk") return PositiveSelection::sample_topk;
  throw DataError("unknown positive selection '" + s + "' (top1 | sample_topk)");
}
std::string to_string(PositiveSelection s) {
  return s == PositiveSelection::top1 ? "top1" : "sample_topk";
}
InitMode parse_init_mode(const std::string& s) {
  if (s == "lexical_warmstart" || s == "lexical-warmstart") return InitMode::lexical_warmstart;
  if (s == "random") return InitMode::random;
  throw DataError("unknown init mode '" + s + "' (lexical_warmstart | random)");
}
std::string to_string(InitMode m) {
  return m == InitMode::lexical_warmstart ? "lexical_warmstart" : "random";
}

namespace {

constexpr char kMagic[4] = {'C', 'Q', 'C', 'K'};
constexpr std::uint32_t kFormatVersion = 1;

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct Writer {
  std::string buf;
  void u8(std::uint8_t v) { buf.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    buf += s;
  }
  void vec(const Vec& v) {
    u64(v.size());
    for (double d : v) f64(d);
  }
  void mat(const Mat& m) {
    u64(m.rows);
    u64(m.cols);
    for (double d : m.a) f64(d);
  }
};

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw DataError("checkpoint truncated");
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf[pos++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s(buf.data() + pos, n);
    pos += n;
    return s;
  }
  Vec vec() {
    const std::uint64_t n = u64();
    Vec v(n);
    for (double& d : v) d = f64();
    return v;
  }
  Mat mat() {
    const std::uint64_t r = u64();
    const std::uint64_t c = u64();
    Mat m(r, c);
    for (double& d : m.a) d = f64();
    return m;
  }
};

void write_em_config(Writer& w, const EmConfig& em) {
  w.i64(em.iterations);
  w.u64(em.k_estep);
  w.u32(static_cast<std::uint32_t>(em.filter_mode));
  w.u32(static_cast<std::uint32_t>(em.positive_selection));
  w.u64(em.negatives_per_question);
  w.u32(static_cast<std::uint32_t>(em.init_mode));
  w.u64(em.reader_bootstrap_k);
  w.i64(em.reader_bootstrap_epochs);
  w.i64(em.epochs_per_mstep);
  w.u64(em.seed);
  w.i64(em.n_hops);
  w.u64(em.dim);
  w.u64(em.batch_size);
  w.f64(em.lr);
  w.u64(em.eval_k);
  w.u64(em.warmstart_lexical_topk);
  w.i64(em.warmstart_epochs);
  w.u8(em.answer_match_final_hop_only);
  w.u8(em.gold_only);
  w.u8(em.reader_share_embeddings);
  w.u8(em.early_stop);
  w.f64(em.early_stop_min_delta);
  w.i64(em.early_stop_patience);
}

EmConfig read_em_config(Reader& r) {
  EmConfig em;
  em.iterations = static_cast<int>(r.i64());
  em.k_estep = r.u64();
  em.filter_mode = static_cast<FilterMode>(r.u32());
  em.positive_selection = static_cast<PositiveSelection>(r.u32());
  em.negatives_per_question = r.u64();
  em.init_mode = static_cast<InitMode>(r.u32());
  em.reader_bootstrap_k = r.u64();
  em.reader_bootstrap_epochs = static_cast<int>(r.i64());
  em.epochs_per_mstep = static_cast<int>(r.i64());
  em.seed = r.u64();
  em.n_hops = static_cast<int>(r.i64());
  em.dim = r.u64();
  em.batch_size = r.u64();
  em.lr = r.f64();
  em.eval_k = r.u64();
  em.warmstart_lexical_topk = r.u64();
  em.warmstart_epochs = static_cast<int>(r.i64());
  em.answer_match_final_hop_only = r.u8() != 0;
  em.gold_only = r.u8() != 0;
  em.reader_share_embeddings = r.u8() != 0;
  em.early_stop = r.u8() != 0;
  em.early_stop_min_delta = r.f64();
  em.early_stop_patience = static_cast<int>(r.i64());
  return em;
}

void write_adam(Writer& w, const AdamConfig& cfg) {
  w.f64(cfg.lr);
  w.f64(cfg.beta1);
  w.f64(cfg.beta2);
  w.f64(cfg.eps);
}

AdamConfig read_adam(Reader& r) {
  AdamConfig cfg;
  cfg.lr = r.f64();
  cfg.beta1 = r.f64();
  cfg.beta2 = r.f64();
  cfg.eps = r.f64();
  return cfg;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& cp) {
  Writer w;
  // vocab: known tokens in id order (skip the UNK marker at position 0)
  w.u64(cp.vocab.size() - 1);
  for (std::size_t i = 1; i < cp.vocab.size(); ++i) w.str(cp.vocab.tokens()[i]);

  w.u64(cp.enc.dim);
  w.mat(cp.enc.emb);
  w.mat(cp.enc.w_q);
  w.mat(cp.enc.w_p);
  w.u64(cp.enc.revision);

  write_adam(w, cp.enc_opt.cfg);
  w.i64(cp.enc_opt.step);
  w.mat(cp.enc_opt.m_emb);
  w.mat(cp.enc_opt.v_emb);
  w.mat(cp.enc_opt.m_wq);
  w.mat(cp.enc_opt.v_wq);
  w.mat(cp.enc_opt.m_wp);
  w.mat(cp.enc_opt.v_wp);

  w.u64(cp.reader.dim);
  w.u64(cp.reader.max_span_len);
  w.mat(cp.reader.emb);
  w.mat(cp.reader.w_int);
  w.vec(cp.reader.w_rank);
  w.vec(cp.reader.w_start);
  w.vec(cp.reader.w_end);
  w.u64(cp.reader.revision);

  write_adam(w, cp.reader_opt.cfg);
  w.i64(cp.reader_opt.step);
  w.mat(cp.reader_opt.m_emb);
  w.mat(cp.reader_opt.v_emb);
  w.mat(cp.reader_opt.m_wint);
  w.mat(cp.reader_opt.v_wint);
  w.vec(cp.reader_opt.m_rank);
  w.vec(cp.reader_opt.v_rank);
  w.vec(cp.reader_opt.m_start);
  w.vec(cp.reader_opt.v_start);
  w.vec(cp.reader_opt.m_end);
  w.vec(cp.reader_opt.v_end);

  write_em_config(w, cp.em);
  w.u64(cp.seed);
  w.i64(cp.iteration);
  w.u8(cp.reader_bootstrapped);

  std::string out;
  out.append(kMagic, 4);
  Writer header;
  header.u32(kFormatVersion);
  header.u64(fnv1a(w.buf));
  out += header.buf;
  out += w.buf;
  write_file_atomic(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string raw = read_file(path);
  if (raw.size() < 16 || std::memcmp(raw.data(), kMagic, 4) != 0)
    throw DataError("not a checkpoint file: " + path.string());
  Reader head{raw, 4};
  const std::uint32_t version = head.u32();
  if (version != kFormatVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  const std::uint64_t checksum = head.u64();
  const std::string_view payload(raw.data() + head.pos, raw.size() - head.pos);
  if (fnv1a(payload) != checksum)
    throw DataError("checkpoint checksum mismatch (corrupt or truncated): " + path.string());

  const std::string payload_str(payload);
  Reader r{payload_str, 0};
  Checkpoint cp;

  const std::uint64_t num_tokens = r.u64();
  std::vector<std::string> tokens;
  tokens.reserve(num_tokens);
  for (std::uint64_t i = 0; i < num_tokens; ++i) tokens.push_back(r.str());
  cp.vocab = Vocabulary(std::move(tokens));

  cp.enc.dim = r.u64();
  cp.enc.emb = r.mat();
  cp.enc.w_q = r.mat();
  cp.enc.w_p = r.mat();
  cp.enc.revision = r.u64();

  cp.enc_opt.cfg = read_adam(r);
  cp.enc_opt.step = r.i64();
  cp.enc_opt.m_emb = r.mat();
  cp.enc_opt.v_emb = r.mat();
  cp.enc_opt.m_wq = r.mat();
  cp.enc_opt.v_wq = r.mat();
  cp.enc_opt.m_wp = r.mat();
  cp.enc_opt.v_wp = r.mat();

  cp.reader.dim = r.u64();
  cp.reader.max_span_len = r.u64();
  cp.reader.emb = r.mat();
  cp.reader.w_int = r.mat();
  cp.reader.w_rank = r.vec();
  cp.reader.w_start = r.vec();
  cp.reader.w_end = r.vec();
  cp.reader.revision = r.u64();

  cp.reader_opt.cfg = read_adam(r);
  cp.reader_opt.step = r.i64();
  cp.reader_opt.m_emb = r.mat();
  cp.reader_opt.v_emb = r.mat();
  cp.reader_opt.m_wint = r.mat();
  cp.reader_opt.v_wint = r.mat();
  cp.reader_opt.m_rank = r.vec();
  cp.reader_opt.v_rank = r.vec();
  cp.reader_opt.m_start = r.vec();
  cp.reader_opt.v_start = r.vec();
  cp.reader_opt.m_end = r.vec();
  cp.reader_opt.v_end = r.vec();

  cp.em = read_em_config(r);
  cp.seed = r.u64();
  cp.iteration = static_cast<std::int32_t>(r.i64());
  cp.reader_bootstrapped = r.u8() != 0;
  return cp;
}

}  // namespace chainqa
