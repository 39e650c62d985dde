#include "chainqa/reader.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "chainqa/encoder.hpp"
#include "chainqa/normalize.hpp"

namespace chainqa {

ReaderParams init_reader(const Mat& emb_init, std::size_t dim, std::uint64_t seed,
                         std::size_t max_span_len) {
  if (dim == 0 || emb_init.cols != dim) throw DataError("init_reader: embedding/dim mismatch");
  ReaderParams rp;
  rp.dim = dim;
  rp.max_span_len = max_span_len;
  rp.emb = emb_init;
  rp.w_int = Mat(dim, 3 * dim);
  auto rng = make_rng(seed, {kStreamReaderInit});
  const double half = 0.5 / static_cast<double>(dim);
  std::uniform_real_distribution<double> dist(-half, half);
  for (double& w : rp.w_int.a) w = dist(rng);
  rp.w_rank.resize(dim);
  rp.w_start.resize(dim);
  rp.w_end.resize(dim);
  for (double& w : rp.w_rank) w = dist(rng);
  for (double& w : rp.w_start) w = dist(rng);
  for (double& w : rp.w_end) w = dist(rng);
  return rp;
}

namespace {

void check_consistent(const ReaderParams& rp, const Vocabulary& vocab) {
  if (rp.emb.rows != vocab.size() || rp.emb.cols != rp.dim)
    throw DataError("reader parameters inconsistent with vocabulary");
  if (rp.w_int.rows != rp.dim || rp.w_int.cols != 3 * rp.dim)
    throw DataError("reader interaction projection shape mismatch");
  if (rp.w_rank.size() != rp.dim || rp.w_start.size() != rp.dim || rp.w_end.size() != rp.dim)
    throw DataError("reader classifier shape mismatch");
}

// c = [e ; qbar ; e (.) qbar]
Vec interaction_input(std::span<const double> e, std::span<const double> qbar) {
  const std::size_t d = e.size();
  Vec c(3 * d);
  for (std::size_t i = 0; i < d; ++i) {
    c[i] = e[i];
    c[d + i] = qbar[i];
    c[2 * d + i] = e[i] * qbar[i];
  }
  return c;
}

Vec log_softmax(std::span<const double> logits) {
  const double lse = logsumexp(logits);
  Vec out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

}  // namespace

JointEncoding encode_joint(const ReaderParams& rp, const Vocabulary& vocab,
                           const Question& question, std::span<const Passage> pieces) {
  check_consistent(rp, vocab);
  if (pieces.empty()) throw DataError("encode_joint: empty chain");

  JointEncoding enc;
  const std::vector<int> qids = token_ids(vocab, question.text);
  enc.qbar = mean_embedding(rp.emb, qids);

  enc.token_ids.push_back(-1);
  enc.origin.push_back(TokenOrigin{TokenOrigin::Kind::cls, -1, 0, 0});
  for (const TokenSpan& ts : tokenize_spans(question.text)) {
    enc.token_ids.push_back(vocab.id(ts.token));
    enc.origin.push_back(TokenOrigin{TokenOrigin::Kind::question, -1, ts.begin, ts.end});
  }
  for (std::size_t pi = 0; pi < pieces.size(); ++pi) {
    for (const TokenSpan& ts : tokenize_spans(pieces[pi].title)) {
      enc.token_ids.push_back(vocab.id(ts.token));
      enc.origin.push_back(TokenOrigin{TokenOrigin::Kind::title, static_cast<std::int32_t>(pi),
                                       ts.begin, ts.end});
    }
    for (const TokenSpan& ts : tokenize_spans(pieces[pi].text)) {
      enc.token_ids.push_back(vocab.id(ts.token));
      enc.origin.push_back(TokenOrigin{TokenOrigin::Kind::evidence, static_cast<std::int32_t>(pi),
                                       ts.begin, ts.end});
    }
  }

  const std::size_t L = enc.token_ids.size();
  enc.u = Mat(L, rp.dim);
  enc.cls_vec.assign(rp.dim, 0.0);
  for (std::size_t t = 0; t < L; ++t) {
    std::span<const double> e = enc.token_ids[t] < 0
                                    ? std::span<const double>(enc.qbar)
                                    : rp.emb.row(static_cast<std::size_t>(enc.token_ids[t]));
    const Vec c = interaction_input(e, enc.qbar);
    const Vec a = matvec(rp.w_int, c);
    for (std::size_t i = 0; i < rp.dim; ++i) {
      const double u = std::tanh(a[i]);
      enc.u(t, i) = u;
      enc.cls_vec[i] += u;
    }
  }
  for (double& v : enc.cls_vec) v /= static_cast<double>(L);
  return enc;
}

Vec rerank(const ReaderParams& rp, const Vocabulary& vocab, const Question& question,
           std::span<const EvidenceChain> chains, const PassageStore& store) {
  if (chains.empty()) throw DataError("rerank: empty chain list");
  Vec logits(chains.size());
  for (std::size_t i = 0; i < chains.size(); ++i) {
    const std::vector<Passage> pieces = resolve_pieces(chains[i], store);
    const JointEncoding enc = encode_joint(rp, vocab, question, pieces);
    logits[i] = dot(enc.cls_vec, rp.w_rank);
  }
  return softmax(logits);
}

std::pair<Vec, Vec> span_scores(const ReaderParams& rp, const JointEncoding& enc) {
  Vec start_logits(enc.length()), end_logits(enc.length());
  for (std::size_t t = 0; t < enc.length(); ++t) {
    start_logits[t] = dot(enc.u.row(t), rp.w_start);
    end_logits[t] = dot(enc.u.row(t), rp.w_end);
  }
  return {softmax(start_logits), softmax(end_logits)};
}

namespace {

bool same_evidence_region(const JointEncoding& enc, std::size_t s, std::size_t e) {
  return enc.origin[s].kind == TokenOrigin::Kind::evidence &&
         enc.origin[e].kind == TokenOrigin::Kind::evidence &&
         enc.origin[s].piece == enc.origin[e].piece;
}

std::string span_source_text(const JointEncoding& enc, std::span<const Passage> pieces,
                             std::size_t s, std::size_t e) {
  const Passage& piece = pieces[static_cast<std::size_t>(enc.origin[s].piece)];
  return piece.text.substr(enc.origin[s].char_begin,
                           enc.origin[e].char_end - enc.origin[s].char_begin);
}

/// All evidence spans whose normalized source text equals a normalized answer.
std::vector<std::pair<std::size_t, std::size_t>> answer_spans(
    const JointEncoding& enc, std::span<const Passage> pieces,
    std::span<const std::string> answers) {
  std::vector<std::vector<std::string>> needles;
  for (const std::string& a : answers) {
    auto toks = normalize_tokens(a);
    if (!toks.empty()) needles.push_back(std::move(toks));
  }
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t s = 0; s < enc.length(); ++s) {
    if (enc.origin[s].kind != TokenOrigin::Kind::evidence) continue;
    for (std::size_t e = s; e < enc.length() && same_evidence_region(enc, s, e); ++e) {
      const auto span_tokens = normalize_tokens(span_source_text(enc, pieces, s, e));
      for (const auto& needle : needles) {
        if (span_tokens == needle) {
          out.emplace_back(s, e);
          break;
        }
      }
    }
  }
  return out;
}

}  // namespace

SpanPrediction predict_answer(const ReaderParams& rp, const Vocabulary& vocab,
                              const Question& question, std::span<const EvidenceChain> chains,
                              const PassageStore& store) {
  if (chains.empty()) throw DataError("predict_answer: empty chain list");
  const Vec probs = rerank(rp, vocab, question, chains, store);
  std::size_t best_chain = 0;
  for (std::size_t i = 1; i < probs.size(); ++i) {
    if (probs[i] > probs[best_chain]) best_chain = i;
  }

  const std::vector<Passage> pieces = resolve_pieces(chains[best_chain], store);
  const JointEncoding enc = encode_joint(rp, vocab, question, pieces);
  const auto [p_start, p_end] = span_scores(rp, enc);

  bool found = false;
  SpanPrediction pred;
  pred.chain_index = best_chain;
  pred.rerank_prob = probs[best_chain];
  for (std::size_t s = 0; s < enc.length(); ++s) {
    if (enc.origin[s].kind != TokenOrigin::Kind::evidence) continue;
    for (std::size_t e = s; e < enc.length() && e - s < rp.max_span_len &&
                            same_evidence_region(enc, s, e);
         ++e) {
      const double prob = p_start[s] * p_end[e];
      // ties: earlier start, then shorter span; scan order makes both "first wins"
      if (!found || prob > pred.span_prob) {
        found = true;
        pred.start = s;
        pred.end = e;
        pred.span_prob = prob;
      }
    }
  }
  if (!found) throw DataError("predict_answer: selected chain has no evidence tokens");
  pred.answer_text = span_source_text(enc, pieces, pred.start, pred.end);
  return pred;
}

// ---------------------------------------------------------------------------
// Training objective
// ---------------------------------------------------------------------------

ReaderGradients ReaderGradients::zeros_like(const ReaderParams& rp) {
  ReaderGradients g;
  g.emb = Mat(rp.emb.rows, rp.emb.cols);
  g.w_int = Mat(rp.w_int.rows, rp.w_int.cols);
  g.w_rank.assign(rp.dim, 0.0);
  g.w_start.assign(rp.dim, 0.0);
  g.w_end.assign(rp.dim, 0.0);
  return g;
}

namespace {

// Pushes d(loss)/d(u) of one encoded chain back onto the parameters.
void backward_encoding(const ReaderParams& rp, const Vocabulary& vocab, const Question& question,
                       const JointEncoding& enc, const Mat& du, ReaderGradients& grads) {
  const std::size_t d = rp.dim;
  Vec dqbar(d, 0.0);
  for (std::size_t t = 0; t < enc.length(); ++t) {
    Vec da(d);
    bool active = false;
    for (std::size_t i = 0; i < d; ++i) {
      const double u = enc.u(t, i);
      da[i] = du(t, i) * (1.0 - u * u);
      active = active || da[i] != 0.0;
    }
    if (!active) continue;

    std::span<const double> e = enc.token_ids[t] < 0
                                    ? std::span<const double>(enc.qbar)
                                    : rp.emb.row(static_cast<std::size_t>(enc.token_ids[t]));
    const Vec c = interaction_input(e, enc.qbar);
    add_outer(grads.w_int, 1.0, da, c);

    const Vec dc = matvec_transposed(rp.w_int, da);
    Vec de(d);
    for (std::size_t i = 0; i < d; ++i) {
      de[i] = dc[i] + dc[2 * d + i] * enc.qbar[i];
      dqbar[i] += dc[d + i] + dc[2 * d + i] * e[i];
    }
    if (enc.token_ids[t] < 0) {
      axpy(1.0, de, dqbar);
    } else {
      axpy(1.0, de, grads.emb.row(static_cast<std::size_t>(enc.token_ids[t])));
    }
  }

  const std::vector<int> qids = token_ids(vocab, question.text);
  if (!qids.empty()) {
    const double inv = 1.0 / static_cast<double>(qids.size());
    Vec scaled(d);
    for (std::size_t i = 0; i < d; ++i) scaled[i] = dqbar[i] * inv;
    for (int id : qids) axpy(1.0, scaled, grads.emb.row(static_cast<std::size_t>(id)));
  }
}

// Forward (and optionally backward) for one question. Returns the combined
// rerank + span-MML loss; grad_scale folds in the 1/batch factor.
double example_reader_loss(const ReaderParams& rp, const Vocabulary& vocab,
                           const Question& question, const EvidenceChain& positive,
                           std::span<const EvidenceChain> negatives,
                           std::span<const std::string> answers, const PassageStore& store,
                           ReaderGradients* grads, double grad_scale) {
  const std::size_t num_chains = 1 + negatives.size();
  std::vector<std::vector<Passage>> pieces(num_chains);
  std::vector<JointEncoding> encs(num_chains);
  pieces[0] = resolve_pieces(positive, store);
  encs[0] = encode_joint(rp, vocab, question, pieces[0]);
  for (std::size_t i = 0; i < negatives.size(); ++i) {
    pieces[i + 1] = resolve_pieces(negatives[i], store);
    encs[i + 1] = encode_joint(rp, vocab, question, pieces[i + 1]);
  }

  // Rerank: positive sits at index 0.
  Vec rank_logits(num_chains);
  for (std::size_t i = 0; i < num_chains; ++i) rank_logits[i] = dot(encs[i].cls_vec, rp.w_rank);
  const double rank_loss = logsumexp(rank_logits) - rank_logits[0];

  // Span MML over answer occurrences in the positive chain, in log space.
  const JointEncoding& pos = encs[0];
  Vec start_logits(pos.length()), end_logits(pos.length());
  for (std::size_t t = 0; t < pos.length(); ++t) {
    start_logits[t] = dot(pos.u.row(t), rp.w_start);
    end_logits[t] = dot(pos.u.row(t), rp.w_end);
  }
  const Vec ls = log_softmax(start_logits);
  const Vec le = log_softmax(end_logits);
  const auto occurrences = answer_spans(pos, pieces[0], answers);
  if (occurrences.empty())
    throw DataError("reader_loss: positive chain contains no answer occurrence for question '" +
                    question.id + "'");
  Vec occ_lp(occurrences.size());
  for (std::size_t i = 0; i < occurrences.size(); ++i)
    occ_lp[i] = ls[occurrences[i].first] + le[occurrences[i].second];
  const double occ_lse = logsumexp(occ_lp);
  const double span_loss = -occ_lse;

  if (grads) {
    // Rerank branch.
    const Vec rank_probs = softmax(rank_logits);
    for (std::size_t i = 0; i < num_chains; ++i) {
      const double coef = grad_scale * (rank_probs[i] - (i == 0 ? 1.0 : 0.0));
      axpy(coef, encs[i].cls_vec, grads->w_rank);
      Mat du(encs[i].length(), rp.dim);
      const double per_pos = coef / static_cast<double>(encs[i].length());
      for (std::size_t t = 0; t < encs[i].length(); ++t) {
        for (std::size_t k = 0; k < rp.dim; ++k) du(t, k) = per_pos * rp.w_rank[k];
      }
      if (i == 0) {
        // Fold the span branch into the positive chain's du before backprop.
        Vec w_occ_start(pos.length(), 0.0), w_occ_end(pos.length(), 0.0);
        for (std::size_t o = 0; o < occurrences.size(); ++o) {
          const double post = std::exp(occ_lp[o] - occ_lse);
          w_occ_start[occurrences[o].first] += post;
          w_occ_end[occurrences[o].second] += post;
        }
        for (std::size_t t = 0; t < pos.length(); ++t) {
          const double ds = grad_scale * (std::exp(ls[t]) - w_occ_start[t]);
          const double de = grad_scale * (std::exp(le[t]) - w_occ_end[t]);
          axpy(ds, pos.u.row(t), grads->w_start);
          axpy(de, pos.u.row(t), grads->w_end);
          for (std::size_t k = 0; k < rp.dim; ++k)
            du(t, k) += ds * rp.w_start[k] + de * rp.w_end[k];
        }
      }
      backward_encoding(rp, vocab, question, encs[i], du, *grads);
    }
  }
  return rank_loss + span_loss;
}

}  // namespace

double reader_loss(const ReaderParams& rp, const Vocabulary& vocab, const Question& question,
                   const EvidenceChain& positive, std::span<const EvidenceChain> negatives,
                   std::span<const std::string> answers, const PassageStore& store) {
  check_consistent(rp, vocab);
  const double loss =
      example_reader_loss(rp, vocab, question, positive, negatives, answers, store, nullptr, 0.0);
  if (!std::isfinite(loss)) throw NumericError("reader_loss: non-finite loss");
  return loss;
}

std::pair<double, ReaderGradients> reader_gradients(const ReaderParams& rp,
                                                    const Vocabulary& vocab,
                                                    std::span<const ReaderSupervision> batch,
                                                    const PassageStore& store) {
  check_consistent(rp, vocab);
  if (batch.empty()) throw DataError("reader_gradients: empty batch");
  ReaderGradients grads = ReaderGradients::zeros_like(rp);
  const double inv = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const ReaderSupervision& ex : batch) {
    if (!ex.question) throw DataError("reader_gradients: example without question");
    loss += inv * example_reader_loss(rp, vocab, *ex.question, ex.positive, ex.negatives,
                                      ex.question->answers, store, &grads, inv);
  }
  if (!std::isfinite(loss)) throw NumericError("reader_gradients: non-finite loss");
  if (!all_finite(grads.emb)) throw NumericError("reader_gradients: non-finite gradient in emb");
  if (!all_finite(grads.w_int)) throw NumericError("reader_gradients: non-finite gradient in w_int");
  if (!all_finite(grads.w_rank) || !all_finite(grads.w_start) || !all_finite(grads.w_end))
    throw NumericError("reader_gradients: non-finite gradient in classifier weights");
  return {loss, std::move(grads)};
}

ReaderOptState ReaderOptState::zeros_like(const ReaderParams& rp, AdamConfig cfg) {
  ReaderOptState s;
  s.cfg = cfg;
  s.m_emb = Mat(rp.emb.rows, rp.emb.cols);
  s.v_emb = Mat(rp.emb.rows, rp.emb.cols);
  s.m_wint = Mat(rp.w_int.rows, rp.w_int.cols);
  s.v_wint = Mat(rp.w_int.rows, rp.w_int.cols);
  s.m_rank.assign(rp.dim, 0.0);
  s.v_rank.assign(rp.dim, 0.0);
  s.m_start.assign(rp.dim, 0.0);
  s.v_start.assign(rp.dim, 0.0);
  s.m_end.assign(rp.dim, 0.0);
  s.v_end.assign(rp.dim, 0.0);
  return s;
}

void reader_opt_step(ReaderParams& rp, const ReaderGradients& grads, ReaderOptState& state) {
  if (!rp.emb.same_shape(grads.emb) || !rp.w_int.same_shape(grads.w_int))
    throw DataError("reader_opt_step: gradient shape mismatch");
  ++state.step;
  adam_update_block(rp.emb.a, grads.emb.a, state.m_emb.a, state.v_emb.a, state.step, state.cfg);
  adam_update_block(rp.w_int.a, grads.w_int.a, state.m_wint.a, state.v_wint.a, state.step,
                    state.cfg);
  adam_update_block(rp.w_rank, grads.w_rank, state.m_rank, state.v_rank, state.step, state.cfg);
  adam_update_block(rp.w_start, grads.w_start, state.m_start, state.v_start, state.step,
                    state.cfg);
  adam_update_block(rp.w_end, grads.w_end, state.m_end, state.v_end, state.step, state.cfg);
  ++rp.revision;
}

}  // namespace chainqa
