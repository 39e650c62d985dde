#include "chainqa/encoder.hpp"

#include <cmath>
#include <random>

#include "chainqa/retriever.hpp"

namespace chainqa {

EncoderParams init_encoder(const Vocabulary& vocab, std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw DataError("init_encoder: dim must be positive");
  EncoderParams p;
  p.dim = dim;
  p.emb = Mat(vocab.size(), dim);
  auto rng = make_rng(seed, {kStreamInit});
  const double half = 0.5 / static_cast<double>(dim);
  std::uniform_real_distribution<double> dist(-half, half);
  for (std::size_t r = 1; r < p.emb.rows; ++r) {  // row 0 stays zero (UNK)
    for (std::size_t c = 0; c < dim; ++c) p.emb(r, c) = dist(rng);
  }
  p.w_q = Mat::identity(dim);
  p.w_p = Mat::identity(dim);
  return p;
}

Vec mean_embedding(const Mat& emb, std::span<const int> ids) {
  Vec out(emb.cols, 0.0);
  if (ids.empty()) return out;
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= emb.rows)
      throw DataError("mean_embedding: token id out of range");
    axpy(1.0, emb.row(static_cast<std::size_t>(id)), out);
  }
  const double inv = 1.0 / static_cast<double>(ids.size());
  for (double& v : out) v *= inv;
  return out;
}

namespace {

void check_consistent(const EncoderParams& p, const Vocabulary& vocab) {
  if (p.emb.rows != vocab.size() || p.emb.cols != p.dim)
    throw DataError("encoder parameters inconsistent with vocabulary");
  if (p.w_q.rows != p.dim || p.w_q.cols != p.dim || p.w_p.rows != p.dim || p.w_p.cols != p.dim)
    throw DataError("encoder projection shape mismatch");
}

std::vector<int> passage_token_ids(const Vocabulary& vocab, const Passage& passage) {
  std::vector<int> ids = token_ids(vocab, passage.title);
  std::vector<int> text_ids = token_ids(vocab, passage.text);
  ids.insert(ids.end(), text_ids.begin(), text_ids.end());
  return ids;
}

}  // namespace

Vec encode_passage(const EncoderParams& params, const Vocabulary& vocab, const Passage& passage) {
  check_consistent(params, vocab);
  const std::vector<int> ids = passage_token_ids(vocab, passage);
  return matvec(params.w_p, mean_embedding(params.emb, ids));
}

Vec encode_query(const EncoderParams& params, const Vocabulary& vocab,
                 std::string_view query_text) {
  check_consistent(params, vocab);
  const std::vector<int> ids = token_ids(vocab, query_text);
  return matvec(params.w_q, mean_embedding(params.emb, ids));
}

double similarity(std::span<const double> qv, std::span<const double> pv) {
  if (qv.size() != pv.size()) throw DataError("similarity: dimension mismatch");
  return dot(qv, pv);
}

EncGradients EncGradients::zeros_like(const EncoderParams& p) {
  EncGradients g;
  g.emb = Mat(p.emb.rows, p.emb.cols);
  g.w_q = Mat(p.w_q.rows, p.w_q.cols);
  g.w_p = Mat(p.w_p.rows, p.w_p.cols);
  return g;
}

namespace {

struct SideEncoding {
  std::vector<int> ids;
  Vec bar;  // mean token embedding
  Vec vec;  // projected vector
};

SideEncoding encode_side(const EncoderParams& p, const std::vector<int>& ids, const Mat& proj) {
  SideEncoding s;
  s.ids = ids;
  s.bar = mean_embedding(p.emb, s.ids);
  s.vec = matvec(proj, s.bar);
  return s;
}

// Forward (and optionally backward) pass of one Eq-style step-wise NLL
// instance. grads may be null; grad_scale folds in the 1/batch factor.
double example_nll(const EncoderParams& params, const Vocabulary& vocab, const Question& question,
                   const EvidenceChain& positive, std::span<const EvidenceChain> negatives,
                   const PassageStore& store, EncGradients* grads, double grad_scale) {
  const std::size_t n = positive.piece_ids.size();
  if (n == 0) throw DataError("nll_loss: empty positive chain");

  double loss = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    struct Term {
      SideEncoding q, p;
      double score = 0.0;
    };
    std::vector<Term> terms;  // positive first
    auto add_term = [&](const EvidenceChain& chain) {
      std::vector<Passage> prefix;
      for (std::size_t i = 0; i < t; ++i) {
        const Passage* pp = store.find(chain.piece_ids[i]);
        if (!pp) throw DataError("chain references unknown passage '" + chain.piece_ids[i] + "'");
        prefix.push_back(*pp);
      }
      const Passage* piece = store.find(chain.piece_ids[t]);
      if (!piece) throw DataError("chain references unknown passage '" + chain.piece_ids[t] + "'");
      Term term;
      term.q = encode_side(params, token_ids(vocab, compose_query(question, prefix)), params.w_q);
      term.p = encode_side(params, passage_token_ids(vocab, *piece), params.w_p);
      term.score = dot(term.q.vec, term.p.vec);
      terms.push_back(std::move(term));
    };

    add_term(positive);
    for (const EvidenceChain& neg : negatives) {
      if (neg.piece_ids.size() > t) add_term(neg);  // short negatives drop out beyond their length
    }

    Vec scores(terms.size());
    for (std::size_t i = 0; i < terms.size(); ++i) scores[i] = terms[i].score;
    loss += logsumexp(scores) - scores[0];

    if (grads) {
      const Vec probs = softmax(scores);
      for (std::size_t i = 0; i < terms.size(); ++i) {
        const double g = grad_scale * (probs[i] - (i == 0 ? 1.0 : 0.0));
        if (g == 0.0) continue;
        const Term& term = terms[i];
        add_outer(grads->w_q, g, term.p.vec, term.q.bar);
        add_outer(grads->w_p, g, term.q.vec, term.p.bar);
        if (!term.q.ids.empty()) {
          Vec dqbar = matvec_transposed(params.w_q, term.p.vec);
          const double scale = g / static_cast<double>(term.q.ids.size());
          for (int id : term.q.ids)
            axpy(scale, dqbar, grads->emb.row(static_cast<std::size_t>(id)));
        }
        if (!term.p.ids.empty()) {
          Vec dpbar = matvec_transposed(params.w_p, term.q.vec);
          const double scale = g / static_cast<double>(term.p.ids.size());
          for (int id : term.p.ids)
            axpy(scale, dpbar, grads->emb.row(static_cast<std::size_t>(id)));
        }
      }
    }
  }
  return loss;
}

}  // namespace

double nll_loss(const EncoderParams& params, const Vocabulary& vocab, const Question& question,
                const EvidenceChain& positive, const std::vector<EvidenceChain>& negatives,
                const PassageStore& store) {
  check_consistent(params, vocab);
  const double loss =
      example_nll(params, vocab, question, positive, negatives, store, nullptr, 0.0);
  if (!std::isfinite(loss)) throw NumericError("nll_loss: non-finite loss");
  return loss;
}

std::pair<double, EncGradients> nll_gradients(const EncoderParams& params, const Vocabulary& vocab,
                                              std::span<const ChainSupervision> batch,
                                              const PassageStore& store) {
  check_consistent(params, vocab);
  if (batch.empty()) throw DataError("nll_gradients: empty batch");
  EncGradients grads = EncGradients::zeros_like(params);
  const double inv = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const ChainSupervision& ex : batch) {
    if (!ex.question) throw DataError("nll_gradients: example without question");
    loss += inv * example_nll(params, vocab, *ex.question, ex.positive, ex.negatives, store,
                              &grads, inv);
  }
  if (!std::isfinite(loss)) throw NumericError("nll_gradients: non-finite loss");
  if (!all_finite(grads.emb)) throw NumericError("nll_gradients: non-finite gradient in emb");
  if (!all_finite(grads.w_q)) throw NumericError("nll_gradients: non-finite gradient in w_q");
  if (!all_finite(grads.w_p)) throw NumericError("nll_gradients: non-finite gradient in w_p");
  return {loss, std::move(grads)};
}

OptState OptState::zeros_like(const EncoderParams& p, AdamConfig cfg) {
  OptState s;
  s.cfg = cfg;
  s.m_emb = Mat(p.emb.rows, p.emb.cols);
  s.v_emb = Mat(p.emb.rows, p.emb.cols);
  s.m_wq = Mat(p.w_q.rows, p.w_q.cols);
  s.v_wq = Mat(p.w_q.rows, p.w_q.cols);
  s.m_wp = Mat(p.w_p.rows, p.w_p.cols);
  s.v_wp = Mat(p.w_p.rows, p.w_p.cols);
  return s;
}

void opt_step(EncoderParams& params, const EncGradients& grads, OptState& state) {
  if (!params.emb.same_shape(grads.emb) || !params.w_q.same_shape(grads.w_q) ||
      !params.w_p.same_shape(grads.w_p))
    throw DataError("opt_step: gradient shape mismatch");
  ++state.step;
  adam_update_block(params.emb.a, grads.emb.a, state.m_emb.a, state.v_emb.a, state.step, state.cfg);
  adam_update_block(params.w_q.a, grads.w_q.a, state.m_wq.a, state.v_wq.a, state.step, state.cfg);
  adam_update_block(params.w_p.a, grads.w_p.a, state.m_wp.a, state.v_wp.a, state.step, state.cfg);
  ++params.revision;
}

}  // namespace chainqa
