#include "imagine/scoring.hpp"

#include <cmath>

#include "imagine/math.hpp"

namespace imagine::scoring {

using backend::Adapter;
using backend::AdapterParams;
using backend::Backbone;

std::string candidate_text(const VQAInstance& inst, int candidate) {
  return inst.effective_question() + " " + inst.qa.candidates[candidate];
}

namespace {

std::vector<double> project(std::span<const double> t, const Mat& w_p) {
  if (static_cast<int>(t.size()) != w_p.rows) {
    throw DataError("itm projection: text vector dim " + std::to_string(t.size()) +
                    " does not match W_p rows " + std::to_string(w_p.rows));
  }
  std::vector<double> q(w_p.cols, 0.0);
  for (int i = 0; i < w_p.rows; ++i) {
    const double tv = t[i];
    if (tv == 0.0) continue;
    const double* wr = w_p.row(i);
    for (int j = 0; j < w_p.cols; ++j) q[j] += tv * wr[j];
  }
  return q;
}

struct ItmForward {
  std::vector<double> q;   // projected text vector
  std::vector<double> a;   // attention over patches
  std::vector<double> c;   // pooled visual vector
  double nq = 0.0, nc = 0.0, score = 0.0;
};

ItmForward itm_forward(std::span<const double> text_context, const Mat& patches, const Mat& w_p) {
  if (patches.cols != w_p.cols) {
    throw DataError("itm: patch dim " + std::to_string(patches.cols) +
                    " does not match projection dim " + std::to_string(w_p.cols));
  }
  ItmForward fw;
  fw.q = project(text_context, w_p);
  const int P = patches.rows;
  const int dv = patches.cols;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dv));
  std::vector<double> logits(P, 0.0);
  for (int p = 0; p < P; ++p) {
    const double* vp = patches.row(p);
    double s = 0.0;
    for (int j = 0; j < dv; ++j) s += vp[j] * fw.q[j];
    logits[p] = s * scale;
  }
  fw.a = softmax(logits);
  fw.c.assign(dv, 0.0);
  for (int p = 0; p < P; ++p) {
    const double* vp = patches.row(p);
    for (int j = 0; j < dv; ++j) fw.c[j] += fw.a[p] * vp[j];
  }
  fw.nq = norm(std::span<const double>(fw.q));
  fw.nc = norm(std::span<const double>(fw.c));
  if (fw.nq == 0.0) throw NumericError("itm: projected text vector has zero norm");
  if (fw.nc == 0.0) throw NumericError("itm: pooled visual vector has zero norm");
  fw.score = dot(std::span<const double>(fw.q), std::span<const double>(fw.c)) / (fw.nq * fw.nc);
  return fw;
}

}  // namespace

ContextualizedVisual contextualize(std::span<const double> text_context, const Mat& patches,
                                   const Mat& w_p) {
  ItmForward fw = itm_forward(text_context, patches, w_p);
  return {std::move(fw.a), std::move(fw.c)};
}

double itm_score(std::span<const double> text_context, const Mat& patches, const Mat& w_p) {
  return itm_forward(text_context, patches, w_p).score;
}

double joint_score(double s_lm, double s_itm) {
  if (!std::isfinite(s_lm) || !std::isfinite(s_itm)) {
    throw NumericError("joint_score: non-finite input");
  }
  return 0.5 * (s_lm + s_itm);
}

double lm_score(const Backbone& bb, const AdapterParams& params, std::span<const int> tokens,
                Adapter route) {
  const int m = static_cast<int>(tokens.size());
  if (m < 1) throw DataError("lm_score: empty token sequence");
  double total = 0.0;
  if (bb.config().mode == backend::Mode::encoder) {
    for (int p = 0; p < m; ++p) {
      const auto logp = bb.token_log_probs(tokens, p, route, params);
      total += logp[tokens[p]];
    }
  } else {
    auto ws = bb.forward(tokens, route, params);
    for (int p = 0; p < m; ++p) {
      auto logits = bb.logits_at(*ws, p);
      total += logits[tokens[p]] - log_sum_exp(logits);
    }
  }
  return total / m;
}

double lm_score(const Backbone& bb, const AdapterParams& params, std::string_view text,
                Adapter route) {
  return lm_score(bb, params, bb.tokenizer().tokenize(text), route);
}

ScoreSet score_instance(const VQAInstance& inst, const Backbone& bb, const AdapterParams& params,
                        const ScoreFlags& flags) {
  inst.qa.validate();
  if (!flags.use_lm && !flags.use_itm) {
    throw ConfigError("score_instance: no score component enabled");
  }
  const int n = inst.qa.n();
  const Mat* patches = nullptr;
  if (flags.use_itm) {
    if (!inst.image || !inst.image->features) {
      throw DataError("score_instance: instance " + inst.qa.id +
                      " has no visual features but use_itm is set");
    }
    inst.image->features->validate();
    patches = &inst.image->features->patches;
  }

  ScoreSet out;
  out.s_lm.assign(n, 0.0);
  out.s_itm.assign(n, 0.0);
  out.s_joint.assign(n, 0.0);
  out.has_lm = flags.use_lm;
  out.has_itm = flags.use_itm;

  for (int i = 0; i < n; ++i) {
    const auto tokens = bb.tokenizer().tokenize(candidate_text(inst, i));
    if (flags.use_lm) {
      out.s_lm[i] = lm_score(bb, params, tokens, Adapter::lm);
    }
    if (flags.use_itm) {
      const auto hs = bb.encode(tokens, Adapter::itm, params);
      out.s_itm[i] = itm_score(hs.context, *patches, params.w_p);
    }
    if (flags.use_lm && flags.use_itm) {
      out.s_joint[i] = joint_score(out.s_lm[i], out.s_itm[i]);
    }
  }
  return out;
}

double lm_score_backward(const Backbone& bb, const AdapterParams& params,
                         std::span<const int> tokens, double weight, AdapterParams& grads) {
  const int m = static_cast<int>(tokens.size());
  if (m < 1) throw DataError("lm_score: empty token sequence");
  const int vocab = bb.config().vocab_size;
  const int d = bb.config().hidden_dim;
  const double inv_m = 1.0 / m;
  double total = 0.0;

  if (bb.config().mode == backend::Mode::encoder) {
    for (int p = 0; p < m; ++p) {
      auto ws = bb.forward(tokens, Adapter::lm, params, p);
      auto logits = bb.logits_at(*ws, p + 1);
      const double lse = log_sum_exp(logits);
      total += logits[tokens[p]] - lse;
      std::vector<double> dvec(vocab);
      for (int j = 0; j < vocab; ++j) dvec[j] = -weight * inv_m * std::exp(logits[j] - lse);
      dvec[tokens[p]] += weight * inv_m;
      Mat dH(static_cast<int>(tokens.size()) + 1, d);
      bb.backward(*ws, dH, {{p + 1, std::move(dvec)}}, params, grads);
    }
  } else {
    auto ws = bb.forward(tokens, Adapter::lm, params);
    std::vector<std::pair<int, std::vector<double>>> d_logits;
    d_logits.reserve(m);
    for (int p = 0; p < m; ++p) {
      auto logits = bb.logits_at(*ws, p);
      const double lse = log_sum_exp(logits);
      total += logits[tokens[p]] - lse;
      std::vector<double> dvec(vocab);
      for (int j = 0; j < vocab; ++j) dvec[j] = -weight * inv_m * std::exp(logits[j] - lse);
      dvec[tokens[p]] += weight * inv_m;
      d_logits.emplace_back(p, std::move(dvec));
    }
    Mat dH(m + 1, d);
    bb.backward(*ws, dH, d_logits, params, grads);
  }
  return total * inv_m;
}

double itm_score_backward(const Backbone& bb, const AdapterParams& params,
                          std::span<const int> tokens, const Mat& patches, double weight,
                          AdapterParams& grads) {
  auto ws = bb.forward(tokens, Adapter::itm, params);
  const int crow = bb.context_row(*ws);
  const Mat& h = bb.hidden(*ws);
  const int d = bb.config().hidden_dim;
  std::span<const double> t(h.row(crow), static_cast<size_t>(d));

  ItmForward fw = itm_forward(t, patches, params.w_p);
  const int P = patches.rows;
  const int dv = patches.cols;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dv));

  // d score / d q holding C, and d score / d C.
  std::vector<double> dq(dv), dc(dv);
  const double inv_qc = 1.0 / (fw.nq * fw.nc);
  for (int j = 0; j < dv; ++j) {
    dq[j] = fw.c[j] * inv_qc - fw.score * fw.q[j] / (fw.nq * fw.nq);
    dc[j] = fw.q[j] * inv_qc - fw.score * fw.c[j] / (fw.nc * fw.nc);
  }
  // Through the attention pooling: C = a^T V, a = softmax(V q / sqrt(dv)).
  std::vector<double> da(P, 0.0);
  for (int p = 0; p < P; ++p) {
    const double* vp = patches.row(p);
    double s = 0.0;
    for (int j = 0; j < dv; ++j) s += vp[j] * dc[j];
    da[p] = s;
  }
  double dot_aa = 0.0;
  for (int p = 0; p < P; ++p) dot_aa += da[p] * fw.a[p];
  for (int p = 0; p < P; ++p) {
    const double dz = fw.a[p] * (da[p] - dot_aa) * scale;
    const double* vp = patches.row(p);
    for (int j = 0; j < dv; ++j) dq[j] += dz * vp[j];
  }

  // dW_p and the pullback onto the text context vector.
  std::vector<double> dt(d, 0.0);
  for (int i = 0; i < d; ++i) {
    const double tv = t[i];
    double* gw = grads.w_p.row(i);
    const double* wr = params.w_p.row(i);
    double s = 0.0;
    for (int j = 0; j < dv; ++j) {
      gw[j] += weight * tv * dq[j];
      s += wr[j] * dq[j];
    }
    dt[i] = weight * s;
  }

  Mat dH(h.rows, d);
  double* row = dH.row(crow);
  for (int i = 0; i < d; ++i) row[i] = dt[i];
  bb.backward(*ws, dH, {}, params, grads);
  return fw.score;
}

}  // namespace imagine::scoring
