#include "imagine/backend.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "imagine/math.hpp"
#include "imagine/records.hpp"
#include "imagine/text.hpp"

namespace imagine::backend {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * std::exp(-0.5 * x * x) * kInvSqrt2Pi;
}

/// Row-wise layer norm; stores xhat and rstd for the backward pass.
void layer_norm(const Mat& x, const std::vector<double>& g, const std::vector<double>& b, Mat& y,
                Mat& xhat, std::vector<double>& rstd) {
  const int d = x.cols;
  y = Mat(x.rows, d);
  xhat = Mat(x.rows, d);
  rstd.assign(x.rows, 0.0);
  for (int i = 0; i < x.rows; ++i) {
    const double* xr = x.row(i);
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += xr[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = xr[j] - mean;
      var += c * c;
    }
    var /= d;
    const double r = 1.0 / std::sqrt(var + kLnEps);
    rstd[i] = r;
    double* yr = y.row(i);
    double* hr = xhat.row(i);
    for (int j = 0; j < d; ++j) {
      hr[j] = (xr[j] - mean) * r;
      yr[j] = g[j] * hr[j] + b[j];
    }
  }
}

/// dx += LN backward of dy; uses saved xhat/rstd.
void layer_norm_backward(const Mat& dy, const Mat& xhat, const std::vector<double>& rstd,
                         const std::vector<double>& g, Mat& dx) {
  const int d = dy.cols;
  for (int i = 0; i < dy.rows; ++i) {
    const double* dyr = dy.row(i);
    const double* hr = xhat.row(i);
    double* dxr = dx.row(i);
    double mean_dxhat = 0.0;
    double mean_dxhat_xhat = 0.0;
    for (int j = 0; j < d; ++j) {
      const double dxh = dyr[j] * g[j];
      mean_dxhat += dxh;
      mean_dxhat_xhat += dxh * hr[j];
    }
    mean_dxhat /= d;
    mean_dxhat_xhat /= d;
    const double r = rstd[i];
    for (int j = 0; j < d; ++j) {
      const double dxh = dyr[j] * g[j];
      dxr[j] += r * (dxh - mean_dxhat - hr[j] * mean_dxhat_xhat);
    }
  }
}

std::vector<double> log_softmax(std::vector<double> logits) {
  const double lse = log_sum_exp(logits);
  for (auto& v : logits) v -= lse;
  return logits;
}

}  // namespace

void EncoderConfig::validate() const {
  if (layers < 1) throw ConfigError("backend: layers must be >= 1");
  if (hidden_dim < 1 || heads < 1 || hidden_dim % heads != 0) {
    throw ConfigError("backend: hidden_dim must be a positive multiple of heads");
  }
  if (vocab_size <= Tokenizer::kNumSpecial) {
    throw ConfigError("backend: vocab_size must exceed the special-token count");
  }
  if (max_len < 2) throw ConfigError("backend: max_len must be >= 2");
  if (visual_dim < 1) throw ConfigError("backend: visual_dim must be >= 1");
  if (reduction < 1) throw ConfigError("backend: reduction must be >= 1");
}

// ---------------------------------------------------------------------------
// AdapterParams

AdapterParams AdapterParams::init(const EncoderConfig& cfg) {
  cfg.validate();
  const int d = cfg.hidden_dim;
  const int b = cfg.bottleneck();
  const double down_scale = 1.0 / std::sqrt(static_cast<double>(d));
  AdapterParams p;
  Rng lm_rng(mix_seed(cfg.seed, 0xad11));
  Rng itm_rng(mix_seed(cfg.seed, 0xad22));
  for (int l = 0; l < cfg.layers; ++l) {
    Bottleneck blm;
    blm.down = Mat::randn(d, b, lm_rng, down_scale);
    blm.up = Mat(b, d);
    p.lm.push_back(std::move(blm));
    Bottleneck bitm;
    bitm.down = Mat::randn(d, b, itm_rng, down_scale);
    bitm.up = Mat(b, d);
    p.itm.push_back(std::move(bitm));
  }
  // The projection starts small so retrieval-time attention is near uniform
  // and early training signal dominates the random init.
  Rng proj_rng(mix_seed(cfg.seed, 0xad33));
  p.w_p = Mat::randn(d, cfg.visual_dim, proj_rng, 0.02);
  return p;
}

AdapterParams AdapterParams::zeros_like(const AdapterParams& shape) {
  AdapterParams g;
  for (const auto& b : shape.lm) g.lm.push_back({Mat(b.down.rows, b.down.cols), Mat(b.up.rows, b.up.cols)});
  for (const auto& b : shape.itm) g.itm.push_back({Mat(b.down.rows, b.down.cols), Mat(b.up.rows, b.up.cols)});
  g.w_p = Mat(shape.w_p.rows, shape.w_p.cols);
  return g;
}

void AdapterParams::check_compatible(const EncoderConfig& cfg) const {
  const int d = cfg.hidden_dim;
  const int b = cfg.bottleneck();
  if (static_cast<int>(lm.size()) != cfg.layers || static_cast<int>(itm.size()) != cfg.layers) {
    throw DataError("adapter params: layer count mismatch");
  }
  for (const auto& bl : lm) {
    check_shape(bl.down, d, b, "lm adapter down");
    check_shape(bl.up, b, d, "lm adapter up");
  }
  for (const auto& bl : itm) {
    check_shape(bl.down, d, b, "itm adapter down");
    check_shape(bl.up, b, d, "itm adapter up");
  }
  check_shape(w_p, d, cfg.visual_dim, "itm projection");
}

size_t AdapterParams::param_count() const {
  size_t n = 0;
  visit_params(*this, [&](const Mat& m) { n += m.size(); });
  return n;
}

uint64_t AdapterParams::content_hash() const {
  uint64_t h = 0xcbf29ce484222325ull;
  visit_params(*this, [&](const Mat& m) {
    h = fnv1a_bytes(m.a.data(), m.a.size() * sizeof(double), h);
  });
  return h;
}

void AdapterParams::axpy(double alpha, const AdapterParams& x) {
  auto it = [&](Mat& dst, const Mat& src) {
    if (dst.rows != src.rows || dst.cols != src.cols) {
      throw DataError("adapter axpy: shape mismatch");
    }
    imagine::axpy(dst, alpha, src);
  };
  for (size_t l = 0; l < lm.size(); ++l) {
    it(lm[l].down, x.lm[l].down);
    it(lm[l].up, x.lm[l].up);
  }
  for (size_t l = 0; l < itm.size(); ++l) {
    it(itm[l].down, x.itm[l].down);
    it(itm[l].up, x.itm[l].up);
  }
  it(w_p, x.w_p);
}

void AdapterParams::scale(double alpha) {
  visit_params(*this, [&](Mat& m) {
    for (auto& v : m.a) v *= alpha;
  });
}

// ---------------------------------------------------------------------------
// Tokenizer

Tokenizer::Tokenizer(int vocab_size) : vocab_size_(vocab_size) {}

std::vector<int> Tokenizer::tokenize(std::string_view text) const {
  std::vector<int> out;
  const int buckets = vocab_size_ - kNumSpecial;
  for (const auto& w : split_words(text)) {
    out.push_back(kNumSpecial + static_cast<int>(fnv1a(w) % static_cast<uint64_t>(buckets)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Workspace

struct Workspace {
  struct Layer {
    Mat x_in;
    Mat ln1_xhat, u;
    std::vector<double> ln1_rstd;
    Mat q, k, v;
    std::vector<Mat> att;  // per head, S x S softmax rows
    Mat att_concat;
    Mat x_mid;
    Mat ln2_xhat, v2;
    std::vector<double> ln2_rstd;
    Mat ff_pre, ff_act;
    Mat ad_pre, ad_act;  // empty when route == none
  };
  std::vector<int> internal_ids;
  Adapter route = Adapter::none;
  int seq_len = 0;  // S, includes the special slot
  std::vector<Layer> layers;
  Mat x_final;
  Mat lnf_xhat;
  std::vector<double> lnf_rstd;
  Mat h;  // final hidden states, S x d
};

// ---------------------------------------------------------------------------
// Backbone

Backbone::Backbone(const EncoderConfig& cfg) : cfg_(cfg), tokenizer_(cfg.vocab_size) {
  cfg_.validate();
  const int d = cfg_.hidden_dim;
  const int f = cfg_.ff_dim();
  Rng rng(cfg_.seed);
  token_embed_ = Mat::randn(cfg_.vocab_size, d, rng, 1.0);
  pos_embed_ = Mat::randn(cfg_.max_len, d, rng, 1.0);
  const double ws = 1.0 / std::sqrt(static_cast<double>(d));
  const double ws_f = 1.0 / std::sqrt(static_cast<double>(f));
  layers_.resize(cfg_.layers);
  for (auto& lw : layers_) {
    lw.ln1_g.assign(d, 1.0);
    lw.ln1_b.assign(d, 0.0);
    lw.ln2_g.assign(d, 1.0);
    lw.ln2_b.assign(d, 0.0);
    lw.wq = Mat::randn(d, d, rng, ws);
    lw.wk = Mat::randn(d, d, rng, ws);
    lw.wv = Mat::randn(d, d, rng, ws);
    lw.wo = Mat::randn(d, d, rng, ws);
    lw.w1 = Mat::randn(d, f, rng, ws);
    lw.b1.assign(f, 0.0);
    lw.w2 = Mat::randn(f, d, rng, ws_f);
    lw.b2.assign(d, 0.0);
  }
  lnf_g_.assign(d, 1.0);
  lnf_b_.assign(d, 0.0);
  w_out_ = Mat::randn(d, cfg_.vocab_size, rng, ws);
  b_out_.assign(cfg_.vocab_size, 0.0);
}

Backbone::~Backbone() = default;

void Backbone::run_forward(Workspace& ws, std::span<const int> internal_ids, Adapter route,
                           const AdapterParams& params) const {
  forward_count_.fetch_add(1, std::memory_order_relaxed);
  const int S = static_cast<int>(internal_ids.size());
  const int d = cfg_.hidden_dim;
  const int h = cfg_.heads;
  const int dh = d / h;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool causal = cfg_.mode == Mode::decoder;

  ws.internal_ids.assign(internal_ids.begin(), internal_ids.end());
  ws.route = route;
  ws.seq_len = S;
  ws.layers.resize(cfg_.layers);

  Mat x(S, d);
  for (int i = 0; i < S; ++i) {
    const double* te = token_embed_.row(internal_ids[i]);
    const double* pe = pos_embed_.row(i);
    double* xr = x.row(i);
    for (int j = 0; j < d; ++j) xr[j] = te[j] + pe[j];
  }

  for (int l = 0; l < cfg_.layers; ++l) {
    const LayerWeights& lw = layers_[l];
    Workspace::Layer& sl = ws.layers[l];
    sl.x_in = x;

    layer_norm(x, lw.ln1_g, lw.ln1_b, sl.u, sl.ln1_xhat, sl.ln1_rstd);
    matmul(sl.u, lw.wq, sl.q);
    matmul(sl.u, lw.wk, sl.k);
    matmul(sl.u, lw.wv, sl.v);

    sl.att.assign(h, Mat());
    sl.att_concat = Mat(S, d);
    for (int hd = 0; hd < h; ++hd) {
      const int off = hd * dh;
      Mat& att = sl.att[hd];
      att = Mat(S, S);
      for (int i = 0; i < S; ++i) {
        const int limit = causal ? i + 1 : S;
        double mx = -1e300;
        for (int j = 0; j < limit; ++j) {
          double s = 0.0;
          const double* qi = sl.q.row(i) + off;
          const double* kj = sl.k.row(j) + off;
          for (int t = 0; t < dh; ++t) s += qi[t] * kj[t];
          s *= scale;
          att(i, j) = s;
          if (s > mx) mx = s;
        }
        double z = 0.0;
        for (int j = 0; j < limit; ++j) {
          att(i, j) = std::exp(att(i, j) - mx);
          z += att(i, j);
        }
        for (int j = 0; j < limit; ++j) att(i, j) /= z;
        for (int j = limit; j < S; ++j) att(i, j) = 0.0;
        double* orow = sl.att_concat.row(i) + off;
        for (int t = 0; t < dh; ++t) {
          double s = 0.0;
          for (int j = 0; j < limit; ++j) s += att(i, j) * sl.v(j, off + t);
          orow[t] = s;
        }
      }
    }

    Mat attn_out;
    matmul(sl.att_concat, lw.wo, attn_out);
    sl.x_mid = x;
    for (size_t i = 0; i < sl.x_mid.a.size(); ++i) sl.x_mid.a[i] += attn_out.a[i];

    layer_norm(sl.x_mid, lw.ln2_g, lw.ln2_b, sl.v2, sl.ln2_xhat, sl.ln2_rstd);
    matmul(sl.v2, lw.w1, sl.ff_pre);
    for (int i = 0; i < S; ++i) {
      double* r = sl.ff_pre.row(i);
      for (int j = 0; j < cfg_.ff_dim(); ++j) r[j] += lw.b1[j];
    }
    sl.ff_act = sl.ff_pre;
    for (auto& vv : sl.ff_act.a) vv = gelu(vv);
    Mat ff_out;
    matmul(sl.ff_act, lw.w2, ff_out);
    for (int i = 0; i < S; ++i) {
      double* r = ff_out.row(i);
      for (int j = 0; j < d; ++j) r[j] += lw.b2[j];
    }

    x = sl.x_mid;
    for (size_t i = 0; i < x.a.size(); ++i) x.a[i] += ff_out.a[i];

    if (route != Adapter::none) {
      const AdapterParams::Bottleneck& ab =
          route == Adapter::lm ? params.lm[l] : params.itm[l];
      matmul(sl.v2, ab.down, sl.ad_pre);
      sl.ad_act = sl.ad_pre;
      for (auto& vv : sl.ad_act.a) vv = std::tanh(vv);
      Mat ad_out;
      matmul(sl.ad_act, ab.up, ad_out);
      for (size_t i = 0; i < x.a.size(); ++i) x.a[i] += ad_out.a[i];
    }
  }

  ws.x_final = x;
  layer_norm(x, lnf_g_, lnf_b_, ws.h, ws.lnf_xhat, ws.lnf_rstd);
}

void WorkspaceDeleter::operator()(Workspace* ws) const { delete ws; }

WorkspacePtr Backbone::forward(std::span<const int> tokens, Adapter route,
                               const AdapterParams& params,
                               std::optional<int> mask_position) const {
  params.check_compatible(cfg_);
  const int m = static_cast<int>(tokens.size());
  if (m + 1 > cfg_.max_len) {
    throw DataError("token sequence of length " + std::to_string(m) +
                    " exceeds max_len " + std::to_string(cfg_.max_len - 1));
  }
  std::vector<int> ids(m + 1);
  ids[0] = cfg_.mode == Mode::encoder ? Tokenizer::kCls : Tokenizer::kBos;
  for (int i = 0; i < m; ++i) {
    const int t = tokens[i];
    if (t < 0 || t >= cfg_.vocab_size) {
      throw DataError("token id " + std::to_string(t) + " outside vocabulary");
    }
    ids[i + 1] = t;
  }
  if (mask_position) {
    if (*mask_position < 0 || *mask_position >= m) {
      throw DataError("mask position " + std::to_string(*mask_position) + " out of range");
    }
    ids[*mask_position + 1] = Tokenizer::kMask;
  }
  WorkspacePtr ws(new Workspace());
  run_forward(*ws, ids, route, params);
  return ws;
}

const Mat& Backbone::hidden(const Workspace& ws) const { return ws.h; }

int Backbone::context_row(const Workspace& ws) const {
  return cfg_.mode == Mode::encoder ? 0 : ws.seq_len - 1;
}

std::vector<double> Backbone::logits_at(const Workspace& ws, int row) const {
  const int d = cfg_.hidden_dim;
  std::vector<double> logits(b_out_);
  const double* hr = ws.h.row(row);
  for (int i = 0; i < d; ++i) {
    const double hv = hr[i];
    const double* wr = w_out_.row(i);
    for (int j = 0; j < cfg_.vocab_size; ++j) logits[j] += hv * wr[j];
  }
  return logits;
}

HiddenStates Backbone::encode(std::span<const int> tokens, Adapter route,
                              const AdapterParams& params) const {
  auto ws = forward(tokens, route, params);
  HiddenStates out;
  const int m = static_cast<int>(tokens.size());
  const int d = cfg_.hidden_dim;
  out.token_states = Mat(m, d);
  for (int i = 0; i < m; ++i) {
    std::memcpy(out.token_states.row(i), ws->h.row(i + 1), sizeof(double) * d);
  }
  const int crow = context_row(*ws);
  out.context.assign(ws->h.row(crow), ws->h.row(crow) + d);
  return out;
}

std::vector<double> Backbone::token_log_probs(std::span<const int> tokens, int position,
                                              Adapter route, const AdapterParams& params) const {
  const int m = static_cast<int>(tokens.size());
  if (position < 0 || position >= m) {
    throw DataError("token_log_probs: position " + std::to_string(position) +
                    " out of range [0, " + std::to_string(m) + ")");
  }
  if (cfg_.mode == Mode::encoder) {
    auto ws = forward(tokens, route, params, position);
    return log_softmax(logits_at(*ws, position + 1));
  }
  // Decoder: the hidden state at internal row p attends rows <= p, i.e. the
  // special slot plus tokens[0..p-1]; its logits predict tokens[p].
  auto ws = forward(tokens, route, params);
  return log_softmax(logits_at(*ws, position));
}

void Backbone::backward(const Workspace& ws, const Mat& d_hidden,
                        const std::vector<std::pair<int, std::vector<double>>>& d_logits,
                        const AdapterParams& params, AdapterParams& grads) const {
  const int S = ws.seq_len;
  const int d = cfg_.hidden_dim;
  const int h = cfg_.heads;
  const int dh = d / h;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool causal = cfg_.mode == Mode::decoder;

  Mat dH = d_hidden;
  check_shape(dH, S, d, "backward d_hidden");
  for (const auto& [row, dvec] : d_logits) {
    if (row < 0 || row >= S) throw DataError("backward: logit row out of range");
    if (static_cast<int>(dvec.size()) != cfg_.vocab_size) {
      throw DataError("backward: logit gradient width mismatch");
    }
    double* dhr = dH.row(row);
    for (int i = 0; i < d; ++i) {
      const double* wr = w_out_.row(i);
      double s = 0.0;
      for (int j = 0; j < cfg_.vocab_size; ++j) s += wr[j] * dvec[j];
      dhr[i] += s;
    }
  }

  Mat dx(S, d);
  layer_norm_backward(dH, ws.lnf_xhat, ws.lnf_rstd, lnf_g_, dx);

  for (int l = cfg_.layers - 1; l >= 0; --l) {
    const LayerWeights& lw = layers_[l];
    const Workspace::Layer& sl = ws.layers[l];

    // x_out = x_mid + ff_out + adapter_out; dx currently holds d(x_out).
    Mat dv2(S, d);

    {  // feed-forward branch
      Mat dff_act;
      matmul_bt(dx, lw.w2, dff_act);  // (S x d) * (f x d)^T -> S x f
      for (size_t i = 0; i < dff_act.a.size(); ++i) {
        dff_act.a[i] *= gelu_grad(sl.ff_pre.a[i]);
      }
      matmul_bt(dff_act, lw.w1, dv2);  // (S x f) * (d x f)^T -> S x d
    }

    if (ws.route != Adapter::none) {  // parallel adapter branch
      const bool is_lm = ws.route == Adapter::lm;
      const AdapterParams::Bottleneck& ab = is_lm ? params.lm[l] : params.itm[l];
      AdapterParams::Bottleneck& gb = is_lm ? grads.lm[l] : grads.itm[l];
      Mat dad_act;
      matmul_bt(dx, ab.up, dad_act);       // S x b
      matmul_at_acc(sl.ad_act, dx, gb.up);  // dUp += act^T dx
      for (size_t i = 0; i < dad_act.a.size(); ++i) {
        const double t = sl.ad_act.a[i];
        dad_act.a[i] *= (1.0 - t * t);
      }
      matmul_at_acc(sl.v2, dad_act, gb.down);  // dDown += v2^T dad_pre
      Mat dv2_ad;
      matmul_bt(dad_act, ab.down, dv2_ad);  // S x d
      for (size_t i = 0; i < dv2.a.size(); ++i) dv2.a[i] += dv2_ad.a[i];
    }

    Mat dx_mid = dx;  // residual branch
    layer_norm_backward(dv2, sl.ln2_xhat, sl.ln2_rstd, lw.ln2_g, dx_mid);

    // x_mid = x_in + attn_out
    Mat d_att_concat;
    matmul_bt(dx_mid, lw.wo, d_att_concat);  // S x d

    Mat dq(S, d), dk(S, d), dv(S, d);
    for (int hd = 0; hd < h; ++hd) {
      const int off = hd * dh;
      const Mat& att = sl.att[hd];
      for (int i = 0; i < S; ++i) {
        const int limit = causal ? i + 1 : S;
        const double* dor = d_att_concat.row(i) + off;
        // dA[i,j] = d_out . v_j ; softmax backward per row
        double dot_sum = 0.0;
        std::vector<double> da(limit);
        for (int j = 0; j < limit; ++j) {
          double s = 0.0;
          const double* vj = sl.v.row(j) + off;
          for (int t = 0; t < dh; ++t) s += dor[t] * vj[t];
          da[j] = s;
          dot_sum += s * att(i, j);
        }
        for (int j = 0; j < limit; ++j) {
          const double a = att(i, j);
          const double ds = a * (da[j] - dot_sum) * scale;
          // dscore -> dq_i, dk_j
          double* dqi = dq.row(i) + off;
          double* dkj = dk.row(j) + off;
          const double* qi = sl.q.row(i) + off;
          const double* kj = sl.k.row(j) + off;
          for (int t = 0; t < dh; ++t) {
            dqi[t] += ds * kj[t];
            dkj[t] += ds * qi[t];
          }
          // dv_j += a * d_out_i
          double* dvj = dv.row(j) + off;
          for (int t = 0; t < dh; ++t) dvj[t] += a * dor[t];
        }
      }
    }

    Mat du(S, d);
    {
      Mat tmp;
      matmul_bt(dq, lw.wq, tmp);
      for (size_t i = 0; i < du.a.size(); ++i) du.a[i] += tmp.a[i];
      matmul_bt(dk, lw.wk, tmp);
      for (size_t i = 0; i < du.a.size(); ++i) du.a[i] += tmp.a[i];
      matmul_bt(dv, lw.wv, tmp);
      for (size_t i = 0; i < du.a.size(); ++i) du.a[i] += tmp.a[i];
    }

    Mat dx_in = dx_mid;  // residual branch
    layer_norm_backward(du, sl.ln1_xhat, sl.ln1_rstd, lw.ln1_g, dx_in);
    dx = std::move(dx_in);
  }
}

uint64_t Backbone::frozen_hash() const {
  uint64_t h = 0xcbf29ce484222325ull;
  auto eat_mat = [&](const Mat& m) { h = fnv1a_bytes(m.a.data(), m.a.size() * sizeof(double), h); };
  auto eat_vec = [&](const std::vector<double>& v) {
    h = fnv1a_bytes(v.data(), v.size() * sizeof(double), h);
  };
  eat_mat(token_embed_);
  eat_mat(pos_embed_);
  for (const auto& lw : layers_) {
    eat_vec(lw.ln1_g);
    eat_vec(lw.ln1_b);
    eat_vec(lw.ln2_g);
    eat_vec(lw.ln2_b);
    eat_mat(lw.wq);
    eat_mat(lw.wk);
    eat_mat(lw.wv);
    eat_mat(lw.wo);
    eat_mat(lw.w1);
    eat_vec(lw.b1);
    eat_mat(lw.w2);
    eat_vec(lw.b2);
  }
  eat_vec(lnf_g_);
  eat_vec(lnf_b_);
  eat_mat(w_out_);
  eat_vec(b_out_);
  return h;
}

// ---------------------------------------------------------------------------
// FeatureProvider

FeatureProvider FeatureProvider::load(const std::filesystem::path& features_bin,
                                      const std::filesystem::path& manifest) {
  const auto ids_path = features_bin.string() + ".ids";
  EmbeddingFile f;
  {
    // The container's sidecar is unused for features; rows are addressed by
    // the manifest. Synthesize ids if the sidecar is absent.
    std::ifstream probe(ids_path);
    if (probe) {
      f = read_embeddings(features_bin, ids_path);
    } else {
      throw DataError("feature container sidecar missing: " + ids_path);
    }
  }
  FeatureProvider p;
  p.dim_ = static_cast<int>(f.dim);
  size_t line_no = 0;
  for (const auto& line : read_lines(manifest)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string id;
    long offset = -1;
    long count = -1;
    if (!std::getline(ss, id, '\t') || !(ss >> offset >> count) || offset < 0 || count < 1) {
      throw DataError(manifest.string() + ":" + std::to_string(line_no) +
                      ": expected id<TAB>offset<TAB>patch_count");
    }
    if (static_cast<size_t>(offset + count) > f.count()) {
      throw DataError(manifest.string() + ":" + std::to_string(line_no) +
                      ": block exceeds container rows");
    }
    Mat block(static_cast<int>(count), p.dim_);
    for (long r = 0; r < count; ++r) {
      auto row = f.row(static_cast<size_t>(offset + r));
      for (int c = 0; c < p.dim_; ++c) block(static_cast<int>(r), c) = row[c];
    }
    if (!p.features_.emplace(id, std::move(block)).second) {
      throw DataError(manifest.string() + ": duplicate image id " + id);
    }
  }
  return p;
}

FeatureProvider::FeatureProvider(std::map<std::string, Mat> features)
    : features_(std::move(features)) {
  if (!features_.empty()) dim_ = features_.begin()->second.cols;
  for (const auto& [id, m] : features_) {
    if (m.cols != dim_) throw DataError("feature provider: inconsistent dims for " + id);
  }
}

VisualFeatureSet FeatureProvider::get(const std::string& image_id) const {
  auto it = features_.find(image_id);
  if (it == features_.end()) throw DataError("unknown image: " + image_id);
  VisualFeatureSet vs{it->second};
  vs.validate();
  return vs;
}

bool FeatureProvider::has(const std::string& image_id) const {
  return features_.count(image_id) > 0;
}

std::vector<std::string> FeatureProvider::ids() const {
  std::vector<std::string> out;
  out.reserve(features_.size());
  for (const auto& [id, _] : features_) out.push_back(id);
  return out;
}

void save_features(const std::filesystem::path& features_bin,
                   const std::filesystem::path& manifest,
                   const std::vector<std::pair<std::string, Mat>>& blocks) {
  std::vector<EmbeddingRecord> rows;
  std::vector<std::string> manifest_lines;
  long offset = 0;
  for (const auto& [id, m] : blocks) {
    for (int r = 0; r < m.rows; ++r) {
      EmbeddingRecord rec;
      rec.id = id + "#" + std::to_string(r);
      rec.values.resize(m.cols);
      for (int c = 0; c < m.cols; ++c) rec.values[c] = static_cast<float>(m(r, c));
      rows.push_back(std::move(rec));
    }
    manifest_lines.push_back(id + "\t" + std::to_string(offset) + "\t" + std::to_string(m.rows));
    offset += m.rows;
  }
  write_embeddings(features_bin, features_bin.string() + ".ids", rows);
  write_lines(manifest, manifest_lines);
}

}  // namespace imagine::backend
