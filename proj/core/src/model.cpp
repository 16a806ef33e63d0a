#include "survpfn/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "survpfn/errors.hpp"
#include "survpfn/rng.hpp"

namespace survpfn {

void ModelConfig::validate() const {
  if (d_max == 0) throw ConfigError("model: d_max must be >= 1");
  if (width == 0 || heads == 0 || width % heads != 0)
    throw ConfigError("model: width must be a positive multiple of heads");
  if (layers == 0) throw ConfigError("model: at least one layer required");
  if (bins < 2) throw ConfigError("model: at least 2 bins required");
  if (ffn == 0) throw ConfigError("model: ffn width must be >= 1");
}

namespace {
constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
constexpr double kLnEps = 1e-5;
constexpr double kRmsEps = 1e-6;
}  // namespace

struct PfnModel::Layout {
  struct Block {
    std::size_t ln1_g = npos, ln1_b = npos;
    std::size_t wq = npos, bq = npos, wk = npos, bk = npos, wv = npos, bv = npos;
    std::size_t wo = npos, bo = npos;
    std::size_t qn_g = npos, kn_g = npos;
    std::size_t ln2_g = npos, ln2_b = npos;
    std::size_t w1 = npos, b1 = npos;  // GELU MLP input, or SwiGLU gate
    std::size_t wu = npos;             // SwiGLU up projection
    std::size_t w2 = npos, b2 = npos;
  };
  std::size_t wx, w_time, w_event, w_ind, b_ctx, b_q;
  std::vector<Block> blocks;
  std::size_t lnf_g, lnf_b, w_head, b_head;
  std::size_t total = 0;

  explicit Layout(const ModelConfig& c) {
    const std::size_t H = c.width, F = c.ffn, D = c.head_dim();
    auto take = [this](std::size_t n) {
      const std::size_t at = total;
      total += n;
      return at;
    };
    wx = take(H * c.d_max);
    w_time = take(H);
    w_event = take(H);
    w_ind = take(H);
    b_ctx = take(H);
    b_q = take(H);
    for (std::size_t l = 0; l < c.layers; ++l) {
      Block b;
      b.ln1_g = take(H);
      b.ln1_b = take(H);
      b.wq = take(H * H);
      b.bq = take(H);
      b.wk = take(H * H);
      b.bk = take(H);
      b.wv = take(H * H);
      b.bv = take(H);
      b.wo = take(H * H);
      b.bo = take(H);
      if (c.parallel_swiglu) {
        b.qn_g = take(D);
        b.kn_g = take(D);
        b.w1 = take(F * H);
        b.wu = take(F * H);
      } else {
        b.ln2_g = take(H);
        b.ln2_b = take(H);
        b.w1 = take(F * H);
        b.b1 = take(F);
      }
      b.w2 = take(H * F);
      b.b2 = take(H);
      blocks.push_back(b);
    }
    lnf_g = take(H);
    lnf_b = take(H);
    w_head = take(c.bins * H);
    b_head = take(c.bins);
  }
};

PfnModel::PfnModel(ModelConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const Layout lay(cfg_);
  params_.assign(lay.total, 0.0);
  Rng rng(RngStream{cfg_.seed, 0x5EED}.child("init"));
  const std::size_t H = cfg_.width, F = cfg_.ffn;
  auto fill = [&](std::size_t at, std::size_t n, double sd) {
    for (std::size_t i = 0; i < n; ++i) params_[at + i] = sd * rng.normal();
  };
  auto ones = [&](std::size_t at, std::size_t n) {
    std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(at), n, 1.0);
  };
  const double resid = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg_.layers));
  fill(lay.wx, H * cfg_.d_max, 1.0);
  fill(lay.w_time, H, 1.0);
  fill(lay.w_event, H, 1.0);
  fill(lay.w_ind, H, 1.0);
  fill(lay.b_ctx, H, 0.5);
  fill(lay.b_q, H, 0.5);
  for (const auto& b : lay.blocks) {
    ones(b.ln1_g, H);
    const double s = 1.0 / std::sqrt(static_cast<double>(H));
    fill(b.wq, H * H, s);
    fill(b.wk, H * H, s);
    fill(b.wv, H * H, s);
    fill(b.wo, H * H, s * resid);
    if (cfg_.parallel_swiglu) {
      ones(b.qn_g, cfg_.head_dim());
      ones(b.kn_g, cfg_.head_dim());
      fill(b.w1, F * H, s);
      fill(b.wu, F * H, s);
    } else {
      ones(b.ln2_g, H);
      fill(b.w1, F * H, s);
    }
    fill(b.w2, H * F, resid / std::sqrt(static_cast<double>(F)));
  }
  ones(lay.lnf_g, H);
  if (!cfg_.zero_head) fill(lay.w_head, cfg_.bins * H, 1.0 / std::sqrt(static_cast<double>(H)));
}

std::size_t PfnModel::parameter_count(const ModelConfig& cfg) {
  cfg.validate();
  return Layout(cfg).total;
}

PfnModel::PfnModel(ModelConfig cfg, std::vector<double> parameters)
    : cfg_(cfg), params_(std::move(parameters)) {
  cfg_.validate();
  if (params_.size() != Layout(cfg_).total)
    throw DataError("model: parameter count does not match the configuration");
}

// ---------------------------------------------------------------------------

namespace {

// Token embeddings from the raw inputs held in `batch`.
Matrix embed_inputs(const ModelConfig& cfg, const PfnModel::Layout& lay, const double* P,
                    const TokenBatch& batch) {
  const std::size_t N = batch.size(), H = cfg.width, Dm = cfg.d_max;
  Matrix tokens(N, H);
  for (std::size_t i = 0; i < N; ++i) {
    const bool is_ctx = i < batch.n_context;
    auto f = batch.features.row(i);
    auto out = tokens.row(i);
    for (std::size_t h = 0; h < H; ++h) {
      const double* w = P + lay.wx + h * Dm;
      double acc = 0.0;
      for (std::size_t c = 0; c < Dm; ++c) acc += w[c] * f[c];
      if (is_ctx) {
        acc += P[lay.w_time + h] * batch.time[i] + P[lay.w_event + h] * batch.indicator[i] +
               P[lay.b_ctx + h];
      } else {
        acc += P[lay.w_ind + h] * batch.indicator[i] + P[lay.b_q + h];
      }
      out[h] = acc;
    }
  }
  return tokens;
}

}  // namespace

TokenBatch PfnModel::embed_tokens(const ContextInput& ctx, const QueryInput& qry,
                                  const Binner& binner, bool canonical_order) const {
  const std::size_t C = ctx.x.rows(), Q = qry.x.rows(), N = C + Q;
  const std::size_t Dm = cfg_.d_max;
  if (ctx.z.size() != C || ctx.event.size() != C || qry.indicator.size() != Q)
    throw std::invalid_argument("embed_tokens: input lengths disagree");
  if (C > 0 && Q > 0 && ctx.x.cols() != qry.x.cols())
    throw std::invalid_argument("embed_tokens: context and query covariate widths differ");
  const std::size_t d = C > 0 ? ctx.x.cols() : qry.x.cols();
  if (d > Dm)
    throw DataError("embed_tokens: covariate dimension " + std::to_string(d) +
                    " exceeds the model cap d_max = " + std::to_string(Dm));
  for (int v : qry.indicator)
    if (v != 0 && v != 1) throw std::invalid_argument("embed_tokens: query indicator must be 0/1");

  std::vector<std::size_t> order(C);
  std::iota(order.begin(), order.end(), 0);
  if (canonical_order) {
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      auto ra = ctx.x.row(a), rb = ctx.x.row(b);
      for (std::size_t c = 0; c < d; ++c)
        if (ra[c] != rb[c]) return ra[c] < rb[c];
      if (ctx.z[a] != ctx.z[b]) return ctx.z[a] < ctx.z[b];
      if (ctx.event[a] != ctx.event[b]) return ctx.event[a] < ctx.event[b];
      return a < b;
    });
  }

  TokenBatch batch;
  batch.n_context = C;
  batch.n_query = Q;
  batch.roles.assign(N, TokenRole::context);
  std::fill(batch.roles.begin() + static_cast<std::ptrdiff_t>(C), batch.roles.end(),
            TokenRole::query);
  batch.features = Matrix(N, Dm);
  batch.time.assign(N, 0.0);
  batch.indicator.assign(N, 0.0);
  const double xscale = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(d, 1)));
  for (std::size_t i = 0; i < C; ++i) {
    const std::size_t src = order[i];
    auto xr = ctx.x.row(src);
    for (std::size_t c = 0; c < d; ++c) batch.features(i, c) = xr[c] * xscale;
    const double z = std::clamp(ctx.z[src], binner.lo(), binner.hi());
    batch.time[i] = 2.0 * (z - binner.lo()) / (binner.hi() - binner.lo()) - 1.0;
    batch.indicator[i] = ctx.event[src];
  }
  for (std::size_t j = 0; j < Q; ++j) {
    auto xr = qry.x.row(j);
    for (std::size_t c = 0; c < d; ++c) batch.features(C + j, c) = xr[c] * xscale;
    batch.indicator[C + j] = qry.indicator[j];
  }
  for (double v : batch.features.data())
    if (!std::isfinite(v)) throw DataError("embed_tokens: non-finite covariate");

  batch.tokens = embed_inputs(cfg_, Layout(cfg_), params_.data(), batch);
  return batch;
}

// ---------------------------------------------------------------------------
// Dense kernels. Weights are row-major (out x in).

namespace {

// Y = X W^T + b
void linear(const Matrix& X, const double* W, const double* b, std::size_t out, Matrix& Y) {
  const std::size_t n = X.rows(), in = X.cols();
  Y = Matrix(n, out);
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = X.row(i).data();
    double* y = Y.row(i).data();
    for (std::size_t o = 0; o < out; ++o) {
      const double* w = W + o * in;
      double acc = b ? b[o] : 0.0;
      for (std::size_t k = 0; k < in; ++k) acc += w[k] * x[k];
      y[o] = acc;
    }
  }
}

// dW += dY^T X, db += colsum(dY), dX += dY W
void linear_back(const Matrix& dY, const Matrix& X, const double* W, double* dW, double* db,
                 Matrix* dX) {
  const std::size_t n = X.rows(), in = X.cols(), out = dY.cols();
  for (std::size_t i = 0; i < n; ++i) {
    const double* dy = dY.row(i).data();
    const double* x = X.row(i).data();
    double* dx = dX ? dX->row(i).data() : nullptr;
    for (std::size_t o = 0; o < out; ++o) {
      const double g = dy[o];
      if (g == 0.0) continue;
      double* dw = dW + o * in;
      for (std::size_t k = 0; k < in; ++k) dw[k] += g * x[k];
      if (db) db[o] += g;
      if (dx) {
        const double* w = W + o * in;
        for (std::size_t k = 0; k < in; ++k) dx[k] += g * w[k];
      }
    }
  }
}

struct NormStats {
  std::vector<double> mean, rstd;
};

void layer_norm(const Matrix& X, const double* g, const double* b, Matrix& Y, NormStats& st) {
  const std::size_t n = X.rows(), H = X.cols();
  Y = Matrix(n, H);
  st.mean.assign(n, 0.0);
  st.rstd.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto x = X.row(i);
    double mu = 0.0;
    for (double v : x) mu += v;
    mu /= static_cast<double>(H);
    double var = 0.0;
    for (double v : x) var += (v - mu) * (v - mu);
    var /= static_cast<double>(H);
    const double r = 1.0 / std::sqrt(var + kLnEps);
    st.mean[i] = mu;
    st.rstd[i] = r;
    auto y = Y.row(i);
    for (std::size_t h = 0; h < H; ++h) y[h] = (x[h] - mu) * r * g[h] + b[h];
  }
}

void layer_norm_back(const Matrix& dY, const Matrix& X, const double* g, const NormStats& st,
                     double* dg, double* db, Matrix& dX) {
  const std::size_t n = X.rows(), H = X.cols();
  std::vector<double> xhat(H), dxhat(H);
  for (std::size_t i = 0; i < n; ++i) {
    auto x = X.row(i);
    auto dy = dY.row(i);
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t h = 0; h < H; ++h) {
      xhat[h] = (x[h] - st.mean[i]) * st.rstd[i];
      dxhat[h] = dy[h] * g[h];
      dg[h] += dy[h] * xhat[h];
      db[h] += dy[h];
      m1 += dxhat[h];
      m2 += dxhat[h] * xhat[h];
    }
    m1 /= static_cast<double>(H);
    m2 /= static_cast<double>(H);
    auto dx = dX.row(i);
    for (std::size_t h = 0; h < H; ++h) dx[h] += st.rstd[i] * (dxhat[h] - m1 - xhat[h] * m2);
  }
}

double gelu(double u) { return 0.5 * u * (1.0 + std::erf(u * 0.7071067811865476)); }
double gelu_grad(double u) {
  const double cdf = 0.5 * (1.0 + std::erf(u * 0.7071067811865476));
  const double pdf = 0.3989422804014327 * std::exp(-0.5 * u * u);
  return cdf + u * pdf;
}
double sigmoid(double s) { return 1.0 / (1.0 + std::exp(-s)); }

// Per-head RMS normalization of a row block in place; stores 1/rms per (row, head).
void rms_heads(Matrix& M, const double* g, std::size_t heads, std::size_t D, Matrix& raw,
               std::vector<double>& inv_rms) {
  raw = M;
  inv_rms.assign(M.rows() * heads, 0.0);
  for (std::size_t i = 0; i < M.rows(); ++i) {
    auto row = M.row(i);
    for (std::size_t hd = 0; hd < heads; ++hd) {
      double ss = 0.0;
      for (std::size_t k = 0; k < D; ++k) ss += row[hd * D + k] * row[hd * D + k];
      const double r = 1.0 / std::sqrt(ss / static_cast<double>(D) + kRmsEps);
      inv_rms[i * heads + hd] = r;
      for (std::size_t k = 0; k < D; ++k) row[hd * D + k] = row[hd * D + k] * r * g[k];
    }
  }
}

void rms_heads_back(Matrix& dM, const Matrix& raw, const std::vector<double>& inv_rms,
                    const double* g, double* dg, std::size_t heads, std::size_t D) {
  for (std::size_t i = 0; i < dM.rows(); ++i) {
    auto d = dM.row(i);
    auto x = raw.row(i);
    for (std::size_t hd = 0; hd < heads; ++hd) {
      const double r = inv_rms[i * heads + hd];
      double dot = 0.0;
      for (std::size_t k = 0; k < D; ++k) {
        const double nk = x[hd * D + k] * r;
        const double dn = d[hd * D + k] * g[k];
        dg[k] += d[hd * D + k] * nk;
        dot += dn * nk;
      }
      dot /= static_cast<double>(D);
      for (std::size_t k = 0; k < D; ++k) {
        const double nk = x[hd * D + k] * r;
        const double dn = d[hd * D + k] * g[k];
        d[hd * D + k] = (dn - nk * dot) * r;
      }
    }
  }
}

Matrix context_rows(const Matrix& M, std::size_t C) {
  Matrix out(C, M.cols());
  std::copy_n(M.data().begin(), C * M.cols(), out.data().begin());
  return out;
}

struct LayerCache {
  Matrix in;
  Matrix a;
  NormStats n1;
  Matrix q, k, v;          // k, v: context rows only
  Matrix q_raw, k_raw;     // before RMS normalization
  std::vector<double> q_inv, k_inv;
  std::vector<Matrix> p;   // per head, N x C
  Matrix o;                // concatenated head outputs
  Matrix mid;              // residual after attention (sequential blocks)
  Matrix b;                // LN2 output
  NormStats n2;
  Matrix u, u2, m;         // FFN pre-activations and activation output
};

}  // namespace

// ---------------------------------------------------------------------------

namespace {

struct Pass {
  const ModelConfig& cfg;
  const PfnModel::Layout& lay;
  const double* P;
  std::vector<LayerCache> caches;
  Matrix final_in;   // query rows of the last residual stream
  Matrix final_out;  // after final LN
  NormStats nf;
  Matrix logits;
};

void attention_forward(Pass& ps, const PfnModel::Layout::Block& blk, LayerCache& lc,
                       std::size_t C, Matrix& att_out) {
  const auto& cfg = ps.cfg;
  const double* P = ps.P;
  const std::size_t H = cfg.width, D = cfg.head_dim(), heads = cfg.heads;
  const std::size_t N = lc.a.rows();
  const Matrix actx = context_rows(lc.a, C);
  linear(lc.a, P + blk.wq, P + blk.bq, H, lc.q);
  linear(actx, P + blk.wk, P + blk.bk, H, lc.k);
  linear(actx, P + blk.wv, P + blk.bv, H, lc.v);
  if (cfg.parallel_swiglu) {
    rms_heads(lc.q, P + blk.qn_g, heads, D, lc.q_raw, lc.q_inv);
    rms_heads(lc.k, P + blk.kn_g, heads, D, lc.k_raw, lc.k_inv);
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(D));
  lc.p.assign(heads, Matrix(N, C));
  lc.o = Matrix(N, H);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    Matrix& p = lc.p[hd];
    for (std::size_t i = 0; i < N; ++i) {
      const double* qi = lc.q.row(i).data() + hd * D;
      double* pr = p.row(i).data();
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < C; ++j) {
        const double* kj = lc.k.row(j).data() + hd * D;
        double s = 0.0;
        for (std::size_t c = 0; c < D; ++c) s += qi[c] * kj[c];
        pr[j] = s * scale;
        mx = std::max(mx, pr[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < C; ++j) z += (pr[j] = std::exp(pr[j] - mx));
      const double inv = 1.0 / z;
      double* oi = lc.o.row(i).data() + hd * D;
      for (std::size_t j = 0; j < C; ++j) {
        pr[j] *= inv;
        const double* vj = lc.v.row(j).data() + hd * D;
        for (std::size_t c = 0; c < D; ++c) oi[c] += pr[j] * vj[c];
      }
    }
  }
  linear(lc.o, P + blk.wo, P + blk.bo, H, att_out);
}

// Returns d(a) contribution from the attention branch given d(att_out).
void attention_backward(Pass& ps, const PfnModel::Layout::Block& blk, LayerCache& lc,
                        std::size_t C, const Matrix& d_out, double* G, Matrix& da) {
  const auto& cfg = ps.cfg;
  const double* P = ps.P;
  const std::size_t H = cfg.width, D = cfg.head_dim(), heads = cfg.heads;
  const std::size_t N = lc.a.rows();
  Matrix d_o(N, H);
  linear_back(d_out, lc.o, P + blk.wo, G + blk.wo, G + blk.bo, &d_o);
  Matrix dq(N, H), dk(C, H), dv(C, H);
  const double scale = 1.0 / std::sqrt(static_cast<double>(D));
  std::vector<double> dp(C);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    const Matrix& p = lc.p[hd];
    for (std::size_t i = 0; i < N; ++i) {
      const double* doi = d_o.row(i).data() + hd * D;
      const double* pr = p.row(i).data();
      double dot = 0.0;
      for (std::size_t j = 0; j < C; ++j) {
        const double* vj = lc.v.row(j).data() + hd * D;
        double* dvj = dv.row(j).data() + hd * D;
        double s = 0.0;
        for (std::size_t c = 0; c < D; ++c) {
          s += doi[c] * vj[c];
          dvj[c] += pr[j] * doi[c];
        }
        dp[j] = s;
        dot += s * pr[j];
      }
      const double* qi = lc.q.row(i).data() + hd * D;
      double* dqi = dq.row(i).data() + hd * D;
      for (std::size_t j = 0; j < C; ++j) {
        const double ds = pr[j] * (dp[j] - dot) * scale;
        if (ds == 0.0) continue;
        const double* kj = lc.k.row(j).data() + hd * D;
        double* dkj = dk.row(j).data() + hd * D;
        for (std::size_t c = 0; c < D; ++c) {
          dqi[c] += ds * kj[c];
          dkj[c] += ds * qi[c];
        }
      }
    }
  }
  if (cfg.parallel_swiglu) {
    rms_heads_back(dq, lc.q_raw, lc.q_inv, P + blk.qn_g, G + blk.qn_g, heads, D);
    rms_heads_back(dk, lc.k_raw, lc.k_inv, P + blk.kn_g, G + blk.kn_g, heads, D);
  }
  const Matrix actx = context_rows(lc.a, C);
  Matrix da_ctx(C, H);
  linear_back(dq, lc.a, P + blk.wq, G + blk.wq, G + blk.bq, &da);
  linear_back(dk, actx, P + blk.wk, G + blk.wk, G + blk.bk, &da_ctx);
  linear_back(dv, actx, P + blk.wv, G + blk.wv, G + blk.bv, &da_ctx);
  for (std::size_t i = 0; i < C; ++i) {
    auto dst = da.row(i);
    auto src = da_ctx.row(i);
    for (std::size_t h = 0; h < H; ++h) dst[h] += src[h];
  }
}

void ffn_forward(Pass& ps, const PfnModel::Layout::Block& blk, LayerCache& lc, const Matrix& x,
                 Matrix& out) {
  const auto& cfg = ps.cfg;
  const double* P = ps.P;
  const std::size_t H = cfg.width, F = cfg.ffn;
  if (cfg.parallel_swiglu) {
    linear(x, P + blk.w1, nullptr, F, lc.u);
    linear(x, P + blk.wu, nullptr, F, lc.u2);
    lc.m = Matrix(x.rows(), F);
    for (std::size_t i = 0; i < lc.m.data().size(); ++i) {
      const double s = lc.u.data()[i];
      lc.m.data()[i] = s * sigmoid(s) * lc.u2.data()[i];
    }
  } else {
    linear(x, P + blk.w1, P + blk.b1, F, lc.u);
    lc.m = Matrix(x.rows(), F);
    for (std::size_t i = 0; i < lc.m.data().size(); ++i) lc.m.data()[i] = gelu(lc.u.data()[i]);
  }
  linear(lc.m, P + blk.w2, P + blk.b2, H, out);
}

void ffn_backward(Pass& ps, const PfnModel::Layout::Block& blk, LayerCache& lc, const Matrix& x,
                  const Matrix& d_out, double* G, Matrix& dx) {
  const auto& cfg = ps.cfg;
  const double* P = ps.P;
  const std::size_t F = cfg.ffn;
  Matrix dm(x.rows(), F);
  linear_back(d_out, lc.m, P + blk.w2, G + blk.w2, G + blk.b2, &dm);
  if (cfg.parallel_swiglu) {
    Matrix ds(x.rows(), F), du(x.rows(), F);
    for (std::size_t i = 0; i < dm.data().size(); ++i) {
      const double s = lc.u.data()[i];
      const double sg = sigmoid(s);
      const double g = dm.data()[i];
      du.data()[i] = g * s * sg;
      ds.data()[i] = g * lc.u2.data()[i] * sg * (1.0 + s * (1.0 - sg));
    }
    linear_back(ds, x, P + blk.w1, G + blk.w1, nullptr, &dx);
    linear_back(du, x, P + blk.wu, G + blk.wu, nullptr, &dx);
  } else {
    for (std::size_t i = 0; i < dm.data().size(); ++i) dm.data()[i] *= gelu_grad(lc.u.data()[i]);
    linear_back(dm, x, P + blk.w1, G + blk.w1, G + blk.b1, &dx);
  }
}

void add_into(Matrix& dst, const Matrix& src) {
  for (std::size_t i = 0; i < dst.data().size(); ++i) dst.data()[i] += src.data()[i];
}

// Runs the network; fills ps.logits with one row per query.
void run_forward(Pass& ps, const TokenBatch& batch) {
  const auto& cfg = ps.cfg;
  const auto& lay = ps.lay;
  const double* P = ps.P;
  const std::size_t C = batch.n_context, Q = batch.n_query, H = cfg.width;
  if (C == 0) throw std::invalid_argument("forward: at least one context token required");
  Matrix h = embed_inputs(cfg, lay, P, batch);
  ps.caches.assign(cfg.layers, {});
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const auto& blk = lay.blocks[l];
    LayerCache& lc = ps.caches[l];
    lc.in = h;
    layer_norm(h, P + blk.ln1_g, P + blk.ln1_b, lc.a, lc.n1);
    Matrix att;
    attention_forward(ps, blk, lc, C, att);
    if (cfg.parallel_swiglu) {
      Matrix f;
      ffn_forward(ps, blk, lc, lc.a, f);
      add_into(h, att);
      add_into(h, f);
    } else {
      add_into(h, att);
      lc.mid = h;
      layer_norm(h, P + blk.ln2_g, P + blk.ln2_b, lc.b, lc.n2);
      Matrix f;
      ffn_forward(ps, blk, lc, lc.b, f);
      add_into(h, f);
    }
  }
  ps.final_in = Matrix(Q, H);
  for (std::size_t j = 0; j < Q; ++j)
    std::copy_n(h.row(C + j).begin(), H, ps.final_in.row(j).begin());
  layer_norm(ps.final_in, P + lay.lnf_g, P + lay.lnf_b, ps.final_out, ps.nf);
  linear(ps.final_out, P + lay.w_head, P + lay.b_head, cfg.bins, ps.logits);
}

HistogramPrediction softmax_row(std::span<const double> logits) {
  HistogramPrediction pred;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  const double lz = mx + std::log(z);
  pred.log_probs.resize(logits.size());
  pred.probs.resize(logits.size());
  for (std::size_t l = 0; l < logits.size(); ++l) {
    pred.log_probs[l] = logits[l] - lz;
    pred.probs[l] = std::exp(pred.log_probs[l]);
  }
  return pred;
}

}  // namespace

std::vector<HistogramPrediction> PfnModel::forward(const TokenBatch& batch) const {
  const Layout lay(cfg_);
  Pass ps{cfg_, lay, params_.data(), {}, {}, {}, {}, {}};
  run_forward(ps, batch);
  std::vector<HistogramPrediction> out;
  out.reserve(batch.n_query);
  for (std::size_t j = 0; j < batch.n_query; ++j) out.push_back(softmax_row(ps.logits.row(j)));
  return out;
}

double PfnModel::loss(const TokenBatch& batch, std::span<const std::vector<double>> targets) const {
  const auto preds = forward(batch);
  if (targets.size() != preds.size()) throw std::invalid_argument("loss: one target per query");
  double total = 0.0;
  for (std::size_t j = 0; j < preds.size(); ++j) total += cross_entropy(preds[j], targets[j]);
  return preds.empty() ? 0.0 : total / static_cast<double>(preds.size());
}

double PfnModel::loss_and_gradient(const TokenBatch& batch,
                                   std::span<const std::vector<double>> targets,
                                   std::span<double> grad, double scale) const {
  if (grad.size() != params_.size())
    throw std::invalid_argument("loss_and_gradient: gradient length mismatch");
  const std::size_t C = batch.n_context, Q = batch.n_query, N = C + Q, H = cfg_.width;
  if (targets.size() != Q) throw std::invalid_argument("loss_and_gradient: one target per query");
  if (Q == 0) return 0.0;
  const Layout lay(cfg_);
  Pass ps{cfg_, lay, params_.data(), {}, {}, {}, {}, {}};
  run_forward(ps, batch);
  const double* P = params_.data();
  double* G = grad.data();

  // Softmax cross-entropy: d logits = (q * sum(a) - a) * scale / Q.
  double total = 0.0;
  Matrix dlogits(Q, cfg_.bins);
  for (std::size_t j = 0; j < Q; ++j) {
    const auto pred = softmax_row(ps.logits.row(j));
    const auto& a = targets[j];
    if (a.size() != cfg_.bins) throw std::invalid_argument("loss_and_gradient: target length");
    double mass = 0.0;
    for (std::size_t l = 0; l < cfg_.bins; ++l) {
      mass += a[l];
      if (a[l] != 0.0) total -= a[l] * pred.log_probs[l];
    }
    for (std::size_t l = 0; l < cfg_.bins; ++l)
      dlogits(j, l) = (pred.probs[l] * mass - a[l]) * scale / static_cast<double>(Q);
  }

  Matrix dfinal(Q, H);
  linear_back(dlogits, ps.final_out, P + lay.w_head, G + lay.w_head, G + lay.b_head, &dfinal);
  Matrix dq_in(Q, H);
  layer_norm_back(dfinal, ps.final_in, P + lay.lnf_g, ps.nf, G + lay.lnf_g, G + lay.lnf_b, dq_in);
  Matrix dh(N, H);
  for (std::size_t j = 0; j < Q; ++j)
    std::copy_n(dq_in.row(j).begin(), H, dh.row(C + j).begin());

  for (std::size_t l = cfg_.layers; l-- > 0;) {
    const auto& blk = lay.blocks[l];
    LayerCache& lc = ps.caches[l];
    Matrix da(N, H);
    if (cfg_.parallel_swiglu) {
      // h_out = h_in + att(a) + ffn(a)
      ffn_backward(ps, blk, lc, lc.a, dh, G, da);
      attention_backward(ps, blk, lc, C, dh, G, da);
    } else {
      // h_out = mid + ffn(LN2(mid)); mid = h_in + att(LN1(h_in))
      Matrix db(N, H);
      ffn_backward(ps, blk, lc, lc.b, dh, G, db);
      layer_norm_back(db, lc.mid, P + blk.ln2_g, lc.n2, G + blk.ln2_g, G + blk.ln2_b, dh);
      attention_backward(ps, blk, lc, C, dh, G, da);
    }
    layer_norm_back(da, lc.in, P + blk.ln1_g, lc.n1, G + blk.ln1_g, G + blk.ln1_b, dh);
  }

  // Embedding.
  const std::size_t Dm = cfg_.d_max;
  for (std::size_t i = 0; i < N; ++i) {
    const bool is_ctx = i < C;
    auto d = dh.row(i);
    auto f = batch.features.row(i);
    for (std::size_t h = 0; h < H; ++h) {
      const double g = d[h];
      double* dw = G + lay.wx + h * Dm;
      for (std::size_t c = 0; c < Dm; ++c) dw[c] += g * f[c];
      if (is_ctx) {
        G[lay.w_time + h] += g * batch.time[i];
        G[lay.w_event + h] += g * batch.indicator[i];
        G[lay.b_ctx + h] += g;
      } else {
        G[lay.w_ind + h] += g * batch.indicator[i];
        G[lay.b_q + h] += g;
      }
    }
  }
  return scale * total / static_cast<double>(Q);
}

GradientBundle backward(const PfnModel& model, const TokenBatch& batch,
                        std::span<const std::vector<double>> targets) {
  GradientBundle g{model.parameters(), std::vector<double>(model.parameter_count(), 0.0)};
  model.loss_and_gradient(batch, targets, g.gradient);
  return g;
}

// ---------------------------------------------------------------------------

std::vector<double> one_hot_target(std::size_t bins, std::size_t bin) {
  if (bin < 1 || bin > bins) throw std::invalid_argument("one_hot_target: bin out of range");
  std::vector<double> t(bins, 0.0);
  t[bin - 1] = 1.0;
  return t;
}

std::vector<double> smoothed_target(double r, double sigma, const TimeTransform& transform,
                                    const Binner& binner) {
  if (!(sigma > 0.0)) throw std::invalid_argument("smoothed_target: sigma must be > 0");
  const double mu = std::clamp(transform.forward(r), binner.lo(), binner.hi());
  const auto edges = binner.edges();
  const std::size_t L = binner.bins();
  auto cdf = [&](double z) { return 0.5 * std::erfc(-(z - mu) / (sigma * std::sqrt(2.0))); };
  std::vector<double> a(L);
  double prev = 0.0;  // tails fold into the end bins
  for (std::size_t l = 1; l <= L; ++l) {
    const double c = l == L ? 1.0 : cdf(edges[l]);
    a[l - 1] = std::max(0.0, c - prev);
    prev = c;
  }
  double total = 0.0;
  for (double v : a) total += v;
  if (!(total > 0.0)) return one_hot_target(L, binner.index(mu));
  for (double& v : a) v /= total;
  return a;
}

double cross_entropy(const HistogramPrediction& pred, std::span<const double> target) {
  if (target.size() != pred.bins()) throw std::invalid_argument("cross_entropy: length mismatch");
  double s = 0.0;
  for (std::size_t l = 0; l < target.size(); ++l)
    if (target[l] != 0.0) s -= target[l] * pred.log_probs[l];
  return s;
}

double nll_loss(const HistogramPrediction& pred, std::size_t bin) {
  if (bin < 1 || bin > pred.bins()) throw std::invalid_argument("nll_loss: bin out of range");
  return -pred.log_probs[bin - 1];
}

double sce_loss(const HistogramPrediction& pred, double r, double sigma,
                const TimeTransform& transform, const Binner& binner) {
  return cross_entropy(pred, smoothed_target(r, sigma, transform, binner));
}

double ppsd(const HistogramPrediction& pred, std::size_t k) {
  if (k > pred.bins()) throw std::invalid_argument("ppsd: k out of range");
  if (k == 0) return 1.0;
  double s = 0.0;
  for (std::size_t l = pred.bins(); l > k; --l) s += pred.probs[l - 1];
  return std::min(1.0, s);
}

std::vector<double> ppsd_curve(const HistogramPrediction& pred) {
  const std::size_t L = pred.bins();
  std::vector<double> s(L + 1, 0.0);
  // Accumulate from the right so each value is an exact tail sum and the
  // sequence is monotone in floating point.
  for (std::size_t k = L; k-- > 0;) s[k] = s[k + 1] + pred.probs[k];
  s[0] = 1.0;
  for (std::size_t k = 1; k < L; ++k) s[k] = std::min(s[k], 1.0);
  return s;
}

double step_survival(std::span<const double> tail, std::span<const double> upper_times, double t) {
  const auto k = static_cast<std::size_t>(
      std::upper_bound(upper_times.begin(), upper_times.end(), t) - upper_times.begin());
  return tail[k];
}

Matrix predict_survival(const PfnModel& model, TransformKind kind, const Matrix& context_x,
                        std::span<const double> context_time, std::span<const int> context_event,
                        const Matrix& query_x, std::span<const double> grid,
                        bool canonical_order) {
  if (context_time.empty()) throw DataError("predict_survival: empty context");
  const TimeTransform g = TimeTransform::fit(kind, context_time);
  const Binner binner = make_binner(g, model.config().bins);
  std::vector<double> z(context_time.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = g.forward(context_time[i]);
  const std::vector<int> ones(query_x.rows(), 1);
  const auto batch = model.embed_tokens({context_x, z, context_event}, {query_x, ones}, binner,
                                        canonical_order);
  const auto preds = model.forward(batch);
  const auto upper = bin_upper_times(binner, g);
  Matrix out(query_x.rows(), grid.size());
  for (std::size_t j = 0; j < preds.size(); ++j) {
    const auto tail = ppsd_curve(preds[j]);
    for (std::size_t c = 0; c < grid.size(); ++c) out(j, c) = step_survival(tail, upper, grid[c]);
  }
  return out;
}

}  // namespace survpfn
