#include "diffmt/model.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "diffmt/diffusion.hpp"

namespace diffmt {

namespace {

constexpr double kLayerNormEps = 1e-5;

template <class S>
using Vector = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// ---------------------------------------------------------------------------
// Parameter plumbing

template <class S, class Self, class F>
void visit_tensors(Self& p, F&& f) {
  f("token_embedding", p.token_embedding);
  f("time.w", p.time_w);
  f("time.b", p.time_b);
  auto attn = [&](const std::string& prefix, auto& a) {
    f(prefix + ".wq", a.wq);
    f(prefix + ".bq", a.bq);
    f(prefix + ".wk", a.wk);
    f(prefix + ".bk", a.bk);
    f(prefix + ".wv", a.wv);
    f(prefix + ".bv", a.bv);
    f(prefix + ".wo", a.wo);
    f(prefix + ".bo", a.bo);
  };
  auto ffn = [&](const std::string& prefix, auto& m) {
    f(prefix + ".w1", m.w1);
    f(prefix + ".b1", m.b1);
    f(prefix + ".w2", m.w2);
    f(prefix + ".b2", m.b2);
  };
  for (std::size_t l = 0; l < p.encoder.size(); ++l) {
    auto& layer = p.encoder[l];
    const std::string pre = "encoder." + std::to_string(l);
    f(pre + ".ln1.g", layer.ln1_g);
    f(pre + ".ln1.b", layer.ln1_b);
    attn(pre + ".self_attn", layer.self_attn);
    f(pre + ".ln2.g", layer.ln2_g);
    f(pre + ".ln2.b", layer.ln2_b);
    ffn(pre + ".ffn", layer.ffn);
  }
  f("encoder.ln.g", p.enc_ln_g);
  f("encoder.ln.b", p.enc_ln_b);
  for (std::size_t l = 0; l < p.decoder.size(); ++l) {
    auto& layer = p.decoder[l];
    const std::string pre = "decoder." + std::to_string(l);
    f(pre + ".ln1.g", layer.ln1_g);
    f(pre + ".ln1.b", layer.ln1_b);
    attn(pre + ".self_attn", layer.self_attn);
    f(pre + ".ln2.g", layer.ln2_g);
    f(pre + ".ln2.b", layer.ln2_b);
    attn(pre + ".cross_attn", layer.cross_attn);
    f(pre + ".ln3.g", layer.ln3_g);
    f(pre + ".ln3.b", layer.ln3_b);
    ffn(pre + ".ffn", layer.ffn);
  }
  f("decoder.ln.g", p.dec_ln_g);
  f("decoder.ln.b", p.dec_ln_b);
  f("out.w", p.out_w);
  f("out.b", p.out_b);
}

template <class S>
void shape_attention(AttentionParams<S>& a, int d) {
  for (auto* w : {&a.wq, &a.wk, &a.wv, &a.wo}) w->setZero(d, d);
  for (auto* b : {&a.bq, &a.bk, &a.bv, &a.bo}) b->setZero(1, d);
}

template <class S>
void shape_ffn(FeedForwardParams<S>& m, int d, int ff) {
  m.w1.setZero(d, ff);
  m.b1.setZero(1, ff);
  m.w2.setZero(ff, d);
  m.b2.setZero(1, d);
}

// ---------------------------------------------------------------------------
// Layers. Every forward fills a cache that its backward consumes.

template <class S>
void add_bias(Matrix<S>& y, const Matrix<S>& b) {
  y.rowwise() += b.row(0);
}

template <class S>
struct LayerNormCache {
  Matrix<S> xhat;
  Vector<S> rstd;
};

template <class S>
Matrix<S> layer_norm(const Matrix<S>& x, const Matrix<S>& g, const Matrix<S>& b, LayerNormCache<S>& cache) {
  const Vector<S> mean = x.rowwise().mean();
  cache.xhat = x.colwise() - mean;
  const Vector<S> var = cache.xhat.array().square().rowwise().mean();
  cache.rstd = (var.array() + S(kLayerNormEps)).rsqrt();
  cache.xhat.array().colwise() *= cache.rstd.array();
  Matrix<S> y = (cache.xhat.array().rowwise() * g.row(0).array()).matrix();
  add_bias(y, b);
  return y;
}

template <class S>
Matrix<S> layer_norm_backward(const Matrix<S>& dy, const Matrix<S>& g, const LayerNormCache<S>& cache,
                              Matrix<S>& dg, Matrix<S>& db) {
  dg.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  db.row(0) += dy.colwise().sum();
  Matrix<S> dx = (dy.array().rowwise() * g.row(0).array()).matrix();  // d xhat
  const Vector<S> mean_d = dx.rowwise().mean();
  const Vector<S> mean_dx = (dx.array() * cache.xhat.array()).rowwise().mean();
  dx.colwise() -= mean_d;
  dx.array() -= cache.xhat.array().colwise() * mean_dx.array();
  dx.array().colwise() *= cache.rstd.array();
  return dx;
}

template <class S>
struct FeedForwardCache {
  Matrix<S> x, pre, act;
};

// tanh approximation of GELU
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

template <class S>
Matrix<S> feed_forward(const FeedForwardParams<S>& p, const Matrix<S>& x, FeedForwardCache<S>& cache) {
  cache.x = x;
  cache.pre.noalias() = x * p.w1;
  add_bias(cache.pre, p.b1);
  const auto v = cache.pre.array();
  cache.act = (S(0.5) * v * (S(1) + (S(kGeluC) * (v + S(kGeluA) * v.cube())).tanh())).matrix();
  Matrix<S> y = cache.act * p.w2;
  add_bias(y, p.b2);
  return y;
}

template <class S>
Matrix<S> feed_forward_backward(const FeedForwardParams<S>& p, const Matrix<S>& dy, const FeedForwardCache<S>& cache,
                                FeedForwardParams<S>& g) {
  g.w2.noalias() += cache.act.transpose() * dy;
  g.b2.row(0) += dy.colwise().sum();
  Matrix<S> dpre = dy * p.w2.transpose();
  const auto v = cache.pre.array();
  const auto th = (S(kGeluC) * (v + S(kGeluA) * v.cube())).tanh().eval();
  dpre.array() *= S(0.5) * (S(1) + th) + S(0.5) * v * (S(1) - th.square()) * S(kGeluC) * (S(1) + S(3 * kGeluA) * v.square());
  g.w1.noalias() += cache.x.transpose() * dpre;
  g.b1.row(0) += dpre.colwise().sum();
  return dpre * p.w1.transpose();
}

template <class S>
struct AttentionCache {
  Matrix<S> xq, xkv;
  Matrix<S> q, k, v;
  std::vector<Matrix<S>> probs;  // batch * heads, each Lq x Lk
  Matrix<S> context;
};

struct AttentionShape {
  int batch, q_len, k_len, heads;
};

// Multi-head attention. `key_mask` holds batch * k_len flags (nullptr: every
// key visible).
template <class S>
Matrix<S> attention(const AttentionParams<S>& p, const Matrix<S>& xq, const Matrix<S>& xkv, AttentionShape shape,
                    const std::uint8_t* key_mask, AttentionCache<S>& cache) {
  const auto d = static_cast<int>(p.wq.cols());
  const int dh = d / shape.heads;
  const S scale = S(1) / std::sqrt(S(dh));
  cache.xq = xq;
  cache.xkv = xkv;
  cache.q.noalias() = xq * p.wq;
  add_bias(cache.q, p.bq);
  cache.k.noalias() = xkv * p.wk;
  add_bias(cache.k, p.bk);
  cache.v.noalias() = xkv * p.wv;
  add_bias(cache.v, p.bv);
  cache.context.resize(xq.rows(), d);
  cache.probs.resize(static_cast<std::size_t>(shape.batch * shape.heads));

  for (int b = 0; b < shape.batch; ++b) {
    const std::uint8_t* mask = key_mask ? key_mask + static_cast<std::ptrdiff_t>(b) * shape.k_len : nullptr;
    for (int h = 0; h < shape.heads; ++h) {
      const auto q = cache.q.block(b * shape.q_len, h * dh, shape.q_len, dh);
      const auto k = cache.k.block(b * shape.k_len, h * dh, shape.k_len, dh);
      const auto v = cache.v.block(b * shape.k_len, h * dh, shape.k_len, dh);
      Matrix<S>& probs = cache.probs[static_cast<std::size_t>(b * shape.heads + h)];
      probs.noalias() = (q * k.transpose()) * scale;
      if (mask) {
        for (int j = 0; j < shape.k_len; ++j) {
          if (!mask[j]) probs.col(j).setConstant(-std::numeric_limits<S>::infinity());
        }
      }
      const Vector<S> row_max = probs.rowwise().maxCoeff();
      probs = (probs.colwise() - row_max).array().exp();
      const Vector<S> row_sum = probs.rowwise().sum();
      probs.array().colwise() /= row_sum.array();
      cache.context.block(b * shape.q_len, h * dh, shape.q_len, dh).noalias() = probs * v;
    }
  }
  Matrix<S> out = cache.context * p.wo;
  add_bias(out, p.bo);
  return out;
}

// Accumulates parameter gradients into `g` and input gradients into dxq and
// dxkv (which may alias for self-attention).
template <class S>
void attention_backward(const AttentionParams<S>& p, const Matrix<S>& dout, const AttentionCache<S>& cache,
                        AttentionShape shape, AttentionParams<S>& g, Matrix<S>& dxq, Matrix<S>& dxkv) {
  const auto d = static_cast<int>(p.wq.cols());
  const int dh = d / shape.heads;
  const S scale = S(1) / std::sqrt(S(dh));

  g.wo.noalias() += cache.context.transpose() * dout;
  g.bo.row(0) += dout.colwise().sum();
  const Matrix<S> dcontext = dout * p.wo.transpose();

  Matrix<S> dq = Matrix<S>::Zero(cache.q.rows(), d);
  Matrix<S> dk = Matrix<S>::Zero(cache.k.rows(), d);
  Matrix<S> dv = Matrix<S>::Zero(cache.v.rows(), d);
  Matrix<S> dprobs;
  for (int b = 0; b < shape.batch; ++b) {
    for (int h = 0; h < shape.heads; ++h) {
      const Matrix<S>& probs = cache.probs[static_cast<std::size_t>(b * shape.heads + h)];
      const auto q = cache.q.block(b * shape.q_len, h * dh, shape.q_len, dh);
      const auto k = cache.k.block(b * shape.k_len, h * dh, shape.k_len, dh);
      const auto v = cache.v.block(b * shape.k_len, h * dh, shape.k_len, dh);
      const auto dctx = dcontext.block(b * shape.q_len, h * dh, shape.q_len, dh);

      dv.block(b * shape.k_len, h * dh, shape.k_len, dh).noalias() += probs.transpose() * dctx;
      dprobs.noalias() = dctx * v.transpose();
      // softmax backward: dS = P * (dP - rowsum(dP * P))
      const Vector<S> inner = (dprobs.array() * probs.array()).rowwise().sum();
      Matrix<S> dscores = (probs.array() * (dprobs.array().colwise() - inner.array())).matrix() * scale;
      dq.block(b * shape.q_len, h * dh, shape.q_len, dh).noalias() += dscores * k;
      dk.block(b * shape.k_len, h * dh, shape.k_len, dh).noalias() += dscores.transpose() * q;
    }
  }
  g.wq.noalias() += cache.xq.transpose() * dq;
  g.bq.row(0) += dq.colwise().sum();
  g.wk.noalias() += cache.xkv.transpose() * dk;
  g.bk.row(0) += dk.colwise().sum();
  g.wv.noalias() += cache.xkv.transpose() * dv;
  g.bv.row(0) += dv.colwise().sum();
  dxq.noalias() += dq * p.wq.transpose();
  dxkv.noalias() += dk * p.wk.transpose();
  dxkv.noalias() += dv * p.wv.transpose();
}

// ---------------------------------------------------------------------------
// Whole network

template <class S>
struct EncoderLayerCache {
  LayerNormCache<S> ln1, ln2;
  AttentionCache<S> attn;
  FeedForwardCache<S> ffn;
};

template <class S>
struct DecoderLayerCache {
  LayerNormCache<S> ln1, ln2, ln3;
  AttentionCache<S> self_attn, cross_attn;
  FeedForwardCache<S> ffn;
};

template <class S>
struct ForwardCache {
  Matrix<S> time_base;  // batch x d sinusoidal embeddings of t
  std::vector<std::uint8_t> mask;
  std::vector<EncoderLayerCache<S>> encoder;
  LayerNormCache<S> enc_ln;
  Matrix<S> memory;  // final encoder output
  std::vector<DecoderLayerCache<S>> decoder;
  LayerNormCache<S> dec_ln;
  Matrix<S> final_hidden;
};

void check_input(const ModelConfig& cfg, const DenoiserInput& input) {
  const auto expected = static_cast<std::size_t>(input.batch) * static_cast<std::size_t>(cfg.seq_len);
  if (input.batch < 1) throw InvalidArgument("denoiser batch must be non-empty");
  if (input.noisy.size() != expected || input.source.size() != expected ||
      input.steps.size() != static_cast<std::size_t>(input.batch) ||
      (!input.source_mask.empty() && input.source_mask.size() != expected)) {
    throw InvalidArgument("denoiser input shape does not match batch * L");
  }
  for (Token id : input.noisy) {
    if (id < 0 || id >= cfg.vocab_size) throw InvalidArgument("noisy token id out of range");
  }
  for (Token id : input.source) {
    if (id < 0 || id >= cfg.vocab_size) throw InvalidArgument("source token id out of range");
  }
  for (int t : input.steps) {
    if (t < 1 || t > cfg.steps) throw InvalidArgument("diffusion step out of range: " + std::to_string(t));
  }
}

template <class S>
Matrix<S> positional_table(int length, int dim) {
  Matrix<S> table(length, dim);
  for (int pos = 0; pos < length; ++pos) {
    const auto row = sinusoidal_embedding(pos, dim);
    for (int j = 0; j < dim; ++j) table(pos, j) = static_cast<S>(row[static_cast<std::size_t>(j)]);
  }
  return table;
}

template <class S>
Matrix<S> embed(const Matrix<S>& table, const std::vector<Token>& ids, const Matrix<S>& positions) {
  const auto length = positions.rows();
  Matrix<S> out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = table.row(ids[i]) + positions.row(static_cast<Eigen::Index>(i) % length);
  }
  return out;
}

template <class S>
void add_time(Matrix<S>& h, const Matrix<S>& time_rows, int length) {
  for (Eigen::Index r = 0; r < h.rows(); ++r) h.row(r) += time_rows.row(r / length);
}

template <class S>
void accumulate_time_grad(const Matrix<S>& dh, Matrix<S>& dtime, int length) {
  for (Eigen::Index r = 0; r < dh.rows(); ++r) dtime.row(r / length) += dh.row(r);
}

template <class S>
Matrix<S> run_forward(const DenoiserParams<S>& p, const ModelConfig& cfg, const DenoiserInput& input,
                      ForwardCache<S>& cache) {
  check_input(cfg, input);
  const int B = input.batch, L = cfg.seq_len, d = cfg.d_model;
  const AttentionShape shape{B, L, L, cfg.n_heads};

  cache.mask = input.source_mask;
  if (cache.mask.empty()) {
    cache.mask.resize(input.source.size());
    for (std::size_t i = 0; i < input.source.size(); ++i) cache.mask[i] = input.source[i] != 0 ? 1 : 0;
  }
  for (int b = 0; b < B; ++b) {
    bool any = false;
    for (int j = 0; j < L; ++j) any = any || cache.mask[static_cast<std::size_t>(b * L + j)];
    if (!any) throw InvalidArgument("source sequence has no visible position");
  }

  cache.time_base.resize(B, d);
  for (int b = 0; b < B; ++b) {
    const auto e = sinusoidal_embedding(input.steps[static_cast<std::size_t>(b)], d);
    for (int j = 0; j < d; ++j) cache.time_base(b, j) = static_cast<S>(e[static_cast<std::size_t>(j)]);
  }
  Matrix<S> time_rows = cache.time_base * p.time_w;
  add_bias(time_rows, p.time_b);

  const Matrix<S> positions = positional_table<S>(L, d);

  Matrix<S> h = embed(p.token_embedding, input.source, positions);
  cache.encoder.resize(p.encoder.size());
  for (std::size_t l = 0; l < p.encoder.size(); ++l) {
    const auto& lp = p.encoder[l];
    auto& lc = cache.encoder[l];
    add_time(h, time_rows, L);
    const Matrix<S> a = layer_norm(h, lp.ln1_g, lp.ln1_b, lc.ln1);
    h += attention(lp.self_attn, a, a, shape, cache.mask.data(), lc.attn);
    const Matrix<S> f = layer_norm(h, lp.ln2_g, lp.ln2_b, lc.ln2);
    h += feed_forward(lp.ffn, f, lc.ffn);
  }
  cache.memory = layer_norm(h, p.enc_ln_g, p.enc_ln_b, cache.enc_ln);

  Matrix<S> g = embed(p.token_embedding, input.noisy, positions);
  cache.decoder.resize(p.decoder.size());
  for (std::size_t l = 0; l < p.decoder.size(); ++l) {
    const auto& lp = p.decoder[l];
    auto& lc = cache.decoder[l];
    add_time(g, time_rows, L);
    const Matrix<S> a = layer_norm(g, lp.ln1_g, lp.ln1_b, lc.ln1);
    g += attention(lp.self_attn, a, a, shape, nullptr, lc.self_attn);
    const Matrix<S> c = layer_norm(g, lp.ln2_g, lp.ln2_b, lc.ln2);
    g += attention(lp.cross_attn, c, cache.memory, shape, cache.mask.data(), lc.cross_attn);
    const Matrix<S> f = layer_norm(g, lp.ln3_g, lp.ln3_b, lc.ln3);
    g += feed_forward(lp.ffn, f, lc.ffn);
  }
  cache.final_hidden = layer_norm(g, p.dec_ln_g, p.dec_ln_b, cache.dec_ln);
  Matrix<S> logits = cache.final_hidden * p.out_w;
  add_bias(logits, p.out_b);
  return logits;
}

template <class S>
void run_backward(const DenoiserParams<S>& p, const ModelConfig& cfg, const DenoiserInput& input,
                  const ForwardCache<S>& cache, const Matrix<S>& dlogits, DenoiserParams<S>& grad) {
  const int B = input.batch, L = cfg.seq_len, d = cfg.d_model;
  const AttentionShape shape{B, L, L, cfg.n_heads};
  Matrix<S> dtime = Matrix<S>::Zero(B, d);

  grad.out_w.noalias() += cache.final_hidden.transpose() * dlogits;
  grad.out_b.row(0) += dlogits.colwise().sum();
  Matrix<S> dg = layer_norm_backward<S>(dlogits * p.out_w.transpose(), p.dec_ln_g, cache.dec_ln, grad.dec_ln_g,
                                        grad.dec_ln_b);
  Matrix<S> dmemory = Matrix<S>::Zero(cache.memory.rows(), d);
  for (std::size_t li = p.decoder.size(); li-- > 0;) {
    const auto& lp = p.decoder[li];
    const auto& lc = cache.decoder[li];
    auto& lg = grad.decoder[li];

    const Matrix<S> df = feed_forward_backward(lp.ffn, dg, lc.ffn, lg.ffn);
    dg += layer_norm_backward(df, lp.ln3_g, lc.ln3, lg.ln3_g, lg.ln3_b);

    Matrix<S> dc = Matrix<S>::Zero(dg.rows(), d);
    attention_backward(lp.cross_attn, dg, lc.cross_attn, shape, lg.cross_attn, dc, dmemory);
    dg += layer_norm_backward(dc, lp.ln2_g, lc.ln2, lg.ln2_g, lg.ln2_b);

    Matrix<S> da = Matrix<S>::Zero(dg.rows(), d);
    attention_backward(lp.self_attn, dg, lc.self_attn, shape, lg.self_attn, da, da);
    dg += layer_norm_backward(da, lp.ln1_g, lc.ln1, lg.ln1_g, lg.ln1_b);

    accumulate_time_grad(dg, dtime, L);
  }
  for (std::size_t i = 0; i < input.noisy.size(); ++i) {
    grad.token_embedding.row(input.noisy[i]) += dg.row(static_cast<Eigen::Index>(i));
  }

  Matrix<S> dh = layer_norm_backward(dmemory, p.enc_ln_g, cache.enc_ln, grad.enc_ln_g, grad.enc_ln_b);
  for (std::size_t li = p.encoder.size(); li-- > 0;) {
    const auto& lp = p.encoder[li];
    const auto& lc = cache.encoder[li];
    auto& lg = grad.encoder[li];

    const Matrix<S> df = feed_forward_backward(lp.ffn, dh, lc.ffn, lg.ffn);
    dh += layer_norm_backward(df, lp.ln2_g, lc.ln2, lg.ln2_g, lg.ln2_b);

    Matrix<S> da = Matrix<S>::Zero(dh.rows(), d);
    attention_backward(lp.self_attn, dh, lc.attn, shape, lg.self_attn, da, da);
    dh += layer_norm_backward(da, lp.ln1_g, lc.ln1, lg.ln1_g, lg.ln1_b);

    accumulate_time_grad(dh, dtime, L);
  }
  for (std::size_t i = 0; i < input.source.size(); ++i) {
    grad.token_embedding.row(input.source[i]) += dh.row(static_cast<Eigen::Index>(i));
  }

  grad.time_w.noalias() += cache.time_base.transpose() * dtime;
  grad.time_b.row(0) += dtime.colwise().sum();
}

template <class S>
ProbTable softmax_rows(const Matrix<S>& logits) {
  ProbTable probs = logits.template cast<double>();
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const double m = probs.row(i).maxCoeff();
    probs.row(i) = (probs.row(i).array() - m).exp();
    probs.row(i) /= probs.row(i).sum();
  }
  return probs;
}

// Loss per example and d(batch-mean loss)/d logits.
template <class S>
double loss_from_logits(const Matrix<S>& logits, const ModelConfig& cfg, const NoiseSchedule& sched,
                        const DenoiserInput& input, const std::vector<Token>& clean, std::vector<double>& per_example,
                        Matrix<S>* dlogits) {
  if (clean.size() != input.noisy.size()) throw InvalidArgument("clean target batch has the wrong size");
  if (sched.steps() != cfg.steps) throw InvalidArgument("schedule length does not match the model's T");
  const int B = input.batch, L = cfg.seq_len, K = cfg.vocab_size;
  const ProbTable probs = softmax_rows(logits);
  std::vector<double> grad(static_cast<std::size_t>(L * K));
  per_example.assign(static_cast<std::size_t>(B), 0.0);
  if (dlogits) dlogits->resize(logits.rows(), logits.cols());
  double total = 0;
  for (int b = 0; b < B; ++b) {
    const auto offset = static_cast<std::size_t>(b * L);
    const std::span<const Token> y0(clean.data() + offset, static_cast<std::size_t>(L));
    const std::span<const Token> yt(input.noisy.data() + offset, static_cast<std::size_t>(L));
    const std::span<const double> x0_hat(probs.data() + offset * K, static_cast<std::size_t>(L * K));
    const double loss = vb_loss_term_with_grad(y0, yt, x0_hat, K, input.steps[static_cast<std::size_t>(b)], sched,
                                               grad);
    if (!std::isfinite(loss)) throw NumericalError("non-finite loss for example " + std::to_string(b));
    per_example[static_cast<std::size_t>(b)] = loss;
    total += loss;
    if (!dlogits) continue;
    for (int pos = 0; pos < L; ++pos) {
      const auto row = static_cast<Eigen::Index>(offset + pos);
      const double* p = probs.data() + row * K;
      const double* gp = grad.data() + static_cast<std::ptrdiff_t>(pos) * K;
      double inner = 0;
      for (int k = 0; k < K; ++k) inner += p[k] * gp[k];
      for (int k = 0; k < K; ++k) (*dlogits)(row, k) = static_cast<S>(p[k] * (gp[k] - inner) / B);
    }
  }
  return total / B;
}

}  // namespace

// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  if (n_layers < 1 || n_heads < 1 || d_model < 2 || d_ff < 1 || vocab_size < 2 || seq_len < 1 || steps < 1) {
    throw InvalidArgument("model config sizes must be positive (K >= 2)");
  }
  if (d_model % 2 != 0) throw InvalidArgument("d_model must be even");
  if (d_model % n_heads != 0) throw InvalidArgument("d_model must be divisible by n_heads");
}

std::vector<double> sinusoidal_embedding(double position, int dim) {
  std::vector<double> e(static_cast<std::size_t>(dim), 0.0);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -2.0 * i / dim);
    e[static_cast<std::size_t>(2 * i)] = std::sin(position * freq);
    e[static_cast<std::size_t>(2 * i + 1)] = std::cos(position * freq);
  }
  return e;
}

template <class S>
DenoiserParams<S> DenoiserParams<S>::zeros(const ModelConfig& cfg) {
  cfg.validate();
  const int d = cfg.d_model, K = cfg.vocab_size, ff = cfg.d_ff;
  DenoiserParams<S> p;
  p.token_embedding.setZero(K, d);
  p.time_w.setZero(d, d);
  p.time_b.setZero(1, d);
  p.encoder.resize(static_cast<std::size_t>(cfg.n_layers));
  for (auto& layer : p.encoder) {
    layer.ln1_g.setZero(1, d);
    layer.ln1_b.setZero(1, d);
    shape_attention(layer.self_attn, d);
    layer.ln2_g.setZero(1, d);
    layer.ln2_b.setZero(1, d);
    shape_ffn(layer.ffn, d, ff);
  }
  p.enc_ln_g.setZero(1, d);
  p.enc_ln_b.setZero(1, d);
  p.decoder.resize(static_cast<std::size_t>(cfg.n_layers));
  for (auto& layer : p.decoder) {
    layer.ln1_g.setZero(1, d);
    layer.ln1_b.setZero(1, d);
    shape_attention(layer.self_attn, d);
    layer.ln2_g.setZero(1, d);
    layer.ln2_b.setZero(1, d);
    shape_attention(layer.cross_attn, d);
    layer.ln3_g.setZero(1, d);
    layer.ln3_b.setZero(1, d);
    shape_ffn(layer.ffn, d, ff);
  }
  p.dec_ln_g.setZero(1, d);
  p.dec_ln_b.setZero(1, d);
  p.out_w.setZero(d, K);
  p.out_b.setZero(1, K);
  return p;
}

template <class S>
DenoiserParams<S> DenoiserParams<S>::init(const ModelConfig& cfg, std::uint64_t seed) {
  DenoiserParams<S> p = zeros(cfg);
  Rng rng(seed);
  auto fill_uniform = [&](Matrix<S>& m, double bound) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      m.data()[i] = static_cast<S>((2.0 * uniform01(rng) - 1.0) * bound);
    }
  };
  for (auto& [name, tensor] : p.named_tensors()) {
    const bool is_row = tensor->rows() == 1;
    const bool is_gain = name.size() > 2 && name.compare(name.size() - 2, 2, ".g") == 0;
    if (is_gain) {
      tensor->setOnes();
    } else if (is_row) {
      tensor->setZero();
    } else if (name == "token_embedding") {
      fill_uniform(*tensor, std::sqrt(3.0));  // unit variance
    } else if (name == "out.w") {
      fill_uniform(*tensor, 0.1 / std::sqrt(static_cast<double>(tensor->rows())));
    } else {
      fill_uniform(*tensor, 1.0 / std::sqrt(static_cast<double>(tensor->rows())));
    }
  }
  return p;
}

template <class S>
std::vector<std::pair<std::string, Matrix<S>*>> DenoiserParams<S>::named_tensors() {
  std::vector<std::pair<std::string, Matrix<S>*>> out;
  visit_tensors<S>(*this, [&](const std::string& name, Matrix<S>& m) { out.emplace_back(name, &m); });
  return out;
}

template <class S>
std::vector<std::pair<std::string, const Matrix<S>*>> DenoiserParams<S>::named_tensors() const {
  std::vector<std::pair<std::string, const Matrix<S>*>> out;
  visit_tensors<S>(*this, [&](const std::string& name, const Matrix<S>& m) { out.emplace_back(name, &m); });
  return out;
}

template <class S>
std::size_t DenoiserParams<S>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, m] : named_tensors()) n += static_cast<std::size_t>(m->size());
  return n;
}

template <class S>
bool DenoiserParams<S>::all_finite() const {
  for (const auto& [name, m] : named_tensors()) {
    if (!m->allFinite()) return false;
  }
  return true;
}

template <class S>
template <class T>
DenoiserParams<T> DenoiserParams<S>::cast() const {
  DenoiserParams<T> out;
  out.encoder.resize(encoder.size());
  out.decoder.resize(decoder.size());
  auto src = named_tensors();
  auto dst = out.named_tensors();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i].second = src[i].second->template cast<T>();
  return out;
}

template <class S>
std::vector<S> time_encoding(int t, const DenoiserParams<S>& params, const ModelConfig& cfg) {
  if (t < 1 || t > cfg.steps) throw InvalidArgument("diffusion step out of range: " + std::to_string(t));
  const auto base = sinusoidal_embedding(t, cfg.d_model);
  Matrix<S> row(1, cfg.d_model);
  for (int j = 0; j < cfg.d_model; ++j) row(0, j) = static_cast<S>(base[static_cast<std::size_t>(j)]);
  const Matrix<S> out = row * params.time_w + params.time_b;
  return std::vector<S>(out.data(), out.data() + out.size());
}

template <class S>
Matrix<S> forward_logits(const DenoiserParams<S>& params, const ModelConfig& cfg, const DenoiserInput& input) {
  ForwardCache<S> cache;
  Matrix<S> logits = run_forward(params, cfg, input, cache);
  if (!logits.allFinite()) throw NumericalError("non-finite activations in denoiser forward pass");
  return logits;
}

template <class S>
ProbTable forward(const DenoiserParams<S>& params, const ModelConfig& cfg, const DenoiserInput& input) {
  return softmax_rows(forward_logits(params, cfg, input));
}

template <class S>
LossAndGradients<S> loss_and_gradients(const DenoiserParams<S>& params, const ModelConfig& cfg,
                                       const NoiseSchedule& sched, const DenoiserInput& input,
                                       const std::vector<Token>& clean) {
  ForwardCache<S> cache;
  const Matrix<S> logits = run_forward(params, cfg, input, cache);
  if (!logits.allFinite()) throw NumericalError("non-finite activations in denoiser forward pass");
  LossAndGradients<S> out;
  Matrix<S> dlogits;
  out.loss = loss_from_logits(logits, cfg, sched, input, clean, out.example_loss, &dlogits);
  out.grad = DenoiserParams<S>::zeros(cfg);
  run_backward(params, cfg, input, cache, dlogits, out.grad);
  return out;
}

template <class S>
double batch_loss(const DenoiserParams<S>& params, const ModelConfig& cfg, const NoiseSchedule& sched,
                  const DenoiserInput& input, const std::vector<Token>& clean) {
  std::vector<double> per_example;
  return loss_from_logits<S>(forward_logits(params, cfg, input), cfg, sched, input, clean, per_example, nullptr);
}

TransformerDenoiser::TransformerDenoiser(ModelConfig cfg, DenoiserParams<float> params)
    : cfg_(cfg), params_(std::move(params)) {
  cfg_.validate();
}

ProbTable TransformerDenoiser::predict(const DenoiserInput& input) const { return forward(params_, cfg_, input); }

#define DIFFMT_INSTANTIATE(S)                                                                                    \
  template struct DenoiserParams<S>;                                                                             \
  template std::vector<S> time_encoding<S>(int, const DenoiserParams<S>&, const ModelConfig&);                  \
  template Matrix<S> forward_logits<S>(const DenoiserParams<S>&, const ModelConfig&, const DenoiserInput&);     \
  template ProbTable forward<S>(const DenoiserParams<S>&, const ModelConfig&, const DenoiserInput&);            \
  template LossAndGradients<S> loss_and_gradients<S>(const DenoiserParams<S>&, const ModelConfig&,              \
                                                     const NoiseSchedule&, const DenoiserInput&,                \
                                                     const std::vector<Token>&);                                \
  template double batch_loss<S>(const DenoiserParams<S>&, const ModelConfig&, const NoiseSchedule&,             \
                                const DenoiserInput&, const std::vector<Token>&);

DIFFMT_INSTANTIATE(float)
DIFFMT_INSTANTIATE(double)
#undef DIFFMT_INSTANTIATE

template DenoiserParams<double> DenoiserParams<float>::cast<double>() const;
template DenoiserParams<float> DenoiserParams<double>::cast<float>() const;
template DenoiserParams<float> DenoiserParams<float>::cast<float>() const;
template DenoiserParams<double> DenoiserParams<double>::cast<double>() const;

}  // namespace diffmt
