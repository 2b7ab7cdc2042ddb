// Desk-scale decoder-only transformer with a hand-derived backward pass.
//
// Architecture: learned token and position embeddings, pre-layer-norm blocks
// (causal multi-head attention, tanh-GELU MLP), final layer norm, untied
// output projection. Weights use the x * W convention with W stored
// row-major as [in, out]. All arithmetic is double precision; checkpoints
// store float32.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "judgelab/backend.hpp"
#include "judgelab/error.hpp"
#include "judgelab/rng.hpp"
#include "judgelab/text.hpp"

namespace judgelab {

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t ctx_len = 256;
  std::size_t vocab_size = 0;
  std::uint64_t seed = 0;
  double init_std = 0.02;

  void validate() const {
    if (n_layers == 0 || d_model == 0 || n_heads == 0 || d_ff == 0 || ctx_len == 0) {
      throw ValidationError("model config: all dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
      throw ValidationError("model config: d_model must be divisible by n_heads");
    }
    if (vocab_size < 4) throw ValidationError("model config: vocab_size too small");
    if (!(init_std >= 0.0)) throw ValidationError("model config: init_std must be >= 0");
  }

  bool operator==(const ModelConfig&) const = default;
};

struct TensorSpec {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;

  std::size_t numel() const {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    return n;
  }
};

struct LayerOffsets {
  std::size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
};

/// Fixed tensor order; offsets index into the flat parameter vector.
struct ParamLayout {
  std::vector<TensorSpec> tensors;
  std::vector<LayerOffsets> layers;
  std::size_t tok_emb = 0, pos_emb = 0, lnf_g = 0, lnf_b = 0, head_w = 0, head_b = 0;
  std::size_t total = 0;

  static ParamLayout build(const ModelConfig& c) {
    ParamLayout p;
    auto add = [&](std::string name, std::vector<std::size_t> shape) {
      TensorSpec t{std::move(name), std::move(shape), p.total};
      p.total += t.numel();
      p.tensors.push_back(t);
      return t.offset;
    };
    const auto d = c.d_model, f = c.d_ff, v = c.vocab_size;
    p.tok_emb = add("tok_emb", {v, d});
    p.pos_emb = add("pos_emb", {c.ctx_len, d});
    for (std::size_t l = 0; l < c.n_layers; ++l) {
      const std::string pre = "h" + std::to_string(l) + ".";
      LayerOffsets o{};
      o.ln1_g = add(pre + "ln1.g", {d});
      o.ln1_b = add(pre + "ln1.b", {d});
      o.wq = add(pre + "attn.wq", {d, d});
      o.bq = add(pre + "attn.bq", {d});
      o.wk = add(pre + "attn.wk", {d, d});
      o.bk = add(pre + "attn.bk", {d});
      o.wv = add(pre + "attn.wv", {d, d});
      o.bv = add(pre + "attn.bv", {d});
      o.wo = add(pre + "attn.wo", {d, d});
      o.bo = add(pre + "attn.bo", {d});
      o.ln2_g = add(pre + "ln2.g", {d});
      o.ln2_b = add(pre + "ln2.b", {d});
      o.w1 = add(pre + "mlp.w1", {d, f});
      o.b1 = add(pre + "mlp.b1", {f});
      o.w2 = add(pre + "mlp.w2", {f, d});
      o.b2 = add(pre + "mlp.b2", {d});
      p.layers.push_back(o);
    }
    p.lnf_g = add("lnf.g", {d});
    p.lnf_b = add("lnf.b", {d});
    p.head_w = add("head.w", {d, v});
    p.head_b = add("head.b", {v});
    return p;
  }
};

struct ModelParams {
  ModelConfig config;
  ParamLayout layout;
  std::vector<double> values;

  const double* at(std::size_t offset) const { return values.data() + offset; }

  /// FNV-1a over the raw bytes of every parameter.
  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (double v : values) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xffU;
        h *= 1099511628211ULL;
      }
    }
    return h;
  }

  bool all_finite() const {
    for (double v : values) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  /// Rounds every value to the nearest float32 so in-memory and checkpointed
  /// parameters coincide.
  void round_to_float() {
    for (double& v : values) v = static_cast<double>(static_cast<float>(v));
  }
};

/// Gaussian(0, init_std) weights and embeddings, zero biases, unit layer-norm
/// gains. Draw order follows the tensor layout.
inline ModelParams init_params(const ModelConfig& config) {
  config.validate();
  ModelParams p{config, ParamLayout::build(config), {}};
  p.values.assign(p.layout.total, 0.0);
  Rng rng(config.seed);
  for (const auto& t : p.layout.tensors) {
    const bool is_gain = t.name.ends_with(".g");
    const bool is_bias = t.shape.size() == 1 && !is_gain;
    for (std::size_t i = 0; i < t.numel(); ++i) {
      double& v = p.values[t.offset + i];
      if (is_gain) {
        v = 1.0;
      } else if (is_bias) {
        v = 0.0;
      } else {
        v = config.init_std * rng.normal();
      }
    }
  }
  return p;
}

/// Every parameter zero: all logits are equal, so every next-token
/// distribution is uniform.
inline ModelParams zero_params(const ModelConfig& config) {
  config.validate();
  ModelParams p{config, ParamLayout::build(config), {}};
  p.values.assign(p.layout.total, 0.0);
  return p;
}

namespace detail {

inline constexpr double kLayerNormEps = 1e-5;

/// out[n x m] = a[n x k] * w[k x m] (+ bias)
inline void matmul(const double* a, std::size_t n, std::size_t k, const double* w, std::size_t m,
                   const double* bias, double* out) {
  for (std::size_t i = 0; i < n; ++i) {
    double* o = out + i * m;
    if (bias) {
      for (std::size_t j = 0; j < m; ++j) o[j] = bias[j];
    } else {
      for (std::size_t j = 0; j < m; ++j) o[j] = 0.0;
    }
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = ai[p];
      const double* wp = w + p * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += s * wp[j];
    }
  }
}

/// da[n x k] += dout[n x m] * w^T; dw[k x m] += a^T * dout; dbias += colsum(dout).
inline void matmul_backward(const double* a, std::size_t n, std::size_t k, const double* w,
                            std::size_t m, const double* dout, double* da, double* dw,
                            double* dbias) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* g = dout + i * m;
    double* dai = da + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* wp = w + p * m;
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += g[j] * wp[j];
      dai[p] += s;
    }
  }
  if (dw) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* g = dout + i * m;
      const double* ai = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const double s = ai[p];
        double* dwp = dw + p * m;
        for (std::size_t j = 0; j < m; ++j) dwp[j] += s * g[j];
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double* g = dout + i * m;
      for (std::size_t j = 0; j < m; ++j) dbias[j] += g[j];
    }
  }
}

inline void layernorm(const double* x, std::size_t n, std::size_t d, const double* g,
                      const double* b, double* out, double* mean, double* rstd) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = x + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xi[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + kLayerNormEps);
    mean[i] = mu;
    rstd[i] = rs;
    double* oi = out + i * d;
    for (std::size_t j = 0; j < d; ++j) oi[j] = (xi[j] - mu) * rs * g[j] + b[j];
  }
}

inline void layernorm_backward(const double* x, std::size_t n, std::size_t d, const double* g,
                               const double* mean, const double* rstd, const double* dout,
                               double* dx, double* dg, double* db) {
  std::vector<double> xhat(d), dxhat(d);
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = x + i * d;
    const double* gi = dout + i * d;
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      xhat[j] = (xi[j] - mean[i]) * rstd[i];
      dxhat[j] = gi[j] * g[j];
      m1 += dxhat[j];
      m2 += dxhat[j] * xhat[j];
    }
    m1 /= static_cast<double>(d);
    m2 /= static_cast<double>(d);
    double* dxi = dx + i * d;
    for (std::size_t j = 0; j < d; ++j) dxi[j] += rstd[i] * (dxhat[j] - m1 - xhat[j] * m2);
    if (dg) {
      for (std::size_t j = 0; j < d; ++j) {
        dg[j] += gi[j] * xhat[j];
        db[j] += gi[j];
      }
    }
  }
}

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
}

inline double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + 0.044715 * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

}  // namespace detail

/// Activations kept for the backward pass.
struct ForwardCache {
  struct Layer {
    std::vector<double> x_in, ln1, ln1_mean, ln1_rstd, q, k, v, probs, att, x_mid, ln2, ln2_mean,
        ln2_rstd, pre, act;
  };
  std::size_t len = 0;
  std::vector<Layer> layers;
  std::vector<double> x_final, lnf, lnf_mean, lnf_rstd;
};

/// Token plus position embedding rows (len x d_model).
inline std::vector<double> embed(const ModelParams& p, std::span<const TokenId> seq) {
  const auto& c = p.config;
  if (seq.size() > c.ctx_len) throw ValidationError("context overflow");
  const std::size_t d = c.d_model;
  std::vector<double> x(seq.size() * d);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq[i] >= c.vocab_size) throw ValidationError("invalid token id");
    const double* te = p.at(p.layout.tok_emb) + seq[i] * d;
    const double* pe = p.at(p.layout.pos_emb) + i * d;
    for (std::size_t j = 0; j < d; ++j) x[i * d + j] = te[j] + pe[j];
  }
  return x;
}

/// Runs every block over the given input embeddings and stops at the final
/// layer norm; logits are produced per row by `head_logits`.
inline ForwardCache forward_from_embeddings(const ModelParams& p, std::span<const double> x0) {
  using namespace detail;
  const auto& c = p.config;
  const std::size_t d = c.d_model, f = c.d_ff, H = c.n_heads, hd = d / H;
  const std::size_t n = x0.size() / d;
  if (n == 0) throw ValidationError("empty sequence");
  if (n > c.ctx_len) throw ValidationError("context overflow");
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  ForwardCache cache;
  cache.len = n;
  cache.layers.resize(c.n_layers);
  std::vector<double> x(x0.begin(), x0.end());
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto& o = p.layout.layers[l];
    auto& L = cache.layers[l];
    L.x_in = x;
    L.ln1.resize(n * d);
    L.ln1_mean.resize(n);
    L.ln1_rstd.resize(n);
    layernorm(x.data(), n, d, p.at(o.ln1_g), p.at(o.ln1_b), L.ln1.data(), L.ln1_mean.data(),
              L.ln1_rstd.data());
    L.q.resize(n * d);
    L.k.resize(n * d);
    L.v.resize(n * d);
    matmul(L.ln1.data(), n, d, p.at(o.wq), d, p.at(o.bq), L.q.data());
    matmul(L.ln1.data(), n, d, p.at(o.wk), d, p.at(o.bk), L.k.data());
    matmul(L.ln1.data(), n, d, p.at(o.wv), d, p.at(o.bv), L.v.data());

    L.probs.assign(H * n * n, 0.0);
    L.att.assign(n * d, 0.0);
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        double* pr = L.probs.data() + (h * n + i) * n;
        const double* qi = L.q.data() + i * d + h * hd;
        double mx = -1e300;
        for (std::size_t j = 0; j <= i; ++j) {
          const double* kj = L.k.data() + j * d + h * hd;
          double s = 0.0;
          for (std::size_t t = 0; t < hd; ++t) s += qi[t] * kj[t];
          pr[j] = s * scale;
          if (pr[j] > mx) mx = pr[j];
        }
        double sum = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          pr[j] = std::exp(pr[j] - mx);
          sum += pr[j];
        }
        double* out = L.att.data() + i * d + h * hd;
        for (std::size_t j = 0; j <= i; ++j) {
          pr[j] /= sum;
          const double* vj = L.v.data() + j * d + h * hd;
          for (std::size_t t = 0; t < hd; ++t) out[t] += pr[j] * vj[t];
        }
      }
    }
    L.x_mid.resize(n * d);
    matmul(L.att.data(), n, d, p.at(o.wo), d, p.at(o.bo), L.x_mid.data());
    for (std::size_t i = 0; i < n * d; ++i) L.x_mid[i] += x[i];

    L.ln2.resize(n * d);
    L.ln2_mean.resize(n);
    L.ln2_rstd.resize(n);
    layernorm(L.x_mid.data(), n, d, p.at(o.ln2_g), p.at(o.ln2_b), L.ln2.data(),
              L.ln2_mean.data(), L.ln2_rstd.data());
    L.pre.resize(n * f);
    matmul(L.ln2.data(), n, d, p.at(o.w1), f, p.at(o.b1), L.pre.data());
    L.act.resize(n * f);
    for (std::size_t i = 0; i < n * f; ++i) L.act[i] = gelu(L.pre[i]);
    std::vector<double> mlp(n * d);
    matmul(L.act.data(), n, f, p.at(o.w2), d, p.at(o.b2), mlp.data());
    for (std::size_t i = 0; i < n * d; ++i) x[i] = L.x_mid[i] + mlp[i];
  }
  cache.x_final = x;
  cache.lnf.resize(n * d);
  cache.lnf_mean.resize(n);
  cache.lnf_rstd.resize(n);
  layernorm(x.data(), n, d, p.at(p.layout.lnf_g), p.at(p.layout.lnf_b), cache.lnf.data(),
            cache.lnf_mean.data(), cache.lnf_rstd.data());
  return cache;
}

inline std::vector<double> head_logits(const ModelParams& p, const ForwardCache& cache,
                                       std::size_t row) {
  const std::size_t d = p.config.d_model, V = p.config.vocab_size;
  if (row >= cache.len) throw ValidationError("logit row out of range");
  std::vector<double> out(V);
  detail::matmul(cache.lnf.data() + row * d, 1, d, p.at(p.layout.head_w), V,
                 p.at(p.layout.head_b), out.data());
  return out;
}

/// Upstream gradient for one logit row.
struct LogitGrad {
  std::size_t row;
  std::vector<double> grad;
};

/// Backpropagates logit-row gradients to the input embeddings. When
/// `param_grads` is non-null it must have layout.total entries and receives
/// accumulated parameter gradients (embedding tables excluded; the caller
/// scatters the returned input gradient into them).
inline std::vector<double> backward(const ModelParams& p, const ForwardCache& cache,
                                    std::span<const LogitGrad> logit_grads,
                                    std::vector<double>* param_grads) {
  using namespace detail;
  const auto& c = p.config;
  const std::size_t d = c.d_model, f = c.d_ff, H = c.n_heads, hd = d / H, V = c.vocab_size;
  const std::size_t n = cache.len;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  double* G = param_grads ? param_grads->data() : nullptr;
  auto gp = [&](std::size_t off) { return G ? G + off : nullptr; };

  std::vector<double> dlnf(n * d, 0.0);
  for (const auto& lg : logit_grads) {
    matmul_backward(cache.lnf.data() + lg.row * d, 1, d, p.at(p.layout.head_w), V,
                    lg.grad.data(), dlnf.data() + lg.row * d, gp(p.layout.head_w),
                    gp(p.layout.head_b));
  }
  std::vector<double> dx(n * d, 0.0);
  layernorm_backward(cache.x_final.data(), n, d, p.at(p.layout.lnf_g), cache.lnf_mean.data(),
                     cache.lnf_rstd.data(), dlnf.data(), dx.data(), gp(p.layout.lnf_g),
                     gp(p.layout.lnf_b));

  for (std::size_t li = c.n_layers; li-- > 0;) {
    const auto& o = p.layout.layers[li];
    const auto& L = cache.layers[li];

    // MLP branch: x_out = x_mid + act * w2 + b2
    std::vector<double> dact(n * f, 0.0);
    matmul_backward(L.act.data(), n, f, p.at(o.w2), d, dx.data(), dact.data(), gp(o.w2),
                    gp(o.b2));
    for (std::size_t i = 0; i < n * f; ++i) dact[i] *= gelu_grad(L.pre[i]);
    std::vector<double> dln2(n * d, 0.0);
    matmul_backward(L.ln2.data(), n, d, p.at(o.w1), f, dact.data(), dln2.data(), gp(o.w1),
                    gp(o.b1));
    std::vector<double> dmid = dx;
    layernorm_backward(L.x_mid.data(), n, d, p.at(o.ln2_g), L.ln2_mean.data(),
                       L.ln2_rstd.data(), dln2.data(), dmid.data(), gp(o.ln2_g), gp(o.ln2_b));

    // Attention branch: x_mid = x_in + att * wo + bo
    std::vector<double> datt(n * d, 0.0);
    matmul_backward(L.att.data(), n, d, p.at(o.wo), d, dmid.data(), datt.data(), gp(o.wo),
                    gp(o.bo));
    std::vector<double> dq(n * d, 0.0), dk(n * d, 0.0), dv(n * d, 0.0);
    std::vector<double> dp(n);
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        const double* pr = L.probs.data() + (h * n + i) * n;
        const double* go = datt.data() + i * d + h * hd;
        double dot = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          const double* vj = L.v.data() + j * d + h * hd;
          double s = 0.0;
          for (std::size_t t = 0; t < hd; ++t) s += go[t] * vj[t];
          dp[j] = s;
          dot += pr[j] * s;
          double* dvj = dv.data() + j * d + h * hd;
          for (std::size_t t = 0; t < hd; ++t) dvj[t] += pr[j] * go[t];
        }
        const double* qi = L.q.data() + i * d + h * hd;
        double* dqi = dq.data() + i * d + h * hd;
        for (std::size_t j = 0; j <= i; ++j) {
          const double ds = pr[j] * (dp[j] - dot) * scale;
          const double* kj = L.k.data() + j * d + h * hd;
          double* dkj = dk.data() + j * d + h * hd;
          for (std::size_t t = 0; t < hd; ++t) {
            dqi[t] += ds * kj[t];
            dkj[t] += ds * qi[t];
          }
        }
      }
    }
    std::vector<double> dln1(n * d, 0.0);
    matmul_backward(L.ln1.data(), n, d, p.at(o.wq), d, dq.data(), dln1.data(), gp(o.wq),
                    gp(o.bq));
    matmul_backward(L.ln1.data(), n, d, p.at(o.wk), d, dk.data(), dln1.data(), gp(o.wk),
                    gp(o.bk));
    matmul_backward(L.ln1.data(), n, d, p.at(o.wv), d, dv.data(), dln1.data(), gp(o.wv),
                    gp(o.bv));
    dx = std::move(dmid);
    layernorm_backward(L.x_in.data(), n, d, p.at(o.ln1_g), L.ln1_mean.data(), L.ln1_rstd.data(),
                       dln1.data(), dx.data(), gp(o.ln1_g), gp(o.ln1_b));
  }
  return dx;
}

/// Groups terms by row and forms d(sum weight * nll)/dlogits = weight * (softmax - onehot).
/// Also returns the unweighted nll of every term.
inline std::vector<LogitGrad> nll_logit_grads(const ModelParams& p, const ForwardCache& cache,
                                              std::span<const LossTerm> terms,
                                              std::vector<double>* nll_out) {
  std::map<std::size_t, std::vector<std::size_t>> by_row;
  for (std::size_t t = 0; t < terms.size(); ++t) {
    if (terms[t].row >= cache.len) throw ValidationError("loss term row out of range");
    if (terms[t].target >= p.config.vocab_size) throw ValidationError("invalid token id");
    by_row[terms[t].row].push_back(t);
  }
  if (nll_out) nll_out->assign(terms.size(), 0.0);
  std::vector<LogitGrad> grads;
  for (const auto& [row, idx] : by_row) {
    const auto lsm = log_softmax(head_logits(p, cache, row));
    LogitGrad g{row, std::vector<double>(lsm.size(), 0.0)};
    for (auto t : idx) {
      if (nll_out) (*nll_out)[t] = -lsm[terms[t].target];
      const double w = terms[t].weight;
      for (std::size_t v = 0; v < lsm.size(); ++v) g.grad[v] += w * std::exp(lsm[v]);
      g.grad[terms[t].target] -= w;
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

/// ModelBackend over a set of parameters held by value.
class TinyLM final : public ModelBackend {
 public:
  explicit TinyLM(ModelParams params) : params_(std::move(params)) {
    params_.config.validate();
  }

  const ModelParams& params() const { return params_; }
  std::size_t vocab_size() const override { return params_.config.vocab_size; }
  std::size_t context_length() const override { return params_.config.ctx_len; }

  std::vector<std::vector<double>> logits_at(std::span<const TokenId> seq,
                                             std::span<const std::size_t> rows) const override {
    const auto cache = forward_from_embeddings(params_, embed(params_, seq));
    std::vector<std::vector<double>> out;
    out.reserve(rows.size());
    for (auto r : rows) out.push_back(head_logits(params_, cache, r));
    return out;
  }

  std::vector<double> term_nll(std::span<const TokenId> seq,
                               std::span<const LossTerm> terms) const override {
    const auto cache = forward_from_embeddings(params_, embed(params_, seq));
    std::vector<double> nll;
    nll_logit_grads(params_, cache, terms, &nll);
    return nll;
  }

  GradientMatrix input_token_gradients(std::span<const TokenId> seq,
                                       std::span<const LossTerm> terms,
                                       std::span<const std::size_t> positions) const override {
    for (auto pos : positions) {
      if (pos >= seq.size()) throw ValidationError("gradient position out of range");
    }
    const auto dx = embedding_gradient(embed(params_, seq), terms);
    return one_hot_gradients(dx, positions);
  }

  /// d(sum weight * nll)/d(input embeddings), rows = sequence positions.
  std::vector<double> embedding_gradient(std::span<const double> x0,
                                         std::span<const LossTerm> terms) const {
    const auto cache = forward_from_embeddings(params_, x0);
    const auto lg = nll_logit_grads(params_, cache, terms, nullptr);
    return backward(params_, cache, lg, nullptr);
  }

  /// Weighted loss for explicit input embeddings (finite-difference probes).
  double loss_from_embeddings(std::span<const double> x0, std::span<const LossTerm> terms) const {
    const auto cache = forward_from_embeddings(params_, x0);
    std::vector<double> nll;
    nll_logit_grads(params_, cache, terms, &nll);
    double total = 0.0;
    for (std::size_t i = 0; i < terms.size(); ++i) total += terms[i].weight * nll[i];
    return total;
  }

  /// Row for position j is E * dL/de_j, i.e. the gradient with respect to
  /// the one-hot indicator of the token at j.
  GradientMatrix one_hot_gradients(std::span<const double> dx,
                                   std::span<const std::size_t> positions) const {
    const std::size_t d = params_.config.d_model, V = params_.config.vocab_size;
    GradientMatrix g{positions.size(), V, std::vector<double>(positions.size() * V, 0.0)};
    const double* E = params_.at(params_.layout.tok_emb);
    for (std::size_t r = 0; r < positions.size(); ++r) {
      const double* dxj = dx.data() + positions[r] * d;
      for (std::size_t v = 0; v < V; ++v) {
        const double* ev = E + v * d;
        double s = 0.0;
        for (std::size_t t = 0; t < d; ++t) s += ev[t] * dxj[t];
        g(r, v) = s;
      }
    }
    return g;
  }

 private:
  ModelParams params_;
};

}  // namespace judgelab
