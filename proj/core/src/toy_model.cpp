#include "pcl/toy_model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "pcl/digest.hpp"
#include "pcl/errors.hpp"
#include "pcl/rng.hpp"

namespace pcl {
namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu(double u) {
  return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + kGeluA * u * u * u)));
}

double gelu_grad(double u) {
  const double s = kGeluC * (u + kGeluA * u * u * u);
  const double t = std::tanh(s);
  return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * u * u);
}

// y[j] = sum_i x[i] * w[i*cols + j], accumulated into y.
void matvec_acc(std::span<const double> x, std::span<const double> w,
                std::size_t rows, std::size_t cols, double* y) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    const double* wrow = w.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) y[j] += xi * wrow[j];
  }
}

// LayerNorm over one row of width E. Writes the normalized row (pre-affine)
// and returns rstd; the affine output goes to `out`.
double layer_norm_row(const double* x, std::size_t e, const double* gain,
                      const double* bias, double* hat, double* out) {
  double mean = 0.0;
  for (std::size_t i = 0; i < e; ++i) mean += x[i];
  mean /= static_cast<double>(e);
  double var = 0.0;
  for (std::size_t i = 0; i < e; ++i) {
    const double d = x[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(e);
  const double rstd = 1.0 / std::sqrt(var + 1e-8);
  for (std::size_t i = 0; i < e; ++i) {
    hat[i] = (x[i] - mean) * rstd;
    out[i] = hat[i] * gain[i] + bias[i];
  }
  return rstd;
}

// Backward of layer_norm_row. dy is the gradient at the affine output.
void layer_norm_row_backward(const double* dy, const double* hat, double rstd,
                             std::size_t e, const double* gain, double* dgain,
                             double* dbias, double* dx_acc) {
  double mean_dxhat = 0.0;
  double mean_dxhat_hat = 0.0;
  for (std::size_t i = 0; i < e; ++i) {
    const double dxhat = dy[i] * gain[i];
    mean_dxhat += dxhat;
    mean_dxhat_hat += dxhat * hat[i];
    dgain[i] += dy[i] * hat[i];
    dbias[i] += dy[i];
  }
  mean_dxhat /= static_cast<double>(e);
  mean_dxhat_hat /= static_cast<double>(e);
  for (std::size_t i = 0; i < e; ++i) {
    const double dxhat = dy[i] * gain[i];
    dx_acc[i] += rstd * (dxhat - mean_dxhat - hat[i] * mean_dxhat_hat);
  }
}

}  // namespace

const char* to_string(PrefixPositionMode mode) {
  return mode == PrefixPositionMode::kFree ? "free" : "shifted";
}

PrefixPositionMode prefix_position_mode_from_string(std::string_view name) {
  if (name == "free") return PrefixPositionMode::kFree;
  if (name == "shifted") return PrefixPositionMode::kShifted;
  throw ConfigError("unknown prefix position mode: " + std::string(name));
}

void ToyConfig::validate() const {
  if (num_layers == 0 || width == 0 || ffn_width == 0 || vocab_size == 0 ||
      max_context == 0) {
    throw ConfigError("toy model config: all dimensions must be positive");
  }
}

std::size_t ToyParams::total() const {
  std::size_t n = 0;
  for_each_tensor([&n](const std::vector<double>& t) { n += t.size(); });
  return n;
}

void ToyParams::for_each_tensor(const std::function<void(std::vector<double>&)>& fn) {
  fn(tok_embed);
  fn(pos_embed);
  for (Layer& l : layers) {
    fn(l.ln1_gain); fn(l.ln1_bias);
    fn(l.wq); fn(l.wk); fn(l.wv); fn(l.wo);
    fn(l.ln2_gain); fn(l.ln2_bias);
    fn(l.w1); fn(l.b1); fn(l.w2); fn(l.b2);
  }
  fn(lnf_gain);
  fn(lnf_bias);
  fn(unembed);
}

void ToyParams::for_each_tensor(
    const std::function<void(const std::vector<double>&)>& fn) const {
  const_cast<ToyParams*>(this)->for_each_tensor(
      [&fn](std::vector<double>& t) { fn(t); });
}

ToyTransformer::ToyTransformer(ToyConfig config, std::uint64_t seed)
    : config_(config) {
  config_.validate();
  const std::size_t e = config_.width;
  const std::size_t f = config_.ffn_width;
  const std::size_t v = config_.vocab_size;
  const std::size_t p = config_.max_context;

  RandomStream rng(derive_seed(seed, "toy-model-init"));
  auto randn = [&rng](std::size_t n, double scale) {
    std::vector<double> t(n);
    for (double& x : t) x = scale * rng.normal();
    return t;
  };

  params_.tok_embed = randn(v * e, 0.02);
  params_.pos_embed = randn(p * e, 0.01);
  params_.layers.resize(config_.num_layers);
  for (ToyParams::Layer& l : params_.layers) {
    l.ln1_gain.assign(e, 1.0);
    l.ln1_bias.assign(e, 0.0);
    l.wq = randn(e * e, 0.02);
    l.wk = randn(e * e, 0.02);
    l.wv = randn(e * e, 0.02);
    l.wo = randn(e * e, 0.02);
    l.ln2_gain.assign(e, 1.0);
    l.ln2_bias.assign(e, 0.0);
    l.w1 = randn(e * f, 0.02);
    l.b1.assign(f, 0.0);
    l.w2 = randn(f * e, 0.02);
    l.b2.assign(e, 0.0);
  }
  params_.lnf_gain.assign(e, 1.0);
  params_.lnf_bias.assign(e, 0.0);
  params_.unembed = randn(e * v, 0.02);
}

std::string ToyTransformer::fingerprint() const {
  Digest d;
  d.update_string("pcl-toy-lm-v1");
  d.update_u64(config_.num_layers);
  d.update_u64(config_.width);
  d.update_u64(config_.ffn_width);
  d.update_u64(config_.vocab_size);
  d.update_u64(config_.max_context);
  params_.for_each_tensor([&d](const std::vector<double>& t) {
    d.update_u64(t.size());
    d.update_doubles(t);
  });
  return d.hex();
}

void ToyTransformer::check_initial_state(const KVState* state) const {
  if (state == nullptr || state->empty()) return;
  if (state->size() != config_.num_layers) {
    throw ContractError("initial state has " + std::to_string(state->size()) +
                        " layers, model has " + std::to_string(config_.num_layers));
  }
  const std::size_t len = state->front().length();
  for (const LayerKV& layer : *state) {
    if (layer.width != config_.width) {
      throw ContractError("initial state width " + std::to_string(layer.width) +
                          " does not match model width " +
                          std::to_string(config_.width));
    }
    if (layer.length() != len || layer.values.size() != layer.keys.size()) {
      throw ContractError("initial state layers have inconsistent lengths");
    }
  }
}

std::vector<std::vector<double>> ToyTransformer::forward(
    std::span<const TokenId> tokens, const KVState* initial_state,
    Tape* tape) const {
  check_initial_state(initial_state);
  const std::size_t e = config_.width;
  const std::size_t f = config_.ffn_width;
  const std::size_t v = config_.vocab_size;
  const std::size_t t_len = tokens.size();
  const std::size_t n_pre =
      initial_state == nullptr ? 0 : kv_state_length(*initial_state);
  const bool empty_state = n_pre == 0;

  if (t_len == 0) throw InputError("forward: empty token sequence");
  for (TokenId id : tokens) {
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      throw InputError("forward: token id " + std::to_string(id) +
                       " outside vocabulary of size " + std::to_string(v));
    }
  }
  const std::size_t pos_base =
      (config_.prefix_positions == PrefixPositionMode::kShifted) ? n_pre : 0;
  if (pos_base + t_len > config_.max_context) {
    throw InputError("forward: sequence of length " + std::to_string(t_len) +
                     " exceeds max context " + std::to_string(config_.max_context));
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(e));

  std::vector<double> x(t_len * e);
  for (std::size_t t = 0; t < t_len; ++t) {
    const double* te = params_.tok_embed.data() + static_cast<std::size_t>(tokens[t]) * e;
    const double* pe = params_.pos_embed.data() + (pos_base + t) * e;
    for (std::size_t i = 0; i < e; ++i) x[t * e + i] = te[i] + pe[i];
  }

  if (tape != nullptr) {
    tape->tokens.assign(tokens.begin(), tokens.end());
    tape->prefix = empty_state ? KVState{} : *initial_state;
    tape->prefix_len = n_pre;
    tape->x0 = x;
    tape->layers.clear();
    tape->layers.resize(config_.num_layers);
  }

  for (std::size_t li = 0; li < config_.num_layers; ++li) {
    const ToyParams::Layer& L = params_.layers[li];
    Tape::LayerTape* lt = tape != nullptr ? &tape->layers[li] : nullptr;
    if (lt != nullptr) lt->x_in = x;

    // Pre-norm + projections.
    std::vector<double> a(t_len * e), hat(t_len * e), rstd(t_len);
    for (std::size_t t = 0; t < t_len; ++t) {
      rstd[t] = layer_norm_row(x.data() + t * e, e, L.ln1_gain.data(),
                               L.ln1_bias.data(), hat.data() + t * e,
                               a.data() + t * e);
    }
    std::vector<double> q(t_len * e, 0.0), k(t_len * e, 0.0), vv(t_len * e, 0.0);
    for (std::size_t t = 0; t < t_len; ++t) {
      matvec_acc({a.data() + t * e, e}, L.wq, e, e, q.data() + t * e);
      matvec_acc({a.data() + t * e, e}, L.wk, e, e, k.data() + t * e);
      matvec_acc({a.data() + t * e, e}, L.wv, e, e, vv.data() + t * e);
    }

    const LayerKV* pre = empty_state ? nullptr : &(*initial_state)[li];

    // Causal attention over prefix slots plus tokens 0..t.
    std::vector<std::vector<double>> att(t_len);
    std::vector<double> ctx(t_len * e, 0.0);
    for (std::size_t t = 0; t < t_len; ++t) {
      const std::size_t rows = n_pre + t + 1;
      std::vector<double>& w = att[t];
      w.resize(rows);
      const double* qt = q.data() + t * e;
      double max_s = -1e300;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* key = r < n_pre ? pre->keys.data() + r * e
                                      : k.data() + (r - n_pre) * e;
        double s = 0.0;
        for (std::size_t i = 0; i < e; ++i) s += qt[i] * key[i];
        s *= scale;
        w[r] = s;
        if (s > max_s) max_s = s;
      }
      double z = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        w[r] = std::exp(w[r] - max_s);
        z += w[r];
      }
      double* ct = ctx.data() + t * e;
      for (std::size_t r = 0; r < rows; ++r) {
        w[r] /= z;
        const double* val = r < n_pre ? pre->values.data() + r * e
                                      : vv.data() + (r - n_pre) * e;
        const double wr = w[r];
        for (std::size_t i = 0; i < e; ++i) ct[i] += wr * val[i];
      }
    }

    // Attention output projection + residual.
    std::vector<double> x_mid = x;
    for (std::size_t t = 0; t < t_len; ++t) {
      matvec_acc({ctx.data() + t * e, e}, L.wo, e, e, x_mid.data() + t * e);
    }

    // Feed-forward + residual.
    std::vector<double> b(t_len * e), hat2(t_len * e), rstd2(t_len);
    for (std::size_t t = 0; t < t_len; ++t) {
      rstd2[t] = layer_norm_row(x_mid.data() + t * e, e, L.ln2_gain.data(),
                                L.ln2_bias.data(), hat2.data() + t * e,
                                b.data() + t * e);
    }
    std::vector<double> u(t_len * f), g(t_len * f);
    std::vector<double> x_out = x_mid;
    for (std::size_t t = 0; t < t_len; ++t) {
      double* ut = u.data() + t * f;
      for (std::size_t j = 0; j < f; ++j) ut[j] = L.b1[j];
      matvec_acc({b.data() + t * e, e}, L.w1, e, f, ut);
      double* gt = g.data() + t * f;
      for (std::size_t j = 0; j < f; ++j) gt[j] = gelu(ut[j]);
      double* xo = x_out.data() + t * e;
      for (std::size_t i = 0; i < e; ++i) xo[i] += L.b2[i];
      matvec_acc({gt, f}, L.w2, f, e, xo);
    }

    if (lt != nullptr) {
      lt->ln1_hat = std::move(hat);
      lt->ln1_rstd = std::move(rstd);
      lt->q = std::move(q);
      lt->k = std::move(k);
      lt->v = std::move(vv);
      lt->att = std::move(att);
      lt->ctx = std::move(ctx);
      lt->x_mid = std::move(x_mid);
      lt->ln2_hat = std::move(hat2);
      lt->ln2_rstd = std::move(rstd2);
      lt->mlp_pre = std::move(u);
      lt->mlp_act = std::move(g);
    }
    x = std::move(x_out);
  }

  // Final norm + unembedding, log-softmax per position.
  std::vector<double> fvec(t_len * e), hatf(t_len * e), rstdf(t_len);
  for (std::size_t t = 0; t < t_len; ++t) {
    rstdf[t] = layer_norm_row(x.data() + t * e, e, params_.lnf_gain.data(),
                              params_.lnf_bias.data(), hatf.data() + t * e,
                              fvec.data() + t * e);
  }
  std::vector<std::vector<double>> logprobs(t_len);
  for (std::size_t t = 0; t < t_len; ++t) {
    std::vector<double>& row = logprobs[t];
    row.assign(v, 0.0);
    matvec_acc({fvec.data() + t * e, e}, params_.unembed, e, v, row.data());
    double max_l = row[0];
    for (double l : row) max_l = std::max(max_l, l);
    double z = 0.0;
    for (double l : row) z += std::exp(l - max_l);
    const double log_z = max_l + std::log(z);
    for (double& l : row) l -= log_z;
  }

  if (tape != nullptr) {
    tape->x_final = std::move(x);
    tape->lnf_hat = std::move(hatf);
    tape->lnf_rstd = std::move(rstdf);
    tape->f = std::move(fvec);
  }
  return logprobs;
}

ToyParams ToyTransformer::zero_grads() const {
  ToyParams g = params_;
  g.for_each_tensor([](std::vector<double>& t) { std::fill(t.begin(), t.end(), 0.0); });
  return g;
}

KVState ToyTransformer::zero_prefix_grads(std::size_t prefix_len) const {
  KVState g(config_.num_layers);
  for (LayerKV& l : g) {
    l.width = config_.width;
    l.keys.assign(prefix_len * config_.width, 0.0);
    l.values.assign(prefix_len * config_.width, 0.0);
  }
  return g;
}

void ToyTransformer::backward(const Tape& tape,
                              const std::vector<std::vector<double>>& dlogits,
                              ToyParams* weight_grads,
                              KVState* prefix_grads) const {
  const std::size_t e = config_.width;
  const std::size_t f = config_.ffn_width;
  const std::size_t v = config_.vocab_size;
  const std::size_t t_len = tape.tokens.size();
  const std::size_t n_pre = tape.prefix_len;
  const double scale = 1.0 / std::sqrt(static_cast<double>(e));

  if (dlogits.size() != t_len) {
    throw ContractError("backward: dlogits rows do not match tape length");
  }
  if (prefix_grads != nullptr && n_pre == 0) prefix_grads = nullptr;

  // Unembedding.
  std::vector<double> df(t_len * e, 0.0);
  for (std::size_t t = 0; t < t_len; ++t) {
    const std::vector<double>& dl = dlogits[t];
    if (dl.size() != v) throw ContractError("backward: dlogits row width mismatch");
    const double* ft = tape.f.data() + t * e;
    double* dft = df.data() + t * e;
    for (std::size_t i = 0; i < e; ++i) {
      const double* wrow = params_.unembed.data() + i * v;
      double acc = 0.0;
      for (std::size_t j = 0; j < v; ++j) acc += dl[j] * wrow[j];
      dft[i] = acc;
      if (weight_grads != nullptr) {
        double* grow = weight_grads->unembed.data() + i * v;
        const double fi = ft[i];
        for (std::size_t j = 0; j < v; ++j) grow[j] += fi * dl[j];
      }
    }
  }

  // Final layer norm.
  std::vector<double> dx(t_len * e, 0.0);
  {
    std::vector<double> dgain_sink(e, 0.0), dbias_sink(e, 0.0);
    double* dgain = weight_grads != nullptr ? weight_grads->lnf_gain.data()
                                            : dgain_sink.data();
    double* dbias = weight_grads != nullptr ? weight_grads->lnf_bias.data()
                                            : dbias_sink.data();
    for (std::size_t t = 0; t < t_len; ++t) {
      layer_norm_row_backward(df.data() + t * e, tape.lnf_hat.data() + t * e,
                              tape.lnf_rstd[t], e, params_.lnf_gain.data(),
                              dgain, dbias, dx.data() + t * e);
    }
  }

  for (std::size_t li_rev = 0; li_rev < config_.num_layers; ++li_rev) {
    const std::size_t li = config_.num_layers - 1 - li_rev;
    const ToyParams::Layer& L = params_.layers[li];
    const Tape::LayerTape& lt = tape.layers[li];
    ToyParams::Layer* G =
        weight_grads != nullptr ? &weight_grads->layers[li] : nullptr;
    const LayerKV* pre = n_pre > 0 ? &tape.prefix[li] : nullptr;
    LayerKV* dpre = prefix_grads != nullptr ? &(*prefix_grads)[li] : nullptr;

    // Feed-forward block backward; dx currently holds dL/d(x_out).
    std::vector<double> db_norm(t_len * e, 0.0);  // grad at ln2 affine output
    for (std::size_t t = 0; t < t_len; ++t) {
      const double* dxo = dx.data() + t * e;
      const double* ut = lt.mlp_pre.data() + t * f;
      const double* gt = lt.mlp_act.data() + t * f;
      // Through w2 into the activations.
      std::vector<double> dg(f, 0.0);
      for (std::size_t j = 0; j < f; ++j) {
        const double* wrow = L.w2.data() + j * e;
        double acc = 0.0;
        for (std::size_t i = 0; i < e; ++i) acc += dxo[i] * wrow[i];
        dg[j] = acc;
      }
      if (G != nullptr) {
        for (std::size_t j = 0; j < f; ++j) {
          double* grow = G->w2.data() + j * e;
          const double gj = gt[j];
          for (std::size_t i = 0; i < e; ++i) grow[i] += gj * dxo[i];
        }
        for (std::size_t i = 0; i < e; ++i) G->b2[i] += dxo[i];
      }
      // Through the activation into w1.
      std::vector<double> du(f);
      for (std::size_t j = 0; j < f; ++j) du[j] = dg[j] * gelu_grad(ut[j]);
      const double* bt = lt.ln2_hat.data() + t * e;  // normalized ln2 input
      double* dbn = db_norm.data() + t * e;
      for (std::size_t i = 0; i < e; ++i) {
        const double* wrow = L.w1.data() + i * f;
        double acc = 0.0;
        for (std::size_t j = 0; j < f; ++j) acc += du[j] * wrow[j];
        dbn[i] = acc;
      }
      if (G != nullptr) {
        // ln2 affine output b = hat*gain + bias is the w1 input; rebuild it.
        for (std::size_t i = 0; i < e; ++i) {
          const double bi = bt[i] * L.ln2_gain[i] + L.ln2_bias[i];
          double* grow = G->w1.data() + i * f;
          for (std::size_t j = 0; j < f; ++j) grow[j] += bi * du[j];
        }
        for (std::size_t j = 0; j < f; ++j) G->b1[j] += du[j];
      }
    }
    // ln2 backward into x_mid (residual adds dx straight through).
    {
      std::vector<double> sink_g(e, 0.0), sink_b(e, 0.0);
      double* dgain = G != nullptr ? G->ln2_gain.data() : sink_g.data();
      double* dbias = G != nullptr ? G->ln2_bias.data() : sink_b.data();
      for (std::size_t t = 0; t < t_len; ++t) {
        layer_norm_row_backward(db_norm.data() + t * e, lt.ln2_hat.data() + t * e,
                                lt.ln2_rstd[t], e, L.ln2_gain.data(), dgain,
                                dbias, dx.data() + t * e);
      }
    }

    // Attention block backward; dx now holds dL/d(x_mid).
    std::vector<double> dctx(t_len * e, 0.0);
    for (std::size_t t = 0; t < t_len; ++t) {
      const double* dxm = dx.data() + t * e;
      const double* ct = lt.ctx.data() + t * e;
      double* dct = dctx.data() + t * e;
      for (std::size_t i = 0; i < e; ++i) {
        const double* wrow = L.wo.data() + i * e;
        double acc = 0.0;
        for (std::size_t j = 0; j < e; ++j) acc += dxm[j] * wrow[j];
        dct[i] = acc;
      }
      if (G != nullptr) {
        for (std::size_t i = 0; i < e; ++i) {
          double* grow = G->wo.data() + i * e;
          const double ci = ct[i];
          for (std::size_t j = 0; j < e; ++j) grow[j] += ci * dxm[j];
        }
      }
    }

    std::vector<double> dq(t_len * e, 0.0), dk(t_len * e, 0.0), dv(t_len * e, 0.0);
    for (std::size_t t = 0; t < t_len; ++t) {
      const std::size_t rows = n_pre + t + 1;
      const std::vector<double>& w = lt.att[t];
      const double* dct = dctx.data() + t * e;
      const double* qt = lt.q.data() + t * e;

      // d(alpha) and dV.
      std::vector<double> dalpha(rows, 0.0);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* val = r < n_pre ? pre->values.data() + r * e
                                      : lt.v.data() + (r - n_pre) * e;
        double acc = 0.0;
        for (std::size_t i = 0; i < e; ++i) acc += dct[i] * val[i];
        dalpha[r] = acc;
        double* dval = nullptr;
        if (r < n_pre) {
          if (dpre != nullptr) dval = dpre->values.data() + r * e;
        } else {
          dval = dv.data() + (r - n_pre) * e;
        }
        if (dval != nullptr) {
          const double wr = w[r];
          for (std::size_t i = 0; i < e; ++i) dval[i] += wr * dct[i];
        }
      }
      // Softmax backward.
      double dot = 0.0;
      for (std::size_t r = 0; r < rows; ++r) dot += w[r] * dalpha[r];
      for (std::size_t r = 0; r < rows; ++r) {
        const double dscore = w[r] * (dalpha[r] - dot) * scale;
        if (dscore == 0.0) continue;
        const double* key = r < n_pre ? pre->keys.data() + r * e
                                      : lt.k.data() + (r - n_pre) * e;
        double* dqt = dq.data() + t * e;
        for (std::size_t i = 0; i < e; ++i) dqt[i] += dscore * key[i];
        double* dkey = nullptr;
        if (r < n_pre) {
          if (dpre != nullptr) dkey = dpre->keys.data() + r * e;
        } else {
          dkey = dk.data() + (r - n_pre) * e;
        }
        if (dkey != nullptr) {
          for (std::size_t i = 0; i < e; ++i) dkey[i] += dscore * qt[i];
        }
      }
    }

    // Projections back to the normalized input, then ln1 into the residual.
    std::vector<double> da(t_len * e, 0.0);
    for (std::size_t t = 0; t < t_len; ++t) {
      const double* at_hat = lt.ln1_hat.data() + t * e;
      double* dat = da.data() + t * e;
      const double* dqt = dq.data() + t * e;
      const double* dkt = dk.data() + t * e;
      const double* dvt = dv.data() + t * e;
      for (std::size_t i = 0; i < e; ++i) {
        const double* wq_row = L.wq.data() + i * e;
        const double* wk_row = L.wk.data() + i * e;
        const double* wv_row = L.wv.data() + i * e;
        double acc = 0.0;
        for (std::size_t j = 0; j < e; ++j) {
          acc += dqt[j] * wq_row[j] + dkt[j] * wk_row[j] + dvt[j] * wv_row[j];
        }
        dat[i] = acc;
      }
      if (G != nullptr) {
        for (std::size_t i = 0; i < e; ++i) {
          const double ai = at_hat[i] * L.ln1_gain[i] + L.ln1_bias[i];
          double* gq = G->wq.data() + i * e;
          double* gk = G->wk.data() + i * e;
          double* gv = G->wv.data() + i * e;
          for (std::size_t j = 0; j < e; ++j) {
            gq[j] += ai * dqt[j];
            gk[j] += ai * dkt[j];
            gv[j] += ai * dvt[j];
          }
        }
      }
    }
    {
      std::vector<double> sink_g(e, 0.0), sink_b(e, 0.0);
      double* dgain = G != nullptr ? G->ln1_gain.data() : sink_g.data();
      double* dbias = G != nullptr ? G->ln1_bias.data() : sink_b.data();
      for (std::size_t t = 0; t < t_len; ++t) {
        layer_norm_row_backward(da.data() + t * e, lt.ln1_hat.data() + t * e,
                                lt.ln1_rstd[t], e, L.ln1_gain.data(), dgain,
                                dbias, dx.data() + t * e);
      }
    }
  }

  // Embedding gradients.
  if (weight_grads != nullptr) {
    const std::size_t pos_base =
        (config_.prefix_positions == PrefixPositionMode::kShifted) ? n_pre : 0;
    for (std::size_t t = 0; t < t_len; ++t) {
      const double* dxt = dx.data() + t * e;
      double* dte = weight_grads->tok_embed.data() +
                    static_cast<std::size_t>(tape.tokens[t]) * e;
      double* dpe = weight_grads->pos_embed.data() + (pos_base + t) * e;
      for (std::size_t i = 0; i < e; ++i) {
        dte[i] += dxt[i];
        dpe[i] += dxt[i];
      }
    }
  }
}

void ToyTransformer::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["format"] = "pcl-toy-lm-v1";
  j["num_layers"] = config_.num_layers;
  j["hidden_kv_width"] = config_.width;
  j["ffn_width"] = config_.ffn_width;
  j["vocab_size"] = config_.vocab_size;
  j["max_context"] = config_.max_context;
  j["total_params"] = total_params();
  j["prefix_positions"] = to_string(config_.prefix_positions);
  {
    std::ofstream out(dir / "model.json");
    if (!out) throw FormatError("cannot write " + (dir / "model.json").string());
    out << j.dump(2) << "\n";
  }
  std::ofstream bin(dir / "weights.bin", std::ios::binary);
  if (!bin) throw FormatError("cannot write " + (dir / "weights.bin").string());
  params_.for_each_tensor([&bin](const std::vector<double>& t) {
    for (double x : t) {
      std::uint64_t bits = 0;
      std::memcpy(&bits, &x, sizeof(bits));
      unsigned char bytes[8];
      for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
      bin.write(reinterpret_cast<const char*>(bytes), 8);
    }
  });
}

ToyTransformer ToyTransformer::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "model.json");
  if (!in) {
    throw FormatError("model checkpoint missing metadata file: " +
                      (dir / "model.json").string());
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed model.json: " + std::string(e.what()));
  }
  if (j.value("format", "") != "pcl-toy-lm-v1") {
    throw FormatError("model.json: unsupported format tag");
  }
  ToyConfig cfg;
  try {
    cfg.num_layers = j.at("num_layers").get<std::size_t>();
    cfg.width = j.at("hidden_kv_width").get<std::size_t>();
    cfg.ffn_width = j.at("ffn_width").get<std::size_t>();
    cfg.vocab_size = j.at("vocab_size").get<std::size_t>();
    cfg.max_context = j.at("max_context").get<std::size_t>();
    cfg.prefix_positions =
        prefix_position_mode_from_string(j.value("prefix_positions", "free"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("model.json missing field: " + std::string(e.what()));
  }

  ToyTransformer model(cfg, /*seed=*/0);
  std::ifstream bin(dir / "weights.bin", std::ios::binary);
  if (!bin) {
    throw FormatError("model checkpoint missing weights file: " +
                      (dir / "weights.bin").string());
  }
  bool short_read = false;
  model.params_.for_each_tensor([&bin, &short_read](std::vector<double>& t) {
    for (double& x : t) {
      unsigned char bytes[8];
      bin.read(reinterpret_cast<char*>(bytes), 8);
      if (!bin) {
        short_read = true;
        return;
      }
      std::uint64_t bits = 0;
      for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
      std::memcpy(&x, &bits, sizeof(x));
    }
  });
  if (short_read) throw FormatError("weights.bin truncated");
  bin.peek();
  if (!bin.eof()) throw FormatError("weights.bin has trailing bytes");
  const std::size_t declared = j.value("total_params", model.total_params());
  if (declared != model.total_params()) {
    throw FormatError("model.json total_params does not match weights");
  }
  return model;
}

}  // namespace pcl
