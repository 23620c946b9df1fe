#include "itss/nn.hpp"

#include <algorithm>
#include <cmath>

#include "itss/errors.hpp"
#include "itss/rng.hpp"

namespace itss::nn {

namespace {

constexpr double kLayerNormEps = 1e-5;

// Tensor indices inside an MLP hidden layer.
enum MlpTensor : std::size_t { kDenseW = 0, kDenseB = 1 };

// Tensor indices inside a tiny-transformer encoder layer.
enum TfTensor : std::size_t {
  kQueryW = 0, kQueryB, kKeyW, kKeyB, kValueW, kValueB, kAttnOutW, kAttnOutB,
  kAttnNormW, kAttnNormB, kFfnInW, kFfnInB, kFfnOutW, kFfnOutB,
  kFfnNormW, kFfnNormB,
};

std::span<const double> tensor_span(const LayerLayout& layout,
                                    const std::vector<double>& params,
                                    std::size_t idx) {
  const TensorInfo& t = layout.tensors[idx];
  return {params.data() + t.offset, t.size()};
}

std::span<double> tensor_span(const LayerLayout& layout, std::vector<double>& params,
                              std::size_t idx) {
  const TensorInfo& t = layout.tensors[idx];
  return {params.data() + t.offset, t.size()};
}

// y = W x + b with W row-major [out x in].
void affine(std::span<const double> w, std::span<const double> b,
            std::span<const double> x, std::span<double> y) {
  const std::size_t out = y.size(), in = x.size();
  for (std::size_t o = 0; o < out; ++o) {
    const double* row = w.data() + o * in;
    double s = b.empty() ? 0.0 : b[o];
    for (std::size_t i = 0; i < in; ++i) s += row[i] * x[i];
    y[o] = s;
  }
}

// Accumulates dW += dy x^T, db += dy and dx += W^T dy.
void affine_backward(std::span<const double> w, std::span<const double> x,
                     std::span<const double> dy, std::span<double> dw,
                     std::span<double> db, std::span<double> dx) {
  const std::size_t out = dy.size(), in = x.size();
  for (std::size_t o = 0; o < out; ++o) {
    const double g = dy[o];
    if (!db.empty()) db[o] += g;
    double* dwrow = dw.data() + o * in;
    const double* wrow = w.data() + o * in;
    for (std::size_t i = 0; i < in; ++i) {
      dwrow[i] += g * x[i];
      if (!dx.empty()) dx[i] += wrow[i] * g;
    }
  }
}

void layer_norm(std::span<const double> x, std::span<const double> gain,
                std::span<const double> bias, std::span<double> y,
                std::span<double> xhat, double& inv_sigma) {
  const std::size_t n = x.size();
  double mu = 0.0;
  for (double v : x) mu += v;
  mu /= static_cast<double>(n);
  double var = 0.0;
  for (double v : x) var += (v - mu) * (v - mu);
  var /= static_cast<double>(n);
  inv_sigma = 1.0 / std::sqrt(var + kLayerNormEps);
  for (std::size_t i = 0; i < n; ++i) {
    xhat[i] = (x[i] - mu) * inv_sigma;
    y[i] = gain[i] * xhat[i] + bias[i];
  }
}

// dgain += dy .* xhat, dbias += dy, dx = inv_sigma*(dz - mean(dz) - xhat*mean(dz.*xhat))
// with dz = dy .* gain.
void layer_norm_backward(std::span<const double> dy, std::span<const double> gain,
                         std::span<const double> xhat, double inv_sigma,
                         std::span<double> dgain, std::span<double> dbias,
                         std::span<double> dx) {
  const std::size_t n = dy.size();
  double mean_dz = 0.0, mean_dz_xhat = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    dgain[i] += dy[i] * xhat[i];
    dbias[i] += dy[i];
    const double dz = dy[i] * gain[i];
    mean_dz += dz;
    mean_dz_xhat += dz * xhat[i];
  }
  mean_dz /= static_cast<double>(n);
  mean_dz_xhat /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double dz = dy[i] * gain[i];
    dx[i] = inv_sigma * (dz - mean_dz - xhat[i] * mean_dz_xhat);
  }
}

// Stable softmax cross-entropy; returns the loss, fills probs.
double softmax_ce(std::span<const double> logits, int label, std::span<double> probs) {
  const std::size_t c = logits.size();
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  double z = 0.0;
  for (std::size_t i = 0; i < c; ++i) {
    probs[i] = std::exp(logits[i] - m);
    z += probs[i];
  }
  for (std::size_t i = 0; i < c; ++i) probs[i] /= z;
  return -(logits[static_cast<std::size_t>(label)] - m - std::log(z));
}

LayerLayout make_layout(std::size_t layer_id,
                        std::initializer_list<TensorInfo> tensors) {
  LayerLayout l;
  l.layer_id = layer_id;
  std::size_t offset = 0;
  for (TensorInfo t : tensors) {
    t.offset = offset;
    offset += t.size();
    l.tensors.push_back(std::move(t));
  }
  return l;
}

std::size_t derive_seq_len(std::size_t input_dim) {
  if (input_dim % 4 == 0) return 4;
  if (input_dim % 2 == 0) return 2;
  return 1;
}

bool is_norm_gain(const TensorInfo& t) {
  return t.name.find("norm.weight") != std::string::npos;
}

void init_tensor(const TensorInfo& t, std::span<double> out, std::uint64_t stream_seed) {
  if (t.shape.size() == 1) {
    // Norm gains start at one, every other 1-D tensor is a bias at zero.
    std::fill(out.begin(), out.end(), is_norm_gain(t) ? 1.0 : 0.0);
    return;
  }
  rng::Engine eng(stream_seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(t.shape.back()));
  for (double& v : out) v = eng.next_gaussian() * scale;
}

void check_batch(const Model& model, const Batch& batch) {
  if (batch.dim != model.spec.input_dim)
    throw ShapeError("batch feature dim " + std::to_string(batch.dim) +
                     " does not match model input dim " +
                     std::to_string(model.spec.input_dim));
  if (batch.n == 0) throw InvalidInputError("empty batch");
  if (batch.x.size() != batch.n * batch.dim || batch.y.size() != batch.n)
    throw ShapeError("batch buffers disagree with n/dim");
}

// ---------------------------------------------------------------------------
// MLP forward/backward
// ---------------------------------------------------------------------------

struct MlpCache {
  // act[0] = embed output (no nonlinearity), act[l+1] = tanh hidden output.
  std::vector<std::vector<double>> act;
  std::vector<double> logits, probs;
};

void mlp_forward_example(const Model& m, std::span<const double> x, MlpCache& c) {
  const std::size_t h = m.spec.hidden_dim;
  c.act.resize(m.spec.depth + 1);
  for (auto& a : c.act) a.assign(h, 0.0);
  c.logits.assign(m.spec.num_classes, 0.0);
  c.probs.assign(m.spec.num_classes, 0.0);

  affine(tensor_span(m.embed_layout, m.embed, 0), tensor_span(m.embed_layout, m.embed, 1),
         x, c.act[0]);
  std::vector<double> z(h);
  for (std::size_t l = 0; l < m.spec.depth; ++l) {
    affine(tensor_span(m.hidden_layouts[l], m.hidden[l], kDenseW),
           tensor_span(m.hidden_layouts[l], m.hidden[l], kDenseB), c.act[l], z);
    for (std::size_t i = 0; i < h; ++i) c.act[l + 1][i] = std::tanh(z[i]);
  }
  affine(tensor_span(m.readout_layout, m.readout, 0),
         tensor_span(m.readout_layout, m.readout, 1), c.act[m.spec.depth], c.logits);
}

void mlp_backward_example(const Model& m, std::span<const double> x, const MlpCache& c,
                          std::span<const double> dlogits, Gradients& g) {
  const std::size_t h = m.spec.hidden_dim;
  std::vector<double> dh(h, 0.0);
  affine_backward(tensor_span(m.readout_layout, m.readout, 0), c.act[m.spec.depth],
                  dlogits, tensor_span(m.readout_layout, g.readout, 0),
                  tensor_span(m.readout_layout, g.readout, 1), dh);
  std::vector<double> dz(h), dprev(h);
  for (std::size_t l = m.spec.depth; l-- > 0;) {
    for (std::size_t i = 0; i < h; ++i)
      dz[i] = dh[i] * (1.0 - c.act[l + 1][i] * c.act[l + 1][i]);
    std::fill(dprev.begin(), dprev.end(), 0.0);
    affine_backward(tensor_span(m.hidden_layouts[l], m.hidden[l], kDenseW), c.act[l],
                    dz, tensor_span(m.hidden_layouts[l], g.hidden[l], kDenseW),
                    tensor_span(m.hidden_layouts[l], g.hidden[l], kDenseB), dprev);
    dh = dprev;
  }
  affine_backward(tensor_span(m.embed_layout, m.embed, 0), x, dh,
                  tensor_span(m.embed_layout, g.embed, 0),
                  tensor_span(m.embed_layout, g.embed, 1), {});
}

// ---------------------------------------------------------------------------
// Tiny-transformer forward/backward
// ---------------------------------------------------------------------------

struct TfLayerCache {
  std::vector<std::vector<double>> q, k, v, attn;  // [S][H]
  std::vector<std::vector<double>> alpha;          // [S][S]
  std::vector<std::vector<double>> xhat1, u, fft, xhat2;  // fft: [S][F]
  std::vector<double> inv_s1, inv_s2;              // [S]
};

struct TfCache {
  std::vector<std::vector<std::vector<double>>> h;  // [depth+1][S][H]
  std::vector<TfLayerCache> layers;
  std::vector<double> pooled, logits, probs;
};

void tf_forward_example(const Model& m, std::span<const double> x, TfCache& c) {
  const std::size_t h = m.spec.hidden_dim, s_len = m.seq_len, f = m.ffn_dim;
  const double inv_sqrt_h = 1.0 / std::sqrt(static_cast<double>(h));

  c.h.assign(m.spec.depth + 1,
             std::vector<std::vector<double>>(s_len, std::vector<double>(h, 0.0)));
  c.layers.resize(m.spec.depth);
  c.pooled.assign(h, 0.0);
  c.logits.assign(m.spec.num_classes, 0.0);
  c.probs.assign(m.spec.num_classes, 0.0);

  for (std::size_t s = 0; s < s_len; ++s)
    affine(tensor_span(m.embed_layout, m.embed, 0),
           tensor_span(m.embed_layout, m.embed, 1),
           x.subspan(s * m.chunk, m.chunk), c.h[0][s]);

  std::vector<double> out(h), r(h), z(f);
  for (std::size_t l = 0; l < m.spec.depth; ++l) {
    const LayerLayout& lay = m.hidden_layouts[l];
    const std::vector<double>& p = m.hidden[l];
    TfLayerCache& lc = c.layers[l];
    lc.q.assign(s_len, std::vector<double>(h, 0.0));
    lc.k = lc.q;
    lc.v = lc.q;
    lc.attn = lc.q;
    lc.alpha.assign(s_len, std::vector<double>(s_len, 0.0));
    lc.xhat1.assign(s_len, std::vector<double>(h, 0.0));
    lc.u = lc.xhat1;
    lc.xhat2 = lc.xhat1;
    lc.fft.assign(s_len, std::vector<double>(f, 0.0));
    lc.inv_s1.assign(s_len, 0.0);
    lc.inv_s2.assign(s_len, 0.0);

    for (std::size_t s = 0; s < s_len; ++s) {
      affine(tensor_span(lay, p, kQueryW), tensor_span(lay, p, kQueryB), c.h[l][s], lc.q[s]);
      affine(tensor_span(lay, p, kKeyW), tensor_span(lay, p, kKeyB), c.h[l][s], lc.k[s]);
      affine(tensor_span(lay, p, kValueW), tensor_span(lay, p, kValueB), c.h[l][s], lc.v[s]);
    }
    for (std::size_t s = 0; s < s_len; ++s) {
      double mx = -1e300;
      for (std::size_t t = 0; t < s_len; ++t) {
        double score = 0.0;
        for (std::size_t i = 0; i < h; ++i) score += lc.q[s][i] * lc.k[t][i];
        lc.alpha[s][t] = score * inv_sqrt_h;
        mx = std::max(mx, lc.alpha[s][t]);
      }
      double zsum = 0.0;
      for (std::size_t t = 0; t < s_len; ++t) {
        lc.alpha[s][t] = std::exp(lc.alpha[s][t] - mx);
        zsum += lc.alpha[s][t];
      }
      for (std::size_t t = 0; t < s_len; ++t) lc.alpha[s][t] /= zsum;
      for (std::size_t i = 0; i < h; ++i) {
        double acc = 0.0;
        for (std::size_t t = 0; t < s_len; ++t) acc += lc.alpha[s][t] * lc.v[t][i];
        lc.attn[s][i] = acc;
      }
    }
    for (std::size_t s = 0; s < s_len; ++s) {
      affine(tensor_span(lay, p, kAttnOutW), tensor_span(lay, p, kAttnOutB), lc.attn[s], out);
      for (std::size_t i = 0; i < h; ++i) r[i] = c.h[l][s][i] + out[i];
      layer_norm(r, tensor_span(lay, p, kAttnNormW), tensor_span(lay, p, kAttnNormB),
                 lc.u[s], lc.xhat1[s], lc.inv_s1[s]);
      affine(tensor_span(lay, p, kFfnInW), tensor_span(lay, p, kFfnInB), lc.u[s], z);
      for (std::size_t i = 0; i < f; ++i) lc.fft[s][i] = std::tanh(z[i]);
      affine(tensor_span(lay, p, kFfnOutW), tensor_span(lay, p, kFfnOutB), lc.fft[s], out);
      for (std::size_t i = 0; i < h; ++i) r[i] = lc.u[s][i] + out[i];
      layer_norm(r, tensor_span(lay, p, kFfnNormW), tensor_span(lay, p, kFfnNormB),
                 c.h[l + 1][s], lc.xhat2[s], lc.inv_s2[s]);
    }
  }

  for (std::size_t s = 0; s < s_len; ++s)
    for (std::size_t i = 0; i < h; ++i) c.pooled[i] += c.h[m.spec.depth][s][i];
  for (double& v : c.pooled) v /= static_cast<double>(s_len);
  affine(tensor_span(m.readout_layout, m.readout, 0),
         tensor_span(m.readout_layout, m.readout, 1), c.pooled, c.logits);
}

void tf_backward_example(const Model& m, std::span<const double> x, const TfCache& c,
                         std::span<const double> dlogits, Gradients& g) {
  const std::size_t h = m.spec.hidden_dim, s_len = m.seq_len, f = m.ffn_dim;
  const double inv_sqrt_h = 1.0 / std::sqrt(static_cast<double>(h));

  std::vector<double> dpooled(h, 0.0);
  affine_backward(tensor_span(m.readout_layout, m.readout, 0), c.pooled, dlogits,
                  tensor_span(m.readout_layout, g.readout, 0),
                  tensor_span(m.readout_layout, g.readout, 1), dpooled);

  std::vector<std::vector<double>> dh(s_len, std::vector<double>(h, 0.0));
  for (std::size_t s = 0; s < s_len; ++s)
    for (std::size_t i = 0; i < h; ++i)
      dh[s][i] = dpooled[i] / static_cast<double>(s_len);

  std::vector<double> dr(h), du(h), dfft(f), dz(f), dattn(h), dout(h);
  std::vector<std::vector<double>> dq(s_len, std::vector<double>(h, 0.0));
  std::vector<std::vector<double>> dk = dq, dv = dq;
  std::vector<double> dalpha(s_len), dscore(s_len);

  for (std::size_t l = m.spec.depth; l-- > 0;) {
    const LayerLayout& lay = m.hidden_layouts[l];
    const std::vector<double>& p = m.hidden[l];
    std::vector<double>& gp = g.hidden[l];
    const TfLayerCache& lc = c.layers[l];

    std::vector<std::vector<double>> dh_in(s_len, std::vector<double>(h, 0.0));
    for (auto& row : dq) std::fill(row.begin(), row.end(), 0.0);
    for (auto& row : dk) std::fill(row.begin(), row.end(), 0.0);
    for (auto& row : dv) std::fill(row.begin(), row.end(), 0.0);

    for (std::size_t s = 0; s < s_len; ++s) {
      // Second LayerNorm.
      layer_norm_backward(dh[s], tensor_span(lay, p, kFfnNormW), lc.xhat2[s],
                          lc.inv_s2[s], tensor_span(lay, gp, kFfnNormW),
                          tensor_span(lay, gp, kFfnNormB), dr);
      // Residual: dr flows to both u and the FFN output.
      du = dr;
      std::fill(dfft.begin(), dfft.end(), 0.0);
      affine_backward(tensor_span(lay, p, kFfnOutW), lc.fft[s], dr,
                      tensor_span(lay, gp, kFfnOutW), tensor_span(lay, gp, kFfnOutB),
                      dfft);
      for (std::size_t i = 0; i < f; ++i)
        dz[i] = dfft[i] * (1.0 - lc.fft[s][i] * lc.fft[s][i]);
      affine_backward(tensor_span(lay, p, kFfnInW), lc.u[s], dz,
                      tensor_span(lay, gp, kFfnInW), tensor_span(lay, gp, kFfnInB), du);
      // First LayerNorm.
      layer_norm_backward(du, tensor_span(lay, p, kAttnNormW), lc.xhat1[s],
                          lc.inv_s1[s], tensor_span(lay, gp, kAttnNormW),
                          tensor_span(lay, gp, kAttnNormB), dr);
      // Residual: dr flows to the layer input and the attention output.
      for (std::size_t i = 0; i < h; ++i) dh_in[s][i] += dr[i];
      std::fill(dattn.begin(), dattn.end(), 0.0);
      affine_backward(tensor_span(lay, p, kAttnOutW), lc.attn[s], dr,
                      tensor_span(lay, gp, kAttnOutW), tensor_span(lay, gp, kAttnOutB),
                      dattn);
      // attn_s = sum_t alpha[s][t] v_t
      for (std::size_t t = 0; t < s_len; ++t) {
        double da = 0.0;
        for (std::size_t i = 0; i < h; ++i) {
          da += dattn[i] * lc.v[t][i];
          dv[t][i] += lc.alpha[s][t] * dattn[i];
        }
        dalpha[t] = da;
      }
      double dot_alpha = 0.0;
      for (std::size_t t = 0; t < s_len; ++t) dot_alpha += lc.alpha[s][t] * dalpha[t];
      for (std::size_t t = 0; t < s_len; ++t)
        dscore[t] = lc.alpha[s][t] * (dalpha[t] - dot_alpha) * inv_sqrt_h;
      for (std::size_t t = 0; t < s_len; ++t)
        for (std::size_t i = 0; i < h; ++i) {
          dq[s][i] += dscore[t] * lc.k[t][i];
          dk[t][i] += dscore[t] * lc.q[s][i];
        }
    }
    for (std::size_t s = 0; s < s_len; ++s) {
      affine_backward(tensor_span(lay, p, kQueryW), c.h[l][s], dq[s],
                      tensor_span(lay, gp, kQueryW), tensor_span(lay, gp, kQueryB),
                      dh_in[s]);
      affine_backward(tensor_span(lay, p, kKeyW), c.h[l][s], dk[s],
                      tensor_span(lay, gp, kKeyW), tensor_span(lay, gp, kKeyB),
                      dh_in[s]);
      affine_backward(tensor_span(lay, p, kValueW), c.h[l][s], dv[s],
                      tensor_span(lay, gp, kValueW), tensor_span(lay, gp, kValueB),
                      dh_in[s]);
    }
    dh = std::move(dh_in);
  }

  for (std::size_t s = 0; s < s_len; ++s)
    affine_backward(tensor_span(m.embed_layout, m.embed, 0),
                    x.subspan(s * m.chunk, m.chunk), dh[s],
                    tensor_span(m.embed_layout, g.embed, 0),
                    tensor_span(m.embed_layout, g.embed, 1), {});
}

Gradients zero_gradients(const Model& m) {
  Gradients g;
  g.embed.assign(m.embed.size(), 0.0);
  g.readout.assign(m.readout.size(), 0.0);
  g.hidden.resize(m.hidden.size());
  for (std::size_t l = 0; l < m.hidden.size(); ++l)
    g.hidden[l].assign(m.hidden[l].size(), 0.0);
  return g;
}

}  // namespace

std::size_t LayerLayout::total_len() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

const TensorInfo& LayerLayout::tensor(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw InvalidInputError("layout has no tensor named '" + std::string(name) + "'");
}

LayerLayout::Resolved LayerLayout::resolve(std::size_t flat_index) const {
  for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
    const TensorInfo& t = tensors[ti];
    if (flat_index < t.offset + t.size()) {
      std::size_t rem = flat_index - t.offset;
      std::vector<std::size_t> idx(t.shape.size(), 0);
      for (std::size_t d = t.shape.size(); d-- > 0;) {
        idx[d] = rem % t.shape[d];
        rem /= t.shape[d];
      }
      return {ti, std::move(idx)};
    }
  }
  throw InvalidInputError("flat index " + std::to_string(flat_index) +
                          " outside layer of length " + std::to_string(total_len()));
}

std::vector<double> flatten(const LayerLayout& layout,
                            const std::vector<TensorValues>& tensors) {
  if (tensors.size() != layout.tensors.size())
    throw ShapeError("flatten: tensor count mismatch");
  std::vector<double> out(layout.total_len(), 0.0);
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const TensorInfo& info = layout.tensors[i];
    const TensorValues& tv = tensors[i];
    if (tv.name != info.name || tv.shape != info.shape)
      throw ShapeError("flatten: tensor '" + tv.name + "' does not match layout");
    if (tv.values.size() != info.size())
      throw ShapeError("flatten: tensor '" + tv.name + "' has wrong length");
    std::copy(tv.values.begin(), tv.values.end(), out.begin() + info.offset);
  }
  return out;
}

std::vector<TensorValues> unflatten(const LayerLayout& layout,
                                    std::span<const double> values) {
  if (values.size() != layout.total_len())
    throw ShapeError("unflatten: vector length " + std::to_string(values.size()) +
                     " does not match layout length " +
                     std::to_string(layout.total_len()));
  std::vector<TensorValues> out;
  out.reserve(layout.tensors.size());
  for (const TensorInfo& info : layout.tensors) {
    TensorValues tv;
    tv.name = info.name;
    tv.shape = info.shape;
    tv.values.assign(values.begin() + info.offset,
                     values.begin() + info.offset + info.size());
    out.push_back(std::move(tv));
  }
  return out;
}

std::string to_string(ModelKind kind) {
  return kind == ModelKind::mlp ? "mlp" : "tiny-transformer";
}

ModelKind model_kind_from_string(std::string_view s) {
  if (s == "mlp") return ModelKind::mlp;
  if (s == "tiny-transformer") return ModelKind::tiny_transformer;
  throw InvalidInputError("unknown model kind '" + std::string(s) + "'");
}

void ModelSpec::validate() const {
  if (input_dim < 1 || hidden_dim < 1 || num_classes < 2 || depth < 1)
    throw InvalidInputError("model spec: dims must be >= 1, classes >= 2, depth >= 1");
}

bool Mask::empty() const {
  for (const auto& layer : hidden)
    for (std::uint8_t b : layer)
      if (b) return false;
  return true;
}

std::size_t Mask::count() const {
  std::size_t n = 0;
  for (const auto& layer : hidden)
    for (std::uint8_t b : layer) n += b ? 1 : 0;
  return n;
}

Model init_model(const ModelSpec& spec) {
  spec.validate();
  Model m;
  m.spec = spec;
  const std::size_t h = spec.hidden_dim;

  if (spec.kind == ModelKind::mlp) {
    m.seq_len = 1;
    m.chunk = spec.input_dim;
    m.embed_layout = make_layout(0, {{"embed.weight", {h, spec.input_dim}, 0},
                                     {"embed.bias", {h}, 0}});
    for (std::size_t l = 0; l < spec.depth; ++l)
      m.hidden_layouts.push_back(make_layout(
          l, {{"dense.weight", {h, h}, 0}, {"dense.bias", {h}, 0}}));
  } else {
    m.seq_len = derive_seq_len(spec.input_dim);
    m.chunk = spec.input_dim / m.seq_len;
    m.ffn_dim = 2 * h;
    m.embed_layout = make_layout(0, {{"embed.weight", {h, m.chunk}, 0},
                                     {"embed.bias", {h}, 0}});
    for (std::size_t l = 0; l < spec.depth; ++l)
      m.hidden_layouts.push_back(make_layout(
          l, {{"attention.query.weight", {h, h}, 0},
              {"attention.query.bias", {h}, 0},
              {"attention.key.weight", {h, h}, 0},
              {"attention.key.bias", {h}, 0},
              {"attention.value.weight", {h, h}, 0},
              {"attention.value.bias", {h}, 0},
              {"attention.output.weight", {h, h}, 0},
              {"attention.output.bias", {h}, 0},
              {"attention.norm.weight", {h}, 0},
              {"attention.norm.bias", {h}, 0},
              {"ffn.in.weight", {m.ffn_dim, h}, 0},
              {"ffn.in.bias", {m.ffn_dim}, 0},
              {"ffn.out.weight", {h, m.ffn_dim}, 0},
              {"ffn.out.bias", {h}, 0},
              {"ffn.norm.weight", {h}, 0},
              {"ffn.norm.bias", {h}, 0}}));
  }
  m.readout_layout = make_layout(0, {{"readout.weight", {spec.num_classes, h}, 0},
                                     {"readout.bias", {spec.num_classes}, 0}});

  // Per-tensor substreams keyed by (block, tensor) so that changing the
  // readout width never perturbs embedding or hidden initialization.
  m.embed.assign(m.embed_layout.total_len(), 0.0);
  for (std::size_t ti = 0; ti < m.embed_layout.tensors.size(); ++ti)
    init_tensor(m.embed_layout.tensors[ti], tensor_span(m.embed_layout, m.embed, ti),
                rng::derive(spec.seed, 0, ti));
  m.hidden.resize(spec.depth);
  for (std::size_t l = 0; l < spec.depth; ++l) {
    m.hidden[l].assign(m.hidden_layouts[l].total_len(), 0.0);
    for (std::size_t ti = 0; ti < m.hidden_layouts[l].tensors.size(); ++ti)
      init_tensor(m.hidden_layouts[l].tensors[ti],
                  tensor_span(m.hidden_layouts[l], m.hidden[l], ti),
                  rng::derive(spec.seed, 1 + l, ti));
  }
  m.readout.assign(m.readout_layout.total_len(), 0.0);
  for (std::size_t ti = 0; ti < m.readout_layout.tensors.size(); ++ti)
    init_tensor(m.readout_layout.tensors[ti],
                tensor_span(m.readout_layout, m.readout, ti),
                rng::derive(spec.seed, 1 + spec.depth, ti));
  return m;
}

ForwardResult forward_loss(const Model& model, const Batch& batch) {
  check_batch(model, batch);
  ForwardResult res;
  res.logits = linalg::Matrix(batch.n, model.spec.num_classes);
  double total = 0.0;
  if (model.spec.kind == ModelKind::mlp) {
    MlpCache cache;
    for (std::size_t e = 0; e < batch.n; ++e) {
      mlp_forward_example(model, {batch.x.data() + e * batch.dim, batch.dim}, cache);
      total += softmax_ce(cache.logits, batch.y[e], cache.probs);
      std::copy(cache.logits.begin(), cache.logits.end(), res.logits.row(e).begin());
    }
  } else {
    TfCache cache;
    for (std::size_t e = 0; e < batch.n; ++e) {
      tf_forward_example(model, {batch.x.data() + e * batch.dim, batch.dim}, cache);
      total += softmax_ce(cache.logits, batch.y[e], cache.probs);
      std::copy(cache.logits.begin(), cache.logits.end(), res.logits.row(e).begin());
    }
  }
  res.loss = total / static_cast<double>(batch.n);
  return res;
}

BackwardResult backward(const Model& model, const Batch& batch) {
  check_batch(model, batch);
  BackwardResult res;
  res.grads = zero_gradients(model);
  const std::size_t c = model.spec.num_classes;
  const double inv_n = 1.0 / static_cast<double>(batch.n);
  std::vector<double> dlogits(c);
  double total = 0.0;

  if (model.spec.kind == ModelKind::mlp) {
    MlpCache cache;
    for (std::size_t e = 0; e < batch.n; ++e) {
      std::span<const double> x{batch.x.data() + e * batch.dim, batch.dim};
      mlp_forward_example(model, x, cache);
      total += softmax_ce(cache.logits, batch.y[e], cache.probs);
      for (std::size_t i = 0; i < c; ++i)
        dlogits[i] = (cache.probs[i] -
                      (static_cast<int>(i) == batch.y[e] ? 1.0 : 0.0)) * inv_n;
      mlp_backward_example(model, x, cache, dlogits, res.grads);
    }
  } else {
    TfCache cache;
    for (std::size_t e = 0; e < batch.n; ++e) {
      std::span<const double> x{batch.x.data() + e * batch.dim, batch.dim};
      tf_forward_example(model, x, cache);
      total += softmax_ce(cache.logits, batch.y[e], cache.probs);
      for (std::size_t i = 0; i < c; ++i)
        dlogits[i] = (cache.probs[i] -
                      (static_cast<int>(i) == batch.y[e] ? 1.0 : 0.0)) * inv_n;
      tf_backward_example(model, x, cache, dlogits, res.grads);
    }
  }
  res.loss = total * inv_n;
  return res;
}

void apply_mask(Model& model, const Mask& mask) {
  if (mask.hidden.empty()) {
    model.mask = Mask{};
    return;
  }
  if (mask.hidden.size() != model.hidden.size())
    throw ShapeError("apply_mask: layer count mismatch");
  for (std::size_t l = 0; l < mask.hidden.size(); ++l)
    if (mask.hidden[l].size() != model.hidden[l].size())
      throw ShapeError("apply_mask: length mismatch at layer " + std::to_string(l));
  model.mask = mask;
  for (std::size_t l = 0; l < mask.hidden.size(); ++l)
    for (std::size_t i = 0; i < mask.hidden[l].size(); ++i)
      if (mask.hidden[l][i]) model.hidden[l][i] = 0.0;
}

}  // namespace itss::nn
