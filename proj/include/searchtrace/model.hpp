#pragma once

// Encoder-decoder Transformer over token ids, templated on the scalar type
// (float for training, double for gradient checks). Layout:
//
//   shared token embedding -> L encoder layers -> final RMSNorm
//   shared token embedding -> L decoder layers -> final RMSNorm -> logits
//
// Every layer is pre-normalized. Attention blocks rotate queries and keys
// with RoPE before the dot product; cross-attention keys use encoder
// positions while its queries use decoder positions. The feed-forward block
// is gated: down( silu(gate(x)) * up(x) ) with hidden width 4x the model
// width. No biases, no dropout.
//
// The backward pass is written by hand and checked against central finite
// differences; see tests/test_gradcheck.cpp.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "searchtrace/common.hpp"

namespace searchtrace {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

struct ModelConfig {
  int layers{2};
  int heads{2};
  int head_dim{16};
  int vocab_size{0};
  double rope_base{10000.0};
  int max_seq_len{16384};
  // Optional declared width; 0 means "derive as heads * head_dim".
  int width_override{0};

  int width() const { return heads * head_dim; }
  int ff_width() const { return 4 * width(); }

  void validate() const {
    if (layers < 1) throw ConfigError("model: layers must be >= 1");
    if (heads < 1) throw ConfigError("model: heads must be >= 1");
    if (head_dim < 1) throw ConfigError("model: head_dim must be >= 1");
    if (head_dim % 2 != 0) throw ConfigError("model: head_dim must be even");
    if (vocab_size < 2) throw ConfigError("model: vocab_size must be >= 2");
    if (max_seq_len < 1) throw ConfigError("model: max_seq_len must be >= 1");
    if (rope_base <= 1.0) throw ConfigError("model: rope_base must be > 1");
    if (width_override != 0 && width_override != width()) {
      throw ConfigError("model: declared width does not equal heads * head_dim");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename Scalar>
struct AttentionWeights {
  Mat<Scalar> wq, wk, wv, wo;  // all [width x width]
};

template <typename Scalar>
struct FeedForwardWeights {
  Mat<Scalar> gate, up;  // [width x ff_width]
  Mat<Scalar> down;      // [ff_width x width]
};

template <typename Scalar>
struct EncoderLayerParams {
  Mat<Scalar> norm_attn, norm_ff;  // [1 x width] RMSNorm scales
  AttentionWeights<Scalar> attn;
  FeedForwardWeights<Scalar> ff;
};

template <typename Scalar>
struct DecoderLayerParams {
  Mat<Scalar> norm_self, norm_cross, norm_ff;
  AttentionWeights<Scalar> self_attn, cross_attn;
  FeedForwardWeights<Scalar> ff;
};

template <typename Scalar>
struct ModelParameters {
  ModelConfig config;
  Mat<Scalar> embedding;  // [vocab x width], shared by encoder and decoder
  std::vector<EncoderLayerParams<Scalar>> encoder;
  std::vector<DecoderLayerParams<Scalar>> decoder;
  Mat<Scalar> enc_final_norm, dec_final_norm;  // [1 x width]
  Mat<Scalar> output_proj;                     // [width x vocab]
};

// Visits every parameter matrix in the documented serialization order:
// embedding; per encoder layer norm_attn, wq, wk, wv, wo, norm_ff, gate, up,
// down; enc_final_norm; per decoder layer norm_self, self qkvo, norm_cross,
// cross qkvo, norm_ff, gate, up, down; dec_final_norm; output_proj.
template <typename Scalar, typename Fn>
void for_each_param(ModelParameters<Scalar>& p, Fn&& fn) {
  fn("embedding", p.embedding);
  for (std::size_t l = 0; l < p.encoder.size(); ++l) {
    auto& layer = p.encoder[l];
    const std::string prefix = "enc." + std::to_string(l) + ".";
    fn(prefix + "norm_attn", layer.norm_attn);
    fn(prefix + "attn.wq", layer.attn.wq);
    fn(prefix + "attn.wk", layer.attn.wk);
    fn(prefix + "attn.wv", layer.attn.wv);
    fn(prefix + "attn.wo", layer.attn.wo);
    fn(prefix + "norm_ff", layer.norm_ff);
    fn(prefix + "ff.gate", layer.ff.gate);
    fn(prefix + "ff.up", layer.ff.up);
    fn(prefix + "ff.down", layer.ff.down);
  }
  fn("enc_final_norm", p.enc_final_norm);
  for (std::size_t l = 0; l < p.decoder.size(); ++l) {
    auto& layer = p.decoder[l];
    const std::string prefix = "dec." + std::to_string(l) + ".";
    fn(prefix + "norm_self", layer.norm_self);
    fn(prefix + "self.wq", layer.self_attn.wq);
    fn(prefix + "self.wk", layer.self_attn.wk);
    fn(prefix + "self.wv", layer.self_attn.wv);
    fn(prefix + "self.wo", layer.self_attn.wo);
    fn(prefix + "norm_cross", layer.norm_cross);
    fn(prefix + "cross.wq", layer.cross_attn.wq);
    fn(prefix + "cross.wk", layer.cross_attn.wk);
    fn(prefix + "cross.wv", layer.cross_attn.wv);
    fn(prefix + "cross.wo", layer.cross_attn.wo);
    fn(prefix + "norm_ff", layer.norm_ff);
    fn(prefix + "ff.gate", layer.ff.gate);
    fn(prefix + "ff.up", layer.ff.up);
    fn(prefix + "ff.down", layer.ff.down);
  }
  fn("dec_final_norm", p.dec_final_norm);
  fn("output_proj", p.output_proj);
}

template <typename Scalar, typename Fn>
void for_each_param(const ModelParameters<Scalar>& p, Fn&& fn) {
  for_each_param(const_cast<ModelParameters<Scalar>&>(p),
                 [&](const std::string& name, Mat<Scalar>& m) {
                   fn(name, static_cast<const Mat<Scalar>&>(m));
                 });
}

template <typename Scalar>
std::vector<Mat<Scalar>*> param_list(ModelParameters<Scalar>& p) {
  std::vector<Mat<Scalar>*> list;
  for_each_param(p, [&](const std::string&, Mat<Scalar>& m) {
    list.push_back(&m);
  });
  return list;
}

// Closed-form parameter count from shape arithmetic alone.
inline std::int64_t parameter_count(const ModelConfig& config) {
  const std::int64_t w = config.width();
  const std::int64_t v = config.vocab_size;
  const std::int64_t enc_layer = 16 * w * w + 2 * w;
  const std::int64_t dec_layer = 20 * w * w + 3 * w;
  return 2 * v * w + 2 * w +
         config.layers * (enc_layer + dec_layer);
}

namespace detail {

template <typename Scalar>
void allocate_attention(AttentionWeights<Scalar>& a, int w) {
  a.wq.setZero(w, w);
  a.wk.setZero(w, w);
  a.wv.setZero(w, w);
  a.wo.setZero(w, w);
}

template <typename Scalar>
void allocate_ff(FeedForwardWeights<Scalar>& f, int w, int ffw) {
  f.gate.setZero(w, ffw);
  f.up.setZero(w, ffw);
  f.down.setZero(ffw, w);
}

}  // namespace detail

template <typename Scalar>
ModelParameters<Scalar> allocate_params(const ModelConfig& config) {
  config.validate();
  const int w = config.width();
  const int ffw = config.ff_width();
  ModelParameters<Scalar> p;
  p.config = config;
  p.embedding.setZero(config.vocab_size, w);
  p.encoder.resize(static_cast<std::size_t>(config.layers));
  p.decoder.resize(static_cast<std::size_t>(config.layers));
  for (auto& layer : p.encoder) {
    layer.norm_attn.setOnes(1, w);
    layer.norm_ff.setOnes(1, w);
    detail::allocate_attention(layer.attn, w);
    detail::allocate_ff(layer.ff, w, ffw);
  }
  for (auto& layer : p.decoder) {
    layer.norm_self.setOnes(1, w);
    layer.norm_cross.setOnes(1, w);
    layer.norm_ff.setOnes(1, w);
    detail::allocate_attention(layer.self_attn, w);
    detail::allocate_attention(layer.cross_attn, w);
    detail::allocate_ff(layer.ff, w, ffw);
  }
  p.enc_final_norm.setOnes(1, w);
  p.dec_final_norm.setOnes(1, w);
  p.output_proj.setZero(w, config.vocab_size);
  return p;
}

// Scaled random initialization: weight matrices ~ N(0, 1/width), norm scales
// at one. Deterministic given the seed; matrices are filled row-major in the
// documented traversal order.
template <typename Scalar>
ModelParameters<Scalar> init_params(const ModelConfig& config,
                                    std::uint64_t seed) {
  ModelParameters<Scalar> p = allocate_params<Scalar>(config);
  Rng rng(seed);
  const double std_dev = 1.0 / std::sqrt(static_cast<double>(config.width()));
  for_each_param(p, [&](const std::string& name, Mat<Scalar>& m) {
    if (name.find("norm") != std::string::npos) return;  // scales stay at 1
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        m(r, c) = static_cast<Scalar>(rng.normal() * std_dev);
      }
    }
  });
  return p;
}

template <typename Scalar>
ModelParameters<Scalar> zeros_like(const ModelParameters<Scalar>& p) {
  ModelParameters<Scalar> z = allocate_params<Scalar>(p.config);
  for_each_param(z, [](const std::string&, Mat<Scalar>& m) { m.setZero(); });
  return z;
}

// ---------------------------------------------------------------------------
// RoPE

// In-place pairwise rotation: feature pair (2p, 2p+1) of row t rotates by
// angle positions[t] * base^(-2p / dim). Position 0 is the identity and all
// rotations preserve the norm. Accepts column blocks of row-major matrices.
template <typename Scalar>
void apply_rope(Eigen::Ref<Mat<Scalar>, 0, Eigen::OuterStride<>> block,
                const std::vector<int>& positions, double base,
                bool inverse = false) {
  const Eigen::Index dim = block.cols();
  if (dim % 2 != 0) throw ConfigError("rope: feature dimension must be even");
  for (Eigen::Index t = 0; t < block.rows(); ++t) {
    const double pos = static_cast<double>(positions[static_cast<std::size_t>(t)]);
    for (Eigen::Index p = 0; p < dim / 2; ++p) {
      const double freq =
          std::pow(base, -2.0 * static_cast<double>(p) / static_cast<double>(dim));
      double angle = pos * freq;
      if (inverse) angle = -angle;
      const Scalar cos_a = static_cast<Scalar>(std::cos(angle));
      const Scalar sin_a = static_cast<Scalar>(std::sin(angle));
      const Scalar x0 = block(t, 2 * p);
      const Scalar x1 = block(t, 2 * p + 1);
      block(t, 2 * p) = x0 * cos_a - x1 * sin_a;
      block(t, 2 * p + 1) = x0 * sin_a + x1 * cos_a;
    }
  }
}

template <typename Scalar>
Mat<Scalar> apply_rope_copy(const Mat<Scalar>& vectors,
                            const std::vector<int>& positions, double base) {
  Mat<Scalar> out = vectors;
  apply_rope<Scalar>(out, positions, base);
  return out;
}

namespace detail {

inline std::vector<int> iota_positions(int n) {
  std::vector<int> pos(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) pos[static_cast<std::size_t>(i)] = i;
  return pos;
}

// ---------------------------------------------------------------------------
// RMSNorm

inline constexpr double kNormEps = 1e-6;

template <typename Scalar>
struct NormCache {
  Mat<Scalar> input;              // [T x w]
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_rms;  // [T]
};

template <typename Scalar>
Mat<Scalar> rmsnorm_forward(const Mat<Scalar>& x, const Mat<Scalar>& scale,
                            NormCache<Scalar>* cache) {
  const auto w = static_cast<double>(x.cols());
  Mat<Scalar> out(x.rows(), x.cols());
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_rms(x.rows());
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    const double ms = static_cast<double>(x.row(t).squaredNorm()) / w;
    const Scalar r = static_cast<Scalar>(1.0 / std::sqrt(ms + kNormEps));
    inv_rms(t) = r;
    out.row(t) = x.row(t).cwiseProduct(scale.row(0)) * r;
  }
  if (cache != nullptr) {
    cache->input = x;
    cache->inv_rms = std::move(inv_rms);
  }
  return out;
}

template <typename Scalar>
void rmsnorm_backward(const NormCache<Scalar>& cache, const Mat<Scalar>& scale,
                      const Mat<Scalar>& dout, Mat<Scalar>& dx,
                      Mat<Scalar>& dscale) {
  const auto w = static_cast<Scalar>(cache.input.cols());
  dx.resize(cache.input.rows(), cache.input.cols());
  for (Eigen::Index t = 0; t < cache.input.rows(); ++t) {
    const Scalar r = cache.inv_rms(t);
    const auto x = cache.input.row(t);
    const auto g = scale.row(0);
    const auto dy = dout.row(t);
    dscale.row(0) += dy.cwiseProduct(x) * r;
    const Scalar dot = dy.cwiseProduct(g).cwiseProduct(x).sum();
    dx.row(t) = dy.cwiseProduct(g) * r - x * (r * r * r * dot / w);
  }
}

// ---------------------------------------------------------------------------
// Attention

template <typename Scalar>
struct AttentionCache {
  NormCache<Scalar> norm;
  Mat<Scalar> normed;            // [Tq x w]
  Mat<Scalar> q, k, v;           // q,k post-RoPE; [Tq x w], [Tk x w]
  std::vector<Mat<Scalar>> probs;  // per head, [Tq x Tk]
  Mat<Scalar> ctx;               // [Tq x w]
};

// One attention block: pre-norm on the query stream, projections, RoPE,
// scaled dot-product with optional causal mask, value mix, output projection.
// `kv_input` is the normed query stream itself for self-attention or the
// encoder output for cross-attention.
template <typename Scalar>
Mat<Scalar> attention_forward(const Mat<Scalar>& x,
                              const Mat<Scalar>* kv_input,
                              const AttentionWeights<Scalar>& weights,
                              const Mat<Scalar>& norm_scale,
                              const std::vector<int>& q_positions,
                              const std::vector<int>& k_positions, bool causal,
                              const ModelConfig& config,
                              AttentionCache<Scalar>* cache) {
  const int heads = config.heads;
  const int hd = config.head_dim;
  const Scalar scale = static_cast<Scalar>(1.0 / std::sqrt(double(hd)));

  AttentionCache<Scalar> local;
  AttentionCache<Scalar>& c = cache != nullptr ? *cache : local;

  c.normed = rmsnorm_forward(x, norm_scale, &c.norm);
  const Mat<Scalar>& kv = kv_input != nullptr ? *kv_input : c.normed;

  c.q.noalias() = c.normed * weights.wq;
  c.k.noalias() = kv * weights.wk;
  c.v.noalias() = kv * weights.wv;
  for (int h = 0; h < heads; ++h) {
    apply_rope<Scalar>(c.q.middleCols(h * hd, hd), q_positions, config.rope_base);
    apply_rope<Scalar>(c.k.middleCols(h * hd, hd), k_positions, config.rope_base);
  }

  const Eigen::Index tq = x.rows();
  const Eigen::Index tk = c.k.rows();
  c.ctx.setZero(tq, config.width());
  c.probs.assign(static_cast<std::size_t>(heads), Mat<Scalar>());
  for (int h = 0; h < heads; ++h) {
    Mat<Scalar> scores(tq, tk);
    scores.noalias() =
        c.q.middleCols(h * hd, hd) * c.k.middleCols(h * hd, hd).transpose();
    scores *= scale;
    Mat<Scalar>& probs = c.probs[static_cast<std::size_t>(h)];
    probs.resize(tq, tk);
    for (Eigen::Index i = 0; i < tq; ++i) {
      const Eigen::Index limit = causal ? std::min<Eigen::Index>(i + 1, tk) : tk;
      auto row = scores.row(i).head(limit);
      const Scalar max_v = row.maxCoeff();
      probs.row(i).head(limit) = (row.array() - max_v).exp();
      const Scalar sum = probs.row(i).head(limit).sum();
      probs.row(i).head(limit) /= sum;
      if (limit < tk) probs.row(i).tail(tk - limit).setZero();
    }
    c.ctx.middleCols(h * hd, hd).noalias() = probs * c.v.middleCols(h * hd, hd);
  }
  return c.ctx * weights.wo;
}

// Backward for the block above. dkv collects the gradient that flows into
// the key/value input when it is distinct from the query stream (cross
// attention); for self-attention pass nullptr and the kv gradient folds into
// dx through the shared norm.
template <typename Scalar>
void attention_backward(const Mat<Scalar>& dout,
                        const AttentionCache<Scalar>& c,
                        const AttentionWeights<Scalar>& weights,
                        const Mat<Scalar>& norm_scale,
                        const std::vector<int>& q_positions,
                        const std::vector<int>& k_positions,
                        const Mat<Scalar>* kv_input, const ModelConfig& config,
                        AttentionWeights<Scalar>& dweights,
                        Mat<Scalar>& dnorm_scale, Mat<Scalar>& dx,
                        Mat<Scalar>* dkv) {
  const int heads = config.heads;
  const int hd = config.head_dim;
  const Scalar scale = static_cast<Scalar>(1.0 / std::sqrt(double(hd)));
  const bool self_attention = kv_input == nullptr;
  const Mat<Scalar>& kv = self_attention ? c.normed : *kv_input;

  dweights.wo.noalias() += c.ctx.transpose() * dout;
  Mat<Scalar> dctx = dout * weights.wo.transpose();

  Mat<Scalar> dq(c.q.rows(), c.q.cols());
  Mat<Scalar> dk = Mat<Scalar>::Zero(c.k.rows(), c.k.cols());
  Mat<Scalar> dv = Mat<Scalar>::Zero(c.v.rows(), c.v.cols());
  for (int h = 0; h < heads; ++h) {
    const auto& probs = c.probs[static_cast<std::size_t>(h)];
    const auto v_h = c.v.middleCols(h * hd, hd);
    const auto dctx_h = dctx.middleCols(h * hd, hd);

    dv.middleCols(h * hd, hd).noalias() += probs.transpose() * dctx_h;
    Mat<Scalar> dprobs(probs.rows(), probs.cols());
    dprobs.noalias() = dctx_h * v_h.transpose();

    // Softmax backward row by row (masked entries have probs == 0).
    Mat<Scalar> dscores(probs.rows(), probs.cols());
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
      const Scalar dot = probs.row(i).cwiseProduct(dprobs.row(i)).sum();
      dscores.row(i) = probs.row(i).cwiseProduct(
          (dprobs.row(i).array() - dot).matrix());
    }
    dscores *= scale;

    dq.middleCols(h * hd, hd).noalias() = dscores * c.k.middleCols(h * hd, hd);
    dk.middleCols(h * hd, hd).noalias() +=
        dscores.transpose() * c.q.middleCols(h * hd, hd);
  }

  // Undo the rotations on the gradients.
  for (int h = 0; h < heads; ++h) {
    apply_rope<Scalar>(dq.middleCols(h * hd, hd), q_positions, config.rope_base,
                       /*inverse=*/true);
    apply_rope<Scalar>(dk.middleCols(h * hd, hd), k_positions, config.rope_base,
                       /*inverse=*/true);
  }

  dweights.wq.noalias() += c.normed.transpose() * dq;
  dweights.wk.noalias() += kv.transpose() * dk;
  dweights.wv.noalias() += kv.transpose() * dv;

  Mat<Scalar> dnormed = dq * weights.wq.transpose();
  if (self_attention) {
    dnormed.noalias() += dk * weights.wk.transpose();
    dnormed.noalias() += dv * weights.wv.transpose();
  } else if (dkv != nullptr) {
    dkv->noalias() += dk * weights.wk.transpose();
    dkv->noalias() += dv * weights.wv.transpose();
  }
  rmsnorm_backward(c.norm, norm_scale, dnormed, dx, dnorm_scale);
}

// ---------------------------------------------------------------------------
// Gated feed-forward

template <typename Scalar>
struct FeedForwardCache {
  NormCache<Scalar> norm;
  Mat<Scalar> normed;    // [T x w]
  Mat<Scalar> gate_pre;  // [T x ffw]
  Mat<Scalar> up;        // [T x ffw]
  Mat<Scalar> act;       // silu(gate_pre) .* up
};

template <typename Scalar>
Scalar sigmoid(Scalar z) {
  return static_cast<Scalar>(1) / (static_cast<Scalar>(1) + std::exp(-z));
}

template <typename Scalar>
Mat<Scalar> feedforward_forward(const Mat<Scalar>& x,
                                const FeedForwardWeights<Scalar>& weights,
                                const Mat<Scalar>& norm_scale,
                                FeedForwardCache<Scalar>* cache) {
  FeedForwardCache<Scalar> local;
  FeedForwardCache<Scalar>& c = cache != nullptr ? *cache : local;
  c.normed = rmsnorm_forward(x, norm_scale, &c.norm);
  c.gate_pre.noalias() = c.normed * weights.gate;
  c.up.noalias() = c.normed * weights.up;
  c.act = c.gate_pre.unaryExpr([](Scalar z) { return z * sigmoid(z); })
              .cwiseProduct(c.up);
  return c.act * weights.down;
}

template <typename Scalar>
void feedforward_backward(const Mat<Scalar>& dout,
                          const FeedForwardCache<Scalar>& c,
                          const FeedForwardWeights<Scalar>& weights,
                          const Mat<Scalar>& norm_scale,
                          FeedForwardWeights<Scalar>& dweights,
                          Mat<Scalar>& dnorm_scale, Mat<Scalar>& dx) {
  dweights.down.noalias() += c.act.transpose() * dout;
  Mat<Scalar> dact = dout * weights.down.transpose();

  Mat<Scalar> silu = c.gate_pre.unaryExpr([](Scalar z) { return z * sigmoid(z); });
  Mat<Scalar> dup = silu.cwiseProduct(dact);
  Mat<Scalar> dgate_pre = c.gate_pre.unaryExpr([](Scalar z) {
    const Scalar s = sigmoid(z);
    return s * (static_cast<Scalar>(1) + z * (static_cast<Scalar>(1) - s));
  });
  dgate_pre = dgate_pre.cwiseProduct(c.up).cwiseProduct(dact);

  dweights.gate.noalias() += c.normed.transpose() * dgate_pre;
  dweights.up.noalias() += c.normed.transpose() * dup;
  Mat<Scalar> dnormed = dgate_pre * weights.gate.transpose();
  dnormed.noalias() += dup * weights.up.transpose();
  rmsnorm_backward(c.norm, norm_scale, dnormed, dx, dnorm_scale);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward passes

namespace detail {

template <typename Scalar>
struct EncoderLayerCache {
  Mat<Scalar> attn_input;  // residual stream entering the layer
  AttentionCache<Scalar> attn;
  Mat<Scalar> ff_input;
  FeedForwardCache<Scalar> ff;
};

template <typename Scalar>
struct DecoderLayerCache {
  Mat<Scalar> self_input;
  AttentionCache<Scalar> self_attn;
  Mat<Scalar> cross_input;
  AttentionCache<Scalar> cross_attn;
  Mat<Scalar> ff_input;
  FeedForwardCache<Scalar> ff;
};

template <typename Scalar>
struct EncoderCache {
  std::vector<int> ids;
  std::vector<EncoderLayerCache<Scalar>> layers;
  NormCache<Scalar> final_norm;
  Mat<Scalar> output;  // [n x w]
};

template <typename Scalar>
struct DecoderCache {
  std::vector<int> ids;
  std::vector<DecoderLayerCache<Scalar>> layers;
  NormCache<Scalar> final_norm;
  Mat<Scalar> normed;  // input to output projection
  Mat<Scalar> logits;  // [m x vocab]
};

template <typename Scalar>
Mat<Scalar> embed(const ModelParameters<Scalar>& params,
                  const std::vector<int>& ids) {
  const auto& config = params.config;
  if (ids.empty()) throw ConfigError("model: empty token sequence");
  if (static_cast<int>(ids.size()) > config.max_seq_len) {
    throw ConfigError("model: sequence exceeds max_seq_len");
  }
  Mat<Scalar> x(static_cast<Eigen::Index>(ids.size()), config.width());
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const int id = ids[t];
    if (id < 0 || id >= config.vocab_size) {
      throw ConfigError("model: token id out of range");
    }
    x.row(static_cast<Eigen::Index>(t)) = params.embedding.row(id);
  }
  return x;
}

template <typename Scalar>
Mat<Scalar> encode_cached(const ModelParameters<Scalar>& params,
                          const std::vector<int>& ids,
                          EncoderCache<Scalar>* cache) {
  const auto& config = params.config;
  Mat<Scalar> x = embed(params, ids);
  const auto positions = iota_positions(static_cast<int>(ids.size()));
  if (cache != nullptr) {
    cache->ids = ids;
    cache->layers.resize(params.encoder.size());
  }
  for (std::size_t l = 0; l < params.encoder.size(); ++l) {
    const auto& layer = params.encoder[l];
    EncoderLayerCache<Scalar>* lc =
        cache != nullptr ? &cache->layers[l] : nullptr;
    if (lc != nullptr) lc->attn_input = x;
    x += attention_forward<Scalar>(x, nullptr, layer.attn, layer.norm_attn,
                                   positions, positions, /*causal=*/false,
                                   config, lc != nullptr ? &lc->attn : nullptr);
    if (lc != nullptr) lc->ff_input = x;
    x += feedforward_forward<Scalar>(x, layer.ff, layer.norm_ff,
                                     lc != nullptr ? &lc->ff : nullptr);
  }
  Mat<Scalar> out = rmsnorm_forward<Scalar>(
      x, params.enc_final_norm, cache != nullptr ? &cache->final_norm : nullptr);
  if (cache != nullptr) cache->output = out;
  return out;
}

template <typename Scalar>
Mat<Scalar> decode_cached(const ModelParameters<Scalar>& params,
                          const Mat<Scalar>& encoder_output,
                          const std::vector<int>& ids,
                          DecoderCache<Scalar>* cache) {
  const auto& config = params.config;
  Mat<Scalar> x = embed(params, ids);
  const auto positions = iota_positions(static_cast<int>(ids.size()));
  const auto enc_positions =
      iota_positions(static_cast<int>(encoder_output.rows()));
  if (cache != nullptr) {
    cache->ids = ids;
    cache->layers.resize(params.decoder.size());
  }
  for (std::size_t l = 0; l < params.decoder.size(); ++l) {
    const auto& layer = params.decoder[l];
    DecoderLayerCache<Scalar>* lc =
        cache != nullptr ? &cache->layers[l] : nullptr;
    if (lc != nullptr) lc->self_input = x;
    x += attention_forward<Scalar>(x, nullptr, layer.self_attn,
                                   layer.norm_self, positions, positions,
                                   /*causal=*/true, config,
                                   lc != nullptr ? &lc->self_attn : nullptr);
    if (lc != nullptr) lc->cross_input = x;
    x += attention_forward<Scalar>(x, &encoder_output, layer.cross_attn,
                                   layer.norm_cross, positions, enc_positions,
                                   /*causal=*/false, config,
                                   lc != nullptr ? &lc->cross_attn : nullptr);
    if (lc != nullptr) lc->ff_input = x;
    x += feedforward_forward<Scalar>(x, layer.ff, layer.norm_ff,
                                     lc != nullptr ? &lc->ff : nullptr);
  }
  Mat<Scalar> normed = rmsnorm_forward<Scalar>(
      x, params.dec_final_norm, cache != nullptr ? &cache->final_norm : nullptr);
  Mat<Scalar> logits = normed * params.output_proj;
  if (cache != nullptr) {
    cache->normed = normed;
    cache->logits = logits;
  }
  return logits;
}

}  // namespace detail

// One output vector per prompt token.
template <typename Scalar>
Mat<Scalar> encode(const ModelParameters<Scalar>& params,
                   const std::vector<int>& prompt_ids) {
  return detail::encode_cached<Scalar>(params, prompt_ids, nullptr);
}

// Logits for every prefix position; position i sees prefix positions <= i
// and the full encoder output. The prefix must begin with bos (id 0).
template <typename Scalar>
Mat<Scalar> decode(const ModelParameters<Scalar>& params,
                   const Mat<Scalar>& encoder_output,
                   const std::vector<int>& prefix_ids) {
  if (prefix_ids.empty() || prefix_ids.front() != 0) {
    throw ConfigError("model: decoder prefix must begin with bos");
  }
  return detail::decode_cached<Scalar>(params, encoder_output, prefix_ids,
                                       nullptr);
}

// ---------------------------------------------------------------------------
// Teacher-forced loss and reverse-mode gradients for one prompt/response
// pair. The decoder consumes response[0..m-2] and predicts response[1..m-1].
// Returns the SUM over positions of next-token negative log-likelihood; when
// `grads` is non-null the gradient of (grad_weight * that sum) accumulates
// into it.
template <typename Scalar>
double backward_example(const ModelParameters<Scalar>& params,
                        const std::vector<int>& prompt_ids,
                        const std::vector<int>& response_ids,
                        Scalar grad_weight, ModelParameters<Scalar>* grads) {
  const auto& config = params.config;
  if (response_ids.size() < 2) {
    throw TrainingError("model: response must hold at least bos and eos");
  }
  if (response_ids.front() != 0) {
    throw TrainingError("model: response must begin with bos");
  }

  detail::EncoderCache<Scalar> enc_cache;
  detail::DecoderCache<Scalar> dec_cache;
  const Mat<Scalar> enc_out =
      detail::encode_cached<Scalar>(params, prompt_ids, &enc_cache);
  const std::vector<int> prefix(response_ids.begin(), response_ids.end() - 1);
  const Mat<Scalar> logits =
      detail::decode_cached<Scalar>(params, enc_out, prefix, &dec_cache);

  const Eigen::Index m = logits.rows();
  Mat<Scalar> probs(m, config.vocab_size);
  double nll_sum = 0.0;
  for (Eigen::Index t = 0; t < m; ++t) {
    const int target = response_ids[static_cast<std::size_t>(t) + 1];
    if (target < 0 || target >= config.vocab_size) {
      throw TrainingError("model: target id out of range");
    }
    const Scalar max_v = logits.row(t).maxCoeff();
    probs.row(t) = (logits.row(t).array() - max_v).exp();
    const Scalar sum = probs.row(t).sum();
    probs.row(t) /= sum;
    nll_sum += -(static_cast<double>(logits(t, target)) -
                 static_cast<double>(max_v) - std::log(static_cast<double>(sum)));
  }
  if (!std::isfinite(nll_sum)) {
    throw TrainingError("model: non-finite loss");
  }
  if (grads == nullptr) return nll_sum;

  // d(loss)/d(logits) = grad_weight * (softmax - onehot).
  Mat<Scalar> dlogits = probs;
  for (Eigen::Index t = 0; t < m; ++t) {
    dlogits(t, response_ids[static_cast<std::size_t>(t) + 1]) -= Scalar(1);
  }
  dlogits *= grad_weight;

  const auto dec_positions = detail::iota_positions(static_cast<int>(m));
  const auto enc_positions =
      detail::iota_positions(static_cast<int>(enc_out.rows()));

  grads->output_proj.noalias() += dec_cache.normed.transpose() * dlogits;
  Mat<Scalar> dnormed = dlogits * params.output_proj.transpose();
  Mat<Scalar> dx;
  detail::rmsnorm_backward<Scalar>(dec_cache.final_norm, params.dec_final_norm,
                                   dnormed, dx, grads->dec_final_norm);

  Mat<Scalar> denc = Mat<Scalar>::Zero(enc_out.rows(), enc_out.cols());
  Mat<Scalar> dsub;
  for (std::size_t l = params.decoder.size(); l-- > 0;) {
    const auto& layer = params.decoder[l];
    auto& layer_grads = grads->decoder[l];
    auto& lc = dec_cache.layers[l];

    detail::feedforward_backward<Scalar>(dx, lc.ff, layer.ff, layer.norm_ff,
                                         layer_grads.ff, layer_grads.norm_ff,
                                         dsub);
    dx += dsub;
    detail::attention_backward<Scalar>(
        dx, lc.cross_attn, layer.cross_attn, layer.norm_cross, dec_positions,
        enc_positions, &enc_out, config, layer_grads.cross_attn,
        layer_grads.norm_cross, dsub, &denc);
    dx += dsub;
    detail::attention_backward<Scalar>(
        dx, lc.self_attn, layer.self_attn, layer.norm_self, dec_positions,
        dec_positions, nullptr, config, layer_grads.self_attn,
        layer_grads.norm_self, dsub, nullptr);
    dx += dsub;
  }
  for (Eigen::Index t = 0; t < dx.rows(); ++t) {
    grads->embedding.row(prefix[static_cast<std::size_t>(t)]) += dx.row(t);
  }

  detail::rmsnorm_backward<Scalar>(enc_cache.final_norm, params.enc_final_norm,
                                   denc, dx, grads->enc_final_norm);
  for (std::size_t l = params.encoder.size(); l-- > 0;) {
    const auto& layer = params.encoder[l];
    auto& layer_grads = grads->encoder[l];
    auto& lc = enc_cache.layers[l];
    detail::feedforward_backward<Scalar>(dx, lc.ff, layer.ff, layer.norm_ff,
                                         layer_grads.ff, layer_grads.norm_ff,
                                         dsub);
    dx += dsub;
    detail::attention_backward<Scalar>(
        dx, lc.attn, layer.attn, layer.norm_attn, enc_positions, enc_positions,
        nullptr, config, layer_grads.attn, layer_grads.norm_attn, dsub,
        nullptr);
    dx += dsub;
  }
  for (Eigen::Index t = 0; t < dx.rows(); ++t) {
    grads->embedding.row(prompt_ids[static_cast<std::size_t>(t)]) += dx.row(t);
  }
  return nll_sum;
}

// ---------------------------------------------------------------------------
// Incremental decoding with key/value caches. step() must reproduce the
// batched decode() logits for the same prefix.

template <typename Scalar>
class IncrementalDecoder {
 public:
  IncrementalDecoder(const ModelParameters<Scalar>& params,
                     Mat<Scalar> encoder_output, int max_len)
      : params_(params),
        enc_out_(std::move(encoder_output)),
        max_len_(max_len) {
    const auto& config = params.config;
    const int w = config.width();
    const int hd = config.head_dim;
    const auto enc_positions =
        detail::iota_positions(static_cast<int>(enc_out_.rows()));
    layers_.resize(params.decoder.size());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      auto& state = layers_[l];
      state.self_k.setZero(max_len, w);
      state.self_v.setZero(max_len, w);
      state.cross_k.noalias() = enc_out_ * params.decoder[l].cross_attn.wk;
      state.cross_v.noalias() = enc_out_ * params.decoder[l].cross_attn.wv;
      for (int h = 0; h < config.heads; ++h) {
        apply_rope<Scalar>(state.cross_k.middleCols(h * hd, hd), enc_positions,
                           config.rope_base);
      }
    }
  }

  int position() const { return pos_; }

  // Feeds one token and returns the next-token logits.
  RowVec<Scalar> step(int token_id) {
    const auto& config = params_.config;
    const int hd = config.head_dim;
    const Scalar scale = static_cast<Scalar>(1.0 / std::sqrt(double(hd)));
    if (pos_ >= max_len_) throw ConfigError("decoder: cache capacity exceeded");
    if (token_id < 0 || token_id >= config.vocab_size) {
      throw ConfigError("model: token id out of range");
    }
    const std::vector<int> my_pos{pos_};

    RowVec<Scalar> x = params_.embedding.row(token_id);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& layer = params_.decoder[l];
      auto& state = layers_[l];

      // Masked self-attention over the cached prefix plus this position.
      RowVec<Scalar> normed = rmsnorm_row(x, layer.norm_self);
      RowVec<Scalar> q = normed * layer.self_attn.wq;
      state.self_k.row(pos_).noalias() = normed * layer.self_attn.wk;
      state.self_v.row(pos_).noalias() = normed * layer.self_attn.wv;
      Mat<Scalar> q_m = q, k_m = state.self_k.row(pos_);
      for (int h = 0; h < config.heads; ++h) {
        apply_rope<Scalar>(q_m.middleCols(h * hd, hd), my_pos, config.rope_base);
        apply_rope<Scalar>(k_m.middleCols(h * hd, hd), my_pos, config.rope_base);
      }
      state.self_k.row(pos_) = k_m;
      x += attend_row(q_m, state.self_k.topRows(pos_ + 1),
                      state.self_v.topRows(pos_ + 1), layer.self_attn.wo,
                      scale, config);

      // Cross-attention over the precomputed encoder keys/values.
      normed = rmsnorm_row(x, layer.norm_cross);
      q = normed * layer.cross_attn.wq;
      q_m = q;
      for (int h = 0; h < config.heads; ++h) {
        apply_rope<Scalar>(q_m.middleCols(h * hd, hd), my_pos, config.rope_base);
      }
      x += attend_row(q_m, state.cross_k, state.cross_v, layer.cross_attn.wo,
                      scale, config);

      // Feed-forward.
      normed = rmsnorm_row(x, layer.norm_ff);
      RowVec<Scalar> gate_pre = normed * layer.ff.gate;
      RowVec<Scalar> up = normed * layer.ff.up;
      RowVec<Scalar> act =
          gate_pre.unaryExpr([](Scalar z) { return z * detail::sigmoid(z); })
              .cwiseProduct(up);
      x += act * layer.ff.down;
    }
    RowVec<Scalar> normed = rmsnorm_row(x, params_.dec_final_norm);
    ++pos_;
    return normed * params_.output_proj;
  }

 private:
  struct LayerState {
    Mat<Scalar> self_k, self_v;
    Mat<Scalar> cross_k, cross_v;
  };

  static RowVec<Scalar> rmsnorm_row(const RowVec<Scalar>& x,
                                    const Mat<Scalar>& scale) {
    const double ms =
        static_cast<double>(x.squaredNorm()) / static_cast<double>(x.cols());
    const Scalar r = static_cast<Scalar>(1.0 / std::sqrt(ms + detail::kNormEps));
    return x.cwiseProduct(scale.row(0)) * r;
  }

  static RowVec<Scalar> attend_row(const Mat<Scalar>& q, const Mat<Scalar>& keys,
                                   const Mat<Scalar>& values,
                                   const Mat<Scalar>& wo, Scalar scale,
                                   const ModelConfig& config) {
    const int hd = config.head_dim;
    RowVec<Scalar> ctx(config.width());
    for (int h = 0; h < config.heads; ++h) {
      RowVec<Scalar> scores =
          q.row(0).middleCols(h * hd, hd) *
          keys.middleCols(h * hd, hd).transpose();
      scores *= scale;
      const Scalar max_v = scores.maxCoeff();
      scores = (scores.array() - max_v).exp();
      scores /= scores.sum();
      ctx.middleCols(h * hd, hd).noalias() =
          scores * values.middleCols(h * hd, hd);
    }
    return ctx * wo;
  }

  const ModelParameters<Scalar>& params_;
  Mat<Scalar> enc_out_;
  int max_len_;
  std::vector<LayerState> layers_;
  int pos_ = 0;
};

}  // namespace searchtrace
