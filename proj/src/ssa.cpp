#include "s2a/ssa.hpp"

#include <cmath>

#include "s2a/common.hpp"

namespace s2a {

void SsaConfig::validate() const {
  if (d < 1 || d_k < 1 || d_v < 1) throw ValidationError("ssa dims must be positive");
  if (d_v != d)
    throw ValidationError("ssa residual wiring requires d_v == d");
  if (r < 1) throw ValidationError("ssa reduction rate must be >= 1");
  if (h < 1 || w < 1 || h % r != 0 || w % r != 0)
    throw ValidationError("token grid must be divisible by the reduction rate");
  if (ffn_expansion < 1) throw ValidationError("ffn expansion must be >= 1");
  if (sam_reduction < 1) throw ValidationError("sam reduction must be >= 1");
}

std::map<std::string, Tensor> SsaParams::named(const std::string& prefix) const {
  return {
      {prefix + "w_q_a", w_q_a},       {prefix + "w_q_e", w_q_e},
      {prefix + "w_k", w_k},           {prefix + "w_v", w_v},
      {prefix + "dw_k", dw_k},         {prefix + "dw_v", dw_v},
      {prefix + "ffn_w1", ffn_w1},     {prefix + "ffn_b1", ffn_b1},
      {prefix + "ffn_w2", ffn_w2},     {prefix + "ffn_b2", ffn_b2},
      {prefix + "sam_mlp_w1", sam_mlp_w1}, {prefix + "sam_mlp_w2", sam_mlp_w2},
      {prefix + "sam_conv", sam_conv}, {prefix + "split_a", split_a},
      {prefix + "split_e", split_e},
  };
}

SsaParams init_ssa_params(const SsaConfig& cfg, Rng& rng, double stddev) {
  cfg.validate();
  const int d = cfg.d, dk = cfg.d_k, dv = cfg.d_v;
  const int hidden = cfg.d_v * cfg.ffn_expansion;
  SsaParams p;
  p.w_q_a = Tensor::randn({d, dk}, rng, stddev, true);
  p.w_q_e = Tensor::randn({d, dk}, rng, stddev, true);
  p.w_k = Tensor::randn({d, dk}, rng, stddev, true);
  p.w_v = Tensor::randn({d, dv}, rng, stddev, true);
  p.dw_k = Tensor::randn({dk, cfg.r, cfg.r}, rng, stddev, true);
  p.dw_v = Tensor::randn({dv, cfg.r, cfg.r}, rng, stddev, true);
  p.ffn_w1 = Tensor::randn({dv, hidden}, rng, stddev, true);
  p.ffn_b1 = Tensor::zeros({1, hidden}, true);
  p.ffn_w2 = Tensor::randn({hidden, d}, rng, stddev, true);
  p.ffn_b2 = Tensor::zeros({1, d}, true);
  p.sam_mlp_w1 = Tensor::randn({2 * d, cfg.sam_hidden()}, rng, stddev, true);
  p.sam_mlp_w2 = Tensor::randn({cfg.sam_hidden(), 2 * d}, rng, stddev, true);
  p.sam_conv = Tensor::randn({1, 2, 7, 7}, rng, stddev, true);
  p.split_a = Tensor::randn({2 * d, d}, rng, stddev, true);
  p.split_e = Tensor::randn({2 * d, d}, rng, stddev, true);
  return p;
}

Tensor stack_features(const StreamPair& pair) {
  if (pair.a.shape() != pair.e.shape())
    throw ValidationError("stream shapes must match");
  const int n = pair.a.dim(0), d = pair.a.dim(1);
  Tensor a3 = reshape(pair.a, {n, d, 1});
  Tensor e3 = reshape(pair.e, {n, d, 1});
  return concat({a3, e3}, 2);
}

namespace {

// [n, c] token matrix -> reduced [n / r^2, c] via the per-channel strided
// depthwise kernel, going through the NCHW grid layout.
Tensor reduce_tokens(const Tensor& tokens, const Tensor& kernels,
                     const SsaConfig& cfg) {
  const int c = tokens.dim(1);
  Tensor grid = reshape(transpose2d(tokens), {1, c, cfg.h, cfg.w});
  Tensor reduced = depthwise_conv2d(grid, kernels, cfg.r);
  const int m = (cfg.h / cfg.r) * (cfg.w / cfg.r);
  return transpose2d(reshape(reduced, {c, m}));
}

Tensor ffn_apply(const Tensor& x, const SsaParams& p) {
  Tensor hidden = relu(add(matmul(x, p.ffn_w1), p.ffn_b1));
  return add(matmul(hidden, p.ffn_w2), p.ffn_b2);
}

}  // namespace

void spatial_reduce(const Tensor& f, const SsaConfig& cfg, const SsaParams& params,
                    Tensor& keys, Tensor& values) {
  cfg.validate();
  if (f.shape() != Shape{cfg.tokens(), cfg.d, 2})
    throw ValidationError("stacked features must be n x d x 2");
  std::vector<Tensor> slices = split(f, 2, {1, 1});
  std::vector<Tensor> k_parts, v_parts;
  for (const Tensor& s : slices) {
    Tensor tokens = reshape(s, {cfg.tokens(), cfg.d});
    k_parts.push_back(reduce_tokens(matmul(tokens, params.w_k), params.dw_k, cfg));
    v_parts.push_back(reduce_tokens(matmul(tokens, params.w_v), params.dw_v, cfg));
  }
  keys = concat(k_parts, 0);
  values = concat(v_parts, 0);
}

StreamPair cross_attention(const StreamPair& pair, const Tensor& keys,
                           const Tensor& values, const SsaConfig& cfg,
                           const SsaParams& params) {
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(cfg.d_k));
  auto attend = [&](const Tensor& q_proj) {
    Tensor q = matmul(q_proj, transpose2d(keys));
    Tensor weights = softmax(scale(q, inv_sqrt_dk), 1);
    return matmul(weights, values);
  };
  StreamPair out;
  out.a = attend(matmul(pair.a, params.w_q_a));
  out.e = attend(matmul(pair.e, params.w_q_e));
  return out;
}

StreamPair residual_ffn(const StreamPair& pair_in, const StreamPair& attn_out,
                        const SsaParams& params) {
  StreamPair out;
  Tensor a_tilde = add(pair_in.a, attn_out.a);
  Tensor e_tilde = add(pair_in.e, attn_out.e);
  out.a = add(a_tilde, ffn_apply(a_tilde, params));
  out.e = add(e_tilde, ffn_apply(e_tilde, params));
  return out;
}

Tensor sam_attention(const Tensor& f_tilde, const SsaConfig& cfg,
                     const SsaParams& params) {
  const int n = cfg.tokens();
  if (f_tilde.shape() != Shape{n, 2 * cfg.d})
    throw ValidationError("sam input must have 2d channels");

  // Channel attention: global token pooling through the shared MLP.
  Tensor avg = reshape(mean_axis(f_tilde, 0), {1, 2 * cfg.d});
  Tensor mx = reshape(max_axis(f_tilde, 0), {1, 2 * cfg.d});
  auto mlp = [&](const Tensor& x) {
    return matmul(relu(matmul(x, params.sam_mlp_w1)), params.sam_mlp_w2);
  };
  Tensor m_c = sigmoid(add(mlp(avg), mlp(mx)));
  Tensor f_c = mul(f_tilde, m_c);

  // Spatial attention: channel mean/max maps through the 7x7 kernel.
  Tensor mean_map = reshape(mean_axis(f_c, 1), {1, 1, cfg.h, cfg.w});
  Tensor max_map = reshape(max_axis(f_c, 1), {1, 1, cfg.h, cfg.w});
  Tensor m_s = sigmoid(conv2d(concat({mean_map, max_map}, 1), params.sam_conv, 1, 3));
  return mul(f_c, reshape(m_s, {n, 1}));
}

StreamPair split_project(const Tensor& f_s, const SsaParams& params) {
  StreamPair out;
  out.a = matmul(f_s, params.split_a);
  out.e = matmul(f_s, params.split_e);
  return out;
}

StreamPair ssa_forward(const StreamPair& pair, const SsaConfig& cfg,
                       const SsaParams& params) {
  cfg.validate();
  if (pair.a.shape() != Shape{cfg.tokens(), cfg.d} || pair.e.shape() != pair.a.shape())
    throw ValidationError("ssa input shapes do not match config");
  Tensor f = stack_features(pair);
  Tensor keys, values;
  spatial_reduce(f, cfg, params, keys, values);
  StreamPair attn = cross_attention(pair, keys, values, cfg, params);
  StreamPair bar = residual_ffn(pair, attn, params);
  Tensor f_tilde = concat({bar.a, bar.e}, 1);
  Tensor f_s = sam_attention(f_tilde, cfg, params);
  return split_project(f_s, params);
}

}  // namespace s2a
