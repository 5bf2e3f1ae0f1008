#pragma once

#include <algorithm>
#include <map>
#include <string>

#include "s2a/tensor.hpp"

namespace s2a {

/// Dimensions for one spectral-spatial aggregation block over an h x w token
/// grid (n = h*w tokens of dimension d). The residual wiring requires the
/// value dimension to equal the feature dimension.
struct SsaConfig {
  int d = 4;
  int d_k = 4;
  int d_v = 4;
  int r = 2;              // spatial reduction rate
  int ffn_expansion = 4;
  int sam_reduction = 4;
  int h = 4;
  int w = 4;

  int tokens() const { return h * w; }
  int sam_hidden() const { return std::max(1, 2 * d / sam_reduction); }
  void validate() const;
};

/// All learnable weights of one SSA block.
struct SsaParams {
  Tensor w_q_a, w_q_e;      // d x d_k query projections per stream
  Tensor w_k, w_v;          // shared d x d_k / d x d_v projections of f
  Tensor dw_k, dw_v;        // depthwise r x r stride-r reduction kernels
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Tensor sam_mlp_w1, sam_mlp_w2;  // shared channel-attention MLP
  Tensor sam_conv;                // 1 x 2 x 7 x 7 spatial-attention kernel
  Tensor split_a, split_e;        // 2d x d output projections

  std::map<std::string, Tensor> named(const std::string& prefix) const;
};

struct StreamPair {
  Tensor a;  // n x d spatial-stream tokens
  Tensor e;  // n x d spectral-stream tokens
};

SsaParams init_ssa_params(const SsaConfig& cfg, Rng& rng, double stddev = 0.1);

/// n x d x 2 stack; the third axis indexes {a, e} in that order.
Tensor stack_features(const StreamPair& pair);

/// Projects each stream slice by W_K / W_V, applies the depthwise stride-r
/// reduction on the h x w grid, and concatenates the two reduced slices along
/// the token axis into the joint key/value set of 2*(n/r^2) tokens.
void spatial_reduce(const Tensor& f, const SsaConfig& cfg, const SsaParams& params,
                    Tensor& keys, Tensor& values);

/// Attn1/Attn2 over the shared joint key/value set, scores scaled by
/// 1/sqrt(d_k).
StreamPair cross_attention(const StreamPair& pair, const Tensor& keys,
                           const Tensor& values, const SsaConfig& cfg,
                           const SsaParams& params);

/// a_bar = (a + attn_a) + FFN(a + attn_a), same for e; the FFN is shared.
StreamPair residual_ffn(const StreamPair& pair_in, const StreamPair& attn_out,
                        const SsaParams& params);

/// CBAM-style channel-then-spatial attention on the 2d-channel token map.
Tensor sam_attention(const Tensor& f_tilde, const SsaConfig& cfg,
                     const SsaParams& params);

/// Two independent 1x1 (per-token) projections back to the stream widths.
StreamPair split_project(const Tensor& f_s, const SsaParams& params);

/// Full block: stack -> reduce -> cross-attend -> residual+FFN -> SAM -> split.
StreamPair ssa_forward(const StreamPair& pair, const SsaConfig& cfg,
                       const SsaParams& params);

}  // namespace s2a
