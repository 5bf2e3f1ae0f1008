#include <cmath>
#include <vector>

#include "doctest.h"
#include "s2a/common.hpp"
#include "s2a/gradcheck.hpp"
#include "s2a/ssa.hpp"

using namespace s2a;

namespace {

SsaConfig make_cfg(int d, int r, int h, int w) {
  SsaConfig cfg;
  cfg.d = d;
  cfg.d_k = d;
  cfg.d_v = d;
  cfg.r = r;
  cfg.h = h;
  cfg.w = w;
  return cfg;
}

void fill_zero(Tensor& t) {
  for (double& v : t.values()) v = 0.0;
}

// Relabels parameters so that swapping the input streams swaps the output
// streams. P is the channel-half swap permutation on the 2d concatenated
// features.
SsaParams swap_streams(const SsaParams& p, int d) {
  auto clone = [](const Tensor& t) {
    return Tensor::from_data(t.shape(), t.values(), true);
  };
  auto permute_rows = [&](const Tensor& t) {
    const int rows = t.dim(0), cols = t.dim(1);
    std::vector<double> out(t.values().size());
    for (int i = 0; i < rows; ++i) {
      const int src = (i + d) % (2 * d);
      for (int j = 0; j < cols; ++j)
        out[static_cast<std::size_t>(i) * cols + j] =
            t.values()[static_cast<std::size_t>(src) * cols + j];
    }
    return Tensor::from_data(t.shape(), std::move(out), true);
  };
  auto permute_cols = [&](const Tensor& t) {
    const int rows = t.dim(0), cols = t.dim(1);
    std::vector<double> out(t.values().size());
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j)
        out[static_cast<std::size_t>(i) * cols + j] =
            t.values()[static_cast<std::size_t>(i) * cols + (j + d) % (2 * d)];
    return Tensor::from_data(t.shape(), std::move(out), true);
  };

  SsaParams q;
  q.w_q_a = clone(p.w_q_e);
  q.w_q_e = clone(p.w_q_a);
  q.w_k = clone(p.w_k);
  q.w_v = clone(p.w_v);
  q.dw_k = clone(p.dw_k);
  q.dw_v = clone(p.dw_v);
  q.ffn_w1 = clone(p.ffn_w1);
  q.ffn_b1 = clone(p.ffn_b1);
  q.ffn_w2 = clone(p.ffn_w2);
  q.ffn_b2 = clone(p.ffn_b2);
  q.sam_mlp_w1 = permute_rows(p.sam_mlp_w1);
  q.sam_mlp_w2 = permute_cols(p.sam_mlp_w2);
  q.sam_conv = clone(p.sam_conv);
  q.split_a = permute_rows(p.split_e);
  q.split_e = permute_rows(p.split_a);
  return q;
}

// Straight-line dense recomputation of the whole block with plain loops,
// sharing no code with the implementation.
struct DenseOracle {
  using Mat = std::vector<std::vector<double>>;

  static Mat to_mat(const Tensor& t) {
    const int r = t.dim(0), c = t.dim(1);
    Mat m(r, std::vector<double>(c));
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m[i][j] = t.values()[static_cast<std::size_t>(i) * c + j];
    return m;
  }

  static Mat mm(const Mat& a, const Mat& b) {
    Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t k = 0; k < b.size(); ++k)
        for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
    return out;
  }

  static Mat reduce(const Mat& proj, const Tensor& kernels, int h, int w, int r) {
    const int c = static_cast<int>(proj[0].size());
    const int hr = h / r, wr = w / r;
    Mat out(static_cast<std::size_t>(hr) * wr, std::vector<double>(c, 0.0));
    const auto& kv = kernels.values();
    for (int ch = 0; ch < c; ++ch)
      for (int oy = 0; oy < hr; ++oy)
        for (int ox = 0; ox < wr; ++ox) {
          double acc = 0.0;
          for (int ky = 0; ky < r; ++ky)
            for (int kx = 0; kx < r; ++kx)
              acc += proj[static_cast<std::size_t>(oy * r + ky) * w + ox * r + kx][ch] *
                     kv[(static_cast<std::size_t>(ch) * r + ky) * r + kx];
          out[static_cast<std::size_t>(oy) * wr + ox][ch] = acc;
        }
    return out;
  }

  static Mat attend(const Mat& q, const Mat& keys, const Mat& values, int d_k) {
    const double s = 1.0 / std::sqrt(static_cast<double>(d_k));
    Mat out(q.size(), std::vector<double>(values[0].size(), 0.0));
    for (std::size_t i = 0; i < q.size(); ++i) {
      std::vector<double> scores(keys.size());
      double mx = -1e300;
      for (std::size_t m = 0; m < keys.size(); ++m) {
        double dot = 0.0;
        for (std::size_t k = 0; k < q[0].size(); ++k) dot += q[i][k] * keys[m][k];
        scores[m] = dot * s;
        mx = std::max(mx, scores[m]);
      }
      double z = 0.0;
      for (double& v : scores) {
        v = std::exp(v - mx);
        z += v;
      }
      for (std::size_t m = 0; m < keys.size(); ++m)
        for (std::size_t j = 0; j < values[0].size(); ++j)
          out[i][j] += scores[m] / z * values[m][j];
    }
    return out;
  }

  static Mat run(const Mat& a, const Mat& e, const SsaConfig& cfg, const SsaParams& p,
                 Mat& out_e) {
    const int n = cfg.tokens(), d = cfg.d;
    const Mat wk = to_mat(p.w_k), wv = to_mat(p.w_v);
    Mat keys = reduce(mm(a, wk), p.dw_k, cfg.h, cfg.w, cfg.r);
    const Mat keys_e = reduce(mm(e, wk), p.dw_k, cfg.h, cfg.w, cfg.r);
    keys.insert(keys.end(), keys_e.begin(), keys_e.end());
    Mat values = reduce(mm(a, wv), p.dw_v, cfg.h, cfg.w, cfg.r);
    const Mat values_e = reduce(mm(e, wv), p.dw_v, cfg.h, cfg.w, cfg.r);
    values.insert(values.end(), values_e.begin(), values_e.end());

    const Mat attn_a = attend(mm(a, to_mat(p.w_q_a)), keys, values, cfg.d_k);
    const Mat attn_e = attend(mm(e, to_mat(p.w_q_e)), keys, values, cfg.d_k);

    auto ffn = [&](Mat x) {
      const Mat w1 = to_mat(p.ffn_w1), w2 = to_mat(p.ffn_w2);
      const auto& b1 = p.ffn_b1.values();
      const auto& b2 = p.ffn_b2.values();
      Mat hid = mm(x, w1);
      for (auto& row : hid)
        for (std::size_t j = 0; j < row.size(); ++j) row[j] = std::max(0.0, row[j] + b1[j]);
      Mat out = mm(hid, w2);
      for (std::size_t i = 0; i < out.size(); ++i)
        for (std::size_t j = 0; j < out[0].size(); ++j) out[i][j] += b2[j] + x[i][j];
      return out;
    };
    Mat bar_a(n, std::vector<double>(d)), bar_e(n, std::vector<double>(d));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) {
        bar_a[i][j] = a[i][j] + attn_a[i][j];
        bar_e[i][j] = e[i][j] + attn_e[i][j];
      }
    bar_a = ffn(bar_a);
    bar_e = ffn(bar_e);

    Mat f(n, std::vector<double>(2 * d));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) {
        f[i][j] = bar_a[i][j];
        f[i][d + j] = bar_e[i][j];
      }

    // Channel attention.
    std::vector<double> avg(2 * d, 0.0), mx(2 * d, -1e300);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < 2 * d; ++j) {
        avg[j] += f[i][j] / n;
        mx[j] = std::max(mx[j], f[i][j]);
      }
    auto mlp = [&](const std::vector<double>& x) {
      const Mat w1 = to_mat(p.sam_mlp_w1), w2 = to_mat(p.sam_mlp_w2);
      std::vector<double> hid(w1[0].size(), 0.0);
      for (std::size_t j = 0; j < hid.size(); ++j) {
        for (int k = 0; k < 2 * d; ++k) hid[j] += x[k] * w1[k][j];
        hid[j] = std::max(0.0, hid[j]);
      }
      std::vector<double> out(2 * d, 0.0);
      for (int j = 0; j < 2 * d; ++j)
        for (std::size_t k = 0; k < hid.size(); ++k) out[j] += hid[k] * w2[k][j];
      return out;
    };
    const std::vector<double> m1 = mlp(avg), m2 = mlp(mx);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < 2 * d; ++j)
        f[i][j] *= 1.0 / (1.0 + std::exp(-(m1[j] + m2[j])));

    // Spatial attention: 7x7 conv over the mean/max channel maps.
    std::vector<double> mean_map(n, 0.0), max_map(n, -1e300);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < 2 * d; ++j) {
        mean_map[i] += f[i][j] / (2 * d);
        max_map[i] = std::max(max_map[i], f[i][j]);
      }
    const auto& cw = p.sam_conv.values();  // [1, 2, 7, 7]
    for (int i = 0; i < n; ++i) {
      const int y = i / cfg.w, x = i % cfg.w;
      double acc = 0.0;
      for (int c = 0; c < 2; ++c)
        for (int ky = 0; ky < 7; ++ky)
          for (int kx = 0; kx < 7; ++kx) {
            const int sy = y + ky - 3, sx = x + kx - 3;
            if (sy < 0 || sy >= cfg.h || sx < 0 || sx >= cfg.w) continue;
            const double src = c == 0 ? mean_map[sy * cfg.w + sx] : max_map[sy * cfg.w + sx];
            acc += src * cw[(static_cast<std::size_t>(c) * 7 + ky) * 7 + kx];
          }
      const double gate = 1.0 / (1.0 + std::exp(-acc));
      for (int j = 0; j < 2 * d; ++j) f[i][j] *= gate;
    }

    out_e = mm(f, to_mat(p.split_e));
    return mm(f, to_mat(p.split_a));
  }
};

}  // namespace

TEST_CASE("config validation") {
  CHECK_THROWS_AS(make_cfg(4, 3, 4, 4).validate(), ValidationError);
  SsaConfig bad = make_cfg(4, 2, 4, 4);
  bad.d_v = 5;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  CHECK_NOTHROW(make_cfg(4, 2, 4, 4).validate());
}

TEST_CASE("shape preservation across random configs") {
  Rng rng(100);
  for (int trial = 0; trial < 12; ++trial) {
    const int d = 2 + static_cast<int>(rng.below(5));
    const int r = 1 + static_cast<int>(rng.below(2));
    const int h = r * (1 + static_cast<int>(rng.below(3)));
    const int w = r * (1 + static_cast<int>(rng.below(3)));
    SsaConfig cfg = make_cfg(d, r, h, w);
    SsaParams params = init_ssa_params(cfg, rng);
    StreamPair in{Tensor::randn({cfg.tokens(), d}, rng, 1.0),
                  Tensor::randn({cfg.tokens(), d}, rng, 1.0)};
    StreamPair out = ssa_forward(in, cfg, params);
    CHECK(out.a.shape() == Shape{cfg.tokens(), d});
    CHECK(out.e.shape() == Shape{cfg.tokens(), d});
  }
}

TEST_CASE("stacked feature layout") {
  Rng rng(101);
  Tensor a = Tensor::randn({6, 3}, rng);
  Tensor e = Tensor::randn({6, 3}, rng);
  Tensor f = stack_features({a, e});
  REQUIRE(f.shape() == Shape{6, 3, 2});
  for (int i = 0; i < 6; ++i)
    for (int c = 0; c < 3; ++c) {
      CHECK(f.values()[(i * 3 + c) * 2 + 0] == a.values()[i * 3 + c]);
      CHECK(f.values()[(i * 3 + c) * 2 + 1] == e.values()[i * 3 + c]);
    }
}

TEST_CASE("spatial reduction token count and r=1 identity") {
  Rng rng(102);
  SsaConfig cfg = make_cfg(3, 2, 4, 6);
  SsaParams params = init_ssa_params(cfg, rng);
  StreamPair in{Tensor::randn({cfg.tokens(), 3}, rng),
                Tensor::randn({cfg.tokens(), 3}, rng)};
  Tensor keys, values;
  spatial_reduce(stack_features(in), cfg, params, keys, values);
  CHECK(keys.shape() == Shape{2 * cfg.tokens() / (cfg.r * cfg.r), cfg.d_k});
  CHECK(values.shape() == Shape{2 * cfg.tokens() / (cfg.r * cfg.r), cfg.d_v});

  // r = 1 with unit kernels: reduction is the identity, so the joint key set
  // is exactly the two projected streams stacked.
  SsaConfig cfg1 = make_cfg(3, 1, 4, 6);
  SsaParams p1 = init_ssa_params(cfg1, rng);
  for (double& v : p1.dw_k.values()) v = 1.0;
  for (double& v : p1.dw_v.values()) v = 1.0;
  spatial_reduce(stack_features(in), cfg1, p1, keys, values);
  Tensor expect_a = matmul(in.a, p1.w_k);
  Tensor expect_e = matmul(in.e, p1.w_k);
  for (int i = 0; i < cfg1.tokens(); ++i)
    for (int j = 0; j < cfg1.d_k; ++j) {
      CHECK(keys.values()[i * cfg1.d_k + j] == expect_a.values()[i * cfg1.d_k + j]);
      CHECK(keys.values()[(cfg1.tokens() + i) * cfg1.d_k + j] ==
            expect_e.values()[i * cfg1.d_k + j]);
    }
}

TEST_CASE("attention over identical values is a no-op mixture") {
  Rng rng(103);
  SsaConfig cfg = make_cfg(4, 2, 4, 4);
  SsaParams params = init_ssa_params(cfg, rng);
  StreamPair in{Tensor::randn({16, 4}, rng), Tensor::randn({16, 4}, rng)};
  Tensor keys = Tensor::randn({8, 4}, rng);
  // All value rows identical: attention output must equal that row exactly
  // up to the convex-combination rounding.
  std::vector<double> row{0.3, -1.2, 0.5, 2.0};
  std::vector<double> vals;
  for (int i = 0; i < 8; ++i) vals.insert(vals.end(), row.begin(), row.end());
  Tensor values = Tensor::from_data({8, 4}, vals);
  StreamPair out = cross_attention(in, keys, values, cfg, params);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 4; ++j) {
      CHECK(out.a.values()[i * 4 + j] == doctest::Approx(row[j]).epsilon(1e-12));
      CHECK(out.e.values()[i * 4 + j] == doctest::Approx(row[j]).epsilon(1e-12));
    }
}

TEST_CASE("shared FFN treats both streams identically") {
  Rng rng(104);
  SsaConfig cfg = make_cfg(4, 2, 4, 4);
  SsaParams params = init_ssa_params(cfg, rng);
  Tensor x = Tensor::randn({16, 4}, rng);
  Tensor z = Tensor::zeros({16, 4});
  StreamPair out = residual_ffn({x, x}, {z, z}, params);
  CHECK(out.a.values() == out.e.values());
}

TEST_CASE("neutral SAM weights scale features by exactly 1/4") {
  Rng rng(105);
  SsaConfig cfg = make_cfg(3, 2, 4, 4);
  SsaParams params = init_ssa_params(cfg, rng);
  fill_zero(params.sam_mlp_w1);
  fill_zero(params.sam_mlp_w2);
  fill_zero(params.sam_conv);
  Tensor f = Tensor::randn({16, 6}, rng);
  Tensor out = sam_attention(f, cfg, params);
  for (std::size_t i = 0; i < f.values().size(); ++i)
    CHECK(out.values()[i] == 0.25 * f.values()[i]);
}

TEST_CASE("zero split weights produce exactly zero corrections") {
  Rng rng(106);
  SsaConfig cfg = make_cfg(4, 2, 4, 4);
  SsaParams params = init_ssa_params(cfg, rng);
  fill_zero(params.split_a);
  fill_zero(params.split_e);
  StreamPair in{Tensor::randn({16, 4}, rng), Tensor::randn({16, 4}, rng)};
  StreamPair out = ssa_forward(in, cfg, params);
  for (double v : out.a.values()) CHECK(v == 0.0);
  for (double v : out.e.values()) CHECK(v == 0.0);
}

TEST_CASE("selector weights recover the input stream exactly") {
  // Disable attention (zero W_V), the FFN (zero weights and biases), and the
  // SAM gates (neutral 1/4 scaling), and make the split projections plain
  // half-selectors: the block must return exactly input / 4.
  Rng rng(107);
  SsaConfig cfg = make_cfg(3, 2, 4, 4);
  SsaParams params = init_ssa_params(cfg, rng);
  fill_zero(params.w_v);
  fill_zero(params.ffn_w1);
  fill_zero(params.ffn_w2);
  fill_zero(params.sam_mlp_w1);
  fill_zero(params.sam_mlp_w2);
  fill_zero(params.sam_conv);
  fill_zero(params.split_a);
  fill_zero(params.split_e);
  for (int j = 0; j < 3; ++j) {
    params.split_a.values()[j * 3 + j] = 1.0;           // rows 0..d-1 = I
    params.split_e.values()[(3 + j) * 3 + j] = 1.0;     // rows d..2d-1 = I
  }
  StreamPair in{Tensor::randn({16, 3}, rng), Tensor::randn({16, 3}, rng)};
  StreamPair out = ssa_forward(in, cfg, params);
  for (std::size_t i = 0; i < in.a.values().size(); ++i) {
    CHECK(out.a.values()[i] == 0.25 * in.a.values()[i]);
    CHECK(out.e.values()[i] == 0.25 * in.e.values()[i]);
  }
}

TEST_CASE("full block matches the dense straight-line oracle") {
  Rng rng(108);
  for (int trial = 0; trial < 3; ++trial) {
    SsaConfig cfg = make_cfg(4, 2, 4, 4);
    SsaParams params = init_ssa_params(cfg, rng, 0.3);
    StreamPair in{Tensor::randn({16, 4}, rng), Tensor::randn({16, 4}, rng)};
    StreamPair out = ssa_forward(in, cfg, params);

    DenseOracle::Mat oe;
    DenseOracle::Mat oa = DenseOracle::run(DenseOracle::to_mat(in.a),
                                           DenseOracle::to_mat(in.e), cfg, params, oe);
    for (int i = 0; i < 16; ++i)
      for (int j = 0; j < 4; ++j) {
        CHECK(out.a.values()[i * 4 + j] == doctest::Approx(oa[i][j]).epsilon(1e-10));
        CHECK(out.e.values()[i * 4 + j] == doctest::Approx(oe[i][j]).epsilon(1e-10));
      }
  }
}

TEST_CASE("stream-swap symmetry") {
  Rng rng(109);
  SsaConfig cfg = make_cfg(4, 2, 4, 4);
  SsaParams params = init_ssa_params(cfg, rng, 0.3);
  StreamPair in{Tensor::randn({16, 4}, rng), Tensor::randn({16, 4}, rng)};
  StreamPair direct = ssa_forward(in, cfg, params);
  StreamPair swapped = ssa_forward({in.e, in.a}, cfg, swap_streams(params, 4));
  for (std::size_t i = 0; i < direct.a.values().size(); ++i) {
    CHECK(swapped.e.values()[i] == doctest::Approx(direct.a.values()[i]).epsilon(1e-12));
    CHECK(swapped.a.values()[i] == doctest::Approx(direct.e.values()[i]).epsilon(1e-12));
  }
}

TEST_CASE("full block gradient check") {
  Rng rng(110);
  SsaConfig cfg = make_cfg(4, 2, 4, 4);
  SsaParams params = init_ssa_params(cfg, rng, 0.2);
  Tensor a = Tensor::randn({16, 4}, rng, 1.0, true);
  Tensor e = Tensor::randn({16, 4}, rng, 1.0, true);
  std::vector<Tensor> leaves{a, e};
  for (auto& [name, t] : params.named("p.")) leaves.push_back(t);
  GradCheckReport report = grad_check(
      [&](const std::vector<Tensor>&) {
        StreamPair out = ssa_forward({a, e}, cfg, params);
        return mean_all(mul(add(out.a, out.e), add(out.a, out.e)));
      },
      leaves);
  CHECK(report.pass);
  CHECK(report.max_rel_error <= 1e-4);
}
