// Copyright (c) 2026 The sshnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "sshnet/errors.hpp"
#include "sshnet/gradcheck.hpp"
#include "sshnet/numerics.hpp"
#include "sshnet/vspm.hpp"
#include "test_util.hpp"

namespace sshnet {
namespace {

using testing::cosine_ref;
using testing::max_abs_diff;
using testing::random_tensor;

constexpr std::size_t kD = 8, kIn = 12, kSeg = 16, kPos = 6, kCp = 4, kK = 5;

VspmParams make(std::uint64_t seed, double lambda = 4.0) {
  Rng rng(seed);
  return VspmParams::init(kD, kIn, kSeg, kPos, kCp, 4, 4, lambda, rng);
}

Tensor random_map(Rng& rng, std::size_t h = 16, std::size_t w = 16) {
  Tensor m({h, w});
  for (auto& v : m.data()) v = static_cast<double>(rng.index(kSeg));
  return m;
}

std::vector<double> matvec(const Tensor& w, std::span<const double> x) {
  std::vector<double> y(w.dim(0), 0.0);
  for (std::size_t i = 0; i < w.dim(0); ++i)
    for (std::size_t j = 0; j < w.dim(1); ++j) y[i] += w.at(i, j) * x[j];
  return y;
}

TEST(VspmParams, ShapesAndLimits) {
  VspmParams p = make(1);
  EXPECT_EQ(p.conv_kernel.value.shape(), (Shape{4, 4, kPos + 1, kCp}));
  EXPECT_EQ(p.conv_bias.value.shape(), Shape{kCp});
  EXPECT_EQ(p.query_proj.value.shape(), (Shape{kCp, kIn}));
  EXPECT_EQ(p.out_proj.value.shape(), (Shape{kD, kCp}));
  EXPECT_EQ(p.channels(), kCp);
  EXPECT_EQ(p.params().size(), 4u);
  Rng rng(1);
  EXPECT_THROW(VspmParams::init(kD, kIn, kSeg, kPos, 5, 4, 4, 4.0, rng), ConfigError);
  EXPECT_THROW(VspmParams::init(kD, kIn, kSeg, kPos, 0, 4, 4, 4.0, rng), ConfigError);
  EXPECT_THROW(VspmParams::init(kD, kIn, kSeg, kPos, kCp, 4, 4, -1.0, rng), ConfigError);
}

TEST(PositionalEncode, ScalarOracle) {
  const Tensor pe = positional_encode(1.0, 4);
  EXPECT_EQ(pe[0], std::cos(1.0 / std::pow(10000.0, 0.25)));
  EXPECT_EQ(pe[1], std::sin(1.0 / std::pow(10000.0, 0.5)));
  EXPECT_EQ(pe[2], std::cos(1.0 / std::pow(10000.0, 0.75)));
  EXPECT_EQ(pe[3], std::sin(1.0 / 10000.0));
}

TEST(PositionalEncode, ZeroProbeAndBounds) {
  const Tensor z = positional_encode(0.0, 8);
  for (std::size_t j = 1; j <= 8; ++j) EXPECT_EQ(z[j - 1], j % 2 == 0 ? 0.0 : 1.0);
  for (double p = 1; p <= 4096; p += 37) {
    const Tensor pe = positional_encode(p, 32);
    for (double v : pe.data()) {
      EXPECT_GE(v, -1.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(PositionalEncode, InjectiveOverMapPixels) {
  constexpr std::size_t n = 4096, d = 16;
  std::vector<Tensor> pe;
  pe.reserve(n);
  for (std::size_t p = 1; p <= n; ++p) pe.push_back(positional_encode(static_cast<double>(p), d));
  double min_dist = 1e300;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double t = pe[a][j] - pe[b][j];
        s += t * t;
      }
      min_dist = std::min(min_dist, s);
    }
  EXPECT_GT(std::sqrt(min_dist), 1e-6);
}

TEST(PositionTensor, LayoutAndNormalisation) {
  Tensor map({2, 3});
  map.at(0, 0) = 0;
  map.at(0, 1) = kSeg - 1;
  map.at(1, 2) = 3;
  const Tensor t = build_position_tensor(map, kPos, kSeg);
  ASSERT_EQ(t.shape(), (Shape{2, 3, kPos + 1}));
  EXPECT_EQ(t.at(0, 0, kPos), 0.0);
  EXPECT_EQ(t.at(0, 1, kPos), (kSeg - 1.0) / kSeg);
  EXPECT_EQ(t.at(1, 2, kPos), 3.0 / kSeg);
  // Pixel (1, 2) is the sixth in row-major order.
  const Tensor pe = positional_encode(6.0, kPos);
  for (std::size_t j = 0; j < kPos; ++j) EXPECT_NEAR(t.at(1, 2, j), pe[j], 1e-15);
  // Same category, different pixel: equal last channel, different encoding.
  EXPECT_EQ(t.at(0, 2, kPos), t.at(1, 0, kPos));
  bool differs = false;
  for (std::size_t j = 0; j < kPos; ++j) differs |= t.at(0, 2, j) != t.at(1, 0, j);
  EXPECT_TRUE(differs);
}

TEST(PositionTensor, RejectsBadCategories) {
  Tensor map({2, 2});
  map[3] = kSeg;
  EXPECT_THROW(build_position_tensor(map, kPos, kSeg), ValidationError);
  map[3] = -1;
  EXPECT_THROW(build_position_tensor(map, kPos, kSeg), ValidationError);
  map[3] = 0.5;
  EXPECT_THROW(build_position_tensor(map, kPos, kSeg), ValidationError);
}

TEST(RefinePositions, ZeroKernelConstantMap) {
  VspmParams p = make(2);
  p.conv_kernel.value.fill(0.0);
  p.conv_bias.value = Tensor::vector({1, -2, 3, 0.5});
  Rng rng(2);
  const Tensor r = refine_positions(build_position_tensor(random_map(rng), kPos, kSeg), p);
  ASSERT_EQ(r.shape(), (Shape{4, 4, kCp}));
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_EQ(r[i], p.conv_bias.value[i % kCp]);
}

TEST(RefinePositions, PaperShapeArithmetic) {
  Rng rng(3);
  VspmParams p = VspmParams::init(16, 8, 133, 32, 16, 8, 8, 4.0, rng);
  Tensor map({64, 64});
  EXPECT_EQ(refine_positions(build_position_tensor(map, 32, 133), p).shape(), (Shape{8, 8, 16}));
}

TEST(RefinePositions, MatchesNestedLoops) {
  VspmParams p = make(4);
  Rng rng(4);
  const Tensor pos = build_position_tensor(random_map(rng), kPos, kSeg);
  const Tensor r = refine_positions(pos, p);
  const Tensor& k = p.conv_kernel.value;
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x)
      for (std::size_t o = 0; o < kCp; ++o) {
        double s = p.conv_bias.value[o];
        for (std::size_t dy = 0; dy < 4; ++dy)
          for (std::size_t dx = 0; dx < 4; ++dx)
            for (std::size_t c = 0; c <= kPos; ++c)
              s += pos.at(4 * y + dy, 4 * x + dx, c) * k[((dy * 4 + dx) * (kPos + 1) + c) * kCp + o];
        EXPECT_NEAR(r.at(y, x, o), s, 1e-12);
      }
}

TEST(SpatialAttention, IdenticalRefinedRows) {
  VspmParams p = make(5);
  Rng rng(5);
  Tensor refined({3, 3, kCp});
  const std::vector<double> u = {0.5, -1.0, 2.0, 0.25};
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t c = 0; c < kCp; ++c) refined[i * kCp + c] = u[c];
  const auto [betas, ctx] = spatial_attention(random_tensor({kK, kIn}, rng), refined, p);
  for (std::size_t i = 0; i < kK; ++i)
    for (std::size_t c = 0; c < kCp; ++c) EXPECT_NEAR(ctx.at(i, c), u[c], 1e-12);
}

TEST(SpatialAttention, LambdaZeroIsUniform) {
  VspmParams p = make(6, 0.0);
  Rng rng(6);
  const Tensor refined = random_tensor({3, 4, kCp}, rng);
  const auto [betas, ctx] = spatial_attention(random_tensor({kK, kIn}, rng), refined, p);
  for (double b : betas.data()) EXPECT_EQ(b, 1.0 / 12.0);
  for (std::size_t c = 0; c < kCp; ++c) {
    double mean = 0.0;
    for (std::size_t j = 0; j < 12; ++j) mean += refined[j * kCp + c];
    mean /= 12.0;
    for (std::size_t i = 0; i < kK; ++i) EXPECT_NEAR(ctx.at(i, c), mean, 1e-14);
  }
}

TEST(SpatialAttention, StraightLineOracle) {
  VspmParams p = make(7);
  Rng rng(7);
  const Tensor regions = random_tensor({2, kIn}, rng), refined = random_tensor({1, 3, kCp}, rng);
  const auto [betas, ctx] = spatial_attention(regions, refined, p);
  ASSERT_EQ(betas.shape(), (Shape{2, 3}));
  for (std::size_t i = 0; i < 2; ++i) {
    const auto q = matvec(p.query_proj.value, regions.row(i));
    double c[3], z = 0.0, mx = -1e300;
    for (std::size_t j = 0; j < 3; ++j) {
      c[j] = cosine_ref(q.data(), refined.data().data() + j * kCp, kCp);
      mx = std::max(mx, c[j]);
    }
    double e[3];
    for (std::size_t j = 0; j < 3; ++j) z += e[j] = std::exp(p.lambda * (c[j] - mx));
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(betas.at(i, j), e[j] / z, 1e-12);
    for (std::size_t k = 0; k < kCp; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < 3; ++j) s += e[j] / z * refined[j * kCp + k];
      EXPECT_NEAR(ctx.at(i, k), s, 1e-12);
    }
  }
}

TEST(SpatialAttention, BetaRowsAreDistributions) {
  Rng rng(8);
  for (int t = 0; t < 200; ++t) {
    VspmParams p = make(100 + t, rng.uniform(0, 30));
    const auto [betas, ctx] = spatial_attention(random_tensor({kK, kIn}, rng, 10), random_tensor({4, 4, kCp}, rng), p);
    for (std::size_t i = 0; i < kK; ++i) {
      double s = 0.0;
      for (double b : betas.row(i)) {
        EXPECT_GE(b, 0.0);
        s += b;
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(SpatialAttention, LambdaPeakingMonotone) {
  Rng rng(9);
  for (int t = 0; t < 100; ++t) {
    const Tensor regions = random_tensor({kK, kIn}, rng), refined = random_tensor({3, 3, kCp}, rng);
    VspmParams p = make(200 + t);
    std::vector<double> prev(kK, 0.0);
    for (double lambda : {0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 64.0}) {
      p.lambda = lambda;
      const Tensor betas = spatial_attention(regions, refined, p).first;
      for (std::size_t i = 0; i < kK; ++i) {
        const auto row = betas.row(i);
        const double mx = *std::max_element(row.begin(), row.end());
        EXPECT_GE(mx, prev[i] - 1e-15);
        prev[i] = mx;
      }
    }
  }
}

TEST(SpatialCombine, Examples) {
  VspmParams p = make(10);
  Rng rng(10);
  const Tensor regions = random_tensor({kK, kIn}, rng);
  Tensor eye({kD, kCp});
  for (std::size_t i = 0; i < kCp; ++i) eye.at(i, i) = 1.0;
  p.out_proj.value = eye;
  const Tensor out = spatial_combine(Tensor({kK, kCp}), regions, p);
  for (std::size_t i = 0; i < kK; ++i) {
    const auto q = matvec(p.query_proj.value, regions.row(i));
    for (std::size_t j = 0; j < kD; ++j) EXPECT_NEAR(out.at(i, j), j < kCp ? q[j] : 0.0, 1e-14);
  }
  p.out_proj.value.fill(0.0);
  const Tensor zero = spatial_combine(random_tensor({kK, kCp}, rng), regions, p);
  for (double v : zero.data()) EXPECT_EQ(v, 0.0);
}

TEST(SpatialCombine, StraightLineOracle) {
  VspmParams p = make(11);
  Rng rng(11);
  const Tensor regions = random_tensor({kK, kIn}, rng), ctx = random_tensor({kK, kCp}, rng);
  const Tensor out = spatial_combine(ctx, regions, p);
  for (std::size_t i = 0; i < kK; ++i) {
    auto q = matvec(p.query_proj.value, regions.row(i));
    for (std::size_t c = 0; c < kCp; ++c) q[c] += ctx.at(i, c);
    const auto y = matvec(p.out_proj.value, q);
    for (std::size_t j = 0; j < kD; ++j) EXPECT_NEAR(out.at(i, j), y[j], 1e-13);
  }
  EXPECT_THROW(spatial_combine(Tensor({kK + 1, kCp}), regions, p), DimensionError);
}

TEST(VspmForward, ComposesOps) {
  VspmParams p = make(12);
  Rng rng(12);
  const Tensor regions = random_tensor({kK, kIn}, rng), map = random_map(rng);
  const VspmOutput out = vspm_forward(regions, map, p);
  const Tensor refined = refine_positions(build_position_tensor(map, kPos, kSeg), p);
  const auto [betas, ctx] = spatial_attention(regions, refined, p);
  EXPECT_EQ(out.refined, refined);
  EXPECT_EQ(out.betas, betas);
  EXPECT_EQ(out.spatial, spatial_combine(ctx, regions, p));
  EXPECT_EQ(out.spatial.shape(), (Shape{kK, kD}));
}

TEST(VspmForward, PermutationEquivariance) {
  VspmParams p = make(13);
  Rng rng(13);
  const Tensor regions = random_tensor({kK, kIn}, rng), map = random_map(rng);
  std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  Tensor permuted({kK, kIn});
  for (std::size_t i = 0; i < kK; ++i)
    for (std::size_t j = 0; j < kIn; ++j) permuted.at(i, j) = regions.at(perm[i], j);
  const VspmOutput a = vspm_forward(regions, map, p), b = vspm_forward(permuted, map, p);
  for (std::size_t i = 0; i < kK; ++i)
    for (std::size_t j = 0; j < kD; ++j) EXPECT_NEAR(b.spatial.at(i, j), a.spatial.at(perm[i], j), 1e-14);
}

TEST(VspmForward, GradCheck) {
  VspmParams p = make(14);
  Rng rng(14);
  const Tensor regions = random_tensor({3, kIn}, rng);
  const Tensor pos = build_position_tensor(random_map(rng, 8, 8), kPos, kSeg);
  const Tensor head = random_tensor({3, kD}, rng);
  const LossFn f = [&](Graph& g) {
    const VspmVars v = vspm_forward(g, g.constant(regions), g.constant(pos), p);
    return ops::sum(ops::mul(v.spatial, g.constant(head)));
  };
  const GradReport rep = grad_check(f, p.params(), 1e-6, 1e-4);
  EXPECT_TRUE(rep.passed) << rep.worst_param_path << " " << rep.max_rel_err;
}

}  // namespace
}  // namespace sshnet
