#include <catch2/catch_amalgamated.hpp>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "subseg/hiermix.hpp"

using namespace subseg;



TEST_CASE("identity transform leaves tensors untouched") {
  Rng rng(201, 0);
  const auto t = gradcheck::random_tensor<float>({2, 5, 7}, rng);
  SpatialTransform id;
  CHECK(apply_transform(id, t).data == t.data);
}

TEST_CASE("apply followed by inverse is exact for all 16 transforms") {
  Rng rng(202, 0);
  const auto t = gradcheck::random_tensor<float>({3, 6, 8}, rng);
  for (int k = 0; k < 4; ++k)
    for (int fh = 0; fh < 2; ++fh)
      for (int fv = 0; fv < 2; ++fv) {
        SpatialTransform tr{k, fh == 1, fv == 1};
        const Tensor fwd = apply_transform(tr, t);
        const Tensor back = apply_inverse_transform(tr, fwd);
        REQUIRE(back.shape == t.shape);
        REQUIRE(back.data == t.data);
      }
}

TEST_CASE("label and tensor transforms agree") {
  Rng rng(203, 0);
  LabelMap m(5, 7);
  for (auto& v : m.v) v = static_cast<int32_t>(rng.below(4));
  SpatialTransform tr{1, true, false};
  const LabelMap lm = apply_transform(tr, m);
  Tensor t({1, 5, 7});
  for (int64_t i = 0; i < m.numel(); ++i) t[i] = static_cast<float>(m.v[static_cast<size_t>(i)]);
  const Tensor tt = apply_transform(tr, t);
  REQUIRE(lm.h == tt.dim(1));
  REQUIRE(lm.w == tt.dim(2));
  for (int64_t i = 0; i < lm.numel(); ++i)
    REQUIRE(static_cast<float>(lm.v[static_cast<size_t>(i)]) == tt[i]);
}

TEST_CASE("sampled transforms are uniform over the 16 combinations") {
  Rng rng(204, 0);
  std::vector<int> counts(16, 0);
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto t = sample_transform(rng);
    counts[static_cast<size_t>(t.rot90_k * 4 + t.flip_h * 2 + t.flip_v)]++;
  }
  double chi2 = 0.0;
  const double expect = n / 16.0;
  for (int c : counts) chi2 += (c - expect) * (c - expect) / expect;
  // 99.9% quantile of chi^2 with 15 dof.
  CHECK(chi2 < 37.70);
}

TEST_CASE("tau schedule endpoints and midpoint") {
  CHECK(tau_schedule(0, 4000) == 1.0f);
  CHECK(tau_schedule(4000, 4000) == Catch::Approx(0.4f));
  CHECK(tau_schedule(2000, 4000) == Catch::Approx(0.7f));
  CHECK_THROWS_AS(tau_schedule(-1, 4000), std::invalid_argument);
  CHECK_THROWS_AS(tau_schedule(4001, 4000), std::invalid_argument);
}

TEST_CASE("pseudo labels: tau = 1 rejects non-saturated predictions") {
  Rng rng(205, 0);
  const auto hier = HierarchySpec::binary_foreground(2);
  const auto a = oracles::random_probs(3, 4, 4, rng);
  LabelMap y(4, 4, 1);
  const auto p = make_pseudo_label(a, a, y, 1.0f, hier);
  for (uint8_t v : p.valid) CHECK(v == 0);
}

TEST_CASE("pseudo labels: agreement with confidence and consistency accepts everything") {
  const auto hier = HierarchySpec::binary_foreground(2);
  const int H = 4, W = 4;
  Tensor probs({3, H, W}, 0.f);
  LabelMap y(H, W);
  for (int i = 0; i < H * W; ++i) {
    const int cls = i % 3;
    for (int c = 0; c < 3; ++c) probs[c * H * W + i] = c == cls ? 0.9f : 0.05f;
    y.v[static_cast<size_t>(i)] = hier.parent[static_cast<size_t>(cls)];
  }
  const auto p = make_pseudo_label(probs, probs, y, 0.4f, hier);
  for (int i = 0; i < H * W; ++i) {
    REQUIRE(p.valid[static_cast<size_t>(i)] == 1);
    REQUIRE(p.z_pse.v[static_cast<size_t>(i)] == i % 3);
  }
  CHECK_THROWS_AS(make_pseudo_label(probs, probs, y, 1.5f, hier), std::invalid_argument);
}

TEST_CASE("pseudo labels match the scalar oracle on fuzzed instances") {
  Rng rng(206, 0);
  const auto hier = HierarchySpec::binary_foreground(2);
  for (int trial = 0; trial < 500; ++trial) {
    const auto a = oracles::random_probs(3, 4, 4, rng);
    const auto b = oracles::random_probs(3, 4, 4, rng);
    LabelMap y(4, 4);
    for (auto& v : y.v) v = static_cast<int32_t>(rng.below(2));
    const float tau = static_cast<float>(rng.uniform(0.0, 1.0));
    const auto got = make_pseudo_label(a, b, y, tau, hier);
    const auto want = oracles::pseudo_oracle(a, b, y, tau, hier);
    REQUIRE(got.valid == want.valid);
    REQUIRE(got.z_pse == want.z_pse);
  }
}

TEST_CASE("pseudo labels: valid set shrinks as tau grows and stays parent-sound") {
  Rng rng(207, 0);
  const auto hier = HierarchySpec::binary_foreground(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = oracles::random_probs(4, 6, 6, rng);
    const auto b = oracles::random_probs(4, 6, 6, rng);
    LabelMap y(6, 6);
    for (auto& v : y.v) v = static_cast<int32_t>(rng.below(2));
    const float t1 = static_cast<float>(rng.uniform(0.0, 0.5));
    const float t2 = static_cast<float>(rng.uniform(t1, 1.0));
    const auto p1 = make_pseudo_label(a, b, y, t1, hier);
    const auto p2 = make_pseudo_label(a, b, y, t2, hier);
    for (size_t i = 0; i < p1.valid.size(); ++i) {
      if (p2.valid[i]) REQUIRE(p1.valid[i]);  // monotone inclusion
      if (p1.valid[i])
        REQUIRE(hier.parent[static_cast<size_t>(p1.z_pse.v[i])] == y.v[i]);
    }
  }
}

TEST_CASE("transform coherence: equal aligned probabilities always agree") {
  Rng rng(208, 0);
  const auto hier = HierarchySpec::binary_foreground(2);
  const auto a = oracles::random_probs(3, 5, 5, rng);
  LabelMap y(5, 5);
  // Choose y so the parent clause holds everywhere.
  const int64_t plane = 25;
  for (int64_t i = 0; i < plane; ++i) {
    int am = 0;
    for (int k = 1; k < 3; ++k)
      if (a[k * plane + i] > a[am * plane + i]) am = k;
    y.v[static_cast<size_t>(i)] = hier.parent[static_cast<size_t>(am)];
  }
  const auto p = make_pseudo_label(a, a, y, 0.0f, hier);
  for (uint8_t v : p.valid) REQUIRE(v == 1);
}

TEST_CASE("mix endpoint: alpha 1 with equal bboxes copies the fine region") {
  Rng rng(209, 0);
  const int H = 12, W = 12;
  Tensor x({1, H, W}), xf({1, H, W});
  for (auto& v : x.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
  for (auto& v : xf.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
  LabelMap y(H, W, 0), yf(H, W, 0), zf(H, W, 0);
  for (int r = 3; r < 7; ++r)
    for (int c = 4; c < 8; ++c) {
      y.at(r, c) = 1;
      yf.at(r, c) = 1;
      zf.at(r, c) = 1 + ((r + c) % 2);
    }
  const auto mix = mix_images(x, y, xf, yf, zf, 1.0f);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      const bool inside = r >= 3 && r < 7 && c >= 4 && c < 8;
      const float got = mix.x_mix[static_cast<int64_t>(r) * W + c];
      if (inside)
        REQUIRE(got == xf[static_cast<int64_t>(r) * W + c]);
      else
        REQUIRE(got == x[static_cast<int64_t>(r) * W + c]);  // untouched outside
      if (!inside) REQUIRE(mix.z_full.at(r, c) == 0);
    }
  // Labels inside the box come from the fine map unchanged (same size).
  for (int r = 3; r < 7; ++r)
    for (int c = 4; c < 8; ++c) REQUIRE(mix.z_full.at(r, c) == zf.at(r, c));
}

TEST_CASE("mix rejects empty foregrounds and bad alpha") {
  Tensor x({1, 8, 8}, 0.5f);
  LabelMap empty(8, 8, 0), fg(8, 8, 0), zf(8, 8, 0);
  fg.at(2, 2) = 1;
  zf.at(2, 2) = 1;
  CHECK_THROWS_WITH(mix_images(x, empty, x, fg, zf, 0.8f),
                    Catch::Matchers::ContainsSubstring("coarse"));
  CHECK_THROWS_WITH(mix_images(x, fg, x, empty, empty, 0.8f),
                    Catch::Matchers::ContainsSubstring("fine"));
  CHECK_THROWS_AS(mix_images(x, fg, x, fg, zf, 0.3f), std::invalid_argument);
}

TEST_CASE("mix resampling matches an independent scalar resampler") {
  Rng rng(210, 0);
  const int H = 8, W = 8;
  Tensor x({1, H, W}), xf({1, H, W});
  for (auto& v : x.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
  for (auto& v : xf.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
  LabelMap y(H, W, 0), yf(H, W, 0), zf(H, W, 0);
  // Coarse bbox 4x4 at (2,2); fine bbox 2x2 at (5,1).
  for (int r = 2; r < 6; ++r)
    for (int c = 2; c < 6; ++c) y.at(r, c) = 1;
  for (int r = 5; r < 7; ++r)
    for (int c = 1; c < 3; ++c) {
      yf.at(r, c) = 1;
      zf.at(r, c) = 1 + ((r + c) % 2);
    }
  const float alpha = 0.65f;
  const auto mix = mix_images(x, y, xf, yf, zf, alpha);

  // Oracle: explicit per-pixel bilinear / nearest lookups in double.
  const int bh = 4, bw = 4, fh = 2, fw = 2, by = 2, bx = 2, fy = 5, fx = 1;
  for (int r = 0; r < bh; ++r)
    for (int c = 0; c < bw; ++c) {
      double sy = (r + 0.5) * fh / static_cast<double>(bh) - 0.5;
      double sx = (c + 0.5) * fw / static_cast<double>(bw) - 0.5;
      sy = std::clamp(sy, 0.0, fh - 1.0);
      sx = std::clamp(sx, 0.0, fw - 1.0);
      const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
      const int y1 = std::min(y0 + 1, fh - 1), x1 = std::min(x0 + 1, fw - 1);
      const double wy = sy - y0, wx = sx - x0;
      auto fv = [&](int yy, int xx) {
        return static_cast<double>(xf[static_cast<int64_t>(fy + yy) * W + fx + xx]);
      };
      const double bil = (1 - wy) * ((1 - wx) * fv(y0, x0) + wx * fv(y0, x1)) +
                         wy * ((1 - wx) * fv(y1, x0) + wx * fv(y1, x1));
      const double want =
          alpha * bil + (1.0 - alpha) * x[static_cast<int64_t>(by + r) * W + bx + c];
      const double got = mix.x_mix[static_cast<int64_t>(by + r) * W + bx + c];
      REQUIRE(std::fabs(got - want) <= 1e-6);

      const int ny = std::min(fh - 1, static_cast<int>((r + 0.5) * fh / static_cast<double>(bh)));
      const int nx = std::min(fw - 1, static_cast<int>((c + 0.5) * fw / static_cast<double>(bw)));
      REQUIRE(mix.z_full.at(by + r, bx + c) == zf.at(fy + ny, fx + nx));
    }
}

TEST_CASE("mixed target blends only where the pseudo label is valid") {
  const int H = 2, W = 2, K = 4;
  LabelMap z_full(H, W, 0);
  z_full.at(0, 0) = 2;
  PseudoLabel p;
  p.z_pse = LabelMap(H, W, 0);
  p.z_pse.at(0, 0) = 3;
  p.valid = {1, 0, 0, 0};

  auto [t1, w1] = mixed_target(z_full, p, 0.5f, K);
  CHECK(t1[2 * H * W + 0] == 0.5f);
  CHECK(t1[3 * H * W + 0] == 0.5f);
  CHECK(t1[0 * H * W + 1] == 1.f);  // invalid pixel: pure z_full
  for (int64_t i = 0; i < H * W; ++i) CHECK(w1[i] == 1.f);

  auto [t2, w2] = mixed_target(z_full, p, 1.0f, K);
  for (int64_t i = 0; i < H * W; ++i) {
    float row = 0.f;
    for (int c = 0; c < K; ++c) row += t2[c * H * W + i];
    CHECK(row == Catch::Approx(1.f).margin(1e-6));
    CHECK(t2[z_full.v[static_cast<size_t>(i)] * H * W + i] == 1.f);
  }
}

TEST_CASE("mixed target rows always sum to one") {
  Rng rng(211, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const int H = 4, W = 4, K = 4;
    LabelMap z_full(H, W);
    PseudoLabel p;
    p.z_pse = LabelMap(H, W);
    p.valid.assign(H * W, 0);
    for (int64_t i = 0; i < H * W; ++i) {
      z_full.v[static_cast<size_t>(i)] = static_cast<int32_t>(rng.below(K));
      p.z_pse.v[static_cast<size_t>(i)] = static_cast<int32_t>(rng.below(K));
      p.valid[static_cast<size_t>(i)] = rng.coin() ? 1 : 0;
    }
    const float alpha = static_cast<float>(rng.uniform(0.5, 1.0));
    auto [t, w] = mixed_target(z_full, p, alpha, K);
    for (int64_t i = 0; i < H * W; ++i) {
      float row = 0.f;
      for (int c = 0; c < K; ++c) row += t[c * H * W + i];
      REQUIRE(row == Catch::Approx(1.f).margin(1e-6));
    }
  }
}
