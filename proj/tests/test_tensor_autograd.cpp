#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "core/autograd.hpp"
#include "core/nn.hpp"
#include "core/rng.hpp"
#include "support/gradcheck.hpp"

using namespace mvi;
using namespace mvi::nn;
using mvi::testing::gradcheck;

namespace {

Var leaf(Rng& rng, std::vector<int> shape, double stddev = 1.0) {
  return make_param(Tensor::randn(std::move(shape), rng, stddev));
}

constexpr double kGradTol = 1e-6;

}  // namespace

TEST_CASE("rng: streams are deterministic and splits are independent") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK_EQ(a.next_u64(), b.next_u64());

  Rng c(42);
  for (int i = 0; i < 100; ++i) c.next_u64();
  Rng child = c.split("noise");
  Rng c2(42);
  for (int i = 0; i < 100; ++i) c2.next_u64();
  Rng child2 = c2.split("noise");
  for (int i = 0; i < 10; ++i) CHECK_EQ(child.next_u64(), child2.next_u64());
  Rng other = c.split("other tag");
  CHECK_NE(other.next_u64(), child.next_u64());
}

TEST_CASE("rng: uniform_int covers the inclusive range") {
  Rng rng(7);
  bool saw_lo = false, saw_hi = false;
  for (int i = 0; i < 2000; ++i) {
    const int v = rng.uniform_int(-2, 3);
    CHECK_GE(v, -2);
    CHECK_LE(v, 3);
    saw_lo = saw_lo || v == -2;
    saw_hi = saw_hi || v == 3;
  }
  CHECK(saw_lo);
  CHECK(saw_hi);
  CHECK_THROWS_AS((void)rng.uniform_int(2, 1), Error);
}

TEST_CASE("rng: normal has roughly standard moments") {
  Rng rng(123);
  const int n = 20000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal();
    sum += v;
    sq += v * v;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK_LT(std::abs(mean), 0.03);
  CHECK_LT(std::abs(var - 1.0), 0.05);
}

TEST_CASE("tensor: reshape shares the buffer, clone does not") {
  Tensor t = Tensor::from_vector({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor view = t.reshaped({3, 2});
  Tensor copy = t.clone();
  t.data()[0] = 99.0;
  CHECK_EQ(view.data()[0], 99.0);
  CHECK_EQ(copy.data()[0], 1.0);
  CHECK_THROWS_AS((void)t.reshaped({4, 2}), Error);
  CHECK_THROWS_AS((void)Tensor::from_vector({2, 2}, {1, 2, 3}), Error);
}

TEST_CASE("autograd: elementwise ops match finite differences") {
  Rng rng(1);
  auto a = leaf(rng, {2, 3});
  auto b = leaf(rng, {2, 3});
  const Tensor c = Tensor::randn({2, 3}, rng);

  CHECK_LT(gradcheck([](const std::vector<Var>& v) { return mean_all(add(v[0], v[1])); }, {a, b}),
           kGradTol);
  CHECK_LT(gradcheck([](const std::vector<Var>& v) { return mean_all(sub(v[0], v[1])); }, {a, b}),
           kGradTol);
  CHECK_LT(gradcheck([](const std::vector<Var>& v) { return mean_all(mul(v[0], v[1])); }, {a, b}),
           kGradTol);
  CHECK_LT(gradcheck([](const std::vector<Var>& v) { return mean_all(scale(v[0], -1.7)); }, {a}),
           kGradTol);
  CHECK_LT(
      gradcheck([&](const std::vector<Var>& v) { return mean_all(mul_const(v[0], c)); }, {a}),
      kGradTol);
  CHECK_LT(gradcheck([](const std::vector<Var>& v) { return mean_all(silu(v[0])); }, {a}),
           kGradTol);
}

TEST_CASE("autograd: shape ops match finite differences") {
  Rng rng(2);
  auto a = leaf(rng, {2, 3, 4});
  auto b = leaf(rng, {3, 4});
  auto c = leaf(rng, {5, 4});

  CHECK_LT(gradcheck(
               [](const std::vector<Var>& v) {
                 return mean_all(mul(reshape(v[0], {6, 4}), reshape(v[0], {6, 4})));
               },
               {a}),
           kGradTol);
  CHECK_LT(gradcheck(
               [](const std::vector<Var>& v) {
                 Var p = permute_102(v[0]);
                 return mean_all(mul(p, p));
               },
               {a}),
           kGradTol);
  CHECK_LT(gradcheck(
               [](const std::vector<Var>& v) {
                 Var f1 = select_frame(v[0], 1);
                 return mean_all(mul(f1, f1));
               },
               {a}),
           kGradTol);
  auto b2 = leaf(rng, {3, 4});
  CHECK_LT(gradcheck(
               [](const std::vector<Var>& v) {
                 Var s = stack_frames({v[0], v[1], v[0]});
                 return mean_all(mul(s, s));
               },
               {b, b2}),
           kGradTol);
  CHECK_LT(gradcheck(
               [](const std::vector<Var>& v) {
                 Var s = concat_axis0(v[0], v[1]);
                 return mean_all(mul(s, s));
               },
               {b, c}),
           kGradTol);
}

TEST_CASE("autograd: permute_102 and select_frame index correctly") {
  Tensor t = Tensor::from_vector({2, 2, 2}, {0, 1, 2, 3, 4, 5, 6, 7});
  Var p = permute_102(constant(t));
  // [a][b][c] -> [b][a][c]
  CHECK_EQ(p->value.data()[0], 0);  // b0 a0 c0
  CHECK_EQ(p->value.data()[2], 4);  // b0 a1 c0
  CHECK_EQ(p->value.data()[4], 2);  // b1 a0 c0
  Var f = select_frame(constant(t), 1);
  CHECK_EQ(f->value.dim(0), 2);
  CHECK_EQ(f->value.data()[0], 4);
}

TEST_CASE("autograd: dense linear algebra matches finite differences") {
  Rng rng(3);
  auto a = leaf(rng, {3, 4});
  auto b = leaf(rng, {4, 2});
  auto x = leaf(rng, {2, 3, 4});  // rank>2 linear input
  auto w = leaf(rng, {5, 4});
  auto bias = leaf(rng, {5});

  CHECK_LT(gradcheck([](const std::vector<Var>& v) { return mean_all(matmul(v[0], v[1])); },
                     {a, b}),
           kGradTol);
  CHECK_LT(gradcheck(
               [](const std::vector<Var>& v) {
                 Var y = linear(v[0], v[1], v[2]);
                 return mean_all(mul(y, y));
               },
               {x, w, bias}),
           kGradTol);
  CHECK_LT(gradcheck(
               [](const std::vector<Var>& v) {
                 Var y = linear_nobias(v[0], v[1]);
                 return mean_all(mul(y, y));
               },
               {x, w}),
           kGradTol);
}

TEST_CASE("autograd: conv2d forward matches a naive convolution") {
  Rng rng(4);
  const int f = 2, ci = 3, h = 5, w = 4, co = 2, k = 3, stride = 1, pad = 1;
  Tensor xt = Tensor::randn({f, ci, h, w}, rng);
  Tensor wt = Tensor::randn({co, ci, k, k}, rng);
  Tensor bt = Tensor::randn({co}, rng);
  Var y = conv2d(constant(xt), constant(wt), constant(bt), stride, pad);
  REQUIRE_EQ(y->value.shape(), std::vector<int>({f, co, h, w}));

  for (int fi = 0; fi < f; ++fi)
    for (int oc = 0; oc < co; ++oc)
      for (int oy = 0; oy < h; ++oy)
        for (int ox = 0; ox < w; ++ox) {
          double acc = bt.data()[oc];
          for (int icc = 0; icc < ci; ++icc)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * stride + ky - pad;
                const int ix = ox * stride + kx - pad;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += xt.data()[((int64_t(fi) * ci + icc) * h + iy) * w + ix] *
                       wt.data()[((int64_t(oc) * ci + icc) * k + ky) * k + kx];
              }
          const double got = y->value.data()[((int64_t(fi) * co + oc) * h + oy) * w + ox];
          CHECK_EQ(got, doctest::Approx(acc).epsilon(1e-12));
        }
}

TEST_CASE("autograd: conv2d matches finite differences") {
  Rng rng(5);
  SUBCASE("3x3 stride 1 pad 1") {
    auto x = leaf(rng, {2, 2, 4, 3});
    auto w = leaf(rng, {3, 2, 3, 3});
    auto b = leaf(rng, {3});
    CHECK_LT(gradcheck(
                 [](const std::vector<Var>& v) {
                   Var y = conv2d(v[0], v[1], v[2], 1, 1);
                   return mean_all(mul(y, y));
                 },
                 {x, w, b}),
             kGradTol);
  }
  SUBCASE("3x3 stride 2 pad 1") {
    auto x = leaf(rng, {1, 2, 6, 6});
    auto w = leaf(rng, {2, 2, 3, 3});
    auto b = leaf(rng, {2});
    CHECK_LT(gradcheck(
                 [](const std::vector<Var>& v) {
                   Var y = conv2d(v[0], v[1], v[2], 2, 1);
                   return mean_all(mul(y, y));
                 },
                 {x, w, b}),
             kGradTol);
  }
  SUBCASE("1x1 stride 1 pad 0") {
    auto x = leaf(rng, {2, 3, 3, 3});
    auto w = leaf(rng, {4, 3, 1, 1});
    auto b = leaf(rng, {4});
    CHECK_LT(gradcheck(
                 [](const std::vector<Var>& v) {
                   Var y = conv2d(v[0], v[1], v[2], 1, 0);
                   return mean_all(mul(y, y));
                 },
                 {x, w, b}),
             kGradTol);
  }
}

TEST_CASE("autograd: upsample_nearest2 repeats pixels and routes gradients") {
  Rng rng(6);
  Tensor xt = Tensor::from_vector({1, 1, 2, 2}, {1, 2, 3, 4});
  Var y = upsample_nearest2(constant(xt));
  const std::vector<double> want = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  for (size_t i = 0; i < want.size(); ++i) CHECK_EQ(y->value.data()[i], want[i]);

  auto x = leaf(rng, {2, 2, 3, 2});
  CHECK_LT(gradcheck(
               [](const std::vector<Var>& v) {
                 Var u = upsample_nearest2(v[0]);
                 return mean_all(mul(u, u));
               },
               {x}),
           kGradTol);
}

TEST_CASE("autograd: concat_channels stacks along the channel axis") {
  Rng rng(61);
  Tensor at = Tensor::randn({2, 2, 3, 3}, rng);
  Tensor bt = Tensor::randn({2, 1, 3, 3}, rng);
  Var y = concat_channels(constant(at), constant(bt));
  REQUIRE_EQ(y->value.shape(), std::vector<int>({2, 3, 3, 3}));
  for (int f = 0; f < 2; ++f)
    for (int c = 0; c < 3; ++c)
      for (int p = 0; p < 9; ++p) {
        const double want = c < 2 ? at.data()[(int64_t(f) * 2 + c) * 9 + p]
                                  : bt.data()[int64_t(f) * 9 + p];
        CHECK_EQ(y->value.data()[(int64_t(f) * 3 + c) * 9 + p], want);
      }
  CHECK_THROWS_AS((void)concat_channels(constant(at), constant(Tensor::zeros({2, 1, 4, 3}))),
                  Error);
  CHECK_THROWS_AS((void)concat_channels(constant(at), constant(Tensor::zeros({3, 1, 3, 3}))),
                  Error);

  auto a = leaf(rng, {2, 2, 2, 3});
  auto b = leaf(rng, {2, 3, 2, 3});
  CHECK_LT(gradcheck(
               [](const std::vector<Var>& v) {
                 Var c = concat_channels(v[0], v[1]);
                 return mean_all(mul(c, c));
               },
               {a, b}),
           kGradTol);
}

TEST_CASE("autograd: split_heads and merge_heads reshuffle and invert") {
  Rng rng(62);
  const int b = 2, l = 3, heads = 2, dh = 2;
  Tensor xt = Tensor::randn({b, l, heads * dh}, rng);
  Var s = split_heads(constant(xt), heads);
  REQUIRE_EQ(s->value.shape(), std::vector<int>({b * heads, l, dh}));
  for (int bi = 0; bi < b; ++bi)
    for (int g = 0; g < heads; ++g)
      for (int li = 0; li < l; ++li)
        for (int j = 0; j < dh; ++j)
          CHECK_EQ(s->value.data()[((int64_t(bi) * heads + g) * l + li) * dh + j],
                   xt.data()[(int64_t(bi) * l + li) * heads * dh + g * dh + j]);

  Var back = merge_heads(s, heads);
  REQUIRE_EQ(back->value.shape(), xt.shape());
  for (int64_t i = 0; i < xt.numel(); ++i) CHECK_EQ(back->value.data()[i], xt.data()[i]);

  CHECK_THROWS_AS((void)split_heads(constant(xt), 3), Error);    // 4 % 3 != 0
  CHECK_THROWS_AS((void)merge_heads(constant(xt), 3), Error);    // batch 2 % 3 != 0
  CHECK_THROWS_AS((void)split_heads(constant(Tensor::zeros({2, 2})), 2), Error);

  auto x = leaf(rng, {2, 3, 4});
  CHECK_LT(gradcheck(
               [](const std::vector<Var>& v) {
                 Var h = split_heads(v[0], 2);
                 return mean_all(mul(h, h));
               },
               {x}),
           kGradTol);
  CHECK_LT(gradcheck(
               [](const std::vector<Var>& v) {
                 Var h = merge_heads(v[0], 2);
                 return mean_all(mul(h, h));
               },
               {x}),
           kGradTol);
}

TEST_CASE("autograd: nchw/token layout conversion round trips") {
  Rng rng(63);
  const int f = 2, c = 3, h = 2, w = 3;
  Tensor xt = Tensor::randn({f, c, h, w}, rng);
  Var tok = nchw_to_tokens(constant(xt));
  REQUIRE_EQ(tok->value.shape(), std::vector<int>({f, h * w, c}));
  for (int fi = 0; fi < f; ++fi)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int ci = 0; ci < c; ++ci)
          CHECK_EQ(tok->value.data()[(int64_t(fi) * h * w + y * w + x) * c + ci],
                   xt.data()[((int64_t(fi) * c + ci) * h + y) * w + x]);

  Var back = tokens_to_nchw(tok, h, w);
  REQUIRE_EQ(back->value.shape(), xt.shape());
  for (int64_t i = 0; i < xt.numel(); ++i) CHECK_EQ(back->value.data()[i], xt.data()[i]);
  CHECK_THROWS_AS((void)tokens_to_nchw(tok, h, w + 1), Error);

  auto a = leaf(rng, {2, 2, 2, 3});
  CHECK_LT(gradcheck(
               [](const std::vector<Var>& v) {
                 Var t = nchw_to_tokens(v[0]);
                 return mean_all(mul(t, t));
               },
               {a}),
           kGradTol);
  auto b = leaf(rng, {2, 6, 2});
  CHECK_LT(gradcheck(
               [](const std::vector<Var>& v) {
                 Var t = tokens_to_nchw(v[0], 2, 3);
                 return mean_all(mul(t, t));
               },
               {b}),
           kGradTol);
}

TEST_CASE("autograd: group_norm normalizes per group and matches finite differences") {
  Rng rng(7);
  const int f = 2, c = 4, h = 3, w = 3, groups = 2;
  Tensor xt = Tensor::randn({f, c, h, w}, rng, 2.5);
  Var y = group_norm(constant(xt), constant(Tensor::full({c}, 1.0)),
                     constant(Tensor::zeros({c})), groups);
  const int cg = c / groups;
  for (int fi = 0; fi < f; ++fi)
    for (int g = 0; g < groups; ++g) {
      double mean = 0.0, var = 0.0;
      const int64_t n = int64_t(cg) * h * w;
      const double* base = y->value.data() + (int64_t(fi) * c + int64_t(g) * cg) * h * w;
      for (int64_t i = 0; i < n; ++i) mean += base[i];
      mean /= double(n);
      for (int64_t i = 0; i < n; ++i) var += (base[i] - mean) * (base[i] - mean);
      var /= double(n);
      CHECK_LT(std::abs(mean), 1e-9);
      CHECK_EQ(var, doctest::Approx(1.0).epsilon(1e-3));  // eps in the denominator
    }

  auto x = leaf(rng, {2, 4, 2, 3});
  auto gamma = leaf(rng, {4});
  auto beta = leaf(rng, {4});
  CHECK_LT(gradcheck(
               [](const std::vector<Var>& v) {
                 Var o = group_norm(v[0], v[1], v[2], 2);
                 return mean_all(mul(o, o));
               },
               {x, gamma, beta}),
           kGradTol);
}

TEST_CASE("autograd: layer_norm matches finite differences") {
  Rng rng(8);
  auto x = leaf(rng, {4, 5});
  auto gamma = leaf(rng, {5});
  auto beta = leaf(rng, {5});
  CHECK_LT(gradcheck(
               [](const std::vector<Var>& v) {
                 Var o = layer_norm(v[0], v[1], v[2]);
                 return mean_all(mul(o, o));
               },
               {x, gamma, beta}),
           kGradTol);
}

TEST_CASE("autograd: add_frame_channel broadcasts and matches finite differences") {
  Rng rng(9);
  auto x = leaf(rng, {2, 3, 2, 2});
  auto e = leaf(rng, {2, 3});
  Var y = add_frame_channel(x, e);
  CHECK_EQ(y->value.data()[0], doctest::Approx(x->value.data()[0] + e->value.data()[0]));
  CHECK_LT(gradcheck(
               [](const std::vector<Var>& v) {
                 Var o = add_frame_channel(v[0], v[1]);
                 return mean_all(mul(o, o));
               },
               {x, e}),
           kGradTol);
}

TEST_CASE("autograd: attention forward matches an explicit softmax loop") {
  Rng rng(10);
  const int bn = 2, lq = 3, lk = 4, dh = 5;
  const double sc = 1.0 / std::sqrt(double(dh));
  Tensor qt = Tensor::randn({bn, lq, dh}, rng);
  Tensor kt = Tensor::randn({bn, lk, dh}, rng);
  Tensor vt = Tensor::randn({bn, lk, dh}, rng);
  Var o = attention(constant(qt), constant(kt), constant(vt), sc);

  for (int b = 0; b < bn; ++b)
    for (int i = 0; i < lq; ++i) {
      std::vector<double> logits(lk, 0.0);
      double mx = -1e300;
      for (int j = 0; j < lk; ++j) {
        double s = 0.0;
        for (int d = 0; d < dh; ++d)
          s += qt.data()[(int64_t(b) * lq + i) * dh + d] *
               kt.data()[(int64_t(b) * lk + j) * dh + d];
        logits[j] = s * sc;
        mx = std::max(mx, logits[j]);
      }
      double z = 0.0;
      for (int j = 0; j < lk; ++j) z += std::exp(logits[j] - mx);
      for (int d = 0; d < dh; ++d) {
        double acc = 0.0;
        for (int j = 0; j < lk; ++j)
          acc += std::exp(logits[j] - mx) / z * vt.data()[(int64_t(b) * lk + j) * dh + d];
        CHECK_EQ(o->value.data()[(int64_t(b) * lq + i) * dh + d],
                 doctest::Approx(acc).epsilon(1e-10));
      }
    }
}

TEST_CASE("autograd: attention matches finite differences") {
  Rng rng(11);
  auto q = leaf(rng, {2, 3, 4});
  auto k = leaf(rng, {2, 5, 4});
  auto v = leaf(rng, {2, 5, 4});
  CHECK_LT(gradcheck(
               [](const std::vector<Var>& vars) {
                 Var o = attention(vars[0], vars[1], vars[2], 0.5);
                 return mean_all(mul(o, o));
               },
               {q, k, v}),
           kGradTol);
}

TEST_CASE("autograd: query_softmax_attention normalizes each key column over slots") {
  Rng rng(12);
  const int kslots = 3, d = 4, l = 6;
  const double sc = 1.0 / std::sqrt(double(d));
  Tensor qt = Tensor::randn({kslots, d}, rng);
  Tensor kt = Tensor::randn({l, d}, rng);
  Var ones_v = constant(Tensor::full({l, d}, 1.0));
  // With v == all-ones, each output entry is sum_j A[s][j]; summing outputs
  // over slots for one column of v isolates column normalization: for every
  // key j, sum_s A[s][j] == 1, so the slot-summed output equals l for each d.
  Var o = query_softmax_attention(constant(qt), constant(kt), ones_v, sc);
  for (int dd = 0; dd < d; ++dd) {
    double col = 0.0;
    for (int s = 0; s < kslots; ++s) col += o->value.data()[s * d + dd];
    CHECK_EQ(col, doctest::Approx(double(l)).epsilon(1e-10));
  }
}

TEST_CASE("autograd: query_softmax_attention matches finite differences") {
  Rng rng(13);
  auto q = leaf(rng, {3, 4});
  auto k = leaf(rng, {6, 4});
  auto v = leaf(rng, {6, 4});
  CHECK_LT(gradcheck(
               [](const std::vector<Var>& vars) {
                 Var o = query_softmax_attention(vars[0], vars[1], vars[2], 0.5);
                 return mean_all(mul(o, o));
               },
               {q, k, v}),
           kGradTol);
}

TEST_CASE("autograd: losses match finite differences") {
  Rng rng(14);
  auto a = leaf(rng, {3, 4});
  auto b = leaf(rng, {3, 4});
  Tensor w = Tensor::zeros({3, 4});
  Rng wr(99);
  for (int64_t i = 0; i < w.numel(); ++i) w.data()[i] = wr.bernoulli(0.6) ? 1.0 : 0.0;

  CHECK_LT(gradcheck([](const std::vector<Var>& v) { return mse_loss(v[0], v[1]); }, {a, b}),
           kGradTol);
  CHECK_LT(gradcheck(
               [&](const std::vector<Var>& v) { return weighted_mse_loss(v[0], v[1], w); },
               {a, b}),
           kGradTol);
  CHECK_THROWS_AS(
      (void)weighted_mse_loss(a, b, Tensor::zeros({3, 4})), Error);
}

TEST_CASE("autograd: weighted mse ignores zero-weight entries") {
  Tensor w = Tensor::from_vector({4}, {1, 0, 1, 0});
  Var p = constant(Tensor::from_vector({4}, {1, 100, 3, -50}));
  Var t = constant(Tensor::from_vector({4}, {0, 0, 0, 0}));
  Var l = weighted_mse_loss(p, t, w);
  CHECK_EQ(l->value.data()[0], doctest::Approx((1.0 + 9.0) / 2.0));
}

TEST_CASE("autograd: NoGradGuard suppresses graph construction") {
  Rng rng(15);
  auto a = leaf(rng, {2, 2});
  {
    NoGradGuard guard;
    Var y = mean_all(mul(a, a));
    CHECK_FALSE(y->track);
    CHECK(y->parents.empty());
  }
  Var y = mean_all(mul(a, a));
  CHECK(y->track);
}

TEST_CASE("autograd: grads accumulate across backward calls until zeroed") {
  auto a = make_param(Tensor::from_vector({2}, {1.0, 2.0}));
  Var l1 = mean_all(mul(a, a));
  backward(l1);
  const double g0 = a->grad.data()[0];  // d/da mean(a^2) = a
  Var l2 = mean_all(mul(a, a));
  backward(l2);
  CHECK_EQ(a->grad.data()[0], doctest::Approx(2.0 * g0));

  ParamStore ps;
  Var p = ps.create("p", Tensor::from_vector({2}, {1.0, 2.0}));
  backward(mean_all(mul(p, p)));
  CHECK(p->grad_alloc);
  ps.zero_grad();
  CHECK_FALSE(p->grad_alloc);
}

TEST_CASE("nn: param store rejects duplicates and tracks trainable scope") {
  ParamStore ps;
  Rng rng(16);
  ps.create("a.w", Tensor::randn({3, 3}, rng));
  ps.create("b.lora_down", Tensor::randn({2, 3}, rng));
  CHECK_THROWS_AS((void)ps.create("a.w", Tensor::zeros({1})), Error);
  CHECK_THROWS_AS((void)ps.get("missing"), Error);

  ps.set_trainable([](const std::string& n) { return n.find("lora") != std::string::npos; });
  CHECK_EQ(ps.trainable().size(), 1u);
  CHECK_EQ(ps.numel_total(), 9 + 6);
  CHECK_EQ(ps.numel_trainable(), 6);
}

TEST_CASE("nn: adam minimizes a quadratic") {
  ParamStore ps;
  Var x = ps.create("x", Tensor::from_vector({3}, {5.0, -3.0, 0.5}));
  const Tensor target = Tensor::from_vector({3}, {1.0, 2.0, -1.0});
  Adam opt(0.1);
  for (int step = 0; step < 400; ++step) {
    ps.zero_grad();
    Var loss = mse_loss(x, constant(target));
    backward(loss);
    opt.step(ps);
  }
  for (int i = 0; i < 3; ++i)
    CHECK_EQ(x->value.data()[i], doctest::Approx(target.data()[i]).epsilon(1e-3));
}

TEST_CASE("nn: clip_grad_norm rescales only above the threshold") {
  ParamStore ps;
  Var x = ps.create("x", Tensor::from_vector({2}, {3.0, 4.0}));
  backward(mean_all(mul(x, x)));  // grad = 2x/2 = x -> norm 5
  const double norm = clip_grad_norm(ps, 1.0);
  CHECK_EQ(norm, doctest::Approx(5.0));
  double sq = 0.0;
  for (int i = 0; i < 2; ++i) sq += x->grad.data()[i] * x->grad.data()[i];
  CHECK_EQ(std::sqrt(sq), doctest::Approx(1.0));

  ps.zero_grad();
  backward(scale(mean_all(mul(x, x)), 1e-4));
  const double small = clip_grad_norm(ps, 1.0);
  CHECK_LT(small, 1.0);  // untouched below the threshold
}

TEST_CASE("nn: tensor archive round trips bitwise") {
  Rng rng(17);
  std::map<std::string, Tensor> tensors;
  tensors["conv1.w"] = Tensor::randn({2, 3, 3, 3}, rng);
  tensors["conv1.b"] = Tensor::randn({2}, rng);
  tensors["norm.g"] = Tensor::full({4}, 1.0);
  const std::string path = (std::filesystem::temp_directory_path() / "mvi_archive_test.bin").string();
  save_tensor_archive(path, tensors);
  auto loaded = load_tensor_archive(path);
  REQUIRE_EQ(loaded.size(), tensors.size());
  for (const auto& [name, t] : tensors) {
    REQUIRE(loaded.count(name));
    REQUIRE(loaded[name].shape() == t.shape());
    for (int64_t i = 0; i < t.numel(); ++i) CHECK_EQ(loaded[name].data()[i], t.data()[i]);
  }
  std::filesystem::remove(path);
  CHECK_THROWS_AS((void)load_tensor_archive("/nonexistent/archive.bin"), Error);
}

TEST_CASE("nn: param store load validates names and shapes") {
  ParamStore ps;
  Rng rng(18);
  ps.create("w", Tensor::randn({2, 2}, rng));
  std::map<std::string, Tensor> good{{"w", Tensor::full({2, 2}, 7.0)}};
  ps.load(good);
  CHECK_EQ(ps.get("w")->value.data()[0], 7.0);

  CHECK_THROWS_AS(ps.load({{"nope", Tensor::zeros({1})}}), Error);
  CHECK_THROWS_AS(ps.load({{"w", Tensor::zeros({3, 3})}}), Error);
  CHECK_THROWS_AS(ps.load({}, /*allow_missing=*/false), Error);
  ps.load({}, /*allow_missing=*/true);  // fine
}
