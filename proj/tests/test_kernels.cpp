#include "doctest.h"

#include <vector>

#include <cstring>

#include "ctseg/kernels.hpp"
#include "ctseg/rng.hpp"
#include "test_util.hpp"

using namespace ctseg;
namespace k = ctseg::kern;

namespace {

std::vector<double> random_vec(Rng& rng, int64_t n, double lo = -1.0,
                               double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

k::ConvGeom make_geom(int n, int h, int w, int cin, int kh, int kw, int cout,
                      int stride, int dil, bool same_pad) {
  k::ConvGeom g;
  g.n = n; g.h = h; g.w = w; g.cin = cin;
  g.kh = kh; g.kw = kw; g.cout = cout;
  g.stride = stride; g.dilation = dil;
  const int eff_kh = (kh - 1) * dil + 1;
  const int eff_kw = (kw - 1) * dil + 1;
  if (same_pad) {
    g.oh = (h + stride - 1) / stride;
    g.ow = (w + stride - 1) / stride;
    g.pad_y = std::max(0, ((g.oh - 1) * stride + eff_kh - h)) / 2;
    g.pad_x = std::max(0, ((g.ow - 1) * stride + eff_kw - w)) / 2;
  } else {
    g.oh = (h - eff_kh) / stride + 1;
    g.ow = (w - eff_kw) / stride + 1;
  }
  return g;
}

}  // namespace

TEST_SUITE_BEGIN("kernels");

TEST_CASE("matmul hand value") {
  const auto& t = k::table(k::Isa::scalar);
  std::vector<double> a{1, 2, 3, 4};  // [[1,2],[3,4]]
  std::vector<double> b{5, 6};        // [[5],[6]]
  std::vector<double> c(2);
  t.matmul(2, 2, 1, a.data(), b.data(), c.data());
  CHECK(c[0] == 17.0);
  CHECK(c[1] == 39.0);
}

TEST_CASE("scalar and avx2 tables agree bitwise") {
  if (!k::isa_supported(k::Isa::avx2)) {
    MESSAGE("AVX2 not available; equivalence suite skipped");
    return;
  }
  const auto& ks = k::table(k::Isa::scalar);
  const auto& kv = k::table(k::Isa::avx2);
  Rng rng(2024);

  SUBCASE("conv2d forward/backward") {
    struct Cfg { int n, h, w, cin, kh, kw, cout, stride, dil; bool same; };
    const Cfg cfgs[] = {
        {1, 5, 7, 3, 3, 3, 5, 1, 1, true},
        {2, 8, 8, 4, 3, 3, 8, 2, 1, true},
        {1, 9, 6, 7, 3, 3, 6, 1, 2, true},
        {2, 6, 6, 1, 1, 1, 1, 1, 1, true},
        {1, 10, 10, 5, 3, 3, 9, 1, 1, false},
        {1, 7, 7, 2, 5, 5, 3, 2, 1, false},
        {3, 4, 4, 6, 3, 3, 4, 1, 1, true},
        {1, 16, 16, 18, 3, 3, 24, 1, 1, true},
    };
    for (const auto& c : cfgs) {
      const k::ConvGeom g =
          make_geom(c.n, c.h, c.w, c.cin, c.kh, c.kw, c.cout, c.stride, c.dil,
                    c.same);
      const auto in = random_vec(rng, (int64_t)g.n * g.h * g.w * g.cin);
      const auto kw4 = random_vec(rng, (int64_t)g.kh * g.kw * g.cin * g.cout);
      const auto bias = random_vec(rng, g.cout);
      const int64_t out_n = (int64_t)g.n * g.oh * g.ow * g.cout;

      std::vector<double> o1(out_n), o2(out_n);
      ks.conv2d_forward(g, in.data(), kw4.data(), bias.data(), o1.data());
      kv.conv2d_forward(g, in.data(), kw4.data(), bias.data(), o2.data());
      CHECK(testutil::bits_equal(o1.data(), o2.data(), out_n));

      // also without bias
      ks.conv2d_forward(g, in.data(), kw4.data(), nullptr, o1.data());
      kv.conv2d_forward(g, in.data(), kw4.data(), nullptr, o2.data());
      CHECK(testutil::bits_equal(o1.data(), o2.data(), out_n));

      const auto gout = random_vec(rng, out_n);
      std::vector<double> kswap((size_t)g.kh * g.kw * g.cout * g.cin);
      for (int t = 0; t < g.kh * g.kw; ++t)
        for (int ci = 0; ci < g.cin; ++ci)
          for (int co = 0; co < g.cout; ++co)
            kswap[((size_t)t * g.cout + co) * g.cin + ci] =
                kw4[((size_t)t * g.cin + ci) * g.cout + co];

      auto gin1 = random_vec(rng, (int64_t)g.n * g.h * g.w * g.cin, -0.1, 0.1);
      auto gin2 = gin1;
      ks.conv2d_backward_input(g, gout.data(), kswap.data(), gin1.data());
      kv.conv2d_backward_input(g, gout.data(), kswap.data(), gin2.data());
      CHECK(testutil::bits_equal(gin1.data(), gin2.data(), (int64_t)gin1.size()));

      auto gk1 = random_vec(rng, (int64_t)kw4.size(), -0.1, 0.1);
      auto gk2 = gk1;
      ks.conv2d_backward_kernel(g, in.data(), gout.data(), gk1.data());
      kv.conv2d_backward_kernel(g, in.data(), gout.data(), gk2.data());
      CHECK(testutil::bits_equal(gk1.data(), gk2.data(), (int64_t)gk1.size()));
    }
  }

  SUBCASE("matmul") {
    const int dims[][3] = {{1, 1, 1}, {3, 5, 7}, {8, 8, 8}, {5, 13, 6},
                           {2, 100, 9}, {17, 3, 31}};
    for (auto& d : dims) {
      const int m = d[0], kk = d[1], n = d[2];
      const auto a = random_vec(rng, (int64_t)m * kk);
      const auto b = random_vec(rng, (int64_t)kk * n);
      std::vector<double> c1((size_t)m * n), c2((size_t)m * n);
      ks.matmul(m, kk, n, a.data(), b.data(), c1.data());
      kv.matmul(m, kk, n, a.data(), b.data(), c2.data());
      CHECK(testutil::bits_equal(c1.data(), c2.data(), (int64_t)c1.size()));
    }
  }

  SUBCASE("elementwise") {
    for (int64_t n : {1, 3, 4, 7, 64, 1001}) {
      auto a = random_vec(rng, n);
      auto b = random_vec(rng, n);
      // exercise the sign-of-zero path in relu_backward
      a[0] = 0.0;
      if (n > 1) a[1] = -0.0;
      std::vector<double> o1(n), o2(n);
      ks.add(n, a.data(), b.data(), o1.data());
      kv.add(n, a.data(), b.data(), o2.data());
      CHECK(testutil::bits_equal(o1.data(), o2.data(), n));
      ks.mul(n, a.data(), b.data(), o1.data());
      kv.mul(n, a.data(), b.data(), o2.data());
      CHECK(testutil::bits_equal(o1.data(), o2.data(), n));
      ks.relu(n, a.data(), o1.data());
      kv.relu(n, a.data(), o2.data());
      CHECK(testutil::bits_equal(o1.data(), o2.data(), n));

      auto g = random_vec(rng, n);
      auto gx1 = random_vec(rng, n, -0.5, 0.5);
      gx1[0] = -0.0;
      auto gx2 = gx1;
      ks.relu_backward(n, a.data(), g.data(), gx1.data());
      kv.relu_backward(n, a.data(), g.data(), gx2.data());
      CHECK(testutil::bits_equal(gx1.data(), gx2.data(), n));

      auto d1 = random_vec(rng, n);
      auto d2 = d1;
      ks.accumulate(n, g.data(), d1.data());
      kv.accumulate(n, g.data(), d2.data());
      CHECK(testutil::bits_equal(d1.data(), d2.data(), n));
      ks.scale_accumulate(n, 0.37, g.data(), d1.data());
      kv.scale_accumulate(n, 0.37, g.data(), d2.data());
      CHECK(testutil::bits_equal(d1.data(), d2.data(), n));
    }
  }
}


TEST_CASE("float32 conv kernels agree across tables and track the doubles") {
  Rng rng(515);
  struct Cfg { int n, h, w, cin, kh, kw, cout, stride, dil; bool same; };
  const Cfg cfgs[] = {
      {2, 8, 8, 4, 3, 3, 8, 1, 1, true},
      {1, 9, 7, 5, 3, 3, 9, 2, 1, true},
      {1, 10, 10, 3, 3, 3, 11, 1, 2, true},
      {1, 12, 12, 18, 3, 3, 24, 1, 1, true},
  };
  const bool have_avx2 = k::isa_supported(k::Isa::avx2);
  for (const auto& c : cfgs) {
    const k::ConvGeom g =
        make_geom(c.n, c.h, c.w, c.cin, c.kh, c.kw, c.cout, c.stride, c.dil, c.same);
    const auto in_d = random_vec(rng, (int64_t)g.n * g.h * g.w * g.cin);
    const auto k_d = random_vec(rng, (int64_t)g.kh * g.kw * g.cin * g.cout);
    const auto b_d = random_vec(rng, g.cout);
    std::vector<float> in_f(in_d.begin(), in_d.end());
    std::vector<float> k_f(k_d.begin(), k_d.end());
    std::vector<float> b_f(b_d.begin(), b_d.end());
    const int64_t out_n = (int64_t)g.n * g.oh * g.ow * g.cout;

    std::vector<float> o_s(out_n), o_v(out_n);
    k::table_f(k::Isa::scalar).conv2d_forward(g, in_f.data(), k_f.data(), b_f.data(), o_s.data());
    if (have_avx2) {
      k::table_f(k::Isa::avx2).conv2d_forward(g, in_f.data(), k_f.data(), b_f.data(), o_v.data());
      CHECK(std::memcmp(o_s.data(), o_v.data(), out_n * sizeof(float)) == 0);
    }
    // float path stays within single-precision distance of the double path
    std::vector<double> o_d(out_n);
    k::table(k::Isa::scalar).conv2d_forward(g, in_d.data(), k_d.data(), b_d.data(), o_d.data());
    for (int64_t i = 0; i < out_n; ++i)
      CHECK(std::fabs(o_s[i] - o_d[i]) < 1e-4);

    // backward variants, bitwise between tables
    const auto gout_d = random_vec(rng, out_n);
    std::vector<float> gout_f(gout_d.begin(), gout_d.end());
    std::vector<float> kswap_f((size_t)g.kh * g.kw * g.cout * g.cin);
    for (int t = 0; t < g.kh * g.kw; ++t)
      for (int ci = 0; ci < g.cin; ++ci)
        for (int co = 0; co < g.cout; ++co)
          kswap_f[((size_t)t * g.cout + co) * g.cin + ci] =
              k_f[((size_t)t * g.cin + ci) * g.cout + co];
    std::vector<float> gin_s(in_f.size(), 0.0f), gin_v(in_f.size(), 0.0f);
    std::vector<float> gk_s(k_f.size(), 0.0f), gk_v(k_f.size(), 0.0f);
    k::table_f(k::Isa::scalar).conv2d_backward_input(g, gout_f.data(), kswap_f.data(), gin_s.data());
    k::table_f(k::Isa::scalar).conv2d_backward_kernel(g, in_f.data(), gout_f.data(), gk_s.data());
    if (have_avx2) {
      k::table_f(k::Isa::avx2).conv2d_backward_input(g, gout_f.data(), kswap_f.data(), gin_v.data());
      k::table_f(k::Isa::avx2).conv2d_backward_kernel(g, in_f.data(), gout_f.data(), gk_v.data());
      CHECK(std::memcmp(gin_s.data(), gin_v.data(), gin_s.size() * sizeof(float)) == 0);
      CHECK(std::memcmp(gk_s.data(), gk_v.data(), gk_s.size() * sizeof(float)) == 0);
    }
  }
}

TEST_SUITE_END();
