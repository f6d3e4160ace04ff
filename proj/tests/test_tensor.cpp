#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <vector>

#include "unibrain/common.hpp"
#include "unibrain/tensor.hpp"

using namespace ub;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale_v = 1.0) {
  Tensor t(std::move(shape));
  double* p = t.data();
  for (long i = 0; i < t.size(); ++i) p[i] = rng.normal() * scale_v;
  return t;
}

// convolution straight from the definition; the real path goes through
// im2col + GEMM, so this is an independent cross-check
std::vector<double> naive_conv3d(const Tensor& x, const Tensor& W, const Tensor& b, int stride) {
  int cin = x.dim(0), X = x.dim(1), Y = x.dim(2), Z = x.dim(3);
  int cout = W.dim(0);
  auto oext = [stride](int n) { return (n - 3 + 2) / stride + 1; };
  int Xo = oext(X), Yo = oext(Y), Zo = oext(Z);
  std::vector<double> out(std::size_t(cout) * Xo * Yo * Zo, 0.0);
  for (int co = 0; co < cout; ++co)
    for (int ox = 0; ox < Xo; ++ox)
      for (int oy = 0; oy < Yo; ++oy)
        for (int oz = 0; oz < Zo; ++oz) {
          double acc = b.defined() ? b(co) : 0.0;
          for (int ci = 0; ci < cin; ++ci)
            for (int kx = 0; kx < 3; ++kx)
              for (int ky = 0; ky < 3; ++ky)
                for (int kz = 0; kz < 3; ++kz) {
                  int ix = ox * stride - 1 + kx;
                  int iy = oy * stride - 1 + ky;
                  int iz = oz * stride - 1 + kz;
                  if (ix < 0 || ix >= X || iy < 0 || iy >= Y || iz < 0 || iz >= Z) continue;
                  double xv = x.values()[((std::size_t(ci) * X + ix) * Y + iy) * Z + iz];
                  double wv = W(co, (ci * 3 + kx) * 9 + ky * 3 + kz);
                  acc += xv * wv;
                }
          out[((std::size_t(co) * Xo + ox) * Yo + oy) * Zo + oz] = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("tensor construction and shape errors") {
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t(1, 2) == 0.0);
  CHECK_THROWS_AS(Tensor(Shape{0, 2}), Error);
  CHECK_THROWS_AS(Tensor(Shape{2}, {1.0, 2.0, 3.0}), Error);
  CHECK_THROWS_AS(add(Tensor({2}), Tensor({3})), Error);
  CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({4, 2})), Error);
  CHECK(Tensor::scalar(4.5).item() == 4.5);
}

TEST_CASE("matmul matches a hand computation") {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 2}, {5, 6, 7, 8});
  Tensor c = matmul(a, b);
  CHECK(c(0, 0) == 19.0);
  CHECK(c(0, 1) == 22.0);
  CHECK(c(1, 0) == 43.0);
  CHECK(c(1, 1) == 50.0);
}

TEST_CASE("elementwise forward values") {
  Tensor x({3}, {0.0, 1.0, -2.0});
  CHECK(sigmoid(x)(0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(sigmoid(x)(1) == doctest::Approx(0.7310585786300049).epsilon(1e-14));
  CHECK(relu(x)(2) == 0.0);
  CHECK(exp_t(x)(1) == doctest::Approx(std::exp(1.0)).epsilon(1e-15));
  CHECK(log_t(Tensor({1}, {0.0})).item() == doctest::Approx(std::log(1e-12)).epsilon(1e-14));
  CHECK(clamp(x, -1.0, 0.5)(2) == -1.0);
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
  Rng rng(7);
  Tensor a = random_tensor({5, 9}, rng, 3.0);
  Tensor s = softmax(a);
  for (int r = 0; r < 5; ++r) {
    double sum = 0.0;
    for (int c = 0; c < 9; ++c) sum += s(r, c);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
  Tensor shifted = add_scalar(a, 123.5);
  Tensor s2 = softmax(shifted);
  for (long i = 0; i < s.size(); ++i)
    CHECK(s.values()[std::size_t(i)] ==
          doctest::Approx(s2.values()[std::size_t(i)]).epsilon(1e-12));
  // extreme logits stay finite
  Tensor big({2}, {1e6, -1e6});
  Tensor sb = softmax(big);
  CHECK(std::isfinite(sb(0)));
  CHECK(sb(0) == doctest::Approx(1.0).epsilon(1e-12));
  // log_softmax agrees with log(softmax) on moderate values
  Tensor ls = log_softmax(a);
  for (long i = 0; i < ls.size(); ++i)
    CHECK(ls.values()[std::size_t(i)] ==
          doctest::Approx(std::log(s.values()[std::size_t(i)])).epsilon(1e-10));
}

TEST_CASE("l2_normalize produces unit rows") {
  Rng rng(11);
  Tensor a = random_tensor({4, 6}, rng, 2.0);
  Tensor n = l2_normalize(a);
  for (int r = 0; r < 4; ++r) {
    double s = 0.0;
    for (int c = 0; c < 6; ++c) s += n(r, c) * n(r, c);
    CHECK(std::sqrt(s) == doctest::Approx(1.0).epsilon(1e-12));
  }
  Tensor z({3});  // zero vector stays finite
  Tensor nz = l2_normalize(z);
  for (int i = 0; i < 3; ++i) CHECK(nz(i) == 0.0);
}

TEST_CASE("conv3d forward matches the naive definition") {
  Rng rng(3);
  for (int stride : {1, 2}) {
    Tensor x = random_tensor({2, 4, 5, 3}, rng);
    Tensor W = random_tensor({3, 54}, rng);
    Tensor b = random_tensor({3}, rng);
    Tensor y = conv3d(x, W, b, stride);
    auto ref = naive_conv3d(x, W, b, stride);
    REQUIRE(y.size() == long(ref.size()));
    for (std::size_t i = 0; i < ref.size(); ++i)
      CHECK(y.values()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv3d output extents") {
  Tensor x({1, 32, 32, 8});
  Tensor W({8, 27});
  Tensor y = conv3d(x, W, Tensor(), 2);
  CHECK(y.shape() == Shape{8, 16, 16, 4});
  Tensor y2 = conv3d(x, W, Tensor(), 1);
  CHECK(y2.shape() == Shape{8, 32, 32, 8});
}

TEST_CASE("tape gradients: basics and non-participating leaves") {
  Tensor x({2}, {3.0, -1.0});
  Tensor unused({3}, {1.0, 1.0, 1.0});
  Tape tape;
  tape.watch(x);
  tape.watch(unused);
  Tensor loss = sum_all(mul(x, x));  // d/dx = 2x
  auto grads = tape.gradients(loss);
  auto gx = grads.get(x);
  CHECK(gx[0] == doctest::Approx(6.0).epsilon(1e-14));
  CHECK(gx[1] == doctest::Approx(-2.0).epsilon(1e-14));
  auto gu = grads.get(unused);
  CHECK(gu.size() == 3);
  for (double v : gu) CHECK(v == 0.0);
}

TEST_CASE("tape rejects non-scalar loss and double use") {
  Tensor x({2}, {1.0, 2.0});
  Tape tape;
  tape.watch(x);
  Tensor y = mul(x, x);
  CHECK_THROWS_AS((void)tape.gradients(y), Error);
  Tape tape2;
  tape2.watch(x);
  Tensor loss = sum_all(x);
  (void)tape2.gradients(loss);
  CHECK_THROWS_AS((void)tape2.gradients(loss), Error);
}

TEST_CASE("tensors from a dead tape degrade to constants") {
  Tensor x({2}, {1.0, 2.0});
  Tensor stale;
  {
    Tape old_tape;
    old_tape.watch(x);
    stale = mul(x, x);
  }
  Tape tape;
  tape.watch(x);
  Tensor loss = sum_all(add(mul(x, x), stale));  // stale is constant here
  auto grads = tape.gradients(loss);
  auto gx = grads.get(x);
  CHECK(gx[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(gx[1] == doctest::Approx(4.0).epsilon(1e-14));
}

TEST_CASE("finite differences: every primitive") {
  Rng rng(17);
  const double tol = 1e-4;

  SUBCASE("add sub mul scale add_scalar") {
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
    std::vector<Tensor> ps{a, b};
    CHECK(finite_diff_check(
              [](std::span<const Tensor> p) {
                return sum_all(mul(add(p[0], p[1]), sub(scale(p[0], 1.7), add_scalar(p[1], 0.3))));
              },
              ps) < tol);
  }
  SUBCASE("exp log sigmoid relu clamp") {
    Tensor a = random_tensor({2, 5}, rng);
    // keep values clear of the relu/clamp kinks so FD is valid
    double* pa = a.data();
    for (long i = 0; i < a.size(); ++i)
      if (std::fabs(pa[i]) < 0.05) pa[i] = 0.3;
    std::vector<Tensor> ps{a};
    CHECK(finite_diff_check(
              [](std::span<const Tensor> p) {
                Tensor e = exp_t(scale(p[0], 0.5));
                Tensor l = log_t(add_scalar(mul(p[0], p[0]), 1.0));
                Tensor s = sigmoid(p[0]);
                Tensor r = relu(p[0]);
                Tensor c = clamp(p[0], -0.8, 0.8);
                return sum_all(add(add(e, l), add(mul(s, r), c)));
              },
              ps) < tol);
  }
  SUBCASE("matmul transpose affine") {
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
    Tensor W = random_tensor({2, 3}, rng), bias = random_tensor({3}, rng);
    std::vector<Tensor> ps{a, b, W, bias};
    CHECK(finite_diff_check(
              [](std::span<const Tensor> p) {
                Tensor m = matmul(p[0], p[1]);          // [3,2]
                Tensor f = affine(m, p[2], p[3]);       // [3,3]
                return sum_all(mul(f, transpose(transpose(f))));
              },
              ps) < tol);
  }
  SUBCASE("vector affine") {
    Tensor x = random_tensor({4}, rng);
    Tensor W = random_tensor({4, 3}, rng), bias = random_tensor({3}, rng);
    std::vector<Tensor> ps{x, W, bias};
    CHECK(finite_diff_check(
              [](std::span<const Tensor> p) {
                return sum_all(sigmoid(affine(p[0], p[1], p[2])));
              },
              ps) < tol);
  }
  SUBCASE("reductions and shape ops") {
    Tensor a = random_tensor({4, 6}, rng);
    std::vector<Tensor> ps{a};
    CHECK(finite_diff_check(
              [](std::span<const Tensor> p) {
                Tensor r = reshape(p[0], {2, 12});
                Tensor s0 = sum_axis(r, 0);          // [12]
                Tensor m1 = mean_axis(p[0], 1);      // [4]
                Tensor sl = slice_cols(p[0], 1, 3);  // [4,3]
                Tensor sr = slice_rows(p[0], 1, 2);  // [2,6]
                return add(add(sum_all(mul(s0, s0)), sum_all(mul(m1, m1))),
                           add(sum_all(sl), sum_all(sr)));
              },
              ps) < tol);
  }
  SUBCASE("concat stack diagonal") {
    Tensor a = random_tensor({3, 2}, rng), b = random_tensor({3, 3}, rng);
    Tensor r0 = random_tensor({4}, rng), r1 = random_tensor({4}, rng);
    std::vector<Tensor> ps{a, b, r0, r1};
    CHECK(finite_diff_check(
              [](std::span<const Tensor> p) {
                std::vector<Tensor> parts{p[0], p[1]};
                Tensor cc = concat_cols(parts);  // [3,5]
                std::vector<Tensor> rows{p[2], p[3]};
                Tensor st = stack_rows(rows);    // [2,4]
                Tensor sq = matmul(st, transpose(st));  // [2,2]
                return add(sum_all(mul(cc, cc)), sum_all(diagonal(sq)));
              },
              ps) < tol);
  }
  SUBCASE("softmax log_softmax l2_normalize") {
    Tensor a = random_tensor({4, 5}, rng);
    std::vector<Tensor> ps{a};
    CHECK(finite_diff_check(
              [](std::span<const Tensor> p) {
                Tensor sm = softmax(p[0]);
                Tensor lsm = log_softmax(scale(p[0], 1.3));
                Tensor nn = l2_normalize(add_scalar(p[0], 0.5));
                return add(sum_all(mul(sm, lsm)), sum_all(mul(nn, nn)));
              },
              ps) < tol);
  }
  SUBCASE("mul_scalar_tensor") {
    Tensor a = random_tensor({3, 3}, rng);
    Tensor s = Tensor::scalar(0.7);
    std::vector<Tensor> ps{a, s};
    CHECK(finite_diff_check(
              [](std::span<const Tensor> p) {
                return sum_all(mul_scalar_tensor(p[0], exp_t(p[1])));
              },
              ps) < tol);
  }
  SUBCASE("conv3d and channels_last") {
    for (int stride : {1, 2}) {
      Tensor x = random_tensor({2, 4, 4, 3}, rng);
      Tensor W = random_tensor({3, 54}, rng, 0.5);
      Tensor b = random_tensor({3}, rng);
      std::vector<Tensor> ps{x, W, b};
      CHECK(finite_diff_check(
                [stride](std::span<const Tensor> p) {
                  Tensor y = conv3d(p[0], p[1], p[2], stride);
                  Tensor pm = channels_last(y);
                  return sum_all(mul(pm, pm));
                },
                ps) < tol);
    }
  }
  SUBCASE("reused tensor accumulates gradient") {
    Tensor a = random_tensor({3}, rng);
    std::vector<Tensor> ps{a};
    CHECK(finite_diff_check(
              [](std::span<const Tensor> p) {
                return add(sum_all(mul(p[0], p[0])), sum_all(exp_t(p[0])));
              },
              ps) < tol);
  }
}

TEST_CASE("results are identical for any thread count") {
  Rng rng(23);
  Tensor x = random_tensor({2, 8, 8, 6}, rng);
  Tensor W = random_tensor({4, 54}, rng);
  Tensor b = random_tensor({4}, rng);

  auto run = [&](const char* threads) {
    setenv("UNIBRAIN_THREADS", threads, 1);
    Tape tape;
    tape.watch(W);
    tape.watch(b);
    Tensor y = conv3d(x, W, b, 2);
    Tensor loss = sum_all(mul(y, y));
    auto grads = tape.gradients(loss);
    std::vector<double> out = y.values();
    auto gw = grads.get(W);
    out.insert(out.end(), gw.begin(), gw.end());
    out.push_back(loss.item());
    return out;
  };
  auto one = run("1");
  auto four = run("4");
  unsetenv("UNIBRAIN_THREADS");
  REQUIRE(one.size() == four.size());
  for (std::size_t i = 0; i < one.size(); ++i) CHECK(one[i] == four[i]);
}

TEST_CASE("rng substreams are deterministic") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(seed_stream(42, 1) != seed_stream(42, 2));
  CHECK(seed_stream(42, 1) == seed_stream(42, 1));
  Rng u(5);
  for (int i = 0; i < 1000; ++i) {
    double v = u.uniform01();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
  }
}
