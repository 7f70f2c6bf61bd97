#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "mmtrans/tensor.hpp"

using namespace mmtrans;

TEST_CASE("shape bookkeeping") {
  Tensor t({2, 3, 4});
  CHECK(t.rank() == 3);
  CHECK(t.numel() == 24);
  CHECK(t.extent(1) == 3);
  CHECK(t.tail(2) == 12);
  CHECK(t.lead(2) == 2);
  t.at({1, 2, 3}) = 7.5;
  CHECK(t[23] == 7.5);

  Tensor s = Tensor::scalar(3.0);
  CHECK(s.rank() == 0);
  CHECK(s.numel() == 1);
  CHECK(s[0] == 3.0);

  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
}

TEST_CASE("matmul identity, zero, associativity") {
  Tensor I({2, 2}, {1, 0, 0, 1});
  Tensor A({2, 2}, {1.5, -2, 3, 0.25});
  Tensor IA = t_matmul(I, A);
  for (int64_t i = 0; i < 4; ++i) CHECK(IA[i] == A[i]);

  Tensor Z = Tensor::zeros({2, 2});
  Tensor ZA = t_matmul(Z, A);
  for (int64_t i = 0; i < 4; ++i) CHECK(ZA[i] == 0.0);

  std::mt19937_64 rng(7);
  Tensor X = t_uniform({3, 4}, -1, 1, rng);
  Tensor Y = t_uniform({4, 5}, -1, 1, rng);
  Tensor W = t_uniform({5, 2}, -1, 1, rng);
  Tensor left = t_matmul(t_matmul(X, Y), W);
  Tensor right = t_matmul(X, t_matmul(Y, W));
  REQUIRE(left.same_shape(right));
  for (int64_t i = 0; i < left.numel(); ++i)
    CHECK(left[i] == Catch::Approx(right[i]).margin(1e-10));
}

TEST_CASE("matmul shape errors name both shapes") {
  Tensor a({2, 3});
  Tensor b({4, 2});
  try {
    t_matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("(2,3)") != std::string::npos);
    CHECK(msg.find("(4,2)") != std::string::npos);
  }
}

TEST_CASE("batched matmul and rank-2 broadcast") {
  std::mt19937_64 rng(11);
  Tensor a = t_uniform({2, 3, 4}, -1, 1, rng);
  Tensor b = t_uniform({4, 5}, -1, 1, rng);
  Tensor out = t_matmul(a, b);
  REQUIRE(out.shape() == Shape({2, 3, 5}));
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t i = 0; i < 3; ++i)
      for (int64_t j = 0; j < 5; ++j) {
        double acc = 0;
        for (int64_t k = 0; k < 4; ++k)
          acc += a.at({n, i, k}) * b.at({k, j});
        CHECK(out.at({n, i, j}) == Catch::Approx(acc).margin(1e-12));
      }

  Tensor b3 = t_uniform({2, 4, 5}, -1, 1, rng);
  Tensor out3 = t_matmul(a, b3);
  REQUIRE(out3.shape() == Shape({2, 3, 5}));
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t i = 0; i < 3; ++i)
      for (int64_t j = 0; j < 5; ++j) {
        double acc = 0;
        for (int64_t k = 0; k < 4; ++k)
          acc += a.at({n, i, k}) * b3.at({n, k, j});
        CHECK(out3.at({n, i, j}) == Catch::Approx(acc).margin(1e-12));
      }
}

TEST_CASE("relu definition") {
  Tensor x({2}, {-1, 2});
  Tensor y = t_relu(x);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 2.0);
}

TEST_CASE("concat_last shapes and values") {
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b({2, 5}, {10, 11, 12, 13, 14, 20, 21, 22, 23, 24});
  Tensor c = t_concat_last(a, b);
  REQUIRE(c.shape() == Shape({2, 8}));
  CHECK(c.at({0, 0}) == 1);
  CHECK(c.at({0, 3}) == 10);
  CHECK(c.at({1, 2}) == 6);
  CHECK(c.at({1, 7}) == 24);
  CHECK_THROWS_AS(t_concat_last(a, Tensor({3, 5})), ShapeError);
}

TEST_CASE("slice and transpose round-trips") {
  std::mt19937_64 rng(3);
  Tensor a = t_uniform({2, 3, 7}, -1, 1, rng);
  Tensor s = t_slice_last(a, 2, 4);
  REQUIRE(s.shape() == Shape({2, 3, 4}));
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t i = 0; i < 3; ++i)
      for (int64_t j = 0; j < 4; ++j)
        CHECK(s.at({n, i, j}) == a.at({n, i, 2 + j}));
  CHECK_THROWS_AS(t_slice_last(a, 5, 4), ShapeError);

  Tensor t = t_transpose_last2(a);
  REQUIRE(t.shape() == Shape({2, 7, 3}));
  Tensor back = t_transpose_last2(t);
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(back[i] == a[i]);
}

TEST_CASE("softmax fixed points") {
  Tensor two({2}, {0, 0});
  Tensor soft2 = t_softmax(two);
  CHECK(soft2[0] == Catch::Approx(0.5).margin(1e-15));
  CHECK(soft2[1] == Catch::Approx(0.5).margin(1e-15));

  Tensor one({1}, {42.0});
  CHECK(t_softmax(one)[0] == 1.0);

  Tensor x({3}, {1, 2, 3});
  Tensor y = t_softmax(x);
  double e1 = std::exp(1.0), e2 = std::exp(2.0), e3 = std::exp(3.0);
  double z = e1 + e2 + e3;
  CHECK(y[0] == Catch::Approx(e1 / z).margin(1e-12));
  CHECK(y[1] == Catch::Approx(e2 / z).margin(1e-12));
  CHECK(y[2] == Catch::Approx(e3 / z).margin(1e-12));
}

TEST_CASE("softmax rows sum to 1 on any axis") {
  std::mt19937_64 rng(5);
  Tensor a = t_uniform({3, 4, 6}, -50, 50, rng);
  for (int64_t axis : {0L, 1L, 2L, -1L}) {
    Tensor y = t_softmax(a, axis);
    int64_t ax = axis < 0 ? axis + 3 : axis;
    const int64_t n = a.extent(ax);
    int64_t outer = 1, inner = 1;
    for (int64_t i = 0; i < ax; ++i) outer *= a.extent(i);
    for (int64_t i = ax + 1; i < 3; ++i) inner *= a.extent(i);
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t in = 0; in < inner; ++in) {
        double sum = 0;
        for (int64_t i = 0; i < n; ++i) sum += y[o * n * inner + i * inner + in];
        CHECK(sum == Catch::Approx(1.0).margin(1e-6));
      }
  }
  CHECK_THROWS_AS(t_softmax(a, 3), ShapeError);
}

TEST_CASE("additive -1e9 offset masks a position to exactly zero weight") {
  Tensor x({3}, {0.7, 0.7 - 1e9, -0.2});
  Tensor y = t_softmax(x);
  CHECK(y[1] == 0.0);  // exp underflows: exact zero, not merely small
  CHECK(y[0] + y[2] == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("layer_norm fixed points") {
  Tensor g1 = Tensor::ones({4});
  Tensor b0 = Tensor::zeros({4});

  Tensor c = Tensor::full({4}, 3.25);
  Tensor yc = t_layer_norm(c, g1, b0, 1e-6);
  for (int64_t i = 0; i < 4; ++i) CHECK(yc[i] == 0.0);

  // A row that is already zero-mean unit-variance maps to itself.
  Tensor std_row({4}, {-1.3416407864998738, -0.4472135954999579,
                       0.4472135954999579, 1.3416407864998738});
  Tensor ys = t_layer_norm(std_row, g1, b0, 1e-6);
  for (int64_t i = 0; i < 4; ++i)
    CHECK(ys[i] == Catch::Approx(std_row[i]).margin(1e-6));

  Tensor g0 = Tensor::zeros({4});
  Tensor bias({4}, {1, 2, 3, 4});
  std::mt19937_64 rng(9);
  Tensor r = t_uniform({2, 4}, -5, 5, rng);
  Tensor yb = t_layer_norm(r, g0, bias, 1e-6);
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t j = 0; j < 4; ++j) CHECK(yb.at({i, j}) == bias[j]);
}

TEST_CASE("layer_norm standardizes before the affine map") {
  std::mt19937_64 rng(13);
  Tensor a = t_uniform({5, 16}, -3, 3, rng);
  Tensor y = t_layer_norm(a, Tensor::ones({16}), Tensor::zeros({16}), 1e-6);
  for (int64_t r = 0; r < 5; ++r) {
    double mean = 0, var = 0;
    for (int64_t i = 0; i < 16; ++i) mean += y.at({r, i});
    mean /= 16;
    for (int64_t i = 0; i < 16; ++i)
      var += (y.at({r, i}) - mean) * (y.at({r, i}) - mean);
    var /= 16;
    CHECK(mean == Catch::Approx(0.0).margin(1e-9));
    CHECK(var == Catch::Approx(1.0).margin(1e-4));
  }
}

TEST_CASE("add broadcasts a suffix shape") {
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b({3}, {10, 20, 30});
  Tensor c = t_add(a, b);
  CHECK(c.at({0, 0}) == 11);
  CHECK(c.at({1, 2}) == 36);
  CHECK_THROWS_AS(t_add(a, Tensor({2})), ShapeError);
  Tensor same = t_add(a, a);
  CHECK(same.at({1, 1}) == 10);
}

TEST_CASE("mul and scale and sum") {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 2}, {5, 6, 7, 8});
  Tensor m = t_mul(a, b);
  CHECK(m[3] == 32);
  CHECK_THROWS_AS(t_mul(a, Tensor({4})), ShapeError);
  Tensor s = t_scale(a, -0.5);
  CHECK(s[1] == -1.0);
  CHECK(t_sum(a) == 10.0);
  CHECK(t_log(Tensor({1}, {1.0}))[0] == 0.0);
}
