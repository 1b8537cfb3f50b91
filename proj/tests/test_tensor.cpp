#include <random>

#include "doctest.h"
#include "qft/tensor.hpp"

using qft::Tensor;

namespace {

Tensor<float> random_tensor(int rows, int cols, std::uint64_t seed, double lo = -1.0,
                            double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<float> t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(dist(rng));
  return t;
}

}  // namespace

TEST_CASE("matmul against hand-computed products") {
  const auto a = Tensor<float>::from_rows({{1, 2}, {3, 4}});
  const auto b = Tensor<float>::from_rows({{5}, {6}});
  const auto c = matmul(a, b);
  REQUIRE(c.rows() == 2);
  REQUIRE(c.cols() == 1);
  CHECK(c(0, 0) == 17.0f);
  CHECK(c(1, 0) == 39.0f);

  const auto eye = Tensor<float>::from_rows({{1, 0}, {0, 1}});
  CHECK(matmul(eye, a) == a);
  CHECK(matmul(a, eye) == a);
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
  const Tensor<float> a(2, 3, 1.0f);
  const Tensor<float> b(2, 3, 1.0f);
  CHECK_THROWS_AS(matmul(a, b), std::invalid_argument);
}

TEST_CASE("matmul transpose identity on random inputs") {
  const auto a = random_tensor(8, 4, 101);
  const auto b = random_tensor(4, 8, 102);
  const auto left = transpose(matmul(a, b));
  const auto right = matmul(transpose(b), transpose(a));
  REQUIRE(left.same_shape(right));
  for (std::size_t i = 0; i < left.size(); ++i)
    CHECK(left[i] == doctest::Approx(right[i]).epsilon(1e-6));
}

TEST_CASE("matmul associativity is exact on small integers") {
  // integer-valued fp inputs with all intermediate products below 2^24
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> dist(-9, 9);
  Tensor<float> a(5, 6), b(6, 4), c(4, 3);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = static_cast<float>(dist(rng));
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = static_cast<float>(dist(rng));
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = static_cast<float>(dist(rng));
  CHECK(matmul(matmul(a, b), c) == matmul(a, matmul(b, c)));
}

TEST_CASE("transpose definition and involution") {
  const auto a = Tensor<float>::from_rows({{1, 2}, {3, 4}});
  const auto t = transpose(a);
  CHECK(t(0, 0) == 1.0f);
  CHECK(t(0, 1) == 3.0f);
  CHECK(t(1, 0) == 2.0f);
  CHECK(t(1, 1) == 4.0f);
  CHECK(transpose(t) == a);

  const auto row = Tensor<float>::row({1, 2, 3});
  const auto col = transpose(row);
  CHECK(col.rows() == 3);
  CHECK(col.cols() == 1);

  const auto r = random_tensor(5, 9, 103);
  CHECK(transpose(transpose(r)) == r);
}

TEST_CASE("relu and its backward mask") {
  const auto x = Tensor<float>::row({-1, 0, 2});
  const auto y = relu(x);
  CHECK(y[0] == 0.0f);
  CHECK(y[1] == 0.0f);
  CHECK(y[2] == 2.0f);
  CHECK(relu(y) == y);

  const auto a = Tensor<float>::row({-1, 2});
  const auto g = Tensor<float>::row({5, 5});
  const auto masked = relu_backward(a, g);
  CHECK(masked[0] == 0.0f);
  CHECK(masked[1] == 5.0f);

  CHECK_THROWS_AS(relu_backward(a, Tensor<float>::row({1, 2, 3})), std::invalid_argument);
}

TEST_CASE("channel_minmax per row") {
  const auto a = Tensor<float>::from_rows({{1, 3}, {-2, 0}});
  auto [mins, maxs] = channel_minmax(a);
  CHECK(mins[0] == 1.0f);
  CHECK(maxs[0] == 3.0f);
  CHECK(mins[1] == -2.0f);
  CHECK(maxs[1] == 0.0f);

  const Tensor<float> c(3, 4, 2.5f);
  auto [cmins, cmaxs] = channel_minmax(c);
  for (int r = 0; r < 3; ++r) {
    CHECK(cmins[r] == 2.5f);
    CHECK(cmins[r] == cmaxs[r]);
  }
}

TEST_CASE("channel_minmax bounds every element of its row") {
  const auto a = random_tensor(13, 37, 104, -5.0, 5.0);
  auto [mins, maxs] = channel_minmax(a);
  for (int r = 0; r < a.rows(); ++r)
    for (int c = 0; c < a.cols(); ++c) {
      CHECK(mins[r] <= a(r, c));
      CHECK(a(r, c) <= maxs[r]);
    }
}

TEST_CASE("elementwise helpers") {
  const auto a = Tensor<float>::row({1, 2, 3});
  const auto b = Tensor<float>::row({10, 20, 30});
  const auto s = add(a, b);
  CHECK(s[0] == 11.0f);
  CHECK(s[2] == 33.0f);
  const auto d = sub(b, a);
  CHECK(d[0] == 9.0f);
  const auto sc = scale(a, 2.0f);
  CHECK(sc[2] == 6.0f);
  CHECK(sum_squares(a) == doctest::Approx(14.0));
}

TEST_CASE("tensor construction guards") {
  CHECK_THROWS_AS(Tensor<float>(0, 3), std::invalid_argument);
  CHECK_THROWS_AS(Tensor<float>(3, -1), std::invalid_argument);
  CHECK_THROWS_AS((Tensor<float>::from_rows({{1, 2}, {3}})), std::invalid_argument);
}
