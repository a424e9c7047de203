#include <doctest.h>

#include "dermnet/errors.hpp"
#include "dermnet/random.hpp"
#include "dermnet/tensor.hpp"

using namespace dermnet;

TEST_CASE("fill constructor repeats the scalar") {
  Tensor t({2, 2}, 0.0f);
  CHECK(t.size() == 4);
  for (float v : t.data()) CHECK(v == 0.0f);
}

TEST_CASE("buffer constructor is row-major NHWC") {
  Tensor t({1, 2, 2, 1}, std::vector<float>{1, 2, 3, 4});
  CHECK(t.at({0, 1, 1, 0}) == 4.0f);
  CHECK(t.at({0, 1, 0, 0}) == 3.0f);
}

TEST_CASE("construction errors") {
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 0}, 1.0f), ShapeError);
  CHECK_THROWS_AS(Tensor({1, 1, 1, 1, 1}, 1.0f), ShapeError);
  CHECK_THROWS_AS(Tensor(Tensor::Shape{}, 1.0f), ShapeError);
}

TEST_CASE("at") {
  Tensor t({2, 2}, std::vector<float>{1, 2, 3, 4});
  CHECK(t.at({1, 0}) == 3.0f);
  CHECK(t.at({0, 0}) == 1.0f);
  CHECK_THROWS_AS(t.at({2, 0}), IndexError);
  CHECK_THROWS_AS(t.at({0}), IndexError);
}

TEST_CASE("at over every coordinate reconstructs the buffer") {
  Rng rng(3);
  std::vector<float> buf(2 * 3 * 4 * 5);
  for (auto& v : buf) v = float(rng.uniform(-5, 5));
  Tensor t({2, 3, 4, 5}, buf);
  std::size_t i = 0;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t h = 0; h < 3; ++h)
      for (std::size_t w = 0; w < 4; ++w)
        for (std::size_t c = 0; c < 5; ++c) CHECK(t.at({n, h, w, c}) == buf[i++]);
}

TEST_CASE("allclose") {
  Tensor a({3}, std::vector<float>{1, 2, 3});
  CHECK(allclose(a, a, 0, 0));
  CHECK(allclose(Tensor({1}, 1.0f), Tensor({1}, 1.00005f), 1e-4, 0));
  CHECK_FALSE(allclose(Tensor({2}, 1.0f), Tensor({3}, 1.0f), 1, 1));
  CHECK_FALSE(allclose(Tensor({1}, 1.0f), Tensor({1}, 1.1f), 1e-4, 0));
}

TEST_CASE("allclose is symmetric with zero relative tolerance") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor a({4}, 0.0f), b({4}, 0.0f);
    for (std::size_t i = 0; i < 4; ++i) {
      a[i] = float(rng.uniform(-1, 1));
      b[i] = a[i] + float(rng.uniform(-0.01, 0.01));
    }
    const double tol = rng.uniform(0, 0.01);
    CHECK(allclose(a, b, 0, tol) == allclose(b, a, 0, tol));
  }
}

TEST_CASE("all_finite") {
  Tensor t({2}, 1.0f);
  CHECK(t.all_finite());
  t[1] = std::numeric_limits<float>::infinity();
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("shape helpers") {
  CHECK(shape_product({2, 3, 4}) == 24);
  CHECK(shape_string({1, 224, 224, 3}) == "(1,224,224,3)");
}
