#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dcbpl/rng.hpp"
#include "dcbpl/tensor.hpp"

using namespace dcbpl;
using ag::Tensor;
using Catch::Matchers::WithinAbs;

namespace {

Tensor random_tensor(int rows, int cols, rng::Stream& stream, bool requires_grad = true) {
  std::vector<double> v(static_cast<std::size_t>(rows) * cols);
  for (auto& x : v) x = stream.normal(0.0, 1.0);
  return Tensor::from_data(rows, cols, std::move(v), requires_grad);
}

}  // namespace

TEST_CASE("forward op oracles") {
  SECTION("matmul shapes and values") {
    auto a = Tensor::from_data(2, 3, {1, 2, 3, 4, 5, 6});
    auto b = Tensor::from_data(3, 2, {7, 8, 9, 10, 11, 12});
    auto c = ag::matmul(a, b);
    REQUIRE(c.rows() == 2);
    REQUIRE(c.cols() == 2);
    REQUIRE_THAT(c.at(0, 0), WithinAbs(58.0, 1e-12));
    REQUIRE_THAT(c.at(0, 1), WithinAbs(64.0, 1e-12));
    REQUIRE_THAT(c.at(1, 0), WithinAbs(139.0, 1e-12));
    REQUIRE_THAT(c.at(1, 1), WithinAbs(154.0, 1e-12));
  }

  SECTION("matmul_nt equals matmul against the transpose") {
    rng::Stream stream(1, 0, 0);
    auto a = random_tensor(3, 5, stream, false);
    auto b = random_tensor(4, 5, stream, false);
    std::vector<double> bt(20);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 5; ++j) bt[j * 4 + i] = b.at(i, j);
    auto expected = ag::matmul(a, Tensor::from_data(5, 4, std::move(bt)));
    auto got = ag::matmul_nt(a, b);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j) REQUIRE_THAT(got.at(i, j), WithinAbs(expected.at(i, j), 1e-12));
  }

  SECTION("shape mismatches carry both shapes in the message") {
    auto a = Tensor::zeros(2, 3);
    auto b = Tensor::zeros(2, 3);
    REQUIRE_THROWS_WITH(ag::matmul(a, b),
                        Catch::Matchers::ContainsSubstring("2x3") &&
                            Catch::Matchers::ContainsSubstring("matmul"));
    REQUIRE_THROWS_AS(ag::add(a, Tensor::zeros(3, 2)), DimensionError);
  }

  SECTION("softmax of equal logits is uniform; rows sum to 1") {
    auto s = ag::softmax_rows(Tensor::from_data(1, 4, {0.7, 0.7, 0.7, 0.7}));
    for (int k = 0; k < 4; ++k) REQUIRE_THAT(s.at(0, k), WithinAbs(0.25, 1e-12));
    rng::Stream stream(2, 0, 0);
    auto r = ag::softmax_rows(random_tensor(5, 7, stream, false));
    for (int i = 0; i < 5; ++i) {
      double total = 0.0;
      for (int k = 0; k < 7; ++k) {
        REQUIRE(r.at(i, k) >= 0.0);
        total += r.at(i, k);
      }
      REQUIRE_THAT(total, WithinAbs(1.0, 1e-6));
    }
  }

  SECTION("softmax is stable at extreme logits") {
    auto s = ag::softmax_rows(Tensor::from_data(1, 3, {1000.0, 999.0, -1000.0}));
    REQUIRE(std::isfinite(s.at(0, 0)));
    REQUIRE_THAT(s.at(0, 0) + s.at(0, 1) + s.at(0, 2), WithinAbs(1.0, 1e-12));
  }

  SECTION("layer_norm rows have mean 0 and variance 1") {
    rng::Stream stream(3, 0, 0);
    auto y = ag::layer_norm_rows(random_tensor(4, 16, stream, false));
    for (int i = 0; i < 4; ++i) {
      double mean = 0.0, var = 0.0;
      for (int k = 0; k < 16; ++k) mean += y.at(i, k);
      mean /= 16;
      for (int k = 0; k < 16; ++k) var += (y.at(i, k) - mean) * (y.at(i, k) - mean);
      var /= 16;
      REQUIRE_THAT(mean, WithinAbs(0.0, 1e-6));
      REQUIRE_THAT(var, WithinAbs(1.0, 1e-3));
    }
  }

  SECTION("embedding, concat, slice") {
    auto table = Tensor::from_data(3, 2, {0, 1, 10, 11, 20, 21});
    auto e = ag::embedding_lookup(table, {2, 0, 2});
    REQUIRE(e.rows() == 3);
    REQUIRE_THAT(e.at(0, 1), WithinAbs(21.0, 1e-12));
    REQUIRE_THAT(e.at(1, 0), WithinAbs(0.0, 1e-12));
    auto c = ag::concat_cols({e, e});
    REQUIRE(c.cols() == 4);
    REQUIRE_THAT(c.at(2, 3), WithinAbs(21.0, 1e-12));
    auto s = ag::slice_rows(c, 1, 3);
    REQUIRE(s.rows() == 2);
    REQUIRE_THAT(s.at(0, 0), WithinAbs(0.0, 1e-12));
  }

  SECTION("cross entropy of uniform logits is ln(n)") {
    auto logits = Tensor::zeros(2, 9);
    auto loss = ag::cross_entropy_rows(logits, {0, 1}, {3, 7});
    REQUIRE_THAT(loss.item(), WithinAbs(std::log(9.0), 1e-12));
  }
}

TEST_CASE("backward basics") {
  SECTION("loss = sum(x) gives all-ones gradient") {
    auto x = Tensor::from_data(2, 3, {1, 2, 3, 4, 5, 6}, true);
    ag::backward(ag::sum_all(x));
    for (double g : x.grad()) REQUIRE_THAT(g, WithinAbs(1.0, 1e-12));
  }

  SECTION("loss = sum(x*x) at [1,-2] gives [2,-4]") {
    auto x = Tensor::from_data(1, 2, {1.0, -2.0}, true);
    ag::backward(ag::sum_all(ag::mul(x, x)));
    REQUIRE_THAT(x.grad()[0], WithinAbs(2.0, 1e-12));
    REQUIRE_THAT(x.grad()[1], WithinAbs(-4.0, 1e-12));
  }

  SECTION("non-scalar loss rejected") {
    auto x = Tensor::zeros(2, 2, true);
    REQUIRE_THROWS_AS(ag::backward(ag::mul(x, x)), UsageError);
  }

  SECTION("composed softmax + log-loss matches the fused gradient p - onehot") {
    auto logits = Tensor::from_data(1, 4, {0.3, -0.5, 1.2, 0.0}, true);
    auto fused = ag::cross_entropy_rows(logits, {0}, {2});
    ag::backward(fused);
    auto fused_grad = logits.grad();
    auto p = ag::softmax_rows(Tensor::from_data(1, 4, {0.3, -0.5, 1.2, 0.0}));
    for (int k = 0; k < 4; ++k) {
      double expected = p.at(0, k) - (k == 2 ? 1.0 : 0.0);
      REQUIRE_THAT(fused_grad[k], WithinAbs(expected, 1e-12));
    }
  }

  SECTION("gradients accumulate over all paths") {
    auto x = Tensor::from_data(1, 1, {3.0}, true);
    auto y = ag::add(x, x);  // dy/dx = 2
    ag::backward(ag::sum_all(ag::mul(y, y)));  // d/dx (2x)^2 = 8x = 24
    REQUIRE_THAT(x.grad()[0], WithinAbs(24.0, 1e-12));
  }

  SECTION("backward of a sum of losses equals the sum of backwards") {
    rng::Stream stream(5, 0, 0);
    auto x = random_tensor(2, 3, stream);
    auto w = random_tensor(3, 2, stream);
    auto loss_a = [&] { return ag::sum_all(ag::relu(ag::matmul(x, w))); };
    auto loss_b = [&] { return ag::mean_all(ag::gelu(ag::matmul(x, w))); };
    ag::backward(ag::add(loss_a(), loss_b()));
    auto combined = w.grad();
    ag::backward(loss_a());
    auto ga = w.grad();
    ag::backward(loss_b());
    auto gb = w.grad();
    for (std::size_t i = 0; i < combined.size(); ++i)
      REQUIRE_THAT(combined[i], WithinAbs(ga[i] + gb[i], 1e-9));
  }
}

TEST_CASE("grad_check") {
  SECTION("quadratic form is exact up to roundoff") {
    auto x = Tensor::from_data(1, 3, {0.4, -1.1, 2.0}, true);
    std::vector<Tensor> params = {x};
    double err = ag::grad_check(
        [](const std::vector<Tensor>& ps) { return ag::sum_all(ag::mul(ps[0], ps[0])); }, params,
        1e-5);
    REQUIRE(err < 1e-9);
  }

  SECTION("constant function gives zero analytic and numeric gradients") {
    auto x = Tensor::from_data(1, 2, {1.0, 2.0}, true);
    std::vector<Tensor> params = {x};
    double err = ag::grad_check(
        [](const std::vector<Tensor>&) { return Tensor::scalar(5.0); }, params, 1e-5);
    REQUIRE_THAT(err, WithinAbs(0.0, 1e-12));
  }

  SECTION("every primitive op differentiates correctly") {
    rng::Stream stream(7, 0, 0);
    auto x = random_tensor(3, 4, stream);
    auto w = random_tensor(4, 3, stream);
    auto u = random_tensor(2, 4, stream);  // matmul_nt partner, rectangular on purpose
    auto bias = random_tensor(1, 3, stream);
    std::vector<Tensor> params = {x, w, u, bias};
    auto f = [](const std::vector<Tensor>& ps) {
      auto h = ag::add_rowvec(ag::matmul(ps[0], ps[1]), ps[3]);          // 3x3
      auto nt = ag::matmul_nt(ps[0], ps[2]);                             // 3x2
      auto mixed = ag::concat_cols({ag::gelu(h), ag::relu(nt)});         // 3x5
      auto normed = ag::mul_rowvec(ag::layer_norm_rows(mixed),
                                   Tensor::from_data(1, 5, {1, 2, 1, 0.5, 1}));
      auto probs = ag::softmax_rows(ag::scale(normed, 1.7));
      return ag::add(ag::mean_all(ag::mul(probs, probs)),
                     ag::sum_all(ag::slice_rows(mixed, 0, 2)));
    };
    double err = ag::grad_check(f, params, 1e-5);
    REQUIRE(err < 1e-6);
  }

  SECTION("embedding and cross entropy differentiate correctly") {
    rng::Stream stream(9, 0, 0);
    auto table = random_tensor(6, 4, stream);
    auto proj = random_tensor(4, 6, stream);
    std::vector<Tensor> params = {table, proj};
    auto f = [](const std::vector<Tensor>& ps) {
      auto e = ag::embedding_lookup(ps[0], {1, 4, 4, 0});
      auto logits = ag::matmul(e, ps[1]);
      return ag::cross_entropy_rows(logits, {1, 2, 3}, {0, 5, 2});
    };
    double err = ag::grad_check(f, params, 1e-5);
    REQUIRE(err < 1e-6);
  }
}

TEST_CASE("determinism and value semantics") {
  SECTION("identical inputs give bit-identical forward values") {
    rng::Stream s1(11, 0, 0), s2(11, 0, 0);
    auto a1 = random_tensor(4, 4, s1, false);
    auto a2 = random_tensor(4, 4, s2, false);
    auto y1 = ag::softmax_rows(ag::gelu(a1));
    auto y2 = ag::softmax_rows(ag::gelu(a2));
    REQUIRE(y1.value() == y2.value());
  }

  SECTION("ops do not alias their inputs") {
    auto x = Tensor::from_data(1, 2, {1.0, 2.0});
    auto y = ag::scale(x, 3.0);
    REQUIRE_THAT(x.at(0, 0), WithinAbs(1.0, 1e-15));
    REQUIRE_THAT(y.at(0, 0), WithinAbs(3.0, 1e-15));
  }
}
