#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "helpers.hpp"
#include "kaqa/kernels.hpp"
#include "kaqa/tensor.hpp"

using namespace kaqa;
using testutil::max_abs_diff;
using testutil::random_tensor;
using testutil::values;

namespace {

std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                 std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

// Checks d(w·op(inputs))/d(inputs) from backward() against central differences.
void check_op_gradient(const std::function<Tensor(const std::vector<Tensor>&)>& op, std::vector<Tensor> inputs,
                       std::mt19937_64& rng, double tol = 1e-7) {
  const Tensor probe = op(inputs);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> w(probe.size());
  for (auto& x : w) x = dist(rng);
  auto f = [&] {
    NoGradGuard g;
    return testutil::weighted_sum(op(inputs), w).item();
  };
  for (auto& in : inputs) in.zero_grad();
  backward(testutil::weighted_sum(op(inputs), w));
  for (auto& in : inputs) {
    if (!in.requires_grad()) continue;
    const auto numeric = testutil::numeric_grad(f, in);
    const auto analytic = in.has_grad() ? values(Tensor::vector({in.grad().begin(), in.grad().end()}))
                                        : std::vector<double>(in.size(), 0.0);
    CHECK(max_abs_diff(numeric, analytic) < tol);
  }
}

}  // namespace

TEST_CASE("matmul matches a triple loop") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng() % 7, k = 1 + rng() % 7, n = 1 + rng() % 7;
    const auto a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng);
    const auto c = matmul(a, b);
    CHECK(c.shape() == Shape{m, n});
    CHECK(max_abs_diff(values(c), naive_matmul(values(a), values(b), m, k, n)) < 1e-13);
  }
}

TEST_CASE("matmul on mismatched shapes throws ShapeError") {
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
  CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
}

TEST_CASE("serial and parallel kernels are bitwise identical") {
  std::mt19937_64 rng(2);
  for (std::size_t n : {3u, 17u, 64u, 130u}) {
    const std::size_t m = n + 1, k = n + 2;
    const kernels::GemmDims d{m, k, n};
    const auto a = values(random_tensor({m, k}, rng)), b = values(random_tensor({k, n}, rng));
    const auto bt = values(random_tensor({n, k}, rng)), at = values(random_tensor({k, m}, rng));
    std::vector<double> c1(m * n), c2(m * n);
    kernels::serial::gemm_nn(d, a, b, c1, false);
    kernels::parallel::gemm_nn(d, a, b, c2, false);
    CHECK(c1 == c2);
    kernels::serial::gemm_nt(d, a, bt, c1, true);
    kernels::parallel::gemm_nt(d, a, bt, c2, true);
    CHECK(c1 == c2);
    kernels::serial::gemm_tn(d, at, b, c1, false);
    kernels::parallel::gemm_tn(d, at, b, c2, false);
    CHECK(c1 == c2);
    std::vector<double> s1(m * k), s2(m * k);
    kernels::serial::softmax_rows(m, k, a, s1);
    kernels::parallel::softmax_rows(m, k, a, s2);
    CHECK(s1 == s2);
  }
}

TEST_CASE("gemm variants agree with the naive product") {
  std::mt19937_64 rng(3);
  const std::size_t m = 5, k = 4, n = 6;
  const auto a = values(random_tensor({m, k}, rng)), b = values(random_tensor({k, n}, rng));
  const auto want = naive_matmul(a, b, m, k, n);
  std::vector<double> at(k * m), bt(n * k), c(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) at[p * m + i] = a[i * k + p];
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  kernels::serial::gemm_tn({m, k, n}, at, b, c, false);
  CHECK(max_abs_diff(c, want) < 1e-13);
  kernels::serial::gemm_nt({m, k, n}, a, bt, c, false);
  CHECK(max_abs_diff(c, want) < 1e-13);
}

TEST_CASE("softmax rows sum to one and survive large logits") {
  const auto x = Tensor::from({2, 3}, {1000.0, 1001.0, 1002.0, -5.0, 0.0, 5.0});
  const auto y = softmax(x, 1);
  for (std::size_t r = 0; r < 2; ++r) CHECK(std::abs(y.at(r, 0) + y.at(r, 1) + y.at(r, 2) - 1.0) < 1e-15);
  CHECK(std::isfinite(y.at(0, 2)));
  const auto col = softmax(x, 0);
  CHECK(std::abs(col.at(0, 1) + col.at(1, 1) - 1.0) < 1e-15);
}

TEST_CASE("sigmoid is finite and in range at extremes") {
  const auto y = sigmoid(Tensor::vector({-800.0, 0.0, 800.0}));
  CHECK(y.at(0) >= 0.0);
  CHECK(y.at(1) == doctest::Approx(0.5));
  CHECK(y.at(2) <= 1.0);
}

TEST_CASE("every op's backward matches central differences") {
  std::mt19937_64 rng(4);
  auto leaf = [&](Shape s, double bound = 1.0) { return random_tensor(std::move(s), rng, bound, true); };
  using V = std::vector<Tensor>;
  check_op_gradient([](const V& x) { return matmul(x[0], x[1]); }, {leaf({3, 4}), leaf({4, 2})}, rng);
  check_op_gradient([](const V& x) { return add(x[0], x[1]); }, {leaf({3, 2}), leaf({3, 2})}, rng);
  check_op_gradient([](const V& x) { return sub(x[0], x[1]); }, {leaf({5}), leaf({5})}, rng);
  check_op_gradient([](const V& x) { return mul(x[0], x[1]); }, {leaf({2, 3}), leaf({2, 3})}, rng);
  check_op_gradient([](const V& x) { return scale(x[0], -2.5); }, {leaf({4})}, rng);
  check_op_gradient([](const V& x) { return add_scalar(x[0], 3.0); }, {leaf({4})}, rng);
  check_op_gradient([](const V& x) { return add_row(x[0], x[1]); }, {leaf({3, 2}), leaf({2})}, rng);
  check_op_gradient([](const V& x) { return scale_rows(x[0], x[1]); }, {leaf({3, 2}), leaf({3})}, rng);
  check_op_gradient([](const V& x) { return concat({x[0], x[1]}, 0); }, {leaf({2, 3}), leaf({1, 3})}, rng);
  check_op_gradient([](const V& x) { return concat({x[0], x[1]}, 1); }, {leaf({2, 3}), leaf({2, 2})}, rng);
  check_op_gradient([](const V& x) { return concat({x[0], x[1]}, 0); }, {leaf({2}), leaf({3})}, rng);
  check_op_gradient([](const V& x) { return slice(x[0], 1, 1, 3); }, {leaf({3, 4})}, rng);
  check_op_gradient([](const V& x) { return slice(x[0], 0, 1, 2); }, {leaf({3, 4})}, rng);
  check_op_gradient([](const V& x) { return reshape(x[0], {6}); }, {leaf({2, 3})}, rng);
  check_op_gradient([](const V& x) { return transpose(x[0]); }, {leaf({2, 3})}, rng);
  check_op_gradient([](const V& x) { return sum(x[0], 0); }, {leaf({3, 4})}, rng);
  check_op_gradient([](const V& x) { return sum(x[0], 1); }, {leaf({3, 4})}, rng);
  check_op_gradient([](const V& x) { return mean(x[0], 0); }, {leaf({3, 4})}, rng);
  check_op_gradient([](const V& x) { return sum_all(x[0]); }, {leaf({3, 4})}, rng);
  check_op_gradient([](const V& x) { return tanh(x[0]); }, {leaf({5}, 2.0)}, rng);
  check_op_gradient([](const V& x) { return sigmoid(x[0]); }, {leaf({5}, 3.0)}, rng);
  check_op_gradient([](const V& x) { return exp(x[0]); }, {leaf({5})}, rng);
  check_op_gradient([](const V& x) { return log(add_scalar(x[0], 2.0)); }, {leaf({5})}, rng);
  check_op_gradient([](const V& x) { return clamp(x[0], -0.5, 0.5); }, {leaf({6})}, rng);
  check_op_gradient([](const V& x) { return softmax(x[0], 0); }, {leaf({5}, 2.0)}, rng);
  check_op_gradient([](const V& x) { return softmax(x[0], 1); }, {leaf({3, 4}, 2.0)}, rng);
  check_op_gradient([](const V& x) { return softmax(x[0], 0); }, {leaf({3, 4}, 2.0)}, rng);
  check_op_gradient([](const V& x) { return dot(x[0], x[1]); }, {leaf({4}), leaf({4})}, rng);
  const std::vector<std::size_t> rows = {2, 0, 2, 1};
  check_op_gradient([&](const V& x) { return gather_rows(x[0], rows); }, {leaf({3, 2})}, rng);
  check_op_gradient([&](const V& x) { return gather_rows(x[0], rows); }, {leaf({3})}, rng);
  const std::vector<std::size_t> offsets = {0, 2, 2, 5};
  check_op_gradient([&](const V& x) { return segment_softmax(x[0], offsets); }, {leaf({5}, 2.0)}, rng);
  check_op_gradient([&](const V& x) { return segment_sum(x[0], offsets); }, {leaf({5, 3})}, rng);
}

TEST_CASE("segment ops match per-segment loops") {
  std::mt19937_64 rng(5);
  const std::vector<std::size_t> offsets = {0, 3, 3, 4, 7};
  const auto x = random_tensor({7}, rng, 3.0);
  const auto y = segment_softmax(x, offsets);
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    double z = 0.0;
    for (auto i = offsets[s]; i < offsets[s + 1]; ++i) z += std::exp(x.at(i));
    for (auto i = offsets[s]; i < offsets[s + 1]; ++i) CHECK(std::abs(y.at(i) - std::exp(x.at(i)) / z) < 1e-14);
  }
  const auto m = random_tensor({7, 2}, rng);
  const auto s = segment_sum(m, offsets);
  CHECK(s.shape() == Shape{4, 2});
  CHECK(s.at(1, 0) == 0.0);
  CHECK(s.at(0, 1) == doctest::Approx(m.at(0, 1) + m.at(1, 1) + m.at(2, 1)));
}

TEST_CASE("gradients accumulate across backward calls and reuse") {
  auto x = Tensor::vector({1.0, 2.0}, true);
  backward(sum_all(mul(x, x)));
  backward(sum_all(add(x, x)));
  CHECK(x.grad()[0] == doctest::Approx(2.0 + 2.0));
  CHECK(x.grad()[1] == doctest::Approx(4.0 + 2.0));
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 0.0);
}

TEST_CASE("backward rejects non-scalar losses and untracked graphs") {
  auto x = Tensor::vector({1.0, 2.0}, true);
  CHECK_THROWS(backward(mul(x, x)));
  CHECK_THROWS(backward(sum_all(Tensor::vector({1.0}))));
}

TEST_CASE("NoGradGuard records nothing") {
  auto x = Tensor::vector({1.0, 2.0}, true);
  Tensor y;
  {
    NoGradGuard g;
    CHECK(!grad_enabled());
    y = sum_all(mul(x, x));
  }
  CHECK(grad_enabled());
  CHECK(!y.requires_grad());
}

TEST_CASE("dropout is identity when off and unbiased in expectation") {
  std::mt19937_64 rng(6);
  const auto x = Tensor::full({20000}, 1.0);
  CHECK(dropout(x, 0.5, rng, false).node() == x.node());
  const auto y = dropout(x, 0.2, rng, true);
  double zeros = 0.0, total = 0.0;
  for (double v : y.data()) {
    zeros += v == 0.0;
    total += v;
  }
  CHECK(zeros / 20000.0 == doctest::Approx(0.2).epsilon(0.05));
  CHECK(total / 20000.0 == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("a corrupted backward rule is caught by the difference check") {
  std::mt19937_64 rng(7);
  auto x = random_tensor({4}, rng, 1.0, true);
  const std::vector<double> w = {0.3, -0.2, 0.5, 0.1};
  auto f = [&] {
    NoGradGuard g;
    return testutil::weighted_sum(tanh(x), w).item();
  };
  testing::set_backward_fault("tanh", 1.1);
  backward(testutil::weighted_sum(tanh(x), w));
  testing::clear_backward_fault();
  const auto numeric = testutil::numeric_grad(f, x);
  CHECK(max_abs_diff(numeric, {x.grad().begin(), x.grad().end()}) > 1e-3);
}
