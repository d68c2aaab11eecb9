#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "helpers.hpp"
#include "kaqa/gradcheck.hpp"
#include "kaqa/scorer.hpp"
#include "oracle_checks.hpp"

using namespace kaqa;
using testutil::max_abs_diff;
using testutil::random_tensor;
using testutil::values;

namespace {

std::vector<std::string> names(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("e" + std::to_string(i));
  return out;
}

}  // namespace

TEST_CASE("score_answers matches the bilinear formula on 200 random instances") {
  std::mt19937_64 rng(61);
  CHECK(checks::score_answers_worst(rng, 200) < 1e-10);
}

TEST_CASE("zero scoring map gives one half everywhere and id-order ranking") {
  std::mt19937_64 rng(62);
  const auto s = score_answers(random_tensor({3}, rng), random_tensor({4, 3}, rng), random_tensor({4, 3}, rng),
                               Tensor::zeros({3, 6}));
  CHECK(values(s.scores) == std::vector<double>(4, 0.5));
  const auto p = make_prediction({"d", "b", "a", "c"}, values(s.scores));
  CHECK(p.top() == "a");
  CHECK(p.ranking == std::vector<std::size_t>{2, 1, 3, 0});
  CHECK(p.answer_set.empty());
}

TEST_CASE("score_answers rejects a map of the wrong width") {
  std::mt19937_64 rng(63);
  const auto q = random_tensor({3}, rng);
  const auto k = random_tensor({2, 3}, rng);
  CHECK_THROWS(score_answers(q, k, Tensor(), random_tensor({3, 6}, rng)));
  CHECK_THROWS(score_answers(q, k, random_tensor({2, 3}, rng), random_tensor({3, 3}, rng)));
}

TEST_CASE("ranking from logits equals ranking from scores") {
  std::mt19937_64 rng(64);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng() % 8;
    const auto s = score_answers(random_tensor({3}, rng), random_tensor({n, 3}, rng), Tensor(),
                                 random_tensor({3, 3}, rng, 2.0));
    const auto nm = names(n);
    const auto by_logit = rank_candidates(values(s.logits), nm);
    CHECK(by_logit == rank_candidates(values(s.scores), nm));
    for (double v : s.scores.data()) CHECK((v > 0.0 && v < 1.0));
  }
}

TEST_CASE("ties at the top resolve the same way under any input order") {
  std::mt19937_64 rng(65);
  std::vector<std::string> nm = {"kolo", "abra", "zefi", "mura", "abba"};
  std::vector<double> sc = {0.9, 0.9, 0.3, 0.9, 0.1};
  const std::vector<std::string> gold = {"abra"};
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::size_t> perm(nm.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::string> n2;
    std::vector<double> s2;
    for (auto i : perm) {
      n2.push_back(nm[i]);
      s2.push_back(sc[i]);
    }
    const auto p = make_prediction(n2, s2);
    CHECK(p.top() == "abra");
    CHECK(hit_at_1(p, gold) == 1);
    CHECK(p.answer_set == std::vector<std::string>{"abra", "kolo", "mura"});
  }
}

TEST_CASE("answer set follows the threshold strictly") {
  const auto p = make_prediction({"a", "b", "c"}, {0.5, 0.51, 0.2}, 0.5);
  CHECK(p.answer_set == std::vector<std::string>{"b"});
  const auto q = make_prediction({"a", "b", "c"}, {0.5, 0.51, 0.2}, 0.1);
  CHECK(q.answer_set == std::vector<std::string>{"b", "a", "c"});
  CHECK_THROWS(make_prediction({"a"}, {0.1, 0.2}));
}

TEST_CASE("qa_loss closed forms") {
  SUBCASE("one half everywhere without smoothing is ln 2") {
    const std::vector<std::size_t> gold = {1};
    CHECK(qa_loss(Tensor::vector({0.5, 0.5, 0.5}), gold, 0.0).item() == doctest::Approx(std::log(2.0)));
  }
  SUBCASE("scores at the smoothed target give the target entropy") {
    const double eps = 0.1, hi = 1 - eps / 2, lo = eps / 2;
    const double entropy = -(hi * std::log(hi) + lo * std::log(lo));
    const std::vector<std::size_t> gold = {0, 2};
    const double loss = qa_loss(Tensor::vector({hi, lo, hi, lo}), gold, eps).item();
    CHECK(loss == doctest::Approx(entropy).epsilon(1e-12));
  }
  SUBCASE("a single gold candidate loses less as its score grows") {
    const std::vector<std::size_t> gold = {0};
    double prev = INFINITY;
    for (double s = 0.05; s < 0.96; s += 0.05) {
      const double l = qa_loss(Tensor::vector({s}), gold, 0.1).item();
      CHECK(l < prev);
      prev = l;
    }
  }
  SUBCASE("empty gold is rejected") {
    CHECK_THROWS_AS(qa_loss(Tensor::vector({0.3}), std::span<const std::size_t>{}, 0.1), std::invalid_argument);
  }
}

TEST_CASE("hit_at_1 checks only the top entity") {
  const auto p = make_prediction({"a", "b", "c"}, {0.2, 0.9, 0.4});
  CHECK(hit_at_1(p, std::vector<std::string>{"b"}) == 1);
  CHECK(hit_at_1(p, std::vector<std::string>{"c"}) == 0);
  CHECK(hit_at_1(p, std::vector<std::string>{"c", "b"}) == 1);
}

TEST_CASE("set scores") {
  using V = std::vector<std::string>;
  CHECK(f1_score(V{"a", "b"}, V{"a", "b"}) == 1.0);
  CHECK(f1_score(V{"a", "b"}, V{"a"}) == doctest::Approx(2.0 / 3.0));
  CHECK(f1_score(V{"a"}, V{"b"}) == 0.0);
  CHECK(f1_score(V{}, V{"b"}) == 0.0);
  CHECK(f1_score(V{}, V{}) == 1.0);
  const auto s = set_scores(V{"a", "b", "c"}, V{"a", "d"});
  CHECK(s.precision == doctest::Approx(1.0 / 3.0));
  CHECK(s.recall == doctest::Approx(0.5));
  CHECK(f1_score(V{"c", "b", "a"}, V{"d", "a"}) == s.f1);
  CHECK(f1_score(V{"x", "y", "z"}, V{"x", "w"}) == s.f1);
}

TEST_CASE("scoring and loss gradients pass a finite-difference check") {
  std::mt19937_64 rng(66);
  ModelParams params;
  const auto q = params.add("q", random_tensor({3}, rng, 1.0, true));
  const auto k = params.add("k", random_tensor({4, 3}, rng, 1.0, true));
  const auto t = params.add("t", random_tensor({4, 3}, rng, 1.0, true));
  const auto w = params.add("w", random_tensor({3, 6}, rng, 1.0, true));
  const std::vector<std::size_t> gold = {1, 3};
  auto loss = [&] { return qa_loss(score_answers(q, k, t, w).scores, gold, 0.1); };
  CHECK(grad_check(loss, params, {.step = 1e-5, .tolerance = 1e-4}).all_passed());
}
