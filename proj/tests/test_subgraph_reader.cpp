#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "kaqa/gradcheck.hpp"
#include "kaqa/subgraph_reader.hpp"
#include "oracle_checks.hpp"

using namespace kaqa;
using testutil::max_abs_diff;
using testutil::random_tensor;
using testutil::values;

using checks::edges_of;
using checks::fill;
using checks::row;
using checks::rows;
using Instance = checks::GraphInstance;

TEST_CASE("relation_match_score matches the direct formula on 200 random instances") {
  std::mt19937_64 rng(31);
  CHECK(checks::relation_match_worst(rng, 200) < 1e-10);
}

TEST_CASE("relation_match_score trivial cases") {
  std::mt19937_64 rng(39);
  const auto h = random_tensor({1, 3}, rng);
  const auto r = random_tensor({3}, rng);
  CHECK(relation_match_score(h, r).item() == doctest::Approx(oracle::dot(row(h, 0), values(r))));
  const auto ortho = Tensor::from({2, 3}, {1, 0, 0, 0, 1, 0});
  CHECK(relation_match_score(ortho, Tensor::vector({0, 0, 2})).item() == 0.0);
  double beta = 0.0;
  const auto weights = relation_match_attention(random_tensor({4, 3}, rng), r);
  for (double v : weights.data()) beta += v;
  CHECK(beta == doctest::Approx(1.0));
}

TEST_CASE("batched relation scores equal the single-relation form") {
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 100; ++trial) {
    Instance in;
    fill(in, rng, 3);
    if (in.relations.ids.empty()) continue;
    const auto batched = relation_match_scores(in.question, in.relations);
    for (std::size_t i = 0; i < in.relations.ids.size(); ++i) {
      const auto r = reshape(slice(in.relations.matrix, 0, i, i + 1), {3});
      CHECK(std::abs(batched.at(i) - relation_match_score(in.question, r).item()) < 1e-12);
    }
  }
}

TEST_CASE("propagate matches the direct formula on 200 random instances") {
  std::mt19937_64 rng(33);
  int empty_cases = 0;
  bool identity = true;
  CHECK(checks::propagate_worst(rng, 200, &empty_cases, &identity) < 1e-10);
  CHECK(empty_cases > 0);
  CHECK(identity);
}

TEST_CASE("zero gate weights give an even mix of entity and aggregate") {
  std::mt19937_64 rng(40);
  Instance in;
  do {
    in = Instance{};
    fill(in, rng, 3);
  } while (in.graph.neighbors[0].empty());
  for (auto& w : in.sg.w_gate.mutable_data()) w = 0.0;
  const auto scores = relation_match_scores(in.question, in.relations);
  const auto got = propagate(0, in.graph, in.entities, in.relations, scores, in.sg);
  CHECK(got.gate.item() == 0.5);
  const auto want = oracle::propagate(row(in.entities, 0), edges_of(in, 0, values(scores)), rows(in.sg.w_e),
                                      values(in.sg.w_gate));
  CHECK(max_abs_diff(values(got.knowledge), want.knowledge) < 1e-12);
}

TEST_CASE("read_subgraph equals per-entity propagate") {
  std::mt19937_64 rng(34);
  for (int trial = 0; trial < 100; ++trial) {
    Instance in;
    fill(in, rng, 4);
    const auto batch = read_subgraph(in.question, in.graph, in.entities, in.relations, in.sg);
    Tensor scores;
    if (!in.relations.ids.empty()) scores = relation_match_scores(in.question, in.relations);
    for (std::size_t e = 0; e < in.graph.size(); ++e) {
      const auto single = propagate(e, in.graph, in.entities, in.relations, scores, in.sg);
      CHECK(max_abs_diff(values(reshape(slice(batch.vectors, 0, e, e + 1), {4})), values(single.knowledge)) < 1e-12);
      if (in.graph.neighbors[e].empty()) {
        CHECK(batch.gates.at(e) == 1.0);
      } else {
        CHECK(std::abs(batch.gates.at(e) - single.gate.item()) < 1e-12);
      }
    }
  }
}

TEST_CASE("neighbour attention is a distribution that favours topic neighbours") {
  std::mt19937_64 rng(35);
  Instance in;
  const std::size_t d = 3;
  in.graph.entity_ids = {0, 1, 2};
  in.graph.neighbors = {{{7, 1}, {7, 2}}, {}, {}};
  in.graph.topic = {1};
  in.relations.rows[7] = 0;
  in.relations.ids = {7};
  in.relations.matrix = random_tensor({1, d}, rng);
  const auto att = neighbor_attention(in.graph.neighbors[0], Tensor::vector({0.3}), in.relations, in.graph);
  CHECK(att.at(0) + att.at(1) == doctest::Approx(1.0));
  // Same relation, so only the topic indicator separates them: ratio e.
  CHECK(att.at(0) / att.at(1) == doctest::Approx(std::exp(1.0)));
}

TEST_CASE("subgraph validation catches bad ids and oversized neighbour lists") {
  Subgraph g;
  g.entity_ids = {0, 1};
  g.neighbors = {{{0, 1}}, {}};
  g.topic = {0};
  CHECK_NOTHROW(g.validate(1));
  g.neighbors[0].push_back({3, 1});
  CHECK_THROWS(g.validate(2));
  g.neighbors[0] = {{0, 5}};
  CHECK_THROWS(g.validate(1));
  g.neighbors[0] = std::vector<Neighbor>(3, Neighbor{0, 1});
  CHECK_THROWS(g.validate(1, 2));
  g.neighbors[0].clear();
  g.topic = {4};
  CHECK_THROWS(g.validate(1));
}

TEST_CASE("encode_relations encodes each id once in first-seen order") {
  std::mt19937_64 rng(36);
  ModelParams params;
  const auto words = make_embedding(params, "w", 6, 4, 0.5, rng);
  const auto lstm = make_lstm(params, "l", 4, 4, rng);
  const auto scorer = params.add_glorot("s", {4}, rng);
  const std::vector<std::vector<std::size_t>> tokens = {{1, 2}, {3}, {4, 5, 1}};
  const std::vector<std::size_t> ids = {2, 0, 2, 0};
  const auto rel = encode_relations(ids, tokens, words, lstm, scorer, 10, {});
  CHECK(rel.ids == std::vector<std::size_t>{2, 0});
  CHECK(rel.matrix.shape() == Shape{2, 4});
  CHECK(rel.row_of(0) == 1);
  CHECK_THROWS(rel.row_of(1));
  const auto alone = self_attentive_pool(lstm_encode(tokens[0], words, lstm, 10, {}), scorer);
  CHECK(values(reshape(slice(rel.matrix, 0, 1, 2), {4})) == values(alone));
}

TEST_CASE("read_subgraph gradients pass a finite-difference check") {
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 10; ++trial) {
    Instance in;
    fill(in, rng, 3);
    ModelParams leaves = in.params;
    leaves.add("entities", in.entities);
    leaves.add("question", in.question);
    if (in.relations.matrix.defined()) {
      auto m = Tensor::from(in.relations.matrix.shape(), values(in.relations.matrix), true);
      in.relations.matrix = m;
      leaves.add("relations", m);
    }
    const auto w = values(random_tensor({in.graph.size() * 3}, rng));
    auto loss = [&] {
      return testutil::weighted_sum(read_subgraph(in.question, in.graph, in.entities, in.relations, in.sg).vectors, w);
    };
    CHECK(grad_check(loss, leaves, {.step = 1e-5, .tolerance = 1e-7}).all_passed());
  }
}

TEST_CASE("attention and gates stay normalized and inside (0,1) over 1000 random subgraphs") {
  std::mt19937_64 rng(38);
  double worst_sum = 0.0;
  bool gates_ok = true;
  for (int trial = 0; trial < 1000; ++trial) {
    Instance in;
    fill(in, rng, 3, 3.0);
    const auto k = read_subgraph(in.question, in.graph, in.entities, in.relations, in.sg);
    if (!k.attention.defined()) continue;
    for (std::size_t e = 0; e < in.graph.size(); ++e) {
      if (k.offsets[e] == k.offsets[e + 1]) continue;
      double s = 0.0;
      for (auto i = k.offsets[e]; i < k.offsets[e + 1]; ++i) s += k.attention.at(i);
      worst_sum = std::max(worst_sum, std::abs(s - 1.0));
      gates_ok = gates_ok && k.gates.at(e) > 0.0 && k.gates.at(e) < 1.0;
    }
  }
  CHECK(worst_sum < 1e-9);
  CHECK(gates_ok);
}
