#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include <json.hpp>

#include "kaqa/dataset.hpp"
#include "kaqa/kb.hpp"
#include "kaqa/synthetic.hpp"
#include "oracle_checks.hpp"

using namespace kaqa;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("kaqa_test_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string random_name(std::mt19937_64& rng) {
  static const std::vector<std::string> pieces = {"a", "zu", "é", "q\"", "x\\y", "ñ", "-", "_", "7", "日本"};
  std::string s;
  const std::size_t n = 1 + rng() % 4;
  for (std::size_t i = 0; i < n; ++i) s += pieces[rng() % pieces.size()];
  return s;
}

QAExample random_example(std::mt19937_64& rng, std::size_t id) {
  QAExample ex;
  ex.id = "q" + std::to_string(id);
  const std::size_t n = 2 + rng() % 6;
  std::set<std::string> names;
  while (names.size() < n) names.insert(random_name(rng));
  ex.candidates.assign(names.begin(), names.end());
  std::shuffle(ex.candidates.begin(), ex.candidates.end(), rng);
  const std::size_t sub = 1 + rng() % n;
  ex.subgraph_entities.assign(ex.candidates.begin(), ex.candidates.begin() + sub);
  ex.topic_entities = {ex.subgraph_entities[0]};
  ex.answers = {ex.candidates[rng() % n]};
  for (std::size_t i = 0; i < 1 + rng() % 4; ++i) ex.question.push_back(random_name(rng));
  for (std::size_t i = 0; i < rng() % 4; ++i)
    ex.subgraph_triples.push_back(
        {ex.subgraph_entities[rng() % sub], random_name(rng), ex.subgraph_entities[rng() % sub]});
  for (std::size_t j = 0; j < rng() % 3; ++j) {
    Document d;
    for (std::size_t i = 0; i < 1 + rng() % 6; ++i) d.tokens.push_back(random_name(rng));
    const std::size_t b = rng() % d.tokens.size();
    d.spans.push_back({b, b + 1, ex.candidates[rng() % n]});
    ex.documents.push_back(d);
  }
  return ex;
}

SyntheticConfig small_config(std::uint64_t seed, double fraction) {
  SyntheticConfig c;
  c.seed = seed;
  c.kb_fraction = fraction;
  return c;
}

}  // namespace

TEST_CASE("PPR matches a dense linear-system oracle on 500 small graphs") {
  std::mt19937_64 rng(71);
  double mass = 0.0;
  CHECK(checks::ppr_worst(rng, 500, &mass) < 1e-8);
  CHECK(mass < 1e-9);
}

TEST_CASE("PPR on a three-node path from one end") {
  KnowledgeGraph g;
  g.add("a", "r", "b");
  g.add("b", "r", "c");
  const std::vector<std::size_t> seeds = {0};
  const auto got = personalized_pagerank(g, seeds);
  const auto want = checks::dense_ppr(g, seeds, 0.15);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(got.scores[i] - want[i]) < 1e-8);
  KnowledgeGraph loop;
  loop.add("x", "r", "x");
  CHECK(personalized_pagerank(loop, seeds).scores[0] == doctest::Approx(1.0));
  g.add_entity("far");
  CHECK(personalized_pagerank(g, seeds).scores[3] == 0.0);
}

TEST_CASE("PPR argument checks") {
  std::mt19937_64 rng(72);
  const auto g = checks::random_graph(rng, 4, 5);
  CHECK_THROWS(personalized_pagerank(g, std::vector<std::size_t>{}));
  CHECK_THROWS(personalized_pagerank(g, std::vector<std::size_t>{9}));
  CHECK_THROWS(personalized_pagerank(g, std::vector<std::size_t>{0}, {.restart = 0.0}));
  CHECK_THROWS(personalized_pagerank(g, std::vector<std::size_t>{0}, {.restart = 1.0}));
}

TEST_CASE("a seed without edges keeps all the mass") {
  KnowledgeGraph g;
  g.add("a", "r", "b");
  g.add_entity("lonely");
  const std::vector<std::size_t> seeds = {g.entities().at("lonely")};
  const auto ppr = personalized_pagerank(g, seeds);
  CHECK(ppr.scores[seeds[0]] == doctest::Approx(1.0));
  const auto sub = extract_subgraph(g, seeds, 5);
  CHECK(sub.entities == seeds);
  CHECK(sub.triples.empty());
}

TEST_CASE("extract_subgraph ranks by PPR and keeps induced triples") {
  std::mt19937_64 rng(73);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 8;
    const auto g = checks::random_graph(rng, n, rng() % 16);
    std::vector<std::size_t> seeds = {rng() % n, rng() % n};
    const std::size_t top_k = 2 + rng() % n;
    const auto sub = extract_subgraph(g, seeds, top_k);
    std::set<std::size_t> uniq(seeds.begin(), seeds.end());
    const auto ppr = personalized_pagerank(g, std::vector<std::size_t>(uniq.begin(), uniq.end()));

    std::vector<std::size_t> want(uniq.begin(), uniq.end());
    std::vector<std::pair<double, std::size_t>> rest;
    for (std::size_t e = 0; e < n; ++e)
      if (!uniq.contains(e) && ppr.scores[e] > 0) rest.push_back({-ppr.scores[e], e});
    std::sort(rest.begin(), rest.end());
    for (const auto& [s, e] : rest)
      if (want.size() < top_k) want.push_back(e);
    CHECK(sub.entities == want);

    const std::set<std::size_t> kept(sub.entities.begin(), sub.entities.end());
    std::vector<Triple> induced;
    for (const auto& t : g.triples())
      if (kept.contains(t.head) && kept.contains(t.tail)) induced.push_back(t);
    CHECK(sub.triples == induced);
  }
  const auto g = checks::random_graph(rng, 5, 6);
  CHECK_THROWS(extract_subgraph(g, std::vector<std::size_t>{0, 1, 2}, 2));
}

TEST_CASE("knowledge graph deduplicates triples") {
  KnowledgeGraph g;
  CHECK(g.add("a", "r", "b"));
  CHECK(!g.add("a", "r", "b"));
  CHECK(g.add("b", "r", "a"));
  CHECK(g.triples().size() == 2);
  CHECK(g.contains(Triple{0, 0, 1}));
}

TEST_CASE("downsample_kb keeps the requested share in order") {
  std::mt19937_64 rng(74);
  const auto g = checks::random_graph(rng, 30, 200);
  const std::size_t n = g.triples().size();
  for (double f : {0.1, 0.3, 0.5, 1.0}) {
    const auto d = downsample_kb(g, f, 5);
    CHECK(d.triples().size() == static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9)));
    CHECK(d.entity_count() == g.entity_count());
    std::size_t pos = 0;
    for (const auto& t : d.triples()) {
      while (pos < n && g.triples()[pos] != t) ++pos;
      CHECK(pos < n);
    }
    CHECK(downsample_kb(g, f, 5).triples() == d.triples());
  }
  CHECK(downsample_kb(g, 1.0, 3).triples() == g.triples());
  CHECK(downsample_kb(g, 0.5, 1).triples() != downsample_kb(g, 0.5, 2).triples());
  CHECK_THROWS(downsample_kb(g, 0.0, 1));
  CHECK_THROWS(downsample_kb(g, 1.5, 1));
}

TEST_CASE("triples survive a TSV round trip and bad lines name their number") {
  std::mt19937_64 rng(75);
  const auto dir = temp_dir("tsv");
  const auto g = checks::random_graph(rng, 10, 30);
  g.save_tsv(dir / "kb.tsv");
  const auto back = KnowledgeGraph::load_tsv(dir / "kb.tsv");
  REQUIRE(back.triples().size() == g.triples().size());
  for (std::size_t i = 0; i < g.triples().size(); ++i) {
    const auto& a = g.triples()[i];
    const auto& b = back.triples()[i];
    CHECK(g.entities().token(a.head) == back.entities().token(b.head));
    CHECK(g.relations().token(a.relation) == back.relations().token(b.relation));
    CHECK(g.entities().token(a.tail) == back.entities().token(b.tail));
  }
  std::ofstream(dir / "bad.tsv") << "a\tr\tb\nc\td\n";
  try {
    KnowledgeGraph::load_tsv(dir / "bad.tsv");
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("bad.tsv:2:") != std::string::npos);
  }
}

TEST_CASE("random records survive a JSON round trip") {
  std::mt19937_64 rng(76);
  const auto dir = temp_dir("json");
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<QAExample> data;
    for (std::size_t i = 0; i < 1 + rng() % 5; ++i) data.push_back(random_example(rng, i));
    for (const auto& ex : data) CHECK(parse_json_line(to_json_line(ex)) == ex);
    save_dataset(data, dir / "d.jsonl");
    CHECK(load_dataset(dir / "d.jsonl") == data);
  }
}

TEST_CASE("malformed records report line and field") {
  std::mt19937_64 rng(77);
  const auto dir = temp_dir("errors");
  const auto good = to_json_line(random_example(rng, 0));
  auto expect = [&](const std::string& bad, const std::string& field) {
    std::ofstream(dir / "d.jsonl") << good << "\n\n" << bad << "\n";
    try {
      load_dataset(dir / "d.jsonl");
      FAIL("expected an error for field " << field);
    } catch (const DataError& e) {
      CHECK(e.line() == 3);
      CHECK(e.field() == field);
    }
  };
  auto ex = random_example(rng, 1);
  expect("{not json", "<record>");
  expect("[1,2]", "<record>");
  {
    auto j = nlohmann::json::parse(to_json_line(ex));
    j.erase("answers");
    expect(j.dump(), "answers");
  }
  {
    auto j = nlohmann::json::parse(to_json_line(ex));
    j["answers"] = {"not-a-candidate"};
    expect(j.dump(), "answers");
  }
  {
    auto j = nlohmann::json::parse(to_json_line(ex));
    j["candidates"].push_back(j["candidates"][0]);
    expect(j.dump(), "candidates");
  }
  {
    auto j = nlohmann::json::parse(to_json_line(ex));
    j["topic_entities"] = {"ghost"};
    expect(j.dump(), "topic_entities");
  }
  {
    auto j = nlohmann::json::parse(to_json_line(ex));
    j["subgraph"]["triples"] = {{"ghost", "r", "ghost"}};
    expect(j.dump(), "subgraph");
  }
  {
    auto j = nlohmann::json::parse(to_json_line(ex));
    j["documents"] = {{{"text", "one two"}, {"spans", {{1, 5, ex.candidates[0]}}}}};
    expect(j.dump(), "documents");
  }
  {
    auto j = nlohmann::json::parse(to_json_line(ex));
    j["documents"] = {{{"text", "one two"}, {"spans", {{0, 1}}}}};
    expect(j.dump(), "spans");
  }
  {
    auto j = nlohmann::json::parse(to_json_line(ex));
    j["question"] = "";
    expect(j.dump(), "question");
  }
}

TEST_CASE("relation names split into words") {
  CHECK(relation_words("people.place_of_birth") == std::vector<std::string>{"place", "of", "birth"});
  CHECK(relation_tokens("people.place_of_birth") == std::vector<std::string>{"people", "place", "of", "birth"});
  CHECK(split_tokens("  a  b\tc ") == std::vector<std::string>{"a", "b", "c"});
  CHECK(join_tokens({"a", "b"}) == "a b");
}

TEST_CASE("synthetic generation is deterministic and self-consistent") {
  const auto a = generate_synthetic(small_config(3, 0.3));
  const auto b = generate_synthetic(small_config(3, 0.3));
  CHECK(a.train == b.train);
  CHECK(a.dev == b.dev);
  CHECK(a.test == b.test);
  CHECK(a.kept_kb.triples() == b.kept_kb.triples());
  CHECK(a.stats.train + a.stats.dev + a.stats.test == a.stats.questions_generated - a.stats.questions_discarded);
  CHECK(a.stats.train == a.train.size());
  CHECK(a.stats.kept_triples == a.kept_kb.triples().size());
  CHECK(a.stats.kept_triples + a.stats.dropped_triples == a.stats.triples);
  CHECK(a.stats.realized_fraction == doctest::Approx(0.3).epsilon(0.01));
  CHECK(a.stats.entities == small_config(3, 0.3).entity_count());

  const auto c = generate_synthetic(small_config(4, 0.3));
  CHECK(c.train != a.train);
}

TEST_CASE("synthetic gold answers agree with a brute-force scan of the full KB") {
  const auto data = generate_synthetic(small_config(5, 0.5));
  std::map<std::string, std::string> relation_by_words;
  for (const auto& r : data.full_kb.relations().tokens()) relation_by_words[join_tokens(relation_words(r))] = r;
  std::size_t checked = 0;
  for (const auto* split : {&data.train, &data.dev, &data.test}) {
    for (const auto& ex : *split) {
      CHECK_NOTHROW(validate_example(ex));
      const auto text = join_tokens(ex.question);
      const auto of = text.rfind(" of ");
      REQUIRE(of != std::string::npos);
      const auto rel = relation_by_words.at(text.substr(0, of));
      REQUIRE(ex.topic_entities.size() == 1);
      auto want = brute_force_answers(data.full_kb, ex.topic_entities[0], rel);
      auto got = ex.answers;
      std::sort(want.begin(), want.end());
      std::sort(got.begin(), got.end());
      CHECK(got == want);
      for (const auto& t : ex.subgraph_triples)
        CHECK(data.kept_kb.contains(Triple{data.kept_kb.entities().at(t.head), data.kept_kb.relations().at(t.relation),
                                           data.kept_kb.entities().at(t.tail)}));
      ++checked;
    }
  }
  CHECK(checked == data.stats.train + data.stats.dev + data.stats.test);
}

TEST_CASE("KB fraction changes only the kept triples, not the questions or splits") {
  const auto full = generate_synthetic(small_config(6, 1.0));
  const auto part = generate_synthetic(small_config(6, 0.3));
  CHECK(full.full_kb.triples() == part.full_kb.triples());
  REQUIRE(full.train.size() == part.train.size());
  for (std::size_t i = 0; i < full.train.size(); ++i) {
    CHECK(full.train[i].id == part.train[i].id);
    CHECK(full.train[i].question == part.train[i].question);
    CHECK(full.train[i].answers == part.train[i].answers);
  }
  CHECK(full.stats.kept_triples == full.stats.triples);
  CHECK(part.stats.kept_triples < full.stats.kept_triples);
}

TEST_CASE("synthetic datasets survive write and reload") {
  const auto dir = temp_dir("synthetic");
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto data = generate_synthetic(small_config(seed, seed % 2 ? 0.3 : 1.0));
    write_synthetic(data, dir);
    CHECK(load_dataset(dir / "train.jsonl") == data.train);
    CHECK(load_dataset(dir / "dev.jsonl") == data.dev);
    CHECK(load_dataset(dir / "test.jsonl") == data.test);
    CHECK(KnowledgeGraph::load_tsv(dir / "kb.tsv").triples().size() == data.kept_kb.triples().size());
    CHECK(fs::exists(dir / "stats.json"));
  }
}
