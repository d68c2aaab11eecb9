#include "kaqa/synthetic.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace kaqa {
namespace {

struct Schema {
  const char* relation;
  const char* before;  // sentence: <before> head <middle> tail <after>
  const char* middle;
  const char* after;
};

// Sentence templates, one per relation.
const std::map<std::string, Schema>& schemas() {
  static const std::map<std::string, Schema> table = {
      {"people.place_of_birth", {"people.place_of_birth", "", "was born in", "."}},
      {"people.residence", {"people.residence", "", "lives in", "."}},
      {"people.employer", {"people.employer", "", "works for", "."}},
      {"people.alma_mater", {"people.alma_mater", "", "studied at", "."}},
      {"people.sport", {"people.sport", "", "plays", "."}},
      {"people.languages", {"people.languages", "", "speaks", "."}},
      {"location.country", {"location.country", "", "is a city in", "."}},
      {"organization.headquarters", {"organization.headquarters", "", "is based in", "."}},
      {"organization.founder", {"organization.founder", "", "was founded by", "."}},
      {"education.campus", {"education.campus", "", "has its campus in", "."}},
      {"location.official_language", {"location.official_language", "the official language of", "is", "."}},
      {"location.capital", {"location.capital", "the capital of", "is", "."}},
  };
  return table;
}

std::vector<std::string> alnum_pieces(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

class NameMaker {
 public:
  explicit NameMaker(std::mt19937_64& rng) : rng_(rng) {}

  std::string make() {
    static const char* onset[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr"};
    static const char* vowel[] = {"a", "e", "i", "o", "u"};
    for (;;) {
      std::string name;
      const int syllables = 2 + static_cast<int>(rng_() % 2);
      for (int i = 0; i < syllables; ++i) {
        name += onset[rng_() % std::size(onset)];
        name += vowel[rng_() % std::size(vowel)];
      }
      if (used_.insert(name).second) return name;
    }
  }

 private:
  std::mt19937_64& rng_;
  std::set<std::string> used_;
};

template <typename T>
const T& pick(const std::vector<T>& v, std::mt19937_64& rng) {
  return v[rng() % v.size()];
}

Document sentence_for(const Triple& t, const KnowledgeGraph& kb) {
  const auto& s = schemas().at(kb.relations().token(t.relation));
  Document doc;
  for (auto& w : split_tokens(s.before)) doc.tokens.push_back(w);
  doc.spans.push_back({doc.tokens.size(), doc.tokens.size() + 1, kb.entities().token(t.head)});
  doc.tokens.push_back(kb.entities().token(t.head));
  for (auto& w : split_tokens(s.middle)) doc.tokens.push_back(w);
  doc.spans.push_back({doc.tokens.size(), doc.tokens.size() + 1, kb.entities().token(t.tail)});
  doc.tokens.push_back(kb.entities().token(t.tail));
  for (auto& w : split_tokens(s.after)) doc.tokens.push_back(w);
  return doc;
}

KnowledgeGraph build_world(const SyntheticConfig& c, std::mt19937_64& rng) {
  NameMaker names(rng);
  auto make = [&](std::size_t n) {
    std::vector<std::string> v(n);
    for (auto& s : v) s = names.make();
    return v;
  };
  const auto people = make(c.people), cities = make(c.cities), countries = make(c.countries),
             companies = make(c.companies), universities = make(c.universities), languages = make(c.languages),
             sports = make(c.sports);

  KnowledgeGraph kb;
  for (const auto& group : {people, cities, countries, companies, universities, languages, sports})
    for (const auto& name : group) kb.add_entity(name);
  for (const auto& [name, schema] : schemas()) kb.add_relation(name);

  // Cities are dealt round-robin over a shuffled country list so every
  // country has at least one city to be its capital.
  std::vector<std::size_t> country_of(c.cities);
  std::vector<std::size_t> order(c.countries);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> cities_in(c.countries);
  for (std::size_t i = 0; i < c.cities; ++i) {
    country_of[i] = i < c.countries ? order[i] : rng() % c.countries;
    cities_in[country_of[i]].push_back(i);
  }
  for (std::size_t i = 0; i < c.cities; ++i) kb.add(cities[i], "location.country", countries[country_of[i]]);
  for (std::size_t k = 0; k < c.countries; ++k) {
    kb.add(countries[k], "location.capital", cities[pick(cities_in[k], rng)]);
    kb.add(countries[k], "location.official_language", pick(languages, rng));
  }
  for (const auto& p : people) {
    kb.add(p, "people.place_of_birth", pick(cities, rng));
    kb.add(p, "people.residence", pick(cities, rng));
    kb.add(p, "people.employer", pick(companies, rng));
    kb.add(p, "people.alma_mater", pick(universities, rng));
    kb.add(p, "people.sport", pick(sports, rng));
    const std::size_t spoken = 1 + rng() % c.max_languages_per_person;
    for (std::size_t i = 0; i < spoken; ++i) kb.add(p, "people.languages", pick(languages, rng));
  }
  for (const auto& m : companies) {
    kb.add(m, "organization.headquarters", pick(cities, rng));
    kb.add(m, "organization.founder", pick(people, rng));
  }
  for (const auto& u : universities) kb.add(u, "education.campus", pick(cities, rng));
  return kb;
}

std::vector<std::string> sorted_unique(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

}  // namespace

std::vector<std::string> relation_tokens(const std::string& relation) { return alnum_pieces(relation); }

std::vector<std::string> relation_words(const std::string& relation) {
  const auto dot = relation.find('.');
  return alnum_pieces(dot == std::string::npos ? relation : relation.substr(dot + 1));
}

std::vector<std::string> brute_force_answers(const KnowledgeGraph& kb, const std::string& topic,
                                             const std::string& relation) {
  std::vector<std::string> out;
  for (const auto& t : kb.triples()) {
    if (kb.entities().token(t.head) == topic && kb.relations().token(t.relation) == relation) {
      out.push_back(kb.entities().token(t.tail));
    }
  }
  return sorted_unique(std::move(out));
}

SyntheticDataset generate_synthetic(const SyntheticConfig& c) {
  if (c.entity_count() > 200) throw std::invalid_argument("synthetic world limited to 200 entities");
  if (c.people == 0 || c.cities < c.countries || c.countries == 0 || c.companies == 0 || c.universities == 0 ||
      c.languages == 0 || c.sports == 0 || c.max_languages_per_person == 0) {
    throw std::invalid_argument("synthetic world needs every entity type and at least one city per country");
  }
  if (!(c.kb_fraction > 0.0 && c.kb_fraction <= 1.0)) throw std::invalid_argument("kb fraction must lie in (0,1]");
  if (c.train_fraction <= 0.0 || c.dev_fraction < 0.0 || c.train_fraction + c.dev_fraction > 1.0) {
    throw std::invalid_argument("invalid split fractions");
  }

  // Independent streams so the world, questions and splits do not depend on
  // the KB fraction.
  std::mt19937_64 world_rng(c.seed);
  std::mt19937_64 doc_rng(c.seed ^ 0x9e3779b97f4a7c15ULL);
  const std::uint64_t drop_seed = c.seed * 0x2545f4914f6cdd1dULL + 1;

  SyntheticDataset out;
  out.full_kb = build_world(c, world_rng);
  out.kept_kb = downsample_kb(out.full_kb, c.kb_fraction, drop_seed);
  const auto& kb = out.full_kb;

  // Gold answers from an index built alongside the triple list; checked
  // against the brute-force scan below.
  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::string>> gold_index;
  std::vector<std::vector<std::size_t>> triples_of(kb.entity_count());
  for (std::size_t i = 0; i < kb.triples().size(); ++i) {
    const auto& t = kb.triples()[i];
    gold_index[{t.head, t.relation}].push_back(kb.entities().token(t.tail));
    triples_of[t.head].push_back(i);
    if (t.tail != t.head) triples_of[t.tail].push_back(i);
  }
  std::vector<std::pair<std::size_t, std::size_t>> askable;
  for (const auto& [key, answers] : gold_index) askable.push_back(key);
  std::shuffle(askable.begin(), askable.end(), world_rng);
  if (askable.size() > c.questions) askable.resize(c.questions);

  std::vector<QAExample> questions;
  double candidate_total = 0.0, document_total = 0.0;
  for (std::size_t qi = 0; qi < askable.size(); ++qi) {
    const auto [topic, relation] = askable[qi];
    const std::string& topic_name = kb.entities().token(topic);
    const std::string& relation_name = kb.relations().token(relation);
    QAExample ex;
    char id[32];
    std::snprintf(id, sizeof id, "q%04zu", qi);
    ex.id = id;
    ex.question = relation_words(relation_name);
    ex.question.push_back("of");
    ex.question.push_back(topic_name);
    ex.question.push_back("?");
    ex.topic_entities = {topic_name};
    ex.answers = sorted_unique(gold_index.at({topic, relation}));
    if (ex.answers != brute_force_answers(kb, topic_name, relation_name)) {
      throw std::logic_error("synthetic: gold index disagrees with brute force for " + ex.id);
    }

    const std::size_t seeds[1] = {topic};
    const auto sub = extract_subgraph(out.kept_kb, seeds, c.top_k, {.restart = c.ppr_restart});
    for (auto e : sub.entities) ex.subgraph_entities.push_back(kb.entities().token(e));
    for (const auto& t : sub.triples) {
      ex.subgraph_triples.push_back(
          {kb.entities().token(t.head), kb.relations().token(t.relation), kb.entities().token(t.tail)});
    }

    std::vector<std::size_t> doc_triples = triples_of[topic];
    std::set<std::size_t> about(doc_triples.begin(), doc_triples.end());
    for (std::size_t d = 0; d < c.distractor_documents && about.size() < kb.triples().size(); ++d) {
      std::size_t pick_i;
      do pick_i = doc_rng() % kb.triples().size();
      while (about.contains(pick_i));
      about.insert(pick_i);
      doc_triples.push_back(pick_i);
    }
    std::shuffle(doc_triples.begin(), doc_triples.end(), doc_rng);
    for (auto i : doc_triples) ex.documents.push_back(sentence_for(kb.triples()[i], kb));

    std::set<std::string> seen;
    for (const auto& e : ex.subgraph_entities)
      if (seen.insert(e).second) ex.candidates.push_back(e);
    for (const auto& d : ex.documents)
      for (const auto& s : d.spans)
        if (seen.insert(s.entity).second) ex.candidates.push_back(s.entity);

    const bool answerable =
        std::all_of(ex.answers.begin(), ex.answers.end(), [&](const auto& a) { return seen.contains(a); });
    if (!answerable) {
      ++out.stats.questions_discarded;
      continue;
    }
    const std::set<std::string> in_sub(ex.subgraph_entities.begin(), ex.subgraph_entities.end());
    if (std::none_of(ex.answers.begin(), ex.answers.end(), [&](const auto& a) { return in_sub.contains(a); })) {
      ++out.stats.text_only_questions;
    }
    candidate_total += static_cast<double>(ex.candidates.size());
    document_total += static_cast<double>(ex.documents.size());
    validate_example(ex);
    questions.push_back(std::move(ex));
  }

  std::vector<std::size_t> perm(questions.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), world_rng);
  const auto n = static_cast<double>(questions.size());
  const auto n_train = static_cast<std::size_t>(n * c.train_fraction);
  const auto n_dev = static_cast<std::size_t>(n * c.dev_fraction);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    auto& ex = questions[perm[i]];
    if (i < n_train) out.train.push_back(std::move(ex));
    else if (i < n_train + n_dev) out.dev.push_back(std::move(ex));
    else out.test.push_back(std::move(ex));
  }
  auto by_id = [](const QAExample& a, const QAExample& b) { return a.id < b.id; };
  for (auto* split : {&out.train, &out.dev, &out.test}) std::sort(split->begin(), split->end(), by_id);

  auto& s = out.stats;
  s.entities = kb.entity_count();
  s.relations = kb.relations().size();
  s.triples = kb.triples().size();
  s.kept_triples = out.kept_kb.triples().size();
  s.dropped_triples = s.triples - s.kept_triples;
  s.realized_fraction = s.triples ? static_cast<double>(s.kept_triples) / static_cast<double>(s.triples) : 0.0;
  s.questions_generated = askable.size();
  s.train = out.train.size();
  s.dev = out.dev.size();
  s.test = out.test.size();
  if (!questions.empty()) {
    s.mean_candidates = candidate_total / n;
    s.mean_documents = document_total / n;
  }
  return out;
}

std::string stats_json(const SyntheticStats& s) {
  nlohmann::ordered_json j = {{"entities", s.entities},
                              {"relations", s.relations},
                              {"triples", s.triples},
                              {"kept_triples", s.kept_triples},
                              {"dropped_triples", s.dropped_triples},
                              {"realized_fraction", s.realized_fraction},
                              {"questions_generated", s.questions_generated},
                              {"questions_discarded", s.questions_discarded},
                              {"text_only_questions", s.text_only_questions},
                              {"train", s.train},
                              {"dev", s.dev},
                              {"test", s.test},
                              {"mean_candidates", s.mean_candidates},
                              {"mean_documents", s.mean_documents}};
  return j.dump(2);
}

void write_synthetic(const SyntheticDataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  data.full_kb.save_tsv(dir / "kb_full.tsv");
  data.kept_kb.save_tsv(dir / "kb.tsv");
  save_dataset(data.train, dir / "train.jsonl");
  save_dataset(data.dev, dir / "dev.jsonl");
  save_dataset(data.test, dir / "test.jsonl");
  std::ofstream out(dir / "stats.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "stats.json").string());
  out << stats_json(data.stats) << '\n';
}

}  // namespace kaqa
