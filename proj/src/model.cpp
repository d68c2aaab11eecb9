#include "kaqa/model.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "kaqa/log.hpp"
#include "kaqa/synthetic.hpp"

namespace kaqa {

std::string_view to_string(Ablation a) {
  switch (a) {
    case Ablation::none: return "none";
    case Ablation::no_reform: return "no-reform";
    case Ablation::no_know: return "no-know";
    case Ablation::std_gate: return "std-gate";
    case Ablation::kb_only: return "kb-only";
  }
  return "?";
}

std::optional<Ablation> parse_ablation(std::string_view s) {
  for (auto a : {Ablation::none, Ablation::no_reform, Ablation::no_know, Ablation::std_gate, Ablation::kb_only})
    if (to_string(a) == s) return a;
  return std::nullopt;
}

std::string_view to_string(GateVariant v) {
  switch (v) {
    case GateVariant::scalar_ew: return "scalar-ew";
    case GateVariant::vector_ew: return "vector-ew";
    case GateVariant::scalar_dot: return "scalar-dot";
  }
  return "?";
}

std::optional<GateVariant> parse_gate_variant(std::string_view s) {
  for (auto v : {GateVariant::scalar_ew, GateVariant::vector_ew, GateVariant::scalar_dot})
    if (to_string(v) == s) return v;
  return std::nullopt;
}

TextReaderOptions ModelConfig::text_options() const {
  TextReaderOptions o;
  o.reformulate = ablation != Ablation::no_reform;
  o.enhance = ablation != Ablation::no_know;
  o.conditional_gate = ablation != Ablation::std_gate;
  return o;
}

Vocabularies Vocabularies::build(const std::vector<const std::vector<QAExample>*>& splits) {
  std::set<std::string> words, entities, relations;
  for (const auto* split : splits) {
    for (const auto& ex : *split) {
      words.insert(ex.question.begin(), ex.question.end());
      entities.insert(ex.candidates.begin(), ex.candidates.end());
      for (const auto& d : ex.documents) words.insert(d.tokens.begin(), d.tokens.end());
      for (const auto& t : ex.subgraph_triples) relations.insert(t.relation);
    }
  }
  for (const auto& r : relations)
    for (auto& w : kaqa::relation_tokens(r)) words.insert(w);
  Vocabularies v;
  v.words.add(kUnknown);
  v.entities.add(kUnknown);
  for (const auto& w : words) v.words.add(w);
  for (const auto& e : entities) v.entities.add(e);
  for (const auto& r : relations) {
    v.relations.add(r);
    std::vector<std::size_t> ids;
    for (auto& w : kaqa::relation_tokens(r)) ids.push_back(v.words.at(w));
    if (ids.empty()) ids.push_back(0);
    v.relation_tokens.push_back(std::move(ids));
  }
  return v;
}

void Vocabularies::save(const std::filesystem::path& path) const {
  nlohmann::ordered_json j = {{"words", words.tokens()}, {"entities", entities.tokens()},
                              {"relations", relations.tokens()}, {"relation_tokens", relation_tokens}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump() << '\n';
}

Vocabularies Vocabularies::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary file " + path.string());
  const auto j = nlohmann::json::parse(in);
  Vocabularies v;
  v.words = Vocabulary(j.at("words").get<std::vector<std::string>>());
  v.entities = Vocabulary(j.at("entities").get<std::vector<std::string>>());
  v.relations = Vocabulary(j.at("relations").get<std::vector<std::string>>());
  v.relation_tokens = j.at("relation_tokens").get<std::vector<std::vector<std::size_t>>>();
  if (v.relation_tokens.size() != v.relations.size()) throw std::runtime_error("vocabulary file: relation tokens");
  for (const auto& ids : v.relation_tokens)
    for (auto id : ids)
      if (id >= v.words.size()) throw std::runtime_error("vocabulary file: relation token out of range");
  return v;
}

bool Vocabularies::operator==(const Vocabularies& o) const {
  return words.tokens() == o.words.tokens() && entities.tokens() == o.entities.tokens() &&
         relations.tokens() == o.relations.tokens() && relation_tokens == o.relation_tokens;
}

namespace {

std::size_t word_id(const Vocabularies& v, const std::string& w) { return v.words.find(w).value_or(0); }

}  // namespace

EncodedExample encode_example(const QAExample& ex, const Vocabularies& vocab, const ModelConfig& config) {
  EncodedExample out;
  out.id = ex.id;
  out.candidates = ex.candidates;
  out.answers = ex.answers;
  std::map<std::string, std::size_t> local;
  for (std::size_t i = 0; i < ex.candidates.size(); ++i) {
    local.emplace(ex.candidates[i], i);
    out.graph.entity_ids.push_back(vocab.entities.find(ex.candidates[i]).value_or(0));
  }
  out.graph.neighbors.resize(ex.candidates.size());

  const std::size_t q_len = std::min(ex.question.size(), config.max_question_len);
  for (std::size_t i = 0; i < q_len; ++i) out.question.push_back(word_id(vocab, ex.question[i]));
  const std::set<std::string> question_words(ex.question.begin(), ex.question.end());

  for (const auto& t : ex.topic_entities) out.graph.topic.push_back(local.at(t));
  for (const auto& a : ex.answers) out.gold.push_back(local.at(a));

  std::set<std::size_t> used_relations;
  std::size_t unknown_relations = 0;
  auto push = [&](std::size_t from, Neighbor n) {
    auto& list = out.graph.neighbors[from];
    if (list.size() < config.max_neighbors) list.push_back(n);
  };
  for (const auto& t : ex.subgraph_triples) {
    const auto rel = vocab.relations.find(t.relation);
    if (!rel) {
      ++unknown_relations;
      continue;
    }
    used_relations.insert(*rel);
    const std::size_t h = local.at(t.head), tl = local.at(t.tail);
    push(h, {*rel, tl});
    if (h != tl) push(tl, {*rel, h});
  }
  if (unknown_relations > 0) {
    logging::warn("example " + ex.id + ": skipped " + std::to_string(unknown_relations) +
                  " triples with relations outside the vocabulary");
  }
  out.relations.assign(used_relations.begin(), used_relations.end());

  for (const auto& d : ex.documents) {
    EncodedDocument doc;
    const std::size_t len = std::min(d.tokens.size(), config.max_document_len);
    std::map<std::string, std::size_t> counts;
    for (std::size_t i = 0; i < len; ++i) ++counts[d.tokens[i]];
    doc.links.assign(len, kNoLink);
    for (std::size_t i = 0; i < len; ++i) {
      doc.words.push_back(word_id(vocab, d.tokens[i]));
      doc.exact_match.push_back(question_words.contains(d.tokens[i]) ? 1.0 : 0.0);
      doc.term_freq.push_back(static_cast<double>(counts[d.tokens[i]]) / static_cast<double>(len));
    }
    for (const auto& s : d.spans)
      for (std::size_t i = s.begin; i < std::min(s.end, len); ++i) doc.links[i] = local.at(s.entity);
    out.documents.push_back(std::move(doc));
  }
  return out;
}

std::vector<EncodedExample> encode_examples(const std::vector<QAExample>& examples, const Vocabularies& vocab,
                                            const ModelConfig& config) {
  std::vector<EncodedExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(encode_example(ex, vocab, config));
  return out;
}

KaqaModel::KaqaModel(const ModelConfig& config, const Vocabularies& vocab, std::uint64_t seed)
    : config_(config), vocab_(vocab) {
  if (config.hidden == 0 || config.hidden % 2 != 0) throw std::invalid_argument("hidden size must be positive and even");
  if (config.dropout < 0.0 || config.dropout >= 1.0) throw std::invalid_argument("dropout must lie in [0,1)");
  std::mt19937_64 rng(seed);
  const std::size_t d = config.hidden;
  words_ = make_embedding(params_, "emb.words", vocab.words.size(), config.word_dim, config.word_init, rng,
                          config.freeze_words);
  entities_ = make_embedding(params_, "emb.entities", vocab.entities.size(), d, config.entity_init, rng,
                             config.freeze_entities);
  encoder_ = make_lstm(params_, "enc.lstm", config.word_dim, d, rng);
  sg_ = make_sg_reader_params(params_, d, rng);
  const bool documents = config.ablation != Ablation::kb_only;
  ka_ = make_ka_reader_params(params_, d, config.word_dim, config.gate_variant, rng, documents);
  w_s_ = documents ? params_.add_glorot("score.w_s", {d, 2 * d}, rng) : params_.add_glorot("score.w_kb", {d, d}, rng);
  if (!config.word_vectors.empty()) {
    const auto n = load_glove(config.word_vectors, vocab.words, words_);
    logging::info("word vectors loaded=" + std::to_string(n) + " vocab=" + std::to_string(vocab.words.size()));
  }
  if (!config.entity_vectors.empty()) {
    const auto n = load_glove(config.entity_vectors, vocab.entities, entities_);
    logging::info("entity vectors loaded=" + std::to_string(n) + " vocab=" + std::to_string(vocab.entities.size()));
  }
}

RelationVectors KaqaModel::encode_relations(std::span<const std::size_t> ids, const ForwardContext& ctx) const {
  return kaqa::encode_relations(ids, vocab_.relation_tokens, words_, encoder_, sg_.rel_scorer,
                                config_.max_question_len, ctx);
}

RelationVectors KaqaModel::encode_all_relations(const ForwardContext& ctx) const {
  std::vector<std::size_t> ids(vocab_.relations.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  return encode_relations(ids, ctx);
}

ModelOutput KaqaModel::forward(const EncodedExample& ex, const RelationVectors& relations,
                               const ForwardContext& ctx) const {
  if (ex.candidates.empty()) throw std::invalid_argument("example " + ex.id + " has no candidates");
  ModelOutput out;
  out.question_states = lstm_encode(ex.question, words_, encoder_, config_.max_question_len, ctx);
  const Tensor local_entities = gather_rows(entities_.table, ex.graph.entity_ids);
  out.knowledge = read_subgraph(out.question_states, ex.graph, local_entities, relations, sg_);
  const auto options = config_.text_options();
  out.reformulation = reformulate_query(out.question_states, ex.graph.topic, out.knowledge.vectors, ka_, options);
  const Tensor& q_prime = out.reformulation.q_prime;
  AnswerScores scored;
  if (config_.ablation == Ablation::kb_only) {
    scored = score_answers(q_prime, out.knowledge.vectors, Tensor(), w_s_);
  } else {
    std::vector<Tensor> vectors;
    for (const auto& doc : ex.documents) {
      out.documents.push_back(encode_document(doc, out.reformulation.q, q_prime, out.knowledge.vectors, words_, ka_,
                                              options, ctx));
      vectors.push_back(out.documents.back().vector);
    }
    out.text = aggregate_entity_text(ex.candidates.size(), config_.hidden, ex.documents, vectors);
    scored = score_answers(q_prime, out.knowledge.vectors, out.text.entity_vectors, w_s_);
  }
  out.scores = scored.scores;
  out.logits = scored.logits;
  return out;
}

Tensor KaqaModel::loss(const EncodedExample& ex, const ModelOutput& out) const {
  return qa_loss(out.scores, ex.gold, config_.smoothing);
}

Prediction KaqaModel::predict(const EncodedExample& ex, const RelationVectors& relations, double threshold) const {
  NoGradGuard guard;
  const auto out = forward(ex, relations, ForwardContext{});
  const auto s = out.scores.data();
  return make_prediction(ex.candidates, std::vector<double>(s.begin(), s.end()), threshold);
}

}  // namespace kaqa
