#pragma once

// Seeded synthetic KB + text world for desk-scale question answering.
//
// Typed entities (people, cities, countries, companies, universities,
// languages, sports) are linked by a fixed relation schema. Every triple of
// the full KB is also stated by one templated sentence. A question asks for
// one relation of one topic entity; its documents are the sentences about the
// topic plus random distractors, so facts dropped from the KB remain
// recoverable from text.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "kaqa/dataset.hpp"
#include "kaqa/kb.hpp"

namespace kaqa {

struct SyntheticConfig {
  std::size_t people = 70;
  std::size_t cities = 28;
  std::size_t countries = 8;
  std::size_t companies = 20;
  std::size_t universities = 12;
  std::size_t languages = 6;
  std::size_t sports = 6;
  std::size_t max_languages_per_person = 3;
  std::size_t questions = 300;
  std::size_t distractor_documents = 2;
  std::size_t top_k = 50;
  double kb_fraction = 1.0;
  double train_fraction = 0.6;
  double dev_fraction = 0.2;
  double ppr_restart = 0.15;
  std::uint64_t seed = 7;

  std::size_t entity_count() const {
    return people + cities + countries + companies + universities + languages + sports;
  }
};

struct SyntheticStats {
  std::size_t entities = 0;
  std::size_t relations = 0;
  std::size_t triples = 0;
  std::size_t kept_triples = 0;
  std::size_t dropped_triples = 0;
  double realized_fraction = 0.0;
  std::size_t questions_generated = 0;
  std::size_t questions_discarded = 0;
  std::size_t train = 0, dev = 0, test = 0;
  std::size_t text_only_questions = 0;  // no gold answer reachable in the kept subgraph
  double mean_candidates = 0.0;
  double mean_documents = 0.0;
};

struct SyntheticDataset {
  KnowledgeGraph full_kb;
  KnowledgeGraph kept_kb;
  std::vector<QAExample> train, dev, test;
  SyntheticStats stats;
};

// Tail entities of (topic, relation, ·) found by scanning every triple.
std::vector<std::string> brute_force_answers(const KnowledgeGraph& kb, const std::string& topic,
                                             const std::string& relation);

// Words naming a relation: its name split on non-alphanumeric characters,
// with the leading domain dropped ("people.place_of_birth" -> place of birth).
std::vector<std::string> relation_words(const std::string& relation);
// All alphanumeric pieces of the name, domain included.
std::vector<std::string> relation_tokens(const std::string& relation);

// Throws std::invalid_argument for sizes outside the supported range.
SyntheticDataset generate_synthetic(const SyntheticConfig& config);

// Writes kb_full.tsv, kb.tsv, {train,dev,test}.jsonl and stats.json.
void write_synthetic(const SyntheticDataset& data, const std::filesystem::path& dir);
std::string stats_json(const SyntheticStats& stats);

}  // namespace kaqa
