#pragma once

// Full reader: question encoder, subgraph reader, knowledge-aware text reader
// and answer scorer, plus the vocabulary and example encoding they consume.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "kaqa/dataset.hpp"
#include "kaqa/nn.hpp"
#include "kaqa/params.hpp"
#include "kaqa/scorer.hpp"
#include "kaqa/subgraph_reader.hpp"
#include "kaqa/text_reader.hpp"
#include "kaqa/vocab.hpp"

namespace kaqa {

enum class Ablation {
  none,
  no_reform,  // q' = q
  no_know,    // passage inputs ignore entity knowledge
  std_gate,   // passage gate ignores the question
  kb_only,    // subgraph reader alone, no documents
};

std::string_view to_string(Ablation a);
std::optional<Ablation> parse_ablation(std::string_view s);
std::string_view to_string(GateVariant v);
std::optional<GateVariant> parse_gate_variant(std::string_view s);

struct ModelConfig {
  std::size_t hidden = 100;
  std::size_t word_dim = 300;
  double dropout = 0.2;
  std::size_t max_question_len = 10;
  std::size_t max_document_len = 50;
  std::size_t max_neighbors = kMaxNeighbors;
  double word_init = 0.05;
  double entity_init = 0.1;
  double smoothing = 0.1;
  bool freeze_words = false;
  bool freeze_entities = false;
  std::filesystem::path word_vectors;    // optional GloVe-format files
  std::filesystem::path entity_vectors;
  Ablation ablation = Ablation::none;
  GateVariant gate_variant = GateVariant::scalar_ew;

  TextReaderOptions text_options() const;
};

inline constexpr const char* kUnknown = "<unk>";

struct Vocabularies {
  Vocabulary words;
  Vocabulary entities;
  Vocabulary relations;
  std::vector<std::vector<std::size_t>> relation_tokens;  // word ids per relation id

  // Sorted tokens with <unk> at index 0 for words and entities.
  static Vocabularies build(const std::vector<const std::vector<QAExample>*>& splits);
  void save(const std::filesystem::path& path) const;
  static Vocabularies load(const std::filesystem::path& path);
  bool operator==(const Vocabularies& o) const;
};

struct EncodedExample {
  std::string id;
  std::vector<std::size_t> question;        // word ids
  Subgraph graph;                           // local entities = candidates, in candidate order
  std::vector<std::string> candidates;      // names, local order
  std::vector<std::size_t> gold;            // local indices
  std::vector<std::string> answers;         // gold names
  std::vector<EncodedDocument> documents;
  std::vector<std::size_t> relations;       // distinct relation ids on edges, ascending
};

// Neighbour lists take both directions of every subgraph triple in data
// order and keep the first `max_neighbors`. Documents are cut to
// `max_document_len` tokens, questions to `max_question_len`.
EncodedExample encode_example(const QAExample& ex, const Vocabularies& vocab, const ModelConfig& config);
std::vector<EncodedExample> encode_examples(const std::vector<QAExample>& examples, const Vocabularies& vocab,
                                            const ModelConfig& config);

struct ModelOutput {
  Tensor scores;  // s^e per candidate
  Tensor logits;
  Tensor question_states;
  EntityKnowledge knowledge;
  Reformulation reformulation;
  std::vector<DocumentEncoding> documents;
  TextEvidence text;
};

class KaqaModel {
 public:
  KaqaModel(const ModelConfig& config, const Vocabularies& vocab, std::uint64_t seed);
  KaqaModel(const KaqaModel&) = delete;
  KaqaModel& operator=(const KaqaModel&) = delete;

  const ModelConfig& config() const { return config_; }
  const Vocabularies& vocab() const { return vocab_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }

  // Relation vectors for the given ids (each encoded once).
  RelationVectors encode_relations(std::span<const std::size_t> ids, const ForwardContext& ctx) const;
  RelationVectors encode_all_relations(const ForwardContext& ctx) const;

  ModelOutput forward(const EncodedExample& ex, const RelationVectors& relations, const ForwardContext& ctx) const;
  Tensor loss(const EncodedExample& ex, const ModelOutput& out) const;
  Prediction predict(const EncodedExample& ex, const RelationVectors& relations, double threshold) const;

 private:
  ModelConfig config_;
  Vocabularies vocab_;
  ModelParams params_;
  EmbeddingTable words_;
  EmbeddingTable entities_;
  LstmCell encoder_;
  SgReaderParams sg_;
  KaReaderParams ka_;
  Tensor w_s_;
};

}  // namespace kaqa
