#pragma once

// Knowledge-aware text reader.
//
// Query reformulation:
//   q   = Σ b_i h^q_i                       (self-attentive pooling)
//   e^q = mean of e' over topic entities
//   x   = [q ; e^q ; q - e^q]
//   q'  = γ^q q + (1 - γ^q) tanh(W^q x),     γ^q = sigmoid(w_gq · x)
//
// Passage tokens: f = W_f [word ; exact-match ; tf] + b_f. Entity-linked
// tokens are fused as i = γ^d e' + (1 - γ^d) f with the question-conditioned
// gate γ^d = sigmoid(W_gd [q ⊙ e' ; q ⊙ f]); other tokens use f alone.
// A biLSTM reads the fused inputs, λ = softmax(q' · h^d_i) pools them into a
// document vector d, and each entity's text evidence e_d is the mean of the
// vectors of the documents that mention it.

#include <atomic>
#include <cstddef>
#include <span>
#include <vector>

#include "kaqa/nn.hpp"
#include "kaqa/subgraph_reader.hpp"
#include "kaqa/tensor.hpp"

namespace kaqa {

inline constexpr std::size_t kNoLink = static_cast<std::size_t>(-1);

enum class GateVariant {
  scalar_ew,   // scalar gate over [q ⊙ e' ; q ⊙ f]
  vector_ew,   // per-dimension gate over the same input
  scalar_dot,  // scalar gate over [q · e' ; q · f]
};

struct TextReaderOptions {
  bool reformulate = true;       // false: q' = q
  bool enhance = true;           // false: i = f for every token
  bool conditional_gate = true;  // false: gate input ignores the question
};

// Number of appended hand-crafted token features (exact match, term frequency).
inline constexpr std::size_t kExtraTokenFeatures = 2;

struct EncodedDocument {
  std::vector<std::size_t> words;
  std::vector<std::size_t> links;  // local entity index or kNoLink, per token
  std::vector<double> exact_match;
  std::vector<double> term_freq;

  std::size_t size() const { return words.size(); }
  // Local entity indices mentioned in this document, ascending, unique.
  std::vector<std::size_t> entities() const;
};

struct KaReaderParams {
  Tensor w_q;          // 3d_h × d_h
  Tensor w_gq;         // 3d_h
  Tensor w_gd;         // (2d_h or 2) × (1 or d_h), per gate variant
  Tensor feat_proj;    // (word_dim + 2) × d_h
  Tensor feat_bias;    // d_h
  Tensor q_scorer;     // d_h, b_i of the question self-attentive encoder
  BiLstm bilstm;       // d_h → d_h
  GateVariant variant = GateVariant::scalar_ew;
};

// With `documents` false only the question-side parameters (q_scorer, w_q,
// w_gq) are created.
KaReaderParams make_ka_reader_params(ModelParams& params, std::size_t hidden, std::size_t word_dim,
                                     GateVariant variant, std::mt19937_64& rng, bool documents = true);

struct Reformulation {
  Tensor q;        // d_h
  Tensor topic;    // e^q, d_h
  Tensor q_prime;  // d_h
  Tensor gate;     // γ^q scalar; undefined when reformulation is off
  Tensor pool_weights;
};

// Empty `topic` gives e^q = 0.
Reformulation reformulate_query(const Tensor& question_states, std::span<const std::size_t> topic,
                                const Tensor& knowledge, const KaReaderParams& params,
                                const TextReaderOptions& options);

struct GateResult {
  Tensor fused;  // T × d_h
  Tensor gate;   // T (scalar variants) or T × d_h (vector variant)
};

// Fuses projected token features `features` (T × d_h) with entity knowledge
// `entity_rows` (T × d_h) for every token whose `linked` flag is set.
GateResult conditional_gate(const Tensor& q, const Tensor& entity_rows, const Tensor& features,
                            const std::vector<bool>& linked, const KaReaderParams& params,
                            const TextReaderOptions& options);

struct DocumentEncoding {
  Tensor vector;   // d, d_h
  Tensor weights;  // λ over tokens, sums to one
  Tensor states;   // biLSTM outputs, T × d_h
  Tensor inputs;   // fused inputs, T × d_h
  Tensor gate;     // γ^d per token; undefined when enhancement is off
};

// Projected token features f (T × d_h).
Tensor token_features(const EncodedDocument& doc, const EmbeddingTable& words, const KaReaderParams& params,
                      const ForwardContext& ctx);

DocumentEncoding encode_document(const EncodedDocument& doc, const Tensor& q, const Tensor& q_prime,
                                 const Tensor& knowledge, const EmbeddingTable& words, const KaReaderParams& params,
                                 const TextReaderOptions& options, const ForwardContext& ctx);

struct TextEvidence {
  Tensor entity_vectors;                 // n × d_h, zero rows for entities in no document
  std::vector<std::size_t> doc_counts;   // |D^e| per entity
};

// e_d per entity: mean of the vectors of documents mentioning it, reduced in
// document order.
TextEvidence aggregate_entity_text(std::size_t entity_count, std::size_t hidden,
                                   const std::vector<EncodedDocument>& docs, const std::vector<Tensor>& doc_vectors);

// Calls into encode_document since process start (instrumentation).
std::size_t text_reader_call_count();

}  // namespace kaqa
