#pragma once

// Subgraph reader: question-aware graph attention over one hop of KB
// neighbours, producing a knowledge vector e' for every entity of a
// question's subgraph.
//
//   r      = Σ α_i h^r_i,          α ∝ exp(w_r · h^r_i)
//   s_r    = r · Σ β_j h^q_j,      β ∝ exp(r · h^q_j)
//   s̃_i    ∝ exp(I[e_i ∈ E0] + s_{r_i})              over N_e
//   agg    = Σ s̃_i tanh(W_e [r_i ; e_i])
//   γ^e    = sigmoid(w_g · [e ; agg])
//   e'     = γ^e e + (1 - γ^e) agg                    (e' = e when N_e is empty)

#include <cstddef>
#include <span>
#include <unordered_map>
#include <vector>

#include "kaqa/nn.hpp"
#include "kaqa/tensor.hpp"

namespace kaqa {

inline constexpr std::size_t kMaxNeighbors = 50;

struct Neighbor {
  std::size_t relation = 0;  // global relation id
  std::size_t entity = 0;    // local entity index
  bool operator==(const Neighbor&) const = default;
};

// Per-question view of the retrieved KB neighbourhood. Entities are addressed
// by local index; `entity_ids` maps them to the global entity vocabulary.
struct Subgraph {
  std::vector<std::size_t> entity_ids;
  std::vector<std::vector<Neighbor>> neighbors;
  std::vector<std::size_t> topic;  // local indices of E0

  std::size_t size() const { return entity_ids.size(); }
  bool is_topic(std::size_t local) const;
  std::size_t edge_count() const;
  // Throws std::invalid_argument when an id does not resolve, a list exceeds
  // `max_neighbors`, or a topic index is out of range.
  void validate(std::size_t relation_vocab, std::size_t max_neighbors = kMaxNeighbors) const;
};

// Relation vectors r for a set of relation ids, one row each.
struct RelationVectors {
  Tensor matrix;  // n × d_h
  std::vector<std::size_t> ids;
  std::unordered_map<std::size_t, std::size_t> rows;

  std::size_t row_of(std::size_t relation) const;
};

struct SgReaderParams {
  Tensor w_e;         // 2d_h × d_h message transform
  Tensor w_gate;      // 2d_h, linear gate on [e ; agg]
  Tensor rel_scorer;  // d_h, w_r of the relation self-attentive encoder
};

SgReaderParams make_sg_reader_params(ModelParams& params, std::size_t hidden, std::mt19937_64& rng);

// Encodes each relation's token sequence with the shared LSTM and pools it
// with w_r. Every id is encoded exactly once, in the given order.
RelationVectors encode_relations(std::span<const std::size_t> relation_ids,
                                 const std::vector<std::vector<std::size_t>>& relation_tokens,
                                 const EmbeddingTable& words, const LstmCell& lstm, const Tensor& rel_scorer,
                                 std::size_t max_len, const ForwardContext& ctx);

// β over question positions for relation r: softmax_j(r · h^q_j).
Tensor relation_match_attention(const Tensor& question_states, const Tensor& relation);
// s_r for a single relation vector r (d_h) against question states (l_q × d_h).
Tensor relation_match_score(const Tensor& question_states, const Tensor& relation);
// s_r for every row of `relations.matrix`, same order.
Tensor relation_match_scores(const Tensor& question_states, const RelationVectors& relations);

// Distribution over `neighbors`: softmax of indicator + s_r. `rel_scores` is
// indexed by RelationVectors row.
Tensor neighbor_attention(std::span<const Neighbor> neighbors, const Tensor& rel_scores,
                          const RelationVectors& relations, const Subgraph& graph);

struct PropagateResult {
  Tensor knowledge;  // e' (d_h)
  Tensor gate;       // γ^e, scalar; undefined when N_e is empty
  Tensor attention;  // s̃ over N_e; undefined when N_e is empty
};

// Gated single-entity update. `entity_embeddings` is the local n × d_h table.
PropagateResult propagate(std::size_t entity, const Subgraph& graph, const Tensor& entity_embeddings,
                          const RelationVectors& relations, const Tensor& rel_scores, const SgReaderParams& params);

struct EntityKnowledge {
  Tensor vectors;                    // n × d_h, row i = e' of local entity i
  Tensor gates;                      // n; 1 for entities without neighbours
  Tensor attention;                  // all s̃, grouped by entity; undefined if no edges
  std::vector<std::size_t> offsets;  // n + 1 segment bounds into `attention`
};

// One propagation pass over every subgraph entity. Relation scores are
// computed once per relation row and shared by all edges.
EntityKnowledge read_subgraph(const Tensor& question_states, const Subgraph& graph, const Tensor& entity_embeddings,
                              const RelationVectors& relations, const SgReaderParams& params);

}  // namespace kaqa
