#include "kaqa/subgraph_reader.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace kaqa {

bool Subgraph::is_topic(std::size_t local) const {
  return std::find(topic.begin(), topic.end(), local) != topic.end();
}

std::size_t Subgraph::edge_count() const {
  std::size_t total = 0;
  for (const auto& n : neighbors) total += n.size();
  return total;
}

void Subgraph::validate(std::size_t relation_vocab, std::size_t max_neighbors) const {
  if (neighbors.size() != entity_ids.size()) {
    throw std::invalid_argument("subgraph: neighbour table size differs from entity count");
  }
  for (std::size_t e = 0; e < neighbors.size(); ++e) {
    if (neighbors[e].size() > max_neighbors) {
      throw std::invalid_argument("subgraph: entity " + std::to_string(e) + " has " +
                                  std::to_string(neighbors[e].size()) + " neighbours (cap " +
                                  std::to_string(max_neighbors) + ")");
    }
    for (const auto& n : neighbors[e]) {
      if (n.entity >= entity_ids.size() || n.relation >= relation_vocab) {
        throw std::invalid_argument("subgraph: unresolved neighbour of entity " + std::to_string(e));
      }
    }
  }
  for (auto t : topic) {
    if (t >= entity_ids.size()) throw std::invalid_argument("subgraph: topic entity outside the subgraph");
  }
}

std::size_t RelationVectors::row_of(std::size_t relation) const {
  auto it = rows.find(relation);
  if (it == rows.end()) throw std::out_of_range("relation " + std::to_string(relation) + " was not encoded");
  return it->second;
}

SgReaderParams make_sg_reader_params(ModelParams& params, std::size_t hidden, std::mt19937_64& rng) {
  SgReaderParams p;
  p.w_e = params.add_glorot("sg.w_e", {2 * hidden, hidden}, rng);
  p.w_gate = params.add_glorot("sg.w_gate", {2 * hidden}, rng);
  p.rel_scorer = params.add_glorot("sg.rel_scorer", {hidden}, rng);
  return p;
}

RelationVectors encode_relations(std::span<const std::size_t> relation_ids,
                                 const std::vector<std::vector<std::size_t>>& relation_tokens,
                                 const EmbeddingTable& words, const LstmCell& lstm, const Tensor& rel_scorer,
                                 std::size_t max_len, const ForwardContext& ctx) {
  RelationVectors out;
  std::vector<Tensor> rows;
  for (std::size_t rel : relation_ids) {
    if (out.rows.contains(rel)) continue;
    if (rel >= relation_tokens.size()) throw std::out_of_range("relation id " + std::to_string(rel) + " has no tokens");
    const Tensor states = lstm_encode(relation_tokens[rel], words, lstm, max_len, ctx);
    const Tensor r = self_attentive_pool(states, rel_scorer);
    out.rows.emplace(rel, out.ids.size());
    out.ids.push_back(rel);
    rows.push_back(reshape(r, {1, r.size()}));
  }
  if (!rows.empty()) out.matrix = rows.size() == 1 ? rows.front() : concat(rows, 0);
  return out;
}

Tensor relation_match_attention(const Tensor& question_states, const Tensor& relation) {
  const std::size_t l = question_states.dim(0), d = question_states.dim(1);
  if (relation.rank() != 1 || relation.dim(0) != d) {
    throw ShapeError("relation_match_score: relation " + shape_str(relation.shape()) + " vs question states " +
                     shape_str(question_states.shape()));
  }
  return softmax(reshape(matmul(question_states, reshape(relation, {d, 1})), {l}), 0);
}

Tensor relation_match_score(const Tensor& question_states, const Tensor& relation) {
  const std::size_t l = question_states.dim(0), d = question_states.dim(1);
  const Tensor beta = relation_match_attention(question_states, relation);
  const Tensor summary = reshape(matmul(reshape(beta, {1, l}), question_states), {d});
  return dot(relation, summary);
}

Tensor relation_match_scores(const Tensor& question_states, const RelationVectors& relations) {
  const Tensor& r = relations.matrix;
  const Tensor beta = softmax(matmul(r, transpose(question_states)), 1);  // n × l
  const Tensor summary = matmul(beta, question_states);                   // n × d
  return sum(mul(r, summary), 1);
}

namespace {

std::vector<double> indicator_of(std::span<const Neighbor> neighbors, const Subgraph& graph) {
  std::vector<double> ind(neighbors.size());
  for (std::size_t i = 0; i < neighbors.size(); ++i) ind[i] = graph.is_topic(neighbors[i].entity) ? 1.0 : 0.0;
  return ind;
}

}  // namespace

Tensor neighbor_attention(std::span<const Neighbor> neighbors, const Tensor& rel_scores,
                          const RelationVectors& relations, const Subgraph& graph) {
  if (neighbors.empty()) throw std::invalid_argument("neighbor_attention: empty neighbour list");
  std::vector<std::size_t> rows(neighbors.size());
  for (std::size_t i = 0; i < neighbors.size(); ++i) rows[i] = relations.row_of(neighbors[i].relation);
  const Tensor logits = add(gather_rows(rel_scores, rows), Tensor::vector(indicator_of(neighbors, graph)));
  return softmax(logits, 0);
}

PropagateResult propagate(std::size_t entity, const Subgraph& graph, const Tensor& entity_embeddings,
                          const RelationVectors& relations, const Tensor& rel_scores, const SgReaderParams& params) {
  const std::size_t d = entity_embeddings.dim(1);
  const std::size_t row_idx[1] = {entity};
  const Tensor self = reshape(gather_rows(entity_embeddings, row_idx), {d});
  const auto& nbrs = graph.neighbors.at(entity);
  PropagateResult out;
  if (nbrs.empty()) {
    out.knowledge = self;
    return out;
  }
  const std::size_t k = nbrs.size();
  std::vector<std::size_t> rel_rows(k), ent_rows(k);
  for (std::size_t i = 0; i < k; ++i) {
    rel_rows[i] = relations.row_of(nbrs[i].relation);
    ent_rows[i] = nbrs[i].entity;
  }
  out.attention = neighbor_attention(nbrs, rel_scores, relations, graph);
  const Tensor inputs =
      concat({gather_rows(relations.matrix, rel_rows), gather_rows(entity_embeddings, ent_rows)}, 1);
  const Tensor messages = tanh(matmul(inputs, params.w_e));
  const Tensor aggregate = reshape(matmul(reshape(out.attention, {1, k}), messages), {d});
  out.gate = sigmoid(dot(concat({self, aggregate}, 0), params.w_gate));
  const Tensor keep = scale_rows(reshape(self, {1, d}), out.gate);
  const Tensor take = scale_rows(reshape(aggregate, {1, d}), add_scalar(scale(out.gate, -1.0), 1.0));
  out.knowledge = reshape(add(keep, take), {d});
  return out;
}

EntityKnowledge read_subgraph(const Tensor& question_states, const Subgraph& graph, const Tensor& entity_embeddings,
                              const RelationVectors& relations, const SgReaderParams& params) {
  const std::size_t n = graph.size();
  if (entity_embeddings.rank() != 2 || entity_embeddings.dim(0) != n) {
    throw ShapeError("read_subgraph: entity table " + shape_str(entity_embeddings.shape()) + " for " +
                     std::to_string(n) + " entities");
  }
  EntityKnowledge out;
  out.offsets.assign(n + 1, 0);
  std::vector<std::size_t> rel_rows, ent_rows;
  std::vector<double> indicator, has_neighbors(n, 0.0), no_neighbors(n, 1.0);
  for (std::size_t e = 0; e < n; ++e) {
    for (const auto& nb : graph.neighbors[e]) {
      rel_rows.push_back(relations.row_of(nb.relation));
      ent_rows.push_back(nb.entity);
      indicator.push_back(graph.is_topic(nb.entity) ? 1.0 : 0.0);
    }
    out.offsets[e + 1] = rel_rows.size();
    if (!graph.neighbors[e].empty()) {
      has_neighbors[e] = 1.0;
      no_neighbors[e] = 0.0;
    }
  }
  if (rel_rows.empty()) {
    out.vectors = entity_embeddings;
    out.gates = Tensor::full({n}, 1.0);
    return out;
  }
  const std::size_t d = entity_embeddings.dim(1);
  const Tensor rel_scores = relation_match_scores(question_states, relations);
  const Tensor logits = add(gather_rows(rel_scores, rel_rows), Tensor::vector(std::move(indicator)));
  out.attention = segment_softmax(logits, out.offsets);
  const Tensor inputs =
      concat({gather_rows(relations.matrix, rel_rows), gather_rows(entity_embeddings, ent_rows)}, 1);
  const Tensor messages = tanh(matmul(inputs, params.w_e));
  const Tensor aggregate = segment_sum(scale_rows(messages, out.attention), out.offsets);
  const Tensor raw_gate =
      sigmoid(reshape(matmul(concat({entity_embeddings, aggregate}, 1), reshape(params.w_gate, {2 * d, 1})), {n}));
  out.gates = add(mul(raw_gate, Tensor::vector(std::move(has_neighbors))), Tensor::vector(std::move(no_neighbors)));
  out.vectors = add(scale_rows(entity_embeddings, out.gates),
                    scale_rows(aggregate, add_scalar(scale(out.gates, -1.0), 1.0)));
  return out;
}

}  // namespace kaqa
