#include "kaqa/text_reader.hpp"

#include <algorithm>
#include <stdexcept>

namespace kaqa {
namespace {

std::atomic<std::size_t> g_encode_calls{0};

// γ a + (1 - γ) b for a scalar gate and two vectors.
Tensor mix(const Tensor& gate, const Tensor& a, const Tensor& b) {
  const std::size_t d = a.size();
  const Tensor keep = scale_rows(reshape(a, {1, d}), gate);
  const Tensor take = scale_rows(reshape(b, {1, d}), add_scalar(scale(gate, -1.0), 1.0));
  return reshape(add(keep, take), {d});
}

Tensor broadcast_rows(const Tensor& v, std::size_t rows) {
  const std::vector<std::size_t> zeros(rows, 0);
  return gather_rows(reshape(v, {1, v.size()}), zeros);
}

}  // namespace

std::vector<std::size_t> EncodedDocument::entities() const {
  std::vector<std::size_t> out;
  for (auto l : links)
    if (l != kNoLink) out.push_back(l);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

KaReaderParams make_ka_reader_params(ModelParams& params, std::size_t hidden, std::size_t word_dim,
                                     GateVariant variant, std::mt19937_64& rng, bool documents) {
  KaReaderParams p;
  p.variant = variant;
  p.q_scorer = params.add_glorot("ka.q_scorer", {hidden}, rng);
  p.w_q = params.add_glorot("ka.w_q", {3 * hidden, hidden}, rng);
  p.w_gq = params.add_glorot("ka.w_gq", {3 * hidden}, rng);
  if (!documents) return p;
  switch (variant) {
    case GateVariant::scalar_ew: p.w_gd = params.add_glorot("ka.w_gd", {2 * hidden, 1}, rng); break;
    case GateVariant::vector_ew: p.w_gd = params.add_glorot("ka.w_gd", {2 * hidden, hidden}, rng); break;
    case GateVariant::scalar_dot: p.w_gd = params.add_glorot("ka.w_gd", {2, 1}, rng); break;
  }
  p.feat_proj = params.add_glorot("ka.feat_proj", {word_dim + kExtraTokenFeatures, hidden}, rng);
  p.feat_bias = params.add("ka.feat_bias", Tensor::zeros({hidden}, true));
  p.bilstm = make_bilstm(params, "ka.doc_lstm", hidden, hidden, rng);
  return p;
}

Reformulation reformulate_query(const Tensor& question_states, std::span<const std::size_t> topic,
                                const Tensor& knowledge, const KaReaderParams& params,
                                const TextReaderOptions& options) {
  Reformulation out;
  const auto pool = attention_pool(question_states, params.q_scorer);
  out.q = pool.pooled;
  out.pool_weights = pool.weights;
  const std::size_t d = out.q.size();
  out.topic = topic.empty() ? Tensor::zeros({d}) : mean(gather_rows(knowledge, topic), 0);
  if (!options.reformulate) {
    out.q_prime = out.q;
    return out;
  }
  const Tensor x = concat({out.q, out.topic, sub(out.q, out.topic)}, 0);
  out.gate = sigmoid(dot(x, params.w_gq));
  const Tensor candidate = tanh(reshape(matmul(reshape(x, {1, 3 * d}), params.w_q), {d}));
  out.q_prime = mix(out.gate, out.q, candidate);
  return out;
}

GateResult conditional_gate(const Tensor& q, const Tensor& entity_rows, const Tensor& features,
                            const std::vector<bool>& linked, const KaReaderParams& params,
                            const TextReaderOptions& options) {
  const std::size_t rows = features.dim(0), d = features.dim(1);
  if (entity_rows.shape() != features.shape() || linked.size() != rows) {
    throw ShapeError("conditional_gate: entity rows " + shape_str(entity_rows.shape()) + ", features " +
                     shape_str(features.shape()) + ", " + std::to_string(linked.size()) + " link flags");
  }
  const Tensor condition = options.conditional_gate ? q : Tensor::full({d}, 1.0);
  const Tensor c = broadcast_rows(condition, rows);
  GateResult out;
  switch (params.variant) {
    case GateVariant::scalar_ew: {
      const Tensor z = concat({mul(c, entity_rows), mul(c, features)}, 1);
      out.gate = sigmoid(reshape(matmul(z, params.w_gd), {rows}));
      break;
    }
    case GateVariant::vector_ew: {
      const Tensor z = concat({mul(c, entity_rows), mul(c, features)}, 1);
      out.gate = sigmoid(matmul(z, params.w_gd));
      break;
    }
    case GateVariant::scalar_dot: {
      const Tensor qe = reshape(sum(mul(c, entity_rows), 1), {rows, 1});
      const Tensor qf = reshape(sum(mul(c, features), 1), {rows, 1});
      out.gate = sigmoid(reshape(matmul(concat({qe, qf}, 1), params.w_gd), {rows}));
      break;
    }
  }
  std::vector<double> mask(rows);
  for (std::size_t i = 0; i < rows; ++i) mask[i] = linked[i] ? 1.0 : 0.0;
  const Tensor delta = sub(entity_rows, features);
  if (params.variant == GateVariant::vector_ew) {
    out.fused = add(features, mul(scale_rows(out.gate, Tensor::vector(std::move(mask))), delta));
  } else {
    out.fused = add(features, scale_rows(delta, mul(out.gate, Tensor::vector(std::move(mask)))));
  }
  return out;
}

Tensor token_features(const EncodedDocument& doc, const EmbeddingTable& words, const KaReaderParams& params,
                      const ForwardContext& ctx) {
  const std::size_t rows = doc.size();
  if (doc.exact_match.size() != rows || doc.term_freq.size() != rows || doc.links.size() != rows) {
    throw ShapeError("token_features: per-token feature lists disagree with document length");
  }
  std::vector<double> extra(rows * kExtraTokenFeatures);
  for (std::size_t i = 0; i < rows; ++i) {
    extra[i * kExtraTokenFeatures] = doc.exact_match[i];
    extra[i * kExtraTokenFeatures + 1] = doc.term_freq[i];
  }
  const Tensor raw = concat({ctx.drop(words.lookup(doc.words)), Tensor::from({rows, kExtraTokenFeatures}, std::move(extra))}, 1);
  return add_row(matmul(raw, params.feat_proj), params.feat_bias);
}

DocumentEncoding encode_document(const EncodedDocument& doc, const Tensor& q, const Tensor& q_prime,
                                 const Tensor& knowledge, const EmbeddingTable& words, const KaReaderParams& params,
                                 const TextReaderOptions& options, const ForwardContext& ctx) {
  g_encode_calls.fetch_add(1, std::memory_order_relaxed);
  if (doc.size() == 0) throw std::invalid_argument("encode_document: empty document");
  const std::size_t rows = doc.size();
  DocumentEncoding out;
  const Tensor features = token_features(doc, words, params, ctx);
  const bool any_link = std::any_of(doc.links.begin(), doc.links.end(), [](auto l) { return l != kNoLink; });
  if (options.enhance && any_link) {
    std::vector<std::size_t> rows_idx(rows);
    std::vector<bool> linked(rows);
    for (std::size_t i = 0; i < rows; ++i) {
      linked[i] = doc.links[i] != kNoLink;
      rows_idx[i] = linked[i] ? doc.links[i] : 0;
    }
    auto gated = conditional_gate(q, gather_rows(knowledge, rows_idx), features, linked, params, options);
    out.inputs = gated.fused;
    out.gate = gated.gate;
  } else {
    out.inputs = features;
  }
  out.states = ctx.drop(bilstm_encode(params.bilstm, out.inputs));
  const std::size_t d = out.states.dim(1);
  out.weights = softmax(reshape(matmul(out.states, reshape(q_prime, {d, 1})), {rows}), 0);
  out.vector = reshape(matmul(reshape(out.weights, {1, rows}), out.states), {d});
  return out;
}

TextEvidence aggregate_entity_text(std::size_t entity_count, std::size_t hidden,
                                   const std::vector<EncodedDocument>& docs, const std::vector<Tensor>& doc_vectors) {
  if (docs.size() != doc_vectors.size()) throw std::invalid_argument("aggregate_entity_text: docs/vectors mismatch");
  TextEvidence out;
  out.doc_counts.assign(entity_count, 0);
  if (docs.empty()) {
    out.entity_vectors = Tensor::zeros({entity_count, hidden});
    return out;
  }
  std::vector<std::vector<std::size_t>> mentions(docs.size());
  for (std::size_t j = 0; j < docs.size(); ++j) {
    mentions[j] = docs[j].entities();
    for (auto e : mentions[j]) {
      if (e >= entity_count) throw std::out_of_range("aggregate_entity_text: link outside the entity set");
      ++out.doc_counts[e];
    }
  }
  std::vector<double> weights(entity_count * docs.size(), 0.0);
  for (std::size_t j = 0; j < docs.size(); ++j)
    for (auto e : mentions[j]) weights[e * docs.size() + j] = 1.0 / static_cast<double>(out.doc_counts[e]);
  std::vector<Tensor> rows;
  rows.reserve(doc_vectors.size());
  for (const auto& v : doc_vectors) rows.push_back(reshape(v, {1, v.size()}));
  const Tensor stacked = rows.size() == 1 ? rows.front() : concat(rows, 0);
  out.entity_vectors = matmul(Tensor::from({entity_count, docs.size()}, std::move(weights)), stacked);
  return out;
}

std::size_t text_reader_call_count() { return g_encode_calls.load(std::memory_order_relaxed); }

}  // namespace kaqa
