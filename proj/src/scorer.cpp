#include "kaqa/scorer.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <stdexcept>

#include "kaqa/nn.hpp"

namespace kaqa {

AnswerScores score_answers(const Tensor& q_prime, const Tensor& knowledge, const Tensor& text, const Tensor& w_s) {
  const Tensor candidates = text.defined() ? concat({knowledge, text}, 1) : knowledge;
  const std::size_t d = q_prime.size();
  if (w_s.rank() != 2 || w_s.dim(0) != d || w_s.dim(1) != candidates.dim(1)) {
    throw ShapeError("score_answers: W_s " + shape_str(w_s.shape()) + " for query " + shape_str(q_prime.shape()) +
                     " and candidates " + shape_str(candidates.shape()));
  }
  const Tensor projected = matmul(reshape(q_prime, {1, d}), w_s);  // 1 × width
  AnswerScores out;
  out.logits = reshape(matmul(candidates, transpose(projected)), {candidates.dim(0)});
  out.scores = sigmoid(out.logits);
  return out;
}

std::vector<std::size_t> rank_candidates(std::span<const double> scores, std::span<const std::string> names) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return names[a] < names[b];
  });
  return order;
}

Prediction make_prediction(std::vector<std::string> entities, std::vector<double> scores, double threshold) {
  if (entities.size() != scores.size()) throw std::invalid_argument("make_prediction: names/scores mismatch");
  Prediction p;
  p.entities = std::move(entities);
  p.scores = std::move(scores);
  p.ranking = rank_candidates(p.scores, p.entities);
  for (auto i : p.ranking)
    if (p.scores[i] > threshold) p.answer_set.push_back(p.entities[i]);
  return p;
}

Tensor qa_loss(const Tensor& scores, std::span<const std::size_t> gold, double eps) {
  if (gold.empty()) throw std::invalid_argument("qa_loss: example has no gold answer");
  std::vector<double> labels(scores.size(), 0.0);
  for (auto g : gold) labels.at(g) = 1.0;
  return smoothed_bce(scores, labels, eps);
}

int hit_at_1(const Prediction& prediction, std::span<const std::string> gold) {
  if (prediction.ranking.empty()) return 0;
  return std::find(gold.begin(), gold.end(), prediction.top()) != gold.end() ? 1 : 0;
}

SetScores set_scores(std::span<const std::string> predicted, std::span<const std::string> gold) {
  const std::set<std::string> p(predicted.begin(), predicted.end());
  const std::set<std::string> g(gold.begin(), gold.end());
  SetScores out;
  if (p.empty() && g.empty()) return {1.0, 1.0, 1.0};
  if (p.empty() || g.empty()) return out;
  std::size_t hits = 0;
  for (const auto& e : p) hits += g.count(e);
  out.precision = static_cast<double>(hits) / static_cast<double>(p.size());
  out.recall = static_cast<double>(hits) / static_cast<double>(g.size());
  if (hits > 0) out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
  return out;
}

double f1_score(std::span<const std::string> predicted, std::span<const std::string> gold) {
  return set_scores(predicted, gold).f1;
}

}  // namespace kaqa
