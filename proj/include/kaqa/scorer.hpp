#pragma once

// Answer scoring and evaluation metrics.
//
//   s^e = sigmoid(q'ᵀ W_s [e' ; e_d])      full model
//   s^e = sigmoid(q'ᵀ W_kb e')             KB-only head

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "kaqa/tensor.hpp"

namespace kaqa {

inline constexpr double kDefaultThreshold = 0.5;

struct Prediction {
  std::vector<std::string> entities;   // candidate names
  std::vector<double> scores;          // s^e per candidate, in (0,1)
  std::vector<std::size_t> ranking;    // candidate indices, descending score, name tiebreak
  std::vector<std::string> answer_set; // {e : s^e > threshold}, in ranking order

  const std::string& top() const { return entities.at(ranking.at(0)); }
};

struct AnswerScores {
  Tensor logits;  // n
  Tensor scores;  // n
};

// `text` may be undefined, in which case `w_s` must be the d_h × d_h KB-only map.
AnswerScores score_answers(const Tensor& q_prime, const Tensor& knowledge, const Tensor& text, const Tensor& w_s);

std::vector<std::size_t> rank_candidates(std::span<const double> scores, std::span<const std::string> names);
Prediction make_prediction(std::vector<std::string> entities, std::vector<double> scores,
                           double threshold = kDefaultThreshold);

// Mean smoothed BCE over candidates; label 1 iff the candidate is gold.
// Throws std::invalid_argument on an empty gold set.
Tensor qa_loss(const Tensor& scores, std::span<const std::size_t> gold, double eps);

int hit_at_1(const Prediction& prediction, std::span<const std::string> gold);

struct SetScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Empty prediction and empty gold count as a perfect match.
SetScores set_scores(std::span<const std::string> predicted, std::span<const std::string> gold);
double f1_score(std::span<const std::string> predicted, std::span<const std::string> gold);

}  // namespace kaqa
