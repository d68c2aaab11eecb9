#pragma once

// Minibatch training with best-on-dev selection, and evaluation reports.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "kaqa/model.hpp"

namespace kaqa {

struct QuestionRecord {
  std::string id;
  int hit_at_1 = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double top1_f1 = 0.0;  // F1 of the singleton {top-ranked entity}
  std::vector<std::string> answer_set;
  std::vector<std::pair<std::string, double>> top;  // up to five, ranked
};

struct EvalReport {
  std::vector<QuestionRecord> records;  // sorted by id
  double hit_at_1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double top1_f1 = 0.0;

  std::string to_jsonl() const;
  std::string summary(const std::string& title) const;
};

// Throws std::invalid_argument on an empty example list. Questions are
// scored in parallel and assembled in id order.
EvalReport evaluate(const KaqaModel& model, const std::vector<EncodedExample>& examples, double threshold);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double dev_hit_at_1 = 0.0;
  double dev_f1 = 0.0;
  double seconds = 0.0;
};

struct TrainOptions {
  std::size_t epochs = 50;
  std::size_t batch_size = 16;
  AdamConfig adam;
  double clip_norm = 1.0;
  std::uint64_t seed = 7;
  double threshold = kDefaultThreshold;
  bool log_epochs = true;
  // Stop once the selection split reaches Hit@1 = 1 (used by overfit runs).
  bool stop_when_perfect = false;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;  // 0 = initialization
  double best_hit_at_1 = 0.0;
  double best_f1 = 0.0;
  bool diverged = false;
  std::string divergence;
};

// Trains in place. After each epoch the model is scored on `dev` (or on
// `train` when `dev` is empty); the parameters with the best Hit@1, ties
// broken by F1, are restored before returning. A non-finite loss or gradient
// stops training with the last good parameters restored.
TrainResult train_model(KaqaModel& model, const std::vector<EncodedExample>& train,
                        const std::vector<EncodedExample>& dev, const TrainOptions& options);

}  // namespace kaqa
