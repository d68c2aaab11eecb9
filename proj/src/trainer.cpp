#include "kaqa/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "kaqa/log.hpp"

namespace kaqa {
namespace {

QuestionRecord record_for(const EncodedExample& ex, const Prediction& p) {
  QuestionRecord r;
  r.id = ex.id;
  r.hit_at_1 = hit_at_1(p, ex.answers);
  const auto s = set_scores(p.answer_set, ex.answers);
  r.precision = s.precision;
  r.recall = s.recall;
  r.f1 = s.f1;
  const std::vector<std::string> top1 = {p.top()};
  r.top1_f1 = f1_score(top1, ex.answers);
  r.answer_set = p.answer_set;
  for (std::size_t i = 0; i < std::min<std::size_t>(5, p.ranking.size()); ++i) {
    r.top.emplace_back(p.entities[p.ranking[i]], p.scores[p.ranking[i]]);
  }
  return r;
}

using Snapshot = std::vector<std::vector<double>>;

Snapshot snapshot(const ModelParams& params) {
  Snapshot s;
  for (const auto& [name, t] : params.entries()) s.emplace_back(t.data().begin(), t.data().end());
  return s;
}

void restore(ModelParams& params, const Snapshot& s) {
  for (std::size_t i = 0; i < s.size(); ++i) {
    auto dst = params.entries()[i].second.mutable_data();
    std::copy(s[i].begin(), s[i].end(), dst.begin());
  }
}

std::string metric_line(std::size_t epoch, const char* split, const char* metric, double value) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "epoch=%zu split=%s metric=%s value=%.6f", epoch, split, metric, value);
  return buf;
}

}  // namespace

EvalReport evaluate(const KaqaModel& model, const std::vector<EncodedExample>& examples, double threshold) {
  if (examples.empty()) throw std::invalid_argument("evaluate: no examples");
  RelationVectors relations;
  {
    NoGradGuard guard;
    relations = model.encode_all_relations(ForwardContext{});
  }
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return examples[a].id < examples[b].id; });

  EvalReport report;
  report.records.resize(examples.size());
  std::vector<std::string> errors(examples.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < order.size(); ++i) {
    try {
      const auto& ex = examples[order[i]];
      report.records[i] = record_for(ex, model.predict(ex, relations, threshold));
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw std::runtime_error("evaluate: " + e);

  for (const auto& r : report.records) {
    report.hit_at_1 += r.hit_at_1;
    report.precision += r.precision;
    report.recall += r.recall;
    report.f1 += r.f1;
    report.top1_f1 += r.top1_f1;
  }
  const auto n = static_cast<double>(report.records.size());
  report.hit_at_1 /= n;
  report.precision /= n;
  report.recall /= n;
  report.f1 /= n;
  report.top1_f1 /= n;
  return report;
}

std::string EvalReport::to_jsonl() const {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json top = nlohmann::ordered_json::array();
    for (const auto& [e, s] : r.top) top.push_back({{"entity", e}, {"score", s}});
    nlohmann::ordered_json j = {{"id", r.id},           {"hit@1", r.hit_at_1},  {"precision", r.precision},
                                {"recall", r.recall},   {"f1", r.f1},           {"top1_f1", r.top1_f1},
                                {"answers", r.answer_set}, {"top5", top}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string EvalReport::summary(const std::string& title) const {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%-12s %8s %8s %8s %8s %8s %8s\n%-12s %8zu %8.4f %8.4f %8.4f %8.4f %8.4f\n", "split", "n",
                "hit@1", "f1", "prec", "recall", "top1_f1", title.c_str(), records.size(), hit_at_1, f1, precision,
                recall, top1_f1);
  return buf;
}

TrainResult train_model(KaqaModel& model, const std::vector<EncodedExample>& train,
                        const std::vector<EncodedExample>& dev, const TrainOptions& options) {
  if (train.empty()) throw std::invalid_argument("train_model: empty training set");
  if (options.batch_size == 0) throw std::invalid_argument("train_model: batch size must be positive");
  const auto& selection = dev.empty() ? train : dev;
  const char* selection_name = dev.empty() ? "train" : "dev";
  auto& params = model.params();

  std::mt19937_64 order_rng(options.seed);
  std::mt19937_64 dropout_rng(options.seed ^ 0xd1b54a32d192ed03ULL);
  AdamState adam;
  adam.config = options.adam;

  TrainResult result;
  {
    const auto initial = evaluate(model, selection, options.threshold);
    result.best_hit_at_1 = initial.hit_at_1;
    result.best_f1 = initial.f1;
  }
  Snapshot best = snapshot(params);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    if (options.stop_when_perfect && result.best_hit_at_1 >= 1.0) break;
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), order_rng);
    double loss_total = 0.0;
    const ForwardContext ctx{true, model.config().dropout, &dropout_rng};
    for (std::size_t b = 0; b < order.size() && !result.diverged; b += options.batch_size) {
      const std::size_t e = std::min(order.size(), b + options.batch_size);
      std::set<std::size_t> rel_ids;
      for (std::size_t i = b; i < e; ++i) rel_ids.insert(train[order[i]].relations.begin(), train[order[i]].relations.end());
      const std::vector<std::size_t> ids(rel_ids.begin(), rel_ids.end());
      const auto relations = model.encode_relations(ids, ctx);
      std::vector<Tensor> losses;
      for (std::size_t i = b; i < e; ++i) {
        const auto& ex = train[order[i]];
        losses.push_back(reshape(model.loss(ex, model.forward(ex, relations, ctx)), {1}));
      }
      const Tensor batch_loss = scale(sum_all(losses.size() == 1 ? losses.front() : concat(losses, 0)),
                                      1.0 / static_cast<double>(losses.size()));
      const double value = batch_loss.item();
      if (!std::isfinite(value)) {
        result.diverged = true;
        result.divergence = "non-finite loss in epoch " + std::to_string(epoch);
        break;
      }
      params.zero_grad();
      backward(batch_loss);
      params.apply_grad_hooks();
      clip_grad_norm(params, options.clip_norm);
      try {
        adam_step(params, adam);
      } catch (const NonFiniteGradient& err) {
        result.diverged = true;
        result.divergence = err.what();
        break;
      }
      loss_total += value * static_cast<double>(e - b);
    }
    if (result.diverged) {
      logging::error("training diverged: " + result.divergence + "; keeping the last good parameters");
      break;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_total / static_cast<double>(train.size());
    const auto report = evaluate(model, selection, options.threshold);
    rec.dev_hit_at_1 = report.hit_at_1;
    rec.dev_f1 = report.f1;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.push_back(rec);
    if (options.log_epochs) {
      logging::info(metric_line(epoch, "train", "loss", rec.train_loss));
      logging::info(metric_line(epoch, selection_name, "hit@1", rec.dev_hit_at_1));
      logging::info(metric_line(epoch, selection_name, "f1", rec.dev_f1));
    }
    if (rec.dev_hit_at_1 > result.best_hit_at_1 ||
        (rec.dev_hit_at_1 == result.best_hit_at_1 && rec.dev_f1 > result.best_f1)) {
      result.best_epoch = epoch;
      result.best_hit_at_1 = rec.dev_hit_at_1;
      result.best_f1 = rec.dev_f1;
      best = snapshot(params);
    }
  }
  restore(params, best);
  params.zero_grad();
  return result;
}

}  // namespace kaqa
