#include "kaqa/commands.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "kaqa/log.hpp"

namespace kaqa {

SyntheticConfig synthetic_config(const RunConfig& config) {
  SyntheticConfig s;
  s.seed = config.seed;
  s.kb_fraction = config.kb_fraction;
  s.top_k = config.top_k;
  s.ppr_restart = config.ppr_restart;
  return s;
}

SyntheticStats cmd_generate(const RunConfig& config) {
  config.validate();
  const auto data = generate_synthetic(synthetic_config(config));
  write_synthetic(data, config.data_dir);
  return data.stats;
}

Splits load_splits(const std::filesystem::path& dir) {
  Splits s;
  s.train = load_dataset(dir / "train.jsonl");
  s.dev = load_dataset(dir / "dev.jsonl");
  s.test = load_dataset(dir / "test.jsonl");
  return s;
}

TrainOptions train_options(const RunConfig& config) {
  TrainOptions o;
  o.epochs = config.epochs;
  o.batch_size = config.batch_size;
  o.adam = config.adam;
  o.clip_norm = config.clip_norm;
  o.seed = config.seed;
  o.threshold = config.threshold;
  return o;
}

TrainOutcome train_and_report(const RunConfig& config, const Splits& splits, const std::filesystem::path& checkpoint,
                              const TrainOptions* override_options) {
  config.validate();
  const auto vocab = Vocabularies::build({&splits.train, &splits.dev, &splits.test});
  KaqaModel model(config.model, vocab, config.seed);
  const auto train = encode_examples(splits.train, vocab, config.model);
  const auto dev = encode_examples(splits.dev, vocab, config.model);
  const auto options = override_options ? *override_options : train_options(config);
  TrainOutcome out;
  out.training = train_model(model, train, dev, options);
  out.dev = evaluate(model, dev.empty() ? train : dev, config.threshold);
  if (!checkpoint.empty()) {
    if (checkpoint.has_parent_path()) std::filesystem::create_directories(checkpoint.parent_path());
    save_checkpoint(model.params(), checkpoint);
    vocab.save(checkpoint.string() + ".vocab.json");
  }
  return out;
}

TrainOutcome cmd_train(const RunConfig& config) {
  return train_and_report(config, load_splits(config.data_dir), config.checkpoint);
}

EvalReport cmd_eval(const RunConfig& config, const std::string& split) {
  config.validate();
  if (split != "train" && split != "dev" && split != "test") throw std::invalid_argument("unknown split '" + split + "'");
  const auto examples = load_dataset(config.data_dir / (split + ".jsonl"));
  if (examples.empty()) throw std::invalid_argument("split '" + split + "' is empty");
  const auto vocab = Vocabularies::load(config.checkpoint.string() + ".vocab.json");
  KaqaModel model(config.model, vocab, config.seed);
  load_checkpoint(model.params(), config.checkpoint);
  return evaluate(model, encode_examples(examples, vocab, config.model), config.threshold);
}

std::vector<AblationRow> cmd_ablate(const RunConfig& config) {
  const auto splits = load_splits(config.data_dir);
  const std::pair<const char*, Ablation> variants[] = {
      {"full", Ablation::none},
      {"w/o query reformulation", Ablation::no_reform},
      {"w/o knowledge enhancement", Ablation::no_know},
      {"w/o conditional gate", Ablation::std_gate},
      {"sgreader only", Ablation::kb_only},
  };
  std::vector<AblationRow> rows;
  for (const auto& [name, ablation] : variants) {
    RunConfig c = config;
    c.model.ablation = ablation;
    logging::info(std::string("ablation variant=") + std::string(to_string(ablation)));
    const auto outcome = train_and_report(c, splits, {});
    rows.push_back({name, ablation, outcome.dev.hit_at_1, outcome.dev.f1, outcome.training.best_epoch});
  }
  return rows;
}

std::string format_ablation(const std::vector<AblationRow>& rows) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-28s %8s %8s %6s\n", "model (dev)", "hit@1", "f1", "epoch");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-28s %8.4f %8.4f %6zu\n", r.name.c_str(), r.hit_at_1, r.f1, r.best_epoch);
    out += buf;
  }
  return out;
}

QAExample gradcheck_example() {
  QAExample ex;
  ex.id = "gc0";
  ex.question = {"birth", "place", "of", "alva"};
  ex.topic_entities = {"alva"};
  ex.answers = {"boru"};
  ex.subgraph_entities = {"alva", "boru", "cade", "dumo"};
  ex.subgraph_triples = {{"alva", "people.place_of_birth", "boru"},
                         {"boru", "location.country", "cade"},
                         {"alva", "people.languages", "dumo"},
                         {"cade", "location.official_language", "dumo"}};
  ex.documents = {
      {{"alva", "was", "born", "in", "boru", "."}, {{0, 1, "alva"}, {4, 5, "boru"}}},
      {{"the", "official", "language", "of", "elin", "is", "dumo", "."}, {{4, 5, "elin"}, {6, 7, "dumo"}}},
  };
  ex.candidates = {"alva", "boru", "cade", "dumo", "elin"};
  validate_example(ex);
  return ex;
}

GradCheckReport cmd_gradcheck(const RunConfig& config, const std::string& corrupt) {
  if (config.model.dropout > 0.0) {
    throw std::invalid_argument("gradcheck needs a deterministic loss; run it with dropout 0 (got " +
                                std::to_string(config.model.dropout) + ")");
  }
  ModelConfig mc = config.model;
  mc.hidden = 4;
  mc.word_dim = 6;
  mc.word_init = 0.5;
  mc.entity_init = 0.5;
  mc.word_vectors.clear();
  mc.entity_vectors.clear();
  const std::vector<QAExample> data = {gradcheck_example()};
  const auto vocab = Vocabularies::build({&data});
  KaqaModel model(mc, vocab, config.seed);
  const auto ex = encode_example(data.front(), vocab, mc);
  if (!corrupt.empty()) {
    if (!model.params().contains(corrupt)) throw std::invalid_argument("no parameter named '" + corrupt + "'");
    model.params().set_grad_hook(corrupt, [](std::span<double> g) {
      for (auto& v : g) v = v * 1.5 + 1e-3;
    });
  }
  auto loss_fn = [&] {
    const ForwardContext ctx;
    const auto relations = model.encode_relations(ex.relations, ctx);
    return model.loss(ex, model.forward(ex, relations, ctx));
  };
  return grad_check(loss_fn, model.params());
}

}  // namespace kaqa
