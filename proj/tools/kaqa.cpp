// kaqa: generate synthetic data, train, evaluate, ablate and gradient-check
// the subgraph + knowledge-aware reader.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "kaqa/commands.hpp"
#include "kaqa/log.hpp"

namespace {

using namespace kaqa;

struct Flags {
  std::string ablation = "none";
  std::string gate_variant = "scalar-ew";
  std::string split = "test";
  std::string report;
  std::string corrupt_grad;
  bool quiet = false;
};

void add_common(CLI::App* cmd, RunConfig& c, Flags& f) {
  cmd->add_option("--seed", c.seed, "random seed")->capture_default_str();
  cmd->add_option("--kb-fraction", c.kb_fraction, "fraction of KB triples kept")
      ->check(CLI::IsMember({0.1, 0.3, 0.5, 1.0}))
      ->capture_default_str();
  cmd->add_option("--ablation", f.ablation, "model variant")
      ->check(CLI::IsMember({"none", "no-reform", "no-know", "std-gate", "kb-only"}))
      ->capture_default_str();
  cmd->add_option("--gate-variant", f.gate_variant, "passage gate form")
      ->check(CLI::IsMember({"scalar-ew", "vector-ew", "scalar-dot"}))
      ->capture_default_str();
  cmd->add_option("--epochs", c.epochs, "training epochs")->capture_default_str();
  cmd->add_option("--batch-size", c.batch_size, "questions per update")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--data-dir", c.data_dir, "dataset directory")->capture_default_str();
  cmd->add_option("--checkpoint", c.checkpoint, "checkpoint path")->capture_default_str();
  cmd->add_option("--threshold", c.threshold, "answer-set score threshold")->capture_default_str();
  cmd->add_option("--hidden", c.model.hidden, "hidden / entity size")->capture_default_str();
  cmd->add_option("--word-dim", c.model.word_dim, "word embedding size")->capture_default_str();
  cmd->add_option("--dropout", c.model.dropout, "dropout rate")->capture_default_str();
  cmd->add_option("--lr", c.adam.lr, "Adam learning rate")->capture_default_str();
  cmd->add_option("--top-k", c.top_k, "subgraph size")->capture_default_str();
  cmd->add_option("--entity-init", c.model.entity_init, "entity embedding init bound")->capture_default_str();
  cmd->add_flag("--freeze-entities", c.model.freeze_entities, "keep entity embeddings at their initial values");
  cmd->add_option("--word-vectors", c.model.word_vectors, "GloVe-format word vectors");
  cmd->add_option("--entity-vectors", c.model.entity_vectors, "GloVe-format entity vectors");
  cmd->add_flag("--quiet", f.quiet, "only warnings and errors on stderr");
}

void finish(RunConfig& c, const Flags& f) {
  c.model.ablation = *parse_ablation(f.ablation);
  c.model.gate_variant = *parse_gate_variant(f.gate_variant);
  if (f.quiet) logging::threshold() = logging::Level::warn;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Question answering over an incomplete KB and text"};
  app.require_subcommand(1);
  RunConfig config;
  Flags flags;

  auto* generate = app.add_subcommand("generate", "write a seeded synthetic dataset");
  auto* train = app.add_subcommand("train", "train and keep the best dev checkpoint");
  auto* eval = app.add_subcommand("eval", "score a checkpoint on a split");
  auto* ablate = app.add_subcommand("ablate", "train and compare every model variant on dev");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every parameter");
  auto* dump = app.add_subcommand("config-dump", "print the configuration and where each value comes from");
  for (auto* cmd : {generate, train, eval, ablate, gradcheck, dump}) add_common(cmd, config, flags);
  eval->add_option("--split", flags.split, "train, dev or test")->capture_default_str();
  eval->add_option("--report", flags.report, "write per-question records (JSON lines) here");
  gradcheck->add_option("--corrupt-grad", flags.corrupt_grad)->group("");  // mutation hook for tests

  CLI11_PARSE(app, argc, argv);

  try {
    if (gradcheck->parsed() && gradcheck->count("--dropout") == 0) config.model.dropout = 0.0;
    finish(config, flags);

    if (generate->parsed()) {
      const auto stats = cmd_generate(config);
      std::cout << stats_json(stats) << '\n';
      return 0;
    }
    if (train->parsed()) {
      const auto out = cmd_train(config);
      std::cout << "best epoch " << out.training.best_epoch << '\n' << out.dev.summary("dev");
      if (out.training.diverged) {
        std::cerr << "training diverged: " << out.training.divergence << '\n';
        return 2;
      }
      return 0;
    }
    if (eval->parsed()) {
      const auto report = cmd_eval(config, flags.split);
      if (!flags.report.empty()) write_file(flags.report, report.to_jsonl());
      std::cout << report.summary(flags.split);
      return 0;
    }
    if (ablate->parsed()) {
      std::cout << format_ablation(cmd_ablate(config));
      return 0;
    }
    if (gradcheck->parsed()) {
      const auto report = cmd_gradcheck(config, flags.corrupt_grad);
      for (const auto& e : report.entries) {
        std::printf("%-4s %-24s coords=%-5zu max_rel_err=%.3e\n", e.passed ? "ok" : "FAIL", e.name.c_str(),
                    e.coords_checked, e.max_rel_error);
      }
      const auto failed = report.failures();
      std::printf("%zu/%zu parameters passed at tolerance %.0e\n", report.entries.size() - failed.size(),
                  report.entries.size(), report.tolerance);
      return failed.empty() ? 0 : 1;
    }
    if (dump->parsed()) {
      config.validate();
      std::cout << format_config(config);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
