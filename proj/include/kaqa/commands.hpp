#pragma once

// Command implementations behind the `kaqa` executable.

#include <string>
#include <vector>

#include "kaqa/config.hpp"
#include "kaqa/gradcheck.hpp"
#include "kaqa/synthetic.hpp"
#include "kaqa/trainer.hpp"

namespace kaqa {

SyntheticConfig synthetic_config(const RunConfig& config);

// Generates the synthetic world and writes it to config.data_dir.
SyntheticStats cmd_generate(const RunConfig& config);

struct Splits {
  std::vector<QAExample> train, dev, test;
};
Splits load_splits(const std::filesystem::path& dir);

struct TrainOutcome {
  TrainResult training;
  EvalReport dev;
};

// Builds vocabularies over all splits, trains, and returns the dev report of
// the selected parameters. When `checkpoint` is nonempty the parameters and
// a `<checkpoint>.vocab.json` sidecar are written.
TrainOutcome train_and_report(const RunConfig& config, const Splits& splits, const std::filesystem::path& checkpoint,
                              const TrainOptions* override_options = nullptr);
TrainOptions train_options(const RunConfig& config);

TrainOutcome cmd_train(const RunConfig& config);
// Loads the checkpoint and its vocabulary sidecar, then scores `split`.
EvalReport cmd_eval(const RunConfig& config, const std::string& split);

struct AblationRow {
  std::string name;
  Ablation ablation;
  double hit_at_1 = 0.0;
  double f1 = 0.0;
  std::size_t best_epoch = 0;
};
std::vector<AblationRow> cmd_ablate(const RunConfig& config);
std::string format_ablation(const std::vector<AblationRow>& rows);

// Tiny instance: five entities, two documents, a four-token question.
QAExample gradcheck_example();
// Gradient check of every parameter of a tiny model on gradcheck_example().
// Refuses (std::invalid_argument) when dropout is enabled. `corrupt`, when
// nonempty, names a parameter whose gradient is perturbed after backward.
GradCheckReport cmd_gradcheck(const RunConfig& config, const std::string& corrupt = {});

}  // namespace kaqa
