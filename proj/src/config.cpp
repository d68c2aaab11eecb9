#include "kaqa/config.hpp"

#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace kaqa {
namespace {

template <typename T>
std::string str(const T& v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

}  // namespace

void RunConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("config: " + what); };
  if (model.hidden == 0 || model.hidden % 2 != 0) fail("hidden size must be positive and even");
  if (model.word_dim == 0) fail("word dimension must be positive");
  if (model.dropout < 0.0 || model.dropout >= 1.0) fail("dropout must lie in [0,1)");
  if (!(kb_fraction > 0.0 && kb_fraction <= 1.0)) fail("kb fraction must lie in (0,1]");
  if (batch_size == 0) fail("batch size must be positive");
  if (!(adam.lr > 0.0)) fail("learning rate must be positive");
  if (!(clip_norm > 0.0)) fail("clip norm must be positive");
  if (model.smoothing < 0.0 || model.smoothing >= 1.0) fail("label smoothing must lie in [0,1)");
  if (!(threshold > 0.0 && threshold < 1.0)) fail("threshold must lie in (0,1)");
  if (model.max_question_len == 0 || model.max_document_len == 0 || model.max_neighbors == 0) {
    fail("length caps must be positive");
  }
  if (top_k == 0) fail("top_k must be positive");
  if (!(ppr_restart > 0.0 && ppr_restart < 1.0)) fail("PPR restart must lie in (0,1)");
}

std::vector<ConfigEntry> describe(const RunConfig& c) {
  const auto& m = c.model;
  return {
      {"hidden", str(m.hidden), "reported", "LSTM hidden size and entity embedding size"},
      {"word_dim", str(m.word_dim), "reported", "word embedding size"},
      {"dropout", str(m.dropout), "reported", "on word embeddings and LSTM hidden states"},
      {"learning_rate", str(c.adam.lr), "reported", "Adam"},
      {"clip_norm", str(c.clip_norm), "reported", "global gradient norm"},
      {"label_smoothing", str(m.smoothing), "reported", "binary cross-entropy target smoothing"},
      {"max_question_len", str(m.max_question_len), "reported", "tokens"},
      {"max_document_len", str(m.max_document_len), "reported", "tokens"},
      {"max_neighbors", str(m.max_neighbors), "reported", "per entity, first in data order"},
      {"adam_beta1", str(c.adam.beta1), "chosen", ""},
      {"adam_beta2", str(c.adam.beta2), "chosen", ""},
      {"adam_eps", str(c.adam.eps), "chosen", ""},
      {"epochs", str(c.epochs), "chosen", ""},
      {"batch_size", str(c.batch_size), "chosen", ""},
      {"threshold", str(c.threshold), "chosen", "answer set = {e : score > threshold}"},
      {"top_k", str(c.top_k), "chosen", "subgraph entities kept by PPR"},
      {"ppr_restart", str(c.ppr_restart), "chosen", "undirected view, dangling mass to seeds"},
      {"word_init", str(m.word_init), "chosen", "uniform(-b, b)"},
      {"entity_init", str(m.entity_init), "chosen", "uniform(-b, b)"},
      {"kb_fraction", str(c.kb_fraction), "run", ""},
      {"ablation", std::string(to_string(m.ablation)), "run", ""},
      {"gate_variant", std::string(to_string(m.gate_variant)), "run", ""},
      {"seed", str(c.seed), "run", ""},
  };
}

std::string format_config(const RunConfig& c) {
  std::ostringstream out;
  out << std::left << std::setw(18) << "setting" << std::setw(12) << "value" << std::setw(10) << "source"
      << "note\n";
  for (const auto& e : describe(c)) {
    out << std::setw(18) << e.key << std::setw(12) << e.value << std::setw(10) << e.provenance << e.note << '\n';
  }
  return out.str();
}

}  // namespace kaqa
