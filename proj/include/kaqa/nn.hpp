#pragma once

// Reusable layers and training machinery: embedding tables, (bi)LSTM
// encoders, self-attentive pooling, Adam, gradient clipping and the
// label-smoothed binary cross-entropy objective.

#include <cstddef>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "kaqa/params.hpp"
#include "kaqa/tensor.hpp"
#include "kaqa/vocab.hpp"

namespace kaqa {

// Dropout switch threaded through every forward pass.
struct ForwardContext {
  bool training = false;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;

  Tensor drop(const Tensor& x) const;
};

struct EmbeddingTable {
  Tensor table;  // vocab × dim
  bool frozen = false;

  std::size_t vocab_size() const { return table.dim(0); }
  std::size_t dim() const { return table.dim(1); }
  Tensor lookup(std::span<const std::size_t> ids) const;
};

// Uniform(-bound, bound) table. Trainable tables are registered in `params`.
EmbeddingTable make_embedding(ModelParams& params, const std::string& name, std::size_t vocab, std::size_t dim,
                              double bound, std::mt19937_64& rng, bool frozen = false);

// Overwrites rows of `table` for tokens found in a GloVe-format text file
// (token followed by `dim` floats per line). Returns the number of rows set.
std::size_t load_glove(const std::filesystem::path& path, const Vocabulary& vocab, EmbeddingTable& table);

// Gate order inside the 4·hidden blocks: input, forget, candidate, output.
struct LstmCell {
  Tensor w_ih;  // input × 4h
  Tensor w_hh;  // h × 4h
  Tensor bias;  // 4h
  std::size_t hidden = 0;
  std::size_t input = 0;
};

LstmCell make_lstm(ModelParams& params, const std::string& prefix, std::size_t input, std::size_t hidden,
                   std::mt19937_64& rng);

struct LstmStepTrace {
  std::vector<double> input_gate, forget_gate, candidate, output_gate;
};

// Runs the cell over the rows of `inputs` (T × input) from zero state and
// returns the stacked hidden states (T × hidden).
Tensor lstm_run(const LstmCell& cell, const Tensor& inputs, std::vector<LstmStepTrace>* trace = nullptr);

// Embeds `tokens`, applies dropout to embeddings and hidden states, runs the
// cell. Empty sequences throw; sequences longer than `max_len` are truncated
// with a warning.
Tensor lstm_encode(std::span<const std::size_t> tokens, const EmbeddingTable& table, const LstmCell& cell,
                   std::size_t max_len, const ForwardContext& ctx);

struct BiLstm {
  LstmCell forward;
  LstmCell backward;
  std::size_t output_dim() const { return forward.hidden + backward.hidden; }
};

// Each direction gets output_dim/2 hidden units; output_dim must be even.
BiLstm make_bilstm(ModelParams& params, const std::string& prefix, std::size_t input, std::size_t output_dim,
                   std::mt19937_64& rng);

// Row t = [forward state t ; backward state t].
Tensor bilstm_encode(const BiLstm& lstm, const Tensor& inputs);

struct PooledAttention {
  Tensor pooled;   // d
  Tensor weights;  // l, sums to one
};

PooledAttention attention_pool(const Tensor& states, const Tensor& scorer);
// Σ softmax(H w)_i · H_i.
Tensor self_attentive_pool(const Tensor& states, const Tensor& scorer);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::size_t step = 0;
  std::unordered_map<std::string, std::vector<double>> first_moment;
  std::unordered_map<std::string, std::vector<double>> second_moment;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One bias-corrected Adam update over every parameter, in registration order.
// Missing gradients count as zero. Any non-finite gradient aborts the step
// before anything is modified.
void adam_step(ModelParams& params, AdamState& state);

// Rescales all gradients so their global L2 norm is at most `max_norm`.
// Returns the norm before clipping.
double clip_grad_norm(ModelParams& params, double max_norm);

inline constexpr double kProbClamp = 1e-12;

// Binary cross-entropy against the smoothed target y(1-eps) + eps/2.
double smoothed_bce(double score, int label, double eps);
// Mean smoothed BCE over all elements of `scores` (probabilities).
Tensor smoothed_bce(const Tensor& scores, std::span<const double> labels, double eps);

}  // namespace kaqa
