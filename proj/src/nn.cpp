#include "kaqa/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "kaqa/log.hpp"

namespace kaqa {

Tensor ForwardContext::drop(const Tensor& x) const {
  if (!training || dropout == 0.0) return x;
  if (rng == nullptr) throw std::logic_error("dropout requested without a random generator");
  return kaqa::dropout(x, dropout, *rng, true);
}

Tensor EmbeddingTable::lookup(std::span<const std::size_t> ids) const { return gather_rows(table, ids); }

EmbeddingTable make_embedding(ModelParams& params, const std::string& name, std::size_t vocab, std::size_t dim,
                              double bound, std::mt19937_64& rng, bool frozen) {
  EmbeddingTable emb;
  emb.frozen = frozen;
  if (frozen) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> values(vocab * dim);
    for (auto& v : values) v = dist(rng);
    emb.table = Tensor::from({vocab, dim}, std::move(values), false);
  } else {
    emb.table = params.add_uniform(name, {vocab, dim}, bound, rng);
  }
  return emb;
}

std::size_t load_glove(const std::filesystem::path& path, const Vocabulary& vocab, EmbeddingTable& table) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open embeddings file " + path.string());
  const std::size_t dim = table.dim();
  auto values = table.table.mutable_data();
  std::string line;
  std::size_t line_no = 0, loaded = 0;
  std::vector<double> row(dim);
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string token;
    if (!(ls >> token)) continue;
    auto idx = vocab.find(token);
    if (!idx) continue;
    for (std::size_t c = 0; c < dim; ++c) {
      if (!(ls >> row[c])) {
        throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected " +
                                 std::to_string(dim) + " values for '" + token + "'");
      }
    }
    std::copy(row.begin(), row.end(), values.begin() + static_cast<std::ptrdiff_t>(*idx * dim));
    ++loaded;
  }
  return loaded;
}

LstmCell make_lstm(ModelParams& params, const std::string& prefix, std::size_t input, std::size_t hidden,
                   std::mt19937_64& rng) {
  LstmCell cell;
  cell.input = input;
  cell.hidden = hidden;
  cell.w_ih = params.add_glorot(prefix + ".w_ih", {input, 4 * hidden}, rng);
  cell.w_hh = params.add_glorot(prefix + ".w_hh", {hidden, 4 * hidden}, rng);
  std::vector<double> bias(4 * hidden, 0.0);
  std::fill(bias.begin() + static_cast<std::ptrdiff_t>(hidden), bias.begin() + static_cast<std::ptrdiff_t>(2 * hidden),
            1.0);
  cell.bias = params.add(prefix + ".bias", Tensor::vector(std::move(bias), true));
  return cell;
}

Tensor lstm_run(const LstmCell& cell, const Tensor& inputs, std::vector<LstmStepTrace>* trace) {
  if (inputs.rank() != 2 || inputs.dim(1) != cell.input) {
    throw ShapeError("lstm: inputs " + shape_str(inputs.shape()) + " do not match cell input size " +
                     std::to_string(cell.input));
  }
  const std::size_t steps = inputs.dim(0);
  if (steps == 0) throw std::invalid_argument("lstm: empty sequence");
  const std::size_t h = cell.hidden;
  const Tensor projected = add_row(matmul(inputs, cell.w_ih), cell.bias);
  Tensor hidden, state;
  std::vector<Tensor> outputs;
  outputs.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    Tensor gates = slice(projected, 0, t, t + 1);
    if (t > 0) gates = add(gates, matmul(hidden, cell.w_hh));
    const Tensor in_gate = sigmoid(slice(gates, 1, 0, h));
    const Tensor forget_gate = sigmoid(slice(gates, 1, h, 2 * h));
    const Tensor candidate = tanh(slice(gates, 1, 2 * h, 3 * h));
    const Tensor out_gate = sigmoid(slice(gates, 1, 3 * h, 4 * h));
    state = t > 0 ? add(mul(forget_gate, state), mul(in_gate, candidate)) : mul(in_gate, candidate);
    hidden = mul(out_gate, tanh(state));
    outputs.push_back(hidden);
    if (trace != nullptr) {
      auto vec = [](const Tensor& x) { return std::vector<double>(x.data().begin(), x.data().end()); };
      trace->push_back({vec(in_gate), vec(forget_gate), vec(candidate), vec(out_gate)});
    }
  }
  return steps == 1 ? outputs.front() : concat(outputs, 0);
}

Tensor lstm_encode(std::span<const std::size_t> tokens, const EmbeddingTable& table, const LstmCell& cell,
                   std::size_t max_len, const ForwardContext& ctx) {
  if (tokens.empty()) throw std::invalid_argument("lstm_encode: empty sequence");
  if (max_len > 0 && tokens.size() > max_len) {
    logging::warn("lstm_encode: truncating sequence of length " + std::to_string(tokens.size()) + " to " +
              std::to_string(max_len));
    tokens = tokens.first(max_len);
  }
  const Tensor embedded = ctx.drop(table.lookup(tokens));
  return ctx.drop(lstm_run(cell, embedded));
}

BiLstm make_bilstm(ModelParams& params, const std::string& prefix, std::size_t input, std::size_t output_dim,
                   std::mt19937_64& rng) {
  if (output_dim % 2 != 0) throw std::invalid_argument("bilstm: output dimension must be even");
  BiLstm lstm;
  lstm.forward = make_lstm(params, prefix + ".fwd", input, output_dim / 2, rng);
  lstm.backward = make_lstm(params, prefix + ".bwd", input, output_dim / 2, rng);
  return lstm;
}

Tensor bilstm_encode(const BiLstm& lstm, const Tensor& inputs) {
  if (inputs.rank() != 2 || inputs.dim(0) == 0) {
    throw std::invalid_argument("bilstm_encode: expected a nonempty T×d input, got " + shape_str(inputs.shape()));
  }
  const std::size_t steps = inputs.dim(0);
  std::vector<std::size_t> reversed(steps);
  for (std::size_t t = 0; t < steps; ++t) reversed[t] = steps - 1 - t;
  const Tensor fwd = lstm_run(lstm.forward, inputs);
  const Tensor bwd = gather_rows(lstm_run(lstm.backward, gather_rows(inputs, reversed)), reversed);
  return concat({fwd, bwd}, 1);
}

PooledAttention attention_pool(const Tensor& states, const Tensor& scorer) {
  if (states.rank() != 2 || states.dim(0) == 0) {
    throw ShapeError("self_attentive_pool: expected nonempty l×d states, got " + shape_str(states.shape()));
  }
  const std::size_t l = states.dim(0), d = states.dim(1);
  if (scorer.rank() != 1 || scorer.dim(0) != d) {
    throw ShapeError("self_attentive_pool: scorer " + shape_str(scorer.shape()) + " vs states " +
                     shape_str(states.shape()));
  }
  const Tensor logits = reshape(matmul(states, reshape(scorer, {d, 1})), {l});
  PooledAttention out;
  out.weights = softmax(logits, 0);
  out.pooled = reshape(matmul(reshape(out.weights, {1, l}), states), {d});
  return out;
}

Tensor self_attentive_pool(const Tensor& states, const Tensor& scorer) { return attention_pool(states, scorer).pooled; }

void adam_step(ModelParams& params, AdamState& state) {
  for (const auto& [name, t] : params.entries()) {
    for (double g : t.grad()) {
      if (!std::isfinite(g)) throw NonFiniteGradient("adam_step: non-finite gradient in parameter '" + name + "'");
    }
  }
  ++state.step;
  const auto& cfg = state.config;
  const double correction1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (auto& [name, t] : params.entries()) {
    auto& m = state.first_moment[name];
    auto& v = state.second_moment[name];
    if (m.empty()) {
      m.assign(t.size(), 0.0);
      v.assign(t.size(), 0.0);
    }
    auto values = t.mutable_data();
    const auto grad = t.grad();
    const bool has = !grad.empty();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = has ? grad[i] : 0.0;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m[i] / correction1;
      const double vhat = v[i] / correction2;
      values[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

double clip_grad_norm(ModelParams& params, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_grad_norm: max_norm must be positive");
  double sq = 0.0;
  for (const auto& [name, t] : params.entries())
    for (double g : t.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& [name, t] : params.entries()) {
      if (!t.has_grad()) continue;
      for (auto& g : t.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

double smoothed_bce(double score, int label, double eps) {
  const double target = label * (1.0 - eps) + eps / 2.0;
  const double s = std::clamp(score, kProbClamp, 1.0 - kProbClamp);
  return -(target * std::log(s) + (1.0 - target) * std::log(1.0 - s));
}

Tensor smoothed_bce(const Tensor& scores, std::span<const double> labels, double eps) {
  if (scores.size() != labels.size()) {
    throw ShapeError("smoothed_bce: " + std::to_string(scores.size()) + " scores vs " +
                     std::to_string(labels.size()) + " labels");
  }
  if (eps < 0.0 || eps >= 1.0) throw std::invalid_argument("smoothed_bce: eps must be in [0,1)");
  const std::size_t n = scores.size();
  std::vector<double> target(n), other(n);
  for (std::size_t i = 0; i < n; ++i) {
    target[i] = labels[i] * (1.0 - eps) + eps / 2.0;
    other[i] = 1.0 - target[i];
  }
  const Tensor flat = reshape(scores, {n});
  const Tensor s = clamp(flat, kProbClamp, 1.0 - kProbClamp);
  const Tensor pos = mul(Tensor::vector(std::move(target)), log(s));
  const Tensor neg = mul(Tensor::vector(std::move(other)), log(add_scalar(scale(s, -1.0), 1.0)));
  return scale(sum_all(add(pos, neg)), -1.0 / static_cast<double>(n));
}

}  // namespace kaqa
