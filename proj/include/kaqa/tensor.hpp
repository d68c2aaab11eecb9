#pragma once

// Dense float64 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle to an immutable node. Ops whose inputs require a
// gradient record a backward closure on the output node; `backward(loss)`
// orders the reachable nodes topologically (the Tape) and replays them in
// reverse, accumulating into `grad`. Gradients accumulate additively; callers
// zero them between steps.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace kaqa {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> data() const;
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t i, std::size_t j) const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  // Allocates a zero gradient if none exists yet.
  std::span<double> mutable_grad();
  void zero_grad();

  // Writable values of a leaf tensor (parameters). Throws for op outputs.
  std::span<double> mutable_data();

  // Constant view sharing this tensor's storage; takes no part in backward.
  Tensor detach() const;

  const char* op_name() const;
  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& shared_node() const { return node_; }

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

using BackwardFn = std::function<void(Node&)>;

struct Node {
  Shape shape;
  std::shared_ptr<std::vector<double>> value;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;

  std::span<double> ensure_grad();
};

}  // namespace detail

// Disables tape recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// ---- forward ops ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);
// x (rows×cols) + bias (cols) added to every row.
Tensor add_row(const Tensor& x, const Tensor& bias);
// Row i of x (rows×cols) multiplied by factors[i]; factors has `rows` elements.
Tensor scale_rows(const Tensor& x, const Tensor& factors);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x);
Tensor sum(const Tensor& x, std::size_t axis);
Tensor mean(const Tensor& x, std::size_t axis);
Tensor sum_all(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor dot(const Tensor& a, const Tensor& b);
// Rows of `table` picked by index (embedding lookup). Rank-1 tables give rank-1 output.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows);
// Inverted dropout; identity when !training or rate == 0.
Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng, bool training);

// Graph helpers over contiguous segments [offsets[s], offsets[s+1]) of the
// leading axis. Empty segments are allowed.
Tensor segment_softmax(const Tensor& x, std::span<const std::size_t> offsets);
Tensor segment_sum(const Tensor& x, std::span<const std::size_t> offsets);

// ---- tape / backward --------------------------------------------------------

// Reachable op nodes in topological order (inputs before outputs).
class Tape {
 public:
  static Tape record_from(const Tensor& root);
  std::span<detail::Node* const> nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<detail::Node*> nodes_;
};

void backward(const Tensor& loss);

namespace testing {
// Multiplies the upstream gradient of every `op` node by `factor` during
// backward on this thread. Used to prove gradient checks catch bad rules.
void set_backward_fault(std::string op, double factor);
void clear_backward_fault();
}  // namespace testing

}  // namespace kaqa
