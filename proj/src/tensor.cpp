#include "kaqa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "kaqa/kernels.hpp"

namespace kaqa {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace detail {

std::span<double> Node::ensure_grad() {
  if (grad.empty()) grad.assign(value->size(), 0.0);
  return grad;
}

}  // namespace detail

namespace {

using detail::Node;

thread_local bool t_grad_enabled = true;
thread_local std::string t_fault_op;
thread_local double t_fault_factor = 1.0;

[[noreturn]] void shape_fail(const char* op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

std::shared_ptr<Node> make_leaf(Shape shape, std::vector<double> values, bool requires_grad,
                                const char* op = "leaf") {
  if (shape_numel(shape) != values.size()) {
    shape_fail("tensor", "shape " + shape_str(shape) + " needs " +
                             std::to_string(shape_numel(shape)) + " values, got " +
                             std::to_string(values.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::make_shared<std::vector<double>>(std::move(values));
  node->requires_grad = requires_grad;
  node->op = op;
  return node;
}

// Builds an op output. The backward closure is only kept when recording is
// on and some input participates in differentiation.
Tensor make_op(Shape shape, std::shared_ptr<std::vector<double>> values, const char* op,
               std::initializer_list<const Tensor*> inputs, detail::BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->op = op;
  bool any = false;
  for (const Tensor* t : inputs) any = any || t->requires_grad();
  if (any && t_grad_enabled) {
    node->requires_grad = true;
    node->backward = std::move(fn);
    for (const Tensor* t : inputs) {
      node->inputs.push_back(t->shared_node());
    }
  }
  return Tensor(std::move(node));
}

Tensor make_op(Shape shape, std::vector<double> values, const char* op,
               std::initializer_list<const Tensor*> inputs, detail::BackwardFn fn) {
  return make_op(std::move(shape), std::make_shared<std::vector<double>>(std::move(values)), op,
                 inputs, std::move(fn));
}

// Variadic-input flavour for concat.
Tensor make_op_n(Shape shape, std::vector<double> values, const char* op,
                 const std::vector<Tensor>& inputs, detail::BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::make_shared<std::vector<double>>(std::move(values));
  node->op = op;
  bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (any && t_grad_enabled) {
    node->requires_grad = true;
    node->backward = std::move(fn);
    for (const Tensor& t : inputs) node->inputs.push_back(t.shared_node());
  }
  return Tensor(std::move(node));
}

inline const std::vector<double>& val(const Tensor& t) { return *t.node()->value; }

void require_defined(const char* op, const Tensor& t) {
  if (!t.defined()) shape_fail(op, "undefined tensor");
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  require_defined(op, a);
  require_defined(op, b);
  if (a.shape() != b.shape()) {
    shape_fail(op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  require_defined(op, t);
  if (t.rank() != rank) {
    shape_fail(op, "expected rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

// outer × axis × inner decomposition of a shape around `axis`.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const char* op, const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) shape_fail(op, "axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <class F, class G>
Tensor unary(const char* op, const Tensor& x, F forward, G derivative) {
  require_defined(op, x);
  const auto& xv = val(x);
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = forward(xv[i]);
  return make_op(x.shape(), std::move(out), op, {&x}, [derivative](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto g = in.ensure_grad();
    const auto& xv = *in.value;
    const auto& yv = *self.value;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * derivative(xv[i], yv[i]);
  });
}

}  // namespace

// ---- Tensor -----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_leaf({}, {value}, requires_grad));
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  const auto n = values.size();
  return Tensor(make_leaf({n}, std::move(values), requires_grad));
}

const Shape& Tensor::shape() const {
  if (!node_) throw ShapeError("shape: undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ShapeError("dim: axis out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::size() const { return node_ ? node_->value->size() : 0; }

std::span<const double> Tensor::data() const {
  if (!node_) return {};
  return *node_->value;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return (*node_->value)[0];
}

double Tensor::at(std::size_t i) const { return node_->value->at(i); }

double Tensor::at(std::size_t i, std::size_t j) const {
  if (rank() != 2) throw ShapeError("at(i,j): tensor of shape " + shape_str(shape()) + " is not a matrix");
  return node_->value->at(i * node_->shape[1] + j);
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::is_leaf() const { return node_ && std::strcmp(node_->op, "leaf") == 0; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!node_) return {};
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() { return node_->ensure_grad(); }

void Tensor::zero_grad() {
  if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

std::span<double> Tensor::mutable_data() {
  if (!is_leaf()) throw std::logic_error(std::string("mutable_data: '") + op_name() + "' output is immutable");
  return *node_->value;
}

Tensor Tensor::detach() const {
  auto node = std::make_shared<Node>();
  node->shape = shape();
  node->value = node_->value;
  node->op = "detach";
  return Tensor(std::move(node));
}

const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

// ---- ops ----------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    shape_fail("matmul", "inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  kernels::parallel::gemm_nn({m, k, n}, val(a), val(b), out, false);
  return make_op({m, n}, std::move(out), "matmul", {&a, &b}, [m, k, n](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    if (na.requires_grad) {
      kernels::parallel::gemm_nt({m, n, k}, self.grad, *nb.value, na.ensure_grad(), true);
    }
    if (nb.requires_grad) {
      kernels::parallel::gemm_tn({k, m, n}, *na.value, self.grad, nb.ensure_grad(), true);
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  const auto& av = val(a);
  const auto& bv = val(b);
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_op(a.shape(), std::move(out), "add", {&a, &b}, [](Node& self) {
    for (int s = 0; s < 2; ++s) {
      Node& in = *self.inputs[s];
      if (!in.requires_grad) continue;
      auto g = in.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  const auto& av = val(a);
  const auto& bv = val(b);
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_op(a.shape(), std::move(out), "sub", {&a, &b}, [](Node& self) {
    if (self.inputs[0]->requires_grad) {
      auto g = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.inputs[1]->requires_grad) {
      auto g = self.inputs[1]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  const auto& av = val(a);
  const auto& bv = val(b);
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_op(a.shape(), std::move(out), "mul", {&a, &b}, [](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    if (na.requires_grad) {
      auto g = na.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*nb.value)[i];
    }
    if (nb.requires_grad) {
      auto g = nb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*na.value)[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      "scale", x, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return unary(
      "add_scalar", x, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Tensor add_row(const Tensor& x, const Tensor& bias) {
  require_rank("add_row", x, 2);
  require_rank("add_row", bias, 1);
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (bias.dim(0) != cols) {
    shape_fail("add_row", "bias " + shape_str(bias.shape()) + " does not match rows of " + shape_str(x.shape()));
  }
  const auto& xv = val(x);
  const auto& bv = val(bias);
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xv[r * cols + c] + bv[c];
  return make_op(x.shape(), std::move(out), "add_row", {&x, &bias}, [rows, cols](Node& self) {
    if (self.inputs[0]->requires_grad) {
      auto g = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.inputs[1]->requires_grad) {
      auto g = self.inputs[1]->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) g[c] += self.grad[r * cols + c];
    }
  });
}

Tensor scale_rows(const Tensor& x, const Tensor& factors) {
  require_rank("scale_rows", x, 2);
  require_defined("scale_rows", factors);
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (factors.size() != rows) {
    shape_fail("scale_rows", "factors " + shape_str(factors.shape()) + " do not match rows of " +
                                 shape_str(x.shape()));
  }
  const auto& xv = val(x);
  const auto& fv = val(factors);
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xv[r * cols + c] * fv[r];
  return make_op(x.shape(), std::move(out), "scale_rows", {&x, &factors}, [rows, cols](Node& self) {
    Node& nx = *self.inputs[0];
    Node& nf = *self.inputs[1];
    if (nx.requires_grad) {
      auto g = nx.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += self.grad[r * cols + c] * (*nf.value)[r];
    }
    if (nf.requires_grad) {
      auto g = nf.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) acc += self.grad[r * cols + c] * (*nx.value)[r * cols + c];
        g[r] += acc;
      }
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) shape_fail("concat", "no inputs");
  for (const auto& p : parts) require_defined("concat", p);
  const Shape& first = parts.front().shape();
  Shape out_shape = first;
  if (axis >= first.size()) shape_fail("concat", "axis " + std::to_string(axis) + " out of range for " + shape_str(first));
  out_shape[axis] = 0;
  std::vector<std::size_t> lens;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) shape_fail("concat", "incompatible shapes " + shape_str(first) + " and " + shape_str(s));
    lens.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  const AxisSplit sp = split_axis("concat", out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::size_t col = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& pv = val(parts[p]);
    const std::size_t block = lens[p] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(pv.data() + o * block, block, out.data() + (o * sp.len + col) * sp.inner);
    }
    col += lens[p];
  }
  return make_op_n(std::move(out_shape), std::move(out), "concat", parts, [sp, lens](Node& self) {
    std::size_t col = 0;
    for (std::size_t p = 0; p < lens.size(); ++p) {
      Node& in = *self.inputs[p];
      const std::size_t block = lens[p] * sp.inner;
      if (in.requires_grad) {
        auto g = in.ensure_grad();
        for (std::size_t o = 0; o < sp.outer; ++o) {
          const double* src = self.grad.data() + (o * sp.len + col) * sp.inner;
          double* dst = g.data() + o * block;
          for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
        }
      }
      col += lens[p];
    }
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  require_defined("slice", x);
  const AxisSplit sp = split_axis("slice", x.shape(), axis);
  if (begin > end || end > sp.len) {
    shape_fail("slice", "range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for axis " +
                            std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const std::size_t block = (end - begin) * sp.inner;
  const auto& xv = val(x);
  std::vector<double> out(sp.outer * block);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(xv.data() + (o * sp.len + begin) * sp.inner, block, out.data() + o * block);
  }
  return make_op(std::move(out_shape), std::move(out), "slice", {&x}, [sp, begin, block](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto g = in.ensure_grad();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      double* dst = g.data() + (o * sp.len + begin) * sp.inner;
      const double* src = self.grad.data() + o * block;
      for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined("reshape", x);
  if (shape_numel(shape) != x.size()) {
    shape_fail("reshape", "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  return make_op(std::move(shape), x.node()->value, "reshape", {&x}, [](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor transpose(const Tensor& x) {
  require_rank("transpose", x, 2);
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  const auto& xv = val(x);
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = xv[r * cols + c];
  return make_op({cols, rows}, std::move(out), "transpose", {&x}, [rows, cols](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto g = in.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += self.grad[c * rows + r];
  });
}

namespace {

Tensor reduce_axis(const char* op, const Tensor& x, std::size_t axis, double factor) {
  require_defined(op, x);
  const AxisSplit sp = split_axis(op, x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  const auto& xv = val(x);
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.len; ++l)
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += xv[(o * sp.len + l) * sp.inner + i];
  if (factor != 1.0)
    for (auto& v : out) v *= factor;
  return make_op(std::move(out_shape), std::move(out), op, {&x}, [sp, factor](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto g = in.ensure_grad();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t l = 0; l < sp.len; ++l)
        for (std::size_t i = 0; i < sp.inner; ++i)
          g[(o * sp.len + l) * sp.inner + i] += factor * self.grad[o * sp.inner + i];
  });
}

}  // namespace

Tensor sum(const Tensor& x, std::size_t axis) { return reduce_axis("sum", x, axis, 1.0); }

Tensor mean(const Tensor& x, std::size_t axis) {
  require_defined("mean", x);
  const std::size_t len = split_axis("mean", x.shape(), axis).len;
  if (len == 0) shape_fail("mean", "empty axis in " + shape_str(x.shape()));
  return reduce_axis("mean", x, axis, 1.0 / static_cast<double>(len));
}

Tensor sum_all(const Tensor& x) {
  require_defined("sum_all", x);
  const auto& xv = val(x);
  double total = 0.0;
  for (double v : xv) total += v;
  return make_op({}, std::vector<double>{total}, "sum_all", {&x}, [](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto g = in.ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      "clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  require_defined("softmax", x);
  const AxisSplit sp = split_axis("softmax", x.shape(), axis);
  if (sp.len == 0) shape_fail("softmax", "empty axis in " + shape_str(x.shape()));
  const auto& xv = val(x);
  std::vector<double> out(xv.size());
  if (sp.inner == 1) {
    kernels::parallel::softmax_rows(sp.outer, sp.len, xv, out);
  } else {
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        auto at = [&](std::size_t l) { return (o * sp.len + l) * sp.inner + i; };
        double mx = xv[at(0)];
        for (std::size_t l = 1; l < sp.len; ++l) mx = std::max(mx, xv[at(l)]);
        double total = 0.0;
        for (std::size_t l = 0; l < sp.len; ++l) total += (out[at(l)] = std::exp(xv[at(l)] - mx));
        for (std::size_t l = 0; l < sp.len; ++l) out[at(l)] /= total;
      }
    }
  }
  return make_op(x.shape(), std::move(out), "softmax", {&x}, [sp](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto g = in.ensure_grad();
    const auto& y = *self.value;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        auto at = [&](std::size_t l) { return (o * sp.len + l) * sp.inner + i; };
        double inner = 0.0;
        for (std::size_t l = 0; l < sp.len; ++l) inner += self.grad[at(l)] * y[at(l)];
        for (std::size_t l = 0; l < sp.len; ++l) g[at(l)] += y[at(l)] * (self.grad[at(l)] - inner);
      }
    }
  });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  require_rank("dot", a, 1);
  require_same("dot", a, b);
  const auto& av = val(a);
  const auto& bv = val(b);
  double total = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) total += av[i] * bv[i];
  return make_op({}, std::vector<double>{total}, "dot", {&a, &b}, [](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    const double g0 = self.grad[0];
    if (na.requires_grad) {
      auto g = na.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += g0 * (*nb.value)[i];
    }
    if (nb.requires_grad) {
      auto g = nb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += g0 * (*na.value)[i];
    }
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows) {
  require_defined("gather_rows", table);
  if (table.rank() != 1 && table.rank() != 2) {
    shape_fail("gather_rows", "table must be rank 1 or 2, got " + shape_str(table.shape()));
  }
  const std::size_t n_rows = table.dim(0);
  const std::size_t width = table.rank() == 2 ? table.dim(1) : 1;
  for (std::size_t r : rows) {
    if (r >= n_rows) {
      shape_fail("gather_rows", "row " + std::to_string(r) + " out of range for " + shape_str(table.shape()));
    }
  }
  const auto& tv = val(table);
  std::vector<double> out(rows.size() * width);
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(tv.data() + rows[i] * width, width, out.data() + i * width);
  Shape out_shape = table.rank() == 2 ? Shape{rows.size(), width} : Shape{rows.size()};
  std::vector<std::size_t> index(rows.begin(), rows.end());
  return make_op(std::move(out_shape), std::move(out), "gather_rows", {&table},
                 [index = std::move(index), width](Node& self) {
                   Node& in = *self.inputs[0];
                   if (!in.requires_grad) return;
                   auto g = in.ensure_grad();
                   for (std::size_t i = 0; i < index.size(); ++i) {
                     double* dst = g.data() + index[i] * width;
                     const double* src = self.grad.data() + i * width;
                     for (std::size_t c = 0; c < width; ++c) dst[c] += src[c];
                   }
                 });
}

Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng, bool training) {
  require_defined("dropout", x);
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (!training || rate == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  const double kept_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(x.size());
  for (auto& m : *mask) m = keep(rng) ? kept_scale : 0.0;
  const auto& xv = val(x);
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * (*mask)[i];
  return make_op(x.shape(), std::move(out), "dropout", {&x}, [mask](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*mask)[i];
  });
}

namespace {

void check_offsets(const char* op, std::span<const std::size_t> offsets, std::size_t total) {
  if (offsets.empty() || offsets.front() != 0 || offsets.back() != total) {
    shape_fail(op, "offsets must start at 0 and end at " + std::to_string(total));
  }
  for (std::size_t s = 1; s < offsets.size(); ++s) {
    if (offsets[s] < offsets[s - 1]) shape_fail(op, "offsets must be non-decreasing");
  }
}

}  // namespace

Tensor segment_softmax(const Tensor& x, std::span<const std::size_t> offsets) {
  require_rank("segment_softmax", x, 1);
  check_offsets("segment_softmax", offsets, x.size());
  const auto& xv = val(x);
  std::vector<double> out(xv.size());
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    const std::size_t b = offsets[s], e = offsets[s + 1];
    if (b == e) continue;
    kernels::serial::softmax_rows(1, e - b, std::span(xv).subspan(b, e - b), std::span(out).subspan(b, e - b));
  }
  std::vector<std::size_t> off(offsets.begin(), offsets.end());
  return make_op(x.shape(), std::move(out), "segment_softmax", {&x}, [off = std::move(off)](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto g = in.ensure_grad();
    const auto& y = *self.value;
    for (std::size_t s = 0; s + 1 < off.size(); ++s) {
      double inner = 0.0;
      for (std::size_t i = off[s]; i < off[s + 1]; ++i) inner += self.grad[i] * y[i];
      for (std::size_t i = off[s]; i < off[s + 1]; ++i) g[i] += y[i] * (self.grad[i] - inner);
    }
  });
}

Tensor segment_sum(const Tensor& x, std::span<const std::size_t> offsets) {
  require_defined("segment_sum", x);
  if (x.rank() != 1 && x.rank() != 2) shape_fail("segment_sum", "expected rank 1 or 2, got " + shape_str(x.shape()));
  check_offsets("segment_sum", offsets, x.dim(0));
  const std::size_t width = x.rank() == 2 ? x.dim(1) : 1;
  const std::size_t segments = offsets.size() - 1;
  const auto& xv = val(x);
  std::vector<double> out(segments * width, 0.0);
  for (std::size_t s = 0; s < segments; ++s)
    for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r)
      for (std::size_t c = 0; c < width; ++c) out[s * width + c] += xv[r * width + c];
  Shape out_shape = x.rank() == 2 ? Shape{segments, width} : Shape{segments};
  std::vector<std::size_t> off(offsets.begin(), offsets.end());
  return make_op(std::move(out_shape), std::move(out), "segment_sum", {&x},
                 [off = std::move(off), width](Node& self) {
                   Node& in = *self.inputs[0];
                   if (!in.requires_grad) return;
                   auto g = in.ensure_grad();
                   for (std::size_t s = 0; s + 1 < off.size(); ++s)
                     for (std::size_t r = off[s]; r < off[s + 1]; ++r)
                       for (std::size_t c = 0; c < width; ++c) g[r * width + c] += self.grad[s * width + c];
                 });
}

// ---- tape -----------------------------------------------------------------------

Tape Tape::record_from(const Tensor& root) {
  Tape tape;
  if (!root.requires_grad()) return tape;
  std::unordered_set<const Node*> seen;
  // iterative post-order DFS: (node, next input index)
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && child->backward && seen.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    if (node->backward) tape.nodes_.push_back(node);
    stack.pop_back();
  }
  return tape;
}

void backward(const Tensor& loss) {
  require_defined("backward", loss);
  if (loss.size() != 1) throw ShapeError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) throw std::logic_error("backward: loss does not depend on any parameter");
  Node* root = loss.node();
  root->ensure_grad()[0] += 1.0;
  const Tape tape = Tape::record_from(loss);
  const auto nodes = tape.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    Node* node = *it;
    if (node->grad.empty()) continue;
    if (!t_fault_op.empty() && t_fault_op == node->op) {
      for (auto& g : node->grad) g *= t_fault_factor;
    }
    node->backward(*node);
  }
}

namespace testing {

void set_backward_fault(std::string op, double factor) {
  t_fault_op = std::move(op);
  t_fault_factor = factor;
}

void clear_backward_fault() {
  t_fault_op.clear();
  t_fault_factor = 1.0;
}

}  // namespace testing
}  // namespace kaqa
