#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "kaqa/tensor.hpp"

namespace testutil {

inline kaqa::Tensor random_tensor(kaqa::Shape shape, std::mt19937_64& rng, double bound = 1.0,
                                  bool requires_grad = false) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(kaqa::shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return kaqa::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline std::vector<double> values(const kaqa::Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Central-difference gradient of f with respect to every entry of `x`,
// computed by editing the leaf's storage in place.
inline std::vector<double> numeric_grad(const std::function<double()>& f, kaqa::Tensor& x, double h = 1e-6) {
  auto d = x.mutable_data();
  std::vector<double> g(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double keep = d[i];
    d[i] = keep + h;
    const double up = f();
    d[i] = keep - h;
    const double down = f();
    d[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

// Contracts an op output with fixed random weights so any op can be
// checked through a scalar.
inline kaqa::Tensor weighted_sum(const kaqa::Tensor& y, const std::vector<double>& w) {
  return kaqa::sum_all(kaqa::mul(kaqa::reshape(y, {y.size()}), kaqa::Tensor::vector(w)));
}

}  // namespace testutil
