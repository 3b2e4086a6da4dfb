#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "semdepth/error.hpp"
#include "semdepth/tensor.hpp"

// Central finite-difference verification of backward passes. Run at 64-bit:
// float headroom is nowhere near enough for step sizes around 1e-5.

namespace semdepth {

struct GradCheckReport {
  bool passed = false;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::int64_t checked = 0;    // number of (leaf, element) pairs compared
  int worst_leaf = -1;
  std::int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;

  std::string summary() const {
    std::ostringstream os;
    os << (passed ? "PASS" : "FAIL") << " max_rel_err=" << max_rel_error
       << " tol=" << tolerance << " checked=" << checked;
    if (!passed) {
      os << " worst: leaf " << worst_leaf << " elem " << worst_index
         << " analytic=" << worst_analytic << " numeric=" << worst_numeric;
    }
    return os.str();
  }
};

template <class T>
Tensor<T> clone_tensor(const Tensor<T>& t) {
  return Tensor<T>(t.shape(),
                   std::vector<T>(t.values().begin(), t.values().end()));
}

// f: (Graph<T>&, const std::vector<Tensor<T>>& bound_leaves) -> scalar Tensor.
// Every input is treated as trainable. Throws NumericalError if two forward
// passes over identical inputs disagree (f must be deterministic).
template <class T, class F>
GradCheckReport grad_check_multi(F&& f, const std::vector<Tensor<T>>& inputs,
                                 T step, T tolerance) {
  auto forward_value = [&](const std::vector<Tensor<T>>& plain) -> T {
    Graph<T> g;
    std::vector<Tensor<T>> bound;
    bound.reserve(plain.size());
    for (const auto& p : plain) bound.push_back(g.leaf(clone_tensor(p), true));
    Tensor<T> y = f(g, bound);
    if (y.numel() != 1) {
      throw ShapeError("grad_check: f must return a scalar, got " +
                       y.shape().str());
    }
    return y.item();
  };

  // Analytic pass.
  Graph<T> g;
  std::vector<Tensor<T>> bound;
  bound.reserve(inputs.size());
  for (const auto& p : inputs) bound.push_back(g.leaf(clone_tensor(p), true));
  Tensor<T> y = f(g, bound);
  if (y.numel() != 1) {
    throw ShapeError("grad_check: f must return a scalar, got " +
                     y.shape().str());
  }
  const T y0 = y.item();
  if (forward_value(inputs) != y0) {
    throw NumericalError("grad_check: two forward passes disagree; f is not "
                         "deterministic");
  }
  g.backward(y);

  std::vector<std::vector<T>> analytic(inputs.size());
  for (std::size_t li = 0; li < inputs.size(); ++li) {
    auto gr = bound[li].grad();
    if (gr.empty()) {
      analytic[li].assign(static_cast<std::size_t>(inputs[li].numel()), T{});
    } else {
      analytic[li].assign(gr.begin(), gr.end());
    }
  }

  // Numeric pass, one central difference per element.
  GradCheckReport rep;
  rep.tolerance = static_cast<double>(tolerance);
  std::vector<Tensor<T>> work;
  work.reserve(inputs.size());
  for (const auto& p : inputs) work.push_back(clone_tensor(p));
  for (std::size_t li = 0; li < inputs.size(); ++li) {
    auto elems = work[li].values();
    for (std::int64_t e = 0; e < inputs[li].numel(); ++e) {
      const T saved = elems[static_cast<std::size_t>(e)];
      elems[static_cast<std::size_t>(e)] = saved + step;
      const T yp = forward_value(work);
      elems[static_cast<std::size_t>(e)] = saved - step;
      const T ym = forward_value(work);
      elems[static_cast<std::size_t>(e)] = saved;
      const double numeric =
          (static_cast<double>(yp) - static_cast<double>(ym)) /
          (2.0 * static_cast<double>(step));
      const double a =
          static_cast<double>(analytic[li][static_cast<std::size_t>(e)]);
      const double denom =
          std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++rep.checked;
      if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst_leaf = static_cast<int>(li);
        rep.worst_index = e;
        rep.worst_analytic = a;
        rep.worst_numeric = numeric;
      }
    }
  }
  rep.passed = rep.max_rel_error <= rep.tolerance;
  return rep;
}

template <class T, class F>
GradCheckReport grad_check(F&& f, const Tensor<T>& x, T step, T tolerance) {
  return grad_check_multi<T>(
      [&f](Graph<T>& g, const std::vector<Tensor<T>>& leaves) {
        return f(g, leaves[0]);
      },
      std::vector<Tensor<T>>{x}, step, tolerance);
}

}  // namespace semdepth
