#pragma once

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "fgs/autodiff.hpp"

namespace fgs::testing {

inline Tensor random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

// Compares reverse-mode gradients of a scalar function against central
// differences at every element of every input (or `max_checks` sampled ones).
// Passes when |analytic - numeric| <= rel * max(|analytic|, |numeric|) + abs.
inline void expect_gradients_match(const std::function<ad::Var(std::vector<ad::Var>&)>& f,
                                   std::vector<Tensor> inputs, double rel = 1e-4,
                                   double abs_tol = 1e-7, double h = 1e-5,
                                   std::size_t max_checks = 64) {
  std::vector<ad::Var> vars;
  for (auto& t : inputs) vars.emplace_back(t, true);
  ad::Var out = f(vars);
  ASSERT_EQ(out.value().size(), 1u);
  ad::backward(out);

  std::mt19937_64 rng(7);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic = vars[k].grad();
    const std::size_t n = inputs[k].size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (n > max_checks) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_checks);
    }
    for (std::size_t i : idx) {
      auto eval = [&](double delta) {
        std::vector<ad::Var> vs;
        for (std::size_t m = 0; m < inputs.size(); ++m) {
          Tensor t = inputs[m];
          if (m == k) t[i] += delta;
          vs.emplace_back(t, false);
        }
        return f(vs).value()[0];
      };
      const double numeric = (eval(h) - eval(-h)) / (2 * h);
      const double a = analytic.size() ? analytic[i] : 0.0;
      const double tol = rel * std::max(std::abs(a), std::abs(numeric)) + abs_tol;
      EXPECT_NEAR(a, numeric, tol) << "input " << k << " element " << i;
    }
  }
}

}  // namespace fgs::testing
