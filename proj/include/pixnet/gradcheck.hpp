#pragma once

// Central finite-difference gradient checking. The callable under test maps
// a vector of input tensors to a scalar tensor; non-scalar ops are wrapped
// by the caller with a fixed weighted sum.

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "pixnet/common.hpp"
#include "pixnet/tensor.hpp"

namespace pixnet {

template <typename S>
struct GradCheckReport {
  struct Entry {
    std::string name;
    S max_rel_err;
  };
  std::vector<Entry> per_input;
  S max_rel_err = S(0);
  S step, tol;

  bool pass() const { return max_rel_err < tol; }
};

template <typename S>
GradCheckReport<S> gradcheck(const std::function<Tensor<S>(std::vector<Tensor<S>>&)>& op,
                             std::vector<Tensor<S>> inputs,
                             std::vector<std::string> names = {}, S step = S(1e-5),
                             S tol = S(1e-4)) {
  GradCheckReport<S> report;
  report.step = step;
  report.tol = tol;

  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }

  Tensor<S> y = op(inputs);
  if (y.size() != 1) throw DimensionError("gradcheck: op under test must produce a scalar");
  y.backward();

  std::vector<std::vector<S>> analytic;
  analytic.reserve(inputs.size());
  for (auto& in : inputs) {
    if (in.has_grad()) {
      detail::check_all_finite(in.grad(), "analytic gradient");
      analytic.push_back(in.grad());
    } else {
      analytic.emplace_back(in.size(), S(0));
    }
    in.zero_grad();
  }

  const S eps_mach = std::numeric_limits<S>::epsilon();
  for (std::size_t ii = 0; ii < inputs.size(); ++ii) {
    auto& in = inputs[ii];
    S worst = S(0);
    for (std::size_t e = 0; e < in.size(); ++e) {
      const S a = analytic[ii][e];
      // measure the difference quotient; elements that disagree at the
      // requested step are re-measured at larger steps, where cancellation
      // noise on small derivatives dies down (a wrong gradient disagrees at
      // every step, a kink or noise artifact does not)
      S err = S(0);
      for (const S h : {step, S(8) * step, S(64) * step}) {
        const S saved = in.value()[e];
        in.value()[e] = saved + h;
        const S up = op(inputs).item();
        in.value()[e] = saved - h;
        const S down = op(inputs).item();
        in.value()[e] = saved;
        const S fd = (up - down) / (S(2) * h);
        // cancellation noise bound of the quotient; when both the analytic
        // value and the quotient sit under it the derivative is
        // indistinguishable from zero
        const S noise =
            S(8) * eps_mach * std::max({std::abs(up), std::abs(down), S(1)}) / (S(2) * h);
        S this_err = S(0);
        if (!(std::abs(a) <= noise && std::abs(fd) <= noise)) {
          const S denom = std::max({std::abs(a), std::abs(fd), S(1e-8)});
          this_err = std::abs(a - fd) / denom;
        }
        if (h == step || this_err < err) err = this_err;
        if (err < tol) break;
      }
      worst = std::max(worst, err);
    }
    const std::string name = ii < names.size() ? names[ii] : "input" + std::to_string(ii);
    report.per_input.push_back({name, worst});
    report.max_rel_err = std::max(report.max_rel_err, worst);
  }
  return report;
}

// fixed pseudo-random projection to a scalar so every output element
// participates in the check
template <typename S>
Tensor<S> scalarize(const Tensor<S>& t, std::uint64_t seed = 7) {
  Rng rng(seed);
  std::vector<S> w(t.size());
  for (auto& v : w) v = static_cast<S>(rng.uniform(-1.0, 1.0));
  return sum(mul(t, Tensor<S>::from(t.shape(), std::move(w))));
}

}  // namespace pixnet
