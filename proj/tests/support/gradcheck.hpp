#pragma once

// Central finite differences against the tape's analytic gradient, in double.
// A coordinate is skipped when either perturbed evaluation takes a different branch
// (relu sign, max argmax, clamp region) than the base point: the loss is not smooth
// across that interval and the two-sided quotient is meaningless there.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "transgrec/autodiff.hpp"

namespace gradcheck {

using transgrec::nk::Tape;
using transgrec::nk::Tensor;
using transgrec::nk::Var;

struct Stats {
  double max_rel = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  std::string worst;  // "param[index]: analytic vs numeric"
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps roundoff on near-zero gradients from
/// dominating; it is far below the gradient magnitudes of the instances we check.
inline double rel_error(double a, double n, double floor = 1e-3) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Builds the loss on a fresh tape from leaf variables holding `params`.
using Build = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;
/// Loss value at `params`; may differ from build() where build() detaches something.
using Eval = std::function<double(Tape<double>&, const std::vector<Var<double>>&)>;

inline Stats check(const std::vector<Tensor<double>>& params, const Build& build, Eval eval = {},
                   double step = 1e-4) {
  if (!eval) eval = [&](Tape<double>& t, const std::vector<Var<double>>& v) { return build(t, v).value()[0]; };

  Tape<double> tape;
  std::vector<Var<double>> leaves;
  for (const auto& p : params) leaves.push_back(tape.leaf(p));
  const Var<double> loss = build(tape, leaves);
  tape.backward(loss);
  std::vector<Tensor<double>> grads;
  for (auto l : leaves) grads.push_back(l.grad());

  auto run = [&](const std::vector<Tensor<double>>& ps, std::vector<std::uint32_t>& trace) {
    Tape<double> t;
    t.set_tracing(true);
    std::vector<Var<double>> vs;
    for (const auto& p : ps) vs.push_back(t.leaf(p));
    const double v = eval(t, vs);
    trace = t.branch_trace();
    return v;
  };

  std::vector<std::uint32_t> base_trace, trace;
  run(params, base_trace);

  Stats s;
  std::vector<Tensor<double>> work = params;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double x = params[p][i];
      work[p][i] = x + step;
      const double up = run(work, trace);
      const bool up_ok = trace == base_trace;
      work[p][i] = x - step;
      const double down = run(work, trace);
      const bool down_ok = trace == base_trace;
      work[p][i] = x;
      if (!up_ok || !down_ok) {
        ++s.skipped;
        continue;
      }
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = grads[p][i];
      const double e = rel_error(analytic, numeric);
      ++s.checked;
      if (e > s.max_rel) {
        s.max_rel = e;
        s.worst = "param " + std::to_string(p) + "[" + std::to_string(i) + "]: analytic " +
                  std::to_string(analytic) + " vs numeric " + std::to_string(numeric);
      }
    }
  }
  return s;
}

}  // namespace gradcheck
