#ifndef ECNN_TESTS_FD_CHECK_HPP
#define ECNN_TESTS_FD_CHECK_HPP

#include <functional>
#include <vector>

#include "ecnn/autodiff.hpp"

namespace testsup {

using ecnn::Tape;
using ecnn::Tensor;

/// A differentiable scalar function of several tensors, expressed as a tape
/// program. Used to compare analytic gradients against central finite
/// differences, independent of the backward path under test.
struct FdProblem {
  std::vector<Tensor<double>> inputs;
  std::function<ecnn::tp::Id<double>(Tape<double>&, const std::vector<ecnn::tp::Id<double>>&)> forward;
};

inline double fd_eval(const FdProblem& p) {
  Tape<double> tape;
  std::vector<ecnn::tp::Id<double>> ids;
  for (const auto& t : p.inputs) ids.push_back(tape.leaf(t, false));
  return tape.value(p.forward(tape, ids)).data[0];
}

struct FdReport {
  double max_rel_err = 0;
  std::size_t coords = 0;
};

/// max over all coordinates of |analytic - central_fd| / max(1, |a|, |fd|).
inline FdReport fd_check(FdProblem p, double h = 1e-4) {
  Tape<double> tape;
  std::vector<ecnn::tp::Id<double>> ids;
  for (const auto& t : p.inputs) ids.push_back(tape.leaf(t, true));
  auto root = p.forward(tape, ids);
  tape.backward(root);
  std::vector<std::vector<double>> analytic;
  for (auto id : ids) analytic.push_back(tape.grad(id));

  FdReport rep;
  for (std::size_t ti = 0; ti < p.inputs.size(); ++ti) {
    for (std::size_t j = 0; j < p.inputs[ti].data.size(); ++j) {
      double keep = p.inputs[ti].data[j];
      p.inputs[ti].data[j] = keep + h;
      double up = fd_eval(p);
      p.inputs[ti].data[j] = keep - h;
      double dn = fd_eval(p);
      p.inputs[ti].data[j] = keep;
      double fd = (up - dn) / (2.0 * h);
      double a = analytic[ti][j];
      double denom = std::max({1.0, std::abs(a), std::abs(fd)});
      rep.max_rel_err = std::max(rep.max_rel_err, std::abs(a - fd) / denom);
      ++rep.coords;
    }
  }
  return rep;
}

}  // namespace testsup

#endif
