#ifndef TSDIT_GRAD_CHECK_HPP_
#define TSDIT_GRAD_CHECK_HPP_

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "tsdit/param_store.hpp"
#include "tsdit/tensor.hpp"

namespace tsdit {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  int worst_index = -1;
};

// Compares reverse-mode gradients of a scalar function against central finite
// differences over every coordinate of every parameter in the store (or the
// subset selected by `filter`). The function must be a pure, deterministic
// map from the current parameter values to a scalar tensor.
inline GradCheckReport grad_check(
    const std::function<Tensor()>& f, ParameterStore& store, double eps = 1e-5,
    const std::function<bool(const std::string&)>& filter = nullptr) {
  store.zero_grad();
  std::map<std::string, std::vector<double>> analytic;
  {
    Tape tape;
    Tensor loss = f();
    if (!std::isfinite(loss.item())) throw NumericError("grad_check: loss is non-finite");
    tape.backward(loss);
    for (const auto& [name, p] : store.all()) {
      analytic[name] = p.has_grad() ? p.grad() : std::vector<double>(p.numel(), 0.0);
    }
  }
  GradCheckReport report;
  Tape::NoGradGuard no_grad;
  for (auto& [name, p] : store.all()) {
    if (filter && !filter(name)) continue;
    for (int i = 0; i < p.numel(); ++i) {
      const double saved = p.data()[i];
      p.data()[i] = saved + eps;
      const double f_plus = f().item();
      p.data()[i] = saved - eps;
      const double f_minus = f().item();
      p.data()[i] = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
        throw NumericError("grad_check: perturbed loss is non-finite at " + name);
      }
      const double numeric = (f_plus - f_minus) / (2.0 * eps);
      const double a = analytic[name][i];
      const double rel =
          std::fabs(a - numeric) / std::max({1.0, std::fabs(a), std::fabs(numeric)});
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = name;
        report.worst_index = i;
      }
    }
  }
  store.zero_grad();
  return report;
}

}  // namespace tsdit

#endif  // TSDIT_GRAD_CHECK_HPP_
