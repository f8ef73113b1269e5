#ifndef TSDIT_SPLINE_HPP_
#define TSDIT_SPLINE_HPP_

#include <algorithm>
#include <vector>

#include "tsdit/common.hpp"

namespace tsdit {

// Natural cubic spline through (x_i, y_i) with zero second derivatives at the
// ends. Two knots degenerate to linear interpolation. Standard tridiagonal
// solve; interpolates the knots exactly.
class NaturalCubicSpline {
 public:
  NaturalCubicSpline(const std::vector<double>& x, const std::vector<double>& y) : x_(x) {
    const size_t n = x.size();
    if (n < 2 || y.size() != n) throw ConfigError("spline needs >= 2 matching knots");
    for (size_t i = 1; i < n; ++i) {
      if (!(x[i] > x[i - 1])) throw ConfigError("spline knots must be strictly increasing");
    }
    a_ = y;
    b_.assign(n, 0.0);
    c_.assign(n, 0.0);
    d_.assign(n, 0.0);
    const size_t m = n - 1;  // segment count
    std::vector<double> h(m);
    for (size_t i = 0; i < m; ++i) h[i] = x[i + 1] - x[i];
    std::vector<double> alpha(n, 0.0), l(n, 1.0), mu(n, 0.0), z(n, 0.0);
    for (size_t i = 1; i < m; ++i) {
      alpha[i] = 3.0 * (a_[i + 1] - a_[i]) / h[i] - 3.0 * (a_[i] - a_[i - 1]) / h[i - 1];
    }
    for (size_t i = 1; i < m; ++i) {
      l[i] = 2.0 * (x[i + 1] - x[i - 1]) - h[i - 1] * mu[i - 1];
      mu[i] = h[i] / l[i];
      z[i] = (alpha[i] - h[i - 1] * z[i - 1]) / l[i];
    }
    for (size_t j = m; j-- > 0;) {
      c_[j] = z[j] - mu[j] * c_[j + 1];
      b_[j] = (a_[j + 1] - a_[j]) / h[j] - h[j] * (c_[j + 1] + 2.0 * c_[j]) / 3.0;
      d_[j] = (c_[j + 1] - c_[j]) / (3.0 * h[j]);
    }
  }

  double operator()(double q) const {
    size_t j = static_cast<size_t>(
        std::upper_bound(x_.begin(), x_.end(), q) - x_.begin());
    j = j == 0 ? 0 : std::min(j - 1, x_.size() - 2);
    const double dx = q - x_[j];
    return a_[j] + dx * (b_[j] + dx * (c_[j] + dx * d_[j]));
  }

 private:
  std::vector<double> x_, a_, b_, c_, d_;
};

}  // namespace tsdit

#endif  // TSDIT_SPLINE_HPP_
