#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "kpgnn/tensor.hpp"

namespace testutil {

using kpgnn::tensor::Matrix;

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& gen, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Matrix m(r, c);
  for (double& v : m.data()) v = d(gen);
  return m;
}

inline double rel_err(double a, double b) {
  const double den = std::max(std::abs(a) + std::abs(b), 1e-8);
  return std::abs(a - b) / den;
}

// Worst relative error between `analytic` and central differences of `f`
// with respect to every entry of `x`.
inline double fd_check(Matrix x, const Matrix& analytic, const std::function<double(const Matrix&)>& f,
                       double h = 1e-5) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = f(x);
    x.data()[i] = keep - h;
    const double down = f(x);
    x.data()[i] = keep;
    const double fd = (up - down) / (2 * h);
    // entries whose derivative is ~0 on both sides compare absolutely
    const double err = std::abs(fd) + std::abs(analytic.data()[i]) < 1e-7
                           ? 0.0
                           : rel_err(fd, analytic.data()[i]);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace testutil
