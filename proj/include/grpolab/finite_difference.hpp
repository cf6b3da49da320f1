#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace grpolab {

/// Central differences (f(x + h e_k) - f(x - h e_k)) / 2h over `coords`
/// (all coordinates when empty). `f` takes the perturbed vector.
template <class F>
std::vector<double> central_differences(F&& f, std::vector<double> x, double h = 1e-5,
                                        std::span<const std::size_t> coords = {}) {
  std::vector<double> g(x.size(), 0.0);
  auto one = [&](std::size_t k) {
    const double x0 = x[k];
    x[k] = x0 + h;
    const double fp = f(x);
    x[k] = x0 - h;
    const double fm = f(x);
    x[k] = x0;
    g[k] = (fp - fm) / (2.0 * h);
  };
  if (coords.empty()) {
    for (std::size_t k = 0; k < x.size(); ++k) one(k);
  } else {
    for (std::size_t k : coords) one(k);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||, floor)
inline double relative_error(std::span<const double> a, std::span<const double> b,
                             double floor = 1e-8) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    diff += (a[k] - b[k]) * (a[k] - b[k]);
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

}  // namespace grpolab
