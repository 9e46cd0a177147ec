#pragma once

#include <functional>

#include "caformer/numerics/matrix.hpp"

namespace oracle {

/// Entry-by-entry central differences of a scalar function.
inline caformer::TokenMatrix numeric_gradient(
    const std::function<double(const caformer::TokenMatrix&)>& f, caformer::TokenMatrix x,
    double h = 1e-5) {
  caformer::TokenMatrix g(x.rows(), x.cols());
  for (caformer::Index r = 0; r < x.rows(); ++r)
    for (caformer::Index c = 0; c < x.cols(); ++c) {
      const double saved = x(r, c);
      x(r, c) = saved + h;
      const double plus = f(x);
      x(r, c) = saved - h;
      const double minus = f(x);
      x(r, c) = saved;
      g(r, c) = (plus - minus) / (2 * h);
    }
  return g;
}

}  // namespace oracle
