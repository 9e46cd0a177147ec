#pragma once

// Dense kernels shared by the tape and the plain-value code paths. Everything
// is templated on the scalar type; the model itself instantiates double.

#include <Eigen/Dense>

#include <cmath>
#include <sstream>
#include <string>

#include "caformer/errors.hpp"

namespace caformer {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// Rows are tokens, columns are channels.
using TokenMatrix = Matrix<double>;
using Vector = RowVector<double>;

inline constexpr double kLayerNormEps = 1e-5;

template <typename Derived>
std::string shape_string(const Eigen::EigenBase<Derived>& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

template <typename A, typename B>
void require_same_shape(const Eigen::EigenBase<A>& a, const Eigen::EigenBase<B>& b,
                        const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                         shape_string(b));
  }
}

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const char* op) {
  if (!m.allFinite()) throw NumericError(std::string(op) + ": non-finite result");
}

template <typename A, typename B>
Matrix<typename A::Scalar> matmul(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a) + " by " +
                         shape_string(b));
  }
  Matrix<typename A::Scalar> out = a * b;
  require_finite(out, "matmul");
  return out;
}

/// Row-wise softmax with per-row max subtraction.
template <typename Derived>
Matrix<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  if (m.rows() == 0 || m.cols() == 0) throw UsageError("softmax_rows: empty input");
  Matrix<Scalar> out(m.rows(), m.cols());
  for (Index r = 0; r < m.rows(); ++r) {
    const Scalar peak = m.row(r).maxCoeff();
    out.row(r) = (m.row(r).array() - peak).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

/// Per-row standardisation followed by the affine (gain, bias) row vectors.
/// `normalized` and `inv_std` receive the intermediates when non-null.
template <typename Derived, typename G, typename B>
Matrix<typename Derived::Scalar> layernorm(const Eigen::MatrixBase<Derived>& m,
                                           const Eigen::MatrixBase<G>& gain,
                                           const Eigen::MatrixBase<B>& bias,
                                           typename Derived::Scalar eps = kLayerNormEps,
                                           Matrix<typename Derived::Scalar>* normalized = nullptr,
                                           Matrix<typename Derived::Scalar>* inv_std = nullptr) {
  using Scalar = typename Derived::Scalar;
  if (gain.size() != m.cols() || bias.size() != m.cols()) {
    throw DimensionError("layernorm: gain/bias length " + std::to_string(gain.size()) + "/" +
                         std::to_string(bias.size()) + " for " + shape_string(m));
  }
  const Index n = m.cols();
  Matrix<Scalar> xhat(m.rows(), n);
  Matrix<Scalar> istd(m.rows(), 1);
  for (Index r = 0; r < m.rows(); ++r) {
    const Scalar mean = m.row(r).sum() / Scalar(n);
    const auto centered = (m.row(r).array() - mean).eval();
    const Scalar var = centered.square().sum() / Scalar(n);
    istd(r, 0) = Scalar(1) / std::sqrt(var + eps);
    xhat.row(r) = (centered * istd(r, 0)).matrix();
  }
  Matrix<Scalar> out(m.rows(), n);
  for (Index r = 0; r < m.rows(); ++r) {
    out.row(r) = (xhat.row(r).array() * gain.reshaped().transpose().array() +
                  bias.reshaped().transpose().array())
                     .matrix();
  }
  if (normalized) *normalized = std::move(xhat);
  if (inv_std) *inv_std = std::move(istd);
  return out;
}

/// Exact (erf) GELU.
template <typename Scalar>
Scalar gelu(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::erf(x / std::sqrt(Scalar(2))));
}

template <typename Scalar>
Scalar gelu_derivative(Scalar x) {
  const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x / std::sqrt(Scalar(2))));
  const Scalar pdf = std::exp(Scalar(-0.5) * x * x) / std::sqrt(Scalar(2) * Scalar(M_PI));
  return cdf + x * pdf;
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

}  // namespace caformer
