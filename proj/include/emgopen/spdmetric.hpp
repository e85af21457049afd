#pragma once

// Log-Euclidean geometry on SPD matrices and its closed form for vectors
// lifted to rank-one-plus-identity matrices.
//
// lift(a) = a a^T + lambda I has eigenvalues |a|^2 + lambda (along a) and
// lambda (multiplicity n - 1). With lambda = 1 the matrix log is
// ln(|a|^2 + 1) u u^T, u = a / |a|, so the squared log-Euclidean distance
// between lift(a) and lift(b) reduces to
//
//   a'^2 + b'^2 - 2 a' b' (a.b)^2 / (|a|^2 |b|^2),   a' = ln(|a|^2 + 1)
//
// which costs two norms and one dot product.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace emgopen {

enum class MetricKind { sled, ed, md };

inline std::string to_string(MetricKind m) {
  switch (m) {
    case MetricKind::sled: return "sled";
    case MetricKind::ed: return "ed";
    case MetricKind::md: return "md";
  }
  return "?";
}

struct LiftParams {
  double lambda_lift = 1.0;
};

template <typename Scalar>
using DenseVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using DenseMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

namespace detail {
template <typename A, typename B>
void require_same_size(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b, const char* what) {
  if (a.size() != b.size())
    throw std::invalid_argument(std::string(what) + ": dimension mismatch (" + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()) + ")");
}
}  // namespace detail

/// a a^T + lambda I.
template <typename Derived>
DenseMatrix<typename Derived::Scalar> lift(const Eigen::MatrixBase<Derived>& a, LiftParams p = {}) {
  using Scalar = typename Derived::Scalar;
  if (!(p.lambda_lift > 0)) throw std::invalid_argument("lift: lambda must be positive");
  const auto v = a.reshaped().eval();
  DenseMatrix<Scalar> out = v * v.transpose();
  out.diagonal().array() += static_cast<Scalar>(p.lambda_lift);
  return out;
}

/// Principal logarithm of an SPD matrix through its symmetric
/// eigendecomposition. Eigenvalues must exceed 1e-12 * max eigenvalue.
template <typename Derived>
DenseMatrix<typename Derived::Scalar> matrix_log(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  using std::abs;
  if (x.rows() != x.cols() || x.rows() == 0) throw std::invalid_argument("matrix not SPD");
  const Scalar scale = std::max<Scalar>(x.cwiseAbs().maxCoeff(), Scalar(1));
  if (((x - x.transpose()).cwiseAbs().maxCoeff()) > Scalar(1e-10) * scale)
    throw std::invalid_argument("matrix not SPD");

  Eigen::SelfAdjointEigenSolver<DenseMatrix<Scalar>> eig(x.eval());
  if (eig.info() != Eigen::Success) throw std::runtime_error("matrix_log: eigendecomposition failed");
  const auto& values = eig.eigenvalues();
  const Scalar top = values.maxCoeff();
  if (!(top > 0) || !(values.minCoeff() > Scalar(1e-12) * top)) throw std::invalid_argument("matrix not SPD");

  const auto& w = eig.eigenvectors();
  return w * values.array().log().matrix().asDiagonal() * w.transpose();
}

/// Tr((log X - log Y)^2).
template <typename DX, typename DY>
typename DX::Scalar led_squared(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y) {
  if (x.rows() != y.rows() || x.cols() != y.cols()) throw std::invalid_argument("led_squared: dimension mismatch");
  // the difference of logs is symmetric, so its squared trace is the
  // squared Frobenius norm
  return (matrix_log(x) - matrix_log(y)).squaredNorm();
}

/// Below this |a|^2 |b|^2 the cross term is replaced by its limit, 0.
inline constexpr double kSledCrossGuard = 1e-30;

namespace detail {
template <typename Scalar>
struct SledTerms {
  Scalar na, nb, dot, la, lb, cos2;
  bool cross;
};

template <typename A, typename B>
SledTerms<typename A::Scalar> sled_terms(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  using Scalar = typename A::Scalar;
  using std::log1p;
  SledTerms<Scalar> t;
  t.na = a.squaredNorm();
  t.nb = b.squaredNorm();
  t.dot = a.dot(b);
  t.la = log1p(t.na);
  t.lb = log1p(t.nb);
  const Scalar denom = t.na * t.nb;
  t.cross = denom >= Scalar(kSledCrossGuard);
  t.cos2 = t.cross ? std::clamp<Scalar>(t.dot * t.dot / denom, Scalar(0), Scalar(1)) : Scalar(0);
  return t;
}
}  // namespace detail

/// Closed-form squared log-Euclidean distance between lift(a) and lift(b)
/// at lambda = 1. Evaluated as (a' - b')^2 + 2 a' b' (1 - cos^2), which is
/// algebraically the same expression but never negative.
template <typename A, typename B>
typename A::Scalar sled_squared(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  detail::require_same_size(a, b, "sled_squared");
  const auto t = detail::sled_terms(a, b);
  const auto gap = t.la - t.lb;
  return gap * gap + 2 * t.la * t.lb * (1 - t.cos2);
}

template <typename Scalar>
struct SledGradient {
  Scalar value;
  DenseVector<Scalar> grad_a;
  DenseVector<Scalar> grad_b;
};

/// sled_squared together with its partials in a and b.
template <typename A, typename B>
SledGradient<typename A::Scalar> sled_squared_grad(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  using Scalar = typename A::Scalar;
  detail::require_same_size(a, b, "sled_squared_grad");
  const auto t = detail::sled_terms(a, b);
  const DenseVector<Scalar> av = a.reshaped();
  const DenseVector<Scalar> bv = b.reshaped();

  SledGradient<Scalar> g;
  const Scalar gap = t.la - t.lb;
  g.value = gap * gap + 2 * t.la * t.lb * (1 - t.cos2);

  // d a'/da = 2a / (|a|^2 + 1)
  const Scalar coef_a = 2 * (t.la - t.lb * t.cos2) * 2 / (t.na + 1);
  const Scalar coef_b = 2 * (t.lb - t.la * t.cos2) * 2 / (t.nb + 1);
  g.grad_a = coef_a * av;
  g.grad_b = coef_b * bv;
  if (t.cross) {
    // d cos^2/da = 2 (a.b) / (|a|^2 |b|^2) * (b - (a.b)/|a|^2 a)
    const Scalar k = -2 * t.la * t.lb * 2 * t.dot / (t.na * t.nb);
    g.grad_a += k * (bv - (t.dot / t.na) * av);
    g.grad_b += k * (av - (t.dot / t.nb) * bv);
  }
  return g;
}

template <typename A, typename B>
typename A::Scalar ed_squared(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  detail::require_same_size(a, b, "ed_squared");
  return (a - b).squaredNorm();
}

/// D(a, b) for the vector metrics: sqrt of the squared form.
template <typename A, typename B>
typename A::Scalar vector_distance(MetricKind kind, const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  using std::sqrt;
  switch (kind) {
    case MetricKind::sled: return sqrt(sled_squared(a, b));
    case MetricKind::ed: return sqrt(ed_squared(a, b));
    case MetricKind::md: break;
  }
  throw std::invalid_argument("vector_distance: Mahalanobis distance needs class covariances");
}

}  // namespace emgopen
