#ifndef ACE_LINALG_HPP
#define ACE_LINALG_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "ace/error.hpp"

namespace ace {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;

namespace linalg {

inline constexpr int kJacobiMaxSweeps = 60;
inline constexpr double kJacobiTolerance = 1e-12;

template <typename Scalar>
struct SvdResult {
  Vector<Scalar> singular_values;  // descending, non-negative
  std::optional<Matrix<Scalar>> left_vectors;
  std::optional<Matrix<Scalar>> right_vectors;
  int sweeps = 0;
};

inline std::string shape_string(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

template <typename DerivedA, typename DerivedB>
Matrix<typename DerivedA::Scalar> matmul(const Eigen::MatrixBase<DerivedA>& a,
                                         const Eigen::MatrixBase<DerivedB>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_string(a.rows(), a.cols()) + " * " +
                     shape_string(b.rows(), b.cols()));
  }
  return a * b;
}

template <typename Derived>
Matrix<typename Derived::Scalar> transpose(const Eigen::MatrixBase<Derived>& a) {
  return a.transpose();
}

template <typename Derived>
typename Derived::Scalar frobenius_norm_sq(const Eigen::MatrixBase<Derived>& a) {
  return a.squaredNorm();
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& a) {
  return a.allFinite();
}

namespace detail {

// One-sided (Hestenes) Jacobi on the columns of `work` (rows >= cols).
// On return the columns of `work` are mutually orthogonal and `v`
// accumulates the right rotations, so that input == work * v^T.
template <typename Scalar>
int hestenes_sweeps(Matrix<Scalar>& work, Matrix<Scalar>* v) {
  using std::abs;
  using std::sqrt;
  const Eigen::Index n = work.cols();
  const Scalar tol = static_cast<Scalar>(kJacobiTolerance);
  Scalar residual = 0;
  for (int sweep = 1; sweep <= kJacobiMaxSweeps; ++sweep) {
    bool rotated = false;
    residual = 0;
    for (Eigen::Index p = 0; p + 1 < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const Scalar alpha = work.col(p).squaredNorm();
        const Scalar beta = work.col(q).squaredNorm();
        const Scalar gamma = work.col(p).dot(work.col(q));
        if (gamma == Scalar(0) || alpha == Scalar(0) || beta == Scalar(0)) continue;
        const Scalar off = abs(gamma) / sqrt(alpha * beta);
        residual = std::max(residual, off);
        if (off <= tol) continue;
        rotated = true;
        const Scalar zeta = (beta - alpha) / (2 * gamma);
        const Scalar t = (zeta >= 0 ? Scalar(1) : Scalar(-1)) /
                         (abs(zeta) + sqrt(Scalar(1) + zeta * zeta));
        const Scalar c = Scalar(1) / sqrt(Scalar(1) + t * t);
        const Scalar s = c * t;
        for (Eigen::Index i = 0; i < work.rows(); ++i) {
          const Scalar xp = work(i, p);
          const Scalar xq = work(i, q);
          work(i, p) = c * xp - s * xq;
          work(i, q) = s * xp + c * xq;
        }
        if (v != nullptr) {
          for (Eigen::Index i = 0; i < v->rows(); ++i) {
            const Scalar xp = (*v)(i, p);
            const Scalar xq = (*v)(i, q);
            (*v)(i, p) = c * xp - s * xq;
            (*v)(i, q) = s * xp + c * xq;
          }
        }
      }
    }
    if (!rotated) return sweep;
  }
  throw NumericalError("svd: Jacobi iteration did not converge in " +
                           std::to_string(kJacobiMaxSweeps) + " sweeps",
                       static_cast<double>(residual));
}

}  // namespace detail

/// Thin singular value decomposition by one-sided Jacobi rotations.
///
/// For an m x n input with k = min(m, n), returns k singular values in
/// descending order and, when requested, U (m x k) and V (n x k) with
/// a == U * diag(S) * V^T. Left vectors belonging to zero singular values
/// are returned as zero columns.
template <typename Derived>
SvdResult<typename Derived::Scalar> svd(const Eigen::MatrixBase<Derived>& a,
                                        bool want_vectors) {
  using Scalar = typename Derived::Scalar;
  if (!a.allFinite()) throw ValidationError("svd: input has non-finite entries");

  const bool transposed = a.rows() < a.cols();
  Matrix<Scalar> work = transposed ? Matrix<Scalar>(a.transpose()) : Matrix<Scalar>(a);
  const Eigen::Index k = work.cols();

  Matrix<Scalar> v;
  if (want_vectors) v = Matrix<Scalar>::Identity(k, k);

  SvdResult<Scalar> out;
  out.sweeps = detail::hestenes_sweeps<Scalar>(work, want_vectors ? &v : nullptr);

  Vector<Scalar> norms(k);
  for (Eigen::Index j = 0; j < k; ++j) norms(j) = work.col(j).norm();

  std::vector<Eigen::Index> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index x, Eigen::Index y) { return norms(x) > norms(y); });

  out.singular_values.resize(k);
  for (Eigen::Index j = 0; j < k; ++j) out.singular_values(j) = norms(order[j]);

  if (want_vectors) {
    Matrix<Scalar> u(work.rows(), k);
    Matrix<Scalar> vs(k, k);
    for (Eigen::Index j = 0; j < k; ++j) {
      const Eigen::Index src = order[j];
      const Scalar s = norms(src);
      if (s > Scalar(0)) {
        u.col(j) = work.col(src) / s;
      } else {
        u.col(j).setZero();
      }
      vs.col(j) = v.col(src);
    }
    // For a wide input we factored a^T = U S V^T, so the roles swap.
    if (transposed) {
      out.left_vectors = std::move(vs);
      out.right_vectors = std::move(u);
    } else {
      out.left_vectors = std::move(u);
      out.right_vectors = std::move(vs);
    }
  }
  return out;
}

template <typename Derived>
typename Derived::Scalar nuclear_norm(const Eigen::MatrixBase<Derived>& a) {
  return svd(a, false).singular_values.sum();
}

}  // namespace linalg
}  // namespace ace

#endif  // ACE_LINALG_HPP
