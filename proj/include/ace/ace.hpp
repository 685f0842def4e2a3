#ifndef ACE_ACE_HPP
#define ACE_ACE_HPP

// Batch confusion norm and adaptive confusion energy.
//
// A batch of M softmax outputs over C classes is stored column-wise in a
// C x M matrix P. The batch confusion norm is ||P^T P||_* and the adaptive
// confusion energy is ||P^T A^T A P||_* for a diagonal per-class weight A.
// Both Gram matrices are positive semidefinite, so their nuclear norm equals
// their trace; the fast path evaluates the trace directly and the reference
// path runs a full SVD.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ace/error.hpp"
#include "ace/linalg.hpp"

namespace ace {

inline constexpr double kColumnSumTolerance = 1e-9;

enum class BcnPath { svd_reference, trace_fast };

template <typename Scalar>
struct PredictionBatch {
  Matrix<Scalar> P;         // C x M, column m is the softmax output of sample m
  std::vector<int> labels;  // size M

  Eigen::Index num_classes() const { return P.rows(); }
  Eigen::Index batch_size() const { return P.cols(); }
};

struct AdaptiveSpec {
  std::vector<std::int64_t> class_counts;
  double tau = 0.0;

  double mean() const;
  double stddev() const;  // population (divide by C)
};

template <typename Scalar>
struct AdaptiveMatrix {
  Vector<Scalar> diag;              // current (possibly learned) a_i
  Vector<Scalar> frozen_reference;  // hand-crafted A, fixed for the proximity term

  Eigen::Index size() const { return diag.size(); }

  static AdaptiveMatrix identity(Eigen::Index num_classes) {
    AdaptiveMatrix a;
    a.diag = Vector<Scalar>::Ones(num_classes);
    a.frozen_reference = a.diag;
    return a;
  }
};

struct LossConfig {
  double lambda = 0.0;
  double eta = 1.0;
  bool learnable = false;
  BcnPath bcn_path = BcnPath::trace_fast;
};

inline double AdaptiveSpec::mean() const {
  double s = 0.0;
  for (auto n : class_counts) s += static_cast<double>(n);
  return s / static_cast<double>(class_counts.size());
}

inline double AdaptiveSpec::stddev() const {
  const double mu = mean();
  double s = 0.0;
  for (auto n : class_counts) {
    const double d = static_cast<double>(n) - mu;
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(class_counts.size()));
}

template <typename Scalar>
void validate_prediction_batch(const PredictionBatch<Scalar>& batch) {
  const auto& P = batch.P;
  if (P.rows() < 1 || P.cols() < 1) throw ShapeError("prediction batch is empty");
  if (static_cast<Eigen::Index>(batch.labels.size()) != P.cols()) {
    throw ShapeError("prediction batch: " + std::to_string(batch.labels.size()) +
                     " labels for " + std::to_string(P.cols()) + " columns");
  }
  for (Eigen::Index m = 0; m < P.cols(); ++m) {
    Scalar sum = 0;
    for (Eigen::Index i = 0; i < P.rows(); ++i) {
      const Scalar x = P(i, m);
      if (!(x >= Scalar(0) && x <= Scalar(1))) {
        throw ValidationError("prediction column " + std::to_string(m) +
                              " has an entry outside [0, 1]");
      }
      sum += x;
    }
    if (std::abs(static_cast<double>(sum) - 1.0) > kColumnSumTolerance) {
      throw ValidationError("prediction column " + std::to_string(m) + " sums to " +
                            std::to_string(static_cast<double>(sum)));
    }
  }
  for (int y : batch.labels) {
    if (y < 0 || y >= P.rows()) {
      throw ValidationError("label " + std::to_string(y) + " outside [0, " +
                            std::to_string(P.rows()) + ")");
    }
  }
}

/// Stacks M probability vectors into the C x M batch matrix, column order
/// following sample order.
template <typename Scalar>
PredictionBatch<Scalar> assemble_prediction_matrix(std::span<const Vector<Scalar>> outputs,
                                                   std::span<const int> labels) {
  if (outputs.empty()) throw ShapeError("assemble_prediction_matrix: no outputs");
  const Eigen::Index c = outputs.front().size();
  PredictionBatch<Scalar> batch;
  batch.P.resize(c, static_cast<Eigen::Index>(outputs.size()));
  for (std::size_t m = 0; m < outputs.size(); ++m) {
    if (outputs[m].size() != c) {
      throw ShapeError("assemble_prediction_matrix: vector " + std::to_string(m) +
                       " has length " + std::to_string(outputs[m].size()) + ", expected " +
                       std::to_string(c));
    }
    batch.P.col(static_cast<Eigen::Index>(m)) = outputs[m];
  }
  batch.labels.assign(labels.begin(), labels.end());
  validate_prediction_batch(batch);
  return batch;
}

/// Diagonal adaptive weights a_i = (N_i / mu)^(sigma^tau).
///
/// With balanced counts sigma is 0; the exponent is taken as 1 for tau == 0
/// and 0 otherwise, and every base is exactly 1, so the result is the
/// identity either way.
inline AdaptiveMatrix<double> build_adaptive_matrix(const AdaptiveSpec& spec) {
  if (spec.class_counts.size() < 2) {
    throw ValidationError("adaptive matrix needs at least 2 classes");
  }
  if (!(spec.tau >= 0.0) || !std::isfinite(spec.tau)) {
    throw ValidationError("adaptive matrix: tau must be a finite non-negative number");
  }
  for (std::size_t i = 0; i < spec.class_counts.size(); ++i) {
    if (spec.class_counts[i] < 1) {
      throw ValidationError("adaptive matrix: class " + std::to_string(i) + " has count " +
                            std::to_string(spec.class_counts[i]));
    }
  }
  const Eigen::Index c = static_cast<Eigen::Index>(spec.class_counts.size());
  const double mu = spec.mean();
  const double sigma = spec.stddev();

  AdaptiveMatrix<double> a;
  a.diag.resize(c);
  if (sigma == 0.0) {
    a.diag.setOnes();
  } else {
    const double exponent = std::pow(sigma, spec.tau);
    for (Eigen::Index i = 0; i < c; ++i) {
      a.diag(i) = std::pow(static_cast<double>(spec.class_counts[static_cast<std::size_t>(i)]) / mu,
                           exponent);
    }
  }
  if (!a.diag.allFinite()) throw NumericalError("adaptive matrix has non-finite entries");
  a.frozen_reference = a.diag;
  return a;
}

template <typename Scalar>
void check_adaptive_shape(const PredictionBatch<Scalar>& batch, const AdaptiveMatrix<Scalar>& a) {
  if (a.diag.size() != batch.num_classes()) {
    throw ShapeError("adaptive matrix has " + std::to_string(a.diag.size()) +
                     " entries, prediction batch has " + std::to_string(batch.num_classes()) +
                     " classes");
  }
}

/// ||P^T P||_*.
template <typename Scalar>
Scalar bcn(const PredictionBatch<Scalar>& batch, BcnPath path = BcnPath::trace_fast) {
  if (path == BcnPath::trace_fast) return linalg::frobenius_norm_sq(batch.P);
  const Matrix<Scalar> gram = linalg::matmul(linalg::transpose(batch.P), batch.P);
  return linalg::nuclear_norm(gram);
}

/// ||(AP)^T (AP)||_* with A = diag(a).
template <typename Scalar>
Scalar ace_energy(const PredictionBatch<Scalar>& batch, const AdaptiveMatrix<Scalar>& a,
                  BcnPath path = BcnPath::trace_fast) {
  check_adaptive_shape(batch, a);
  if (path == BcnPath::trace_fast) {
    // sum_i a_i^2 sum_m P_im^2
    return linalg::frobenius_norm_sq(Matrix<Scalar>(a.diag.asDiagonal() * batch.P));
  }
  const Matrix<Scalar> ap = a.diag.asDiagonal() * batch.P;
  const Matrix<Scalar> gram = linalg::matmul(linalg::transpose(ap), ap);
  return linalg::nuclear_norm(gram);
}

// Squared elementwise l2 distance between the learned and hand-crafted
// diagonals. Swap this pair of functions to change the proximity norm.
template <typename Scalar>
Scalar proximity_penalty(const AdaptiveMatrix<Scalar>& a_hat) {
  return (a_hat.diag - a_hat.frozen_reference).squaredNorm();
}

template <typename Scalar>
Vector<Scalar> proximity_gradient(const AdaptiveMatrix<Scalar>& a_hat) {
  return Scalar(2) * (a_hat.diag - a_hat.frozen_reference);
}

template <typename Scalar>
Scalar ace_loss_learnable(const PredictionBatch<Scalar>& batch, const AdaptiveMatrix<Scalar>& a_hat,
                          Scalar eta, BcnPath path = BcnPath::trace_fast) {
  return ace_energy(batch, a_hat, path) + eta * proximity_penalty(a_hat);
}

template <typename Scalar>
constexpr Scalar total_loss(Scalar ce, Scalar ace, Scalar lambda) {
  return ce + lambda * ace;
}

/// dL_ACE/dP, entry (i, m) = 2 a_i^2 P_im.
template <typename Scalar>
Matrix<Scalar> ace_grad_wrt_P(const PredictionBatch<Scalar>& batch, const AdaptiveMatrix<Scalar>& a) {
  check_adaptive_shape(batch, a);
  return (Scalar(2) * a.diag.array().square()).matrix().asDiagonal() * batch.P;
}

/// dL^_ACE/da^_i = 2 a^_i sum_m P_im^2 + eta * d(proximity)/da^_i.
template <typename Scalar>
Vector<Scalar> ace_grad_wrt_Ahat(const PredictionBatch<Scalar>& batch,
                                 const AdaptiveMatrix<Scalar>& a_hat, Scalar eta) {
  check_adaptive_shape(batch, a_hat);
  Vector<Scalar> g =
      (Scalar(2) * a_hat.diag.array() * batch.P.rowwise().squaredNorm().array()).matrix();
  return g + eta * proximity_gradient(a_hat);
}

/// Pulls a gradient with respect to softmax outputs back to the logits,
/// column by column: dL/dz_m = (diag(p_m) - p_m p_m^T) g_m.
template <typename Scalar>
Matrix<Scalar> softmax_backward(const Matrix<Scalar>& P, const Matrix<Scalar>& grad_p) {
  if (P.rows() != grad_p.rows() || P.cols() != grad_p.cols()) {
    throw ShapeError("softmax_backward: gradient shape does not match predictions");
  }
  Matrix<Scalar> out(P.rows(), P.cols());
  for (Eigen::Index m = 0; m < P.cols(); ++m) {
    const Scalar dot = P.col(m).dot(grad_p.col(m));
    out.col(m) = (P.col(m).array() * (grad_p.col(m).array() - dot)).matrix();
  }
  return out;
}

template <typename Scalar>
Matrix<Scalar> ace_grad_wrt_logits(const PredictionBatch<Scalar>& batch,
                                   const AdaptiveMatrix<Scalar>& a) {
  return softmax_backward(batch.P, ace_grad_wrt_P(batch, a));
}

}  // namespace ace

#endif  // ACE_ACE_HPP
