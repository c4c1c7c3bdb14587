#pragma once

// Truncated SVD of a sparse matrix by Golub-Kahan-Lanczos bidiagonalization
// with full reorthogonalization. The Krylov dimension grows until every
// retained triplet meets the residual tolerance.

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

#include "filterbubble/error.hpp"

namespace filterbubble {

struct SvdResult {
  Eigen::MatrixXd U;  // rows x r
  Eigen::VectorXd S;  // r, descending
  Eigen::MatrixXd V;  // cols x r
  Eigen::Index krylov_dim = 0;
};

namespace detail {

inline void reorthogonalize(Eigen::VectorXd& x, const Eigen::MatrixXd& basis, Eigen::Index cols) {
  if (cols == 0) return;
  const auto B = basis.leftCols(cols);
  for (int pass = 0; pass < 2; ++pass) x.noalias() -= B * (B.transpose() * x);
}

// Deterministic unit vector orthogonal to the first `cols` columns of basis.
inline Eigen::VectorXd fresh_direction(const Eigen::MatrixXd& basis, Eigen::Index cols, std::uint64_t salt) {
  const Eigen::Index n = basis.rows();
  for (std::uint64_t attempt = 0;; ++attempt) {
    std::mt19937_64 rng(0x9E3779B97F4A7C15ULL ^ (salt * 1315423911ULL + attempt));
    Eigen::VectorXd x(n);
    for (Eigen::Index i = 0; i < n; ++i) x[i] = static_cast<double>(rng() >> 11) * 0x1.0p-52 - 1.0;
    reorthogonalize(x, basis, cols);
    const double nx = x.norm();
    if (nx > 1e-8) return x / nx;
  }
}

inline void orient(SvdResult& out) {
  for (Eigen::Index i = 0; i < out.S.size(); ++i) {
    Eigen::Index arg = 0;
    out.U.col(i).cwiseAbs().maxCoeff(&arg);
    if (out.U(arg, i) < 0.0) {
      out.U.col(i) *= -1.0;
      out.V.col(i) *= -1.0;
    }
  }
}

}  // namespace detail

/// Top-r singular triplets of A, singular values descending. Each left vector
/// is oriented so its largest-magnitude entry is non-negative. Every triplet
/// satisfies ||A v - s u|| <= tol * s_1 and ||A^T u - s v|| <= tol * s_1.
inline SvdResult truncated_svd(const Eigen::SparseMatrix<double>& A, Eigen::Index r, double tol = 1e-10) {
  const Eigen::Index p = A.rows(), q = A.cols();
  const Eigen::Index dmin = std::min(p, q);
  if (r < 0 || r > dmin)
    throw Error(ErrorCode::DimensionMismatch,
                "requested " + std::to_string(r) + " triplets of a " + std::to_string(p) + "x" + std::to_string(q) +
                    " matrix");
  double fro2 = 0.0;
  for (Eigen::Index c = 0; c < A.outerSize(); ++c)
    for (Eigen::SparseMatrix<double>::InnerIterator it(A, c); it; ++it) {
      if (!std::isfinite(it.value())) throw Error(ErrorCode::NonFiniteValue, "matrix entry is not finite");
      fro2 += it.value() * it.value();
    }
  SvdResult out;
  if (r == 0) {
    out.U.resize(p, 0);
    out.S.resize(0);
    out.V.resize(q, 0);
    return out;
  }
  if (p < q) {
    // Start on the short side so the Krylov space can close at k = dmin.
    const Eigen::SparseMatrix<double> At = A.transpose();
    SvdResult t = truncated_svd(At, r, tol);
    std::swap(t.U, t.V);
    detail::orient(t);
    return t;
  }
  const double breakdown = 1e-12 * std::sqrt(fro2);

  Eigen::Index k = std::min(dmin, std::max<Eigen::Index>(2 * r + 10, 20));
  for (;;) {
    Eigen::MatrixXd P(q, k + 1), Q(p, k);
    Eigen::VectorXd alpha(k), beta(k);
    P.col(0).setConstant(1.0 / std::sqrt(static_cast<double>(q)));
    for (Eigen::Index j = 0; j < k; ++j) {
      Eigen::VectorXd u = A * P.col(j);
      if (j > 0) u -= beta[j - 1] * Q.col(j - 1);
      detail::reorthogonalize(u, Q, j);
      alpha[j] = u.norm();
      if (alpha[j] <= breakdown) {
        alpha[j] = 0.0;
        Q.col(j) = detail::fresh_direction(Q, j, 2 * static_cast<std::uint64_t>(j));
      } else {
        Q.col(j) = u / alpha[j];
      }

      Eigen::VectorXd v = A.transpose() * Q.col(j) - alpha[j] * P.col(j);
      detail::reorthogonalize(v, P, j + 1);
      beta[j] = v.norm();
      if (beta[j] <= breakdown) {
        beta[j] = 0.0;
        if (j + 1 < k) P.col(j + 1) = detail::fresh_direction(P, j + 1, 2 * static_cast<std::uint64_t>(j) + 1);
        else P.col(j + 1).setZero();
      } else {
        P.col(j + 1) = v / beta[j];
      }
    }

    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(k, k);
    for (Eigen::Index j = 0; j < k; ++j) {
      B(j, j) = alpha[j];
      if (j + 1 < k) B(j, j + 1) = beta[j];
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> small(B, Eigen::ComputeFullU | Eigen::ComputeFullV);
    out.S = small.singularValues().head(r);
    out.U = Q * small.matrixU().leftCols(r);
    out.V = P.leftCols(k) * small.matrixV().leftCols(r);
    out.krylov_dim = k;

    double worst = 0.0;
    for (Eigen::Index i = 0; i < r; ++i) {
      const double left = (A * out.V.col(i) - out.S[i] * out.U.col(i)).norm();
      const double right = (A.transpose() * out.U.col(i) - out.S[i] * out.V.col(i)).norm();
      worst = std::max({worst, left, right});
    }
    if (worst <= tol * out.S[0] || (out.S[0] == 0.0 && worst == 0.0)) break;
    if (k == dmin)
      throw Error(ErrorCode::ConvergenceFailure,
                  "residual " + std::to_string(worst) + " after Krylov dimension " + std::to_string(k));
    k = std::min(dmin, 2 * k);
  }

  detail::orient(out);
  return out;
}

inline SvdResult truncated_svd(const Eigen::MatrixXd& A, Eigen::Index r, double tol = 1e-10) {
  for (Eigen::Index i = 0; i < A.size(); ++i)
    if (!std::isfinite(A.data()[i])) throw Error(ErrorCode::NonFiniteValue, "matrix entry is not finite");
  Eigen::SparseMatrix<double> s = A.sparseView(0.0, 0.0);
  return truncated_svd(s, r, tol);
}

}  // namespace filterbubble
