#pragma once

#include "duet/error.hpp"
#include "duet/types.hpp"

#include <cmath>
#include <functional>
#include <string>

namespace duet {

// Minimum Euclidean norm a row may have before L2 normalization is refused.
inline constexpr double kNormGuard = 1e-12;

// Plain matrix product with an explicit shape check. Single-threaded Eigen
// evaluation keeps the summation order fixed, so repeated runs are
// bit-identical.
inline Mat matmul(const Mat& a, const Mat& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions differ (" + std::to_string(a.cols()) +
                         " vs " + std::to_string(b.rows()) + ")");
    }
    return a * b;
}

// Scales every row to unit Euclidean norm. Rows with norm below the guard
// raise instead of being silently perturbed.
template <typename Derived>
Mat row_l2_normalize(const Eigen::MatrixBase<Derived>& m) {
    Mat out(m.rows(), m.cols());
    for (Index i = 0; i < m.rows(); ++i) {
        const double norm = m.row(i).norm();
        if (!(norm >= kNormGuard)) {
            throw DegenerateEmbeddingError("row_l2_normalize: row " + std::to_string(i) +
                                           " has norm " + std::to_string(norm));
        }
        out.row(i) = m.row(i) / norm;
    }
    return out;
}

namespace detail {

inline void check_tau(double tau) {
    if (!(tau > 0.0)) {
        throw ConfigError("temperature must be positive, got " + std::to_string(tau));
    }
}

}  // namespace detail

// log softmax over each column of m / tau, computed per column as
// (s - max) - log(sum(exp(s - max))). Never takes log of a softmax output.
template <typename Derived>
Mat log_softmax_columns(const Eigen::MatrixBase<Derived>& m, double tau) {
    detail::check_tau(tau);
    Mat s = m.template cast<double>() / tau;
    for (Index j = 0; j < s.cols(); ++j) {
        auto col = s.col(j);
        col.array() -= col.maxCoeff();
        col.array() -= std::log(col.array().exp().sum());
    }
    return s;
}

template <typename Derived>
Mat log_softmax_rows(const Eigen::MatrixBase<Derived>& m, double tau) {
    detail::check_tau(tau);
    Mat s = m.template cast<double>() / tau;
    for (Index i = 0; i < s.rows(); ++i) {
        auto row = s.row(i);
        row.array() -= row.maxCoeff();
        row.array() -= std::log(row.array().exp().sum());
    }
    return s;
}

// Temperature-scaled softmax with per-column max subtraction; every column
// sums to 1.
template <typename Derived>
Mat stable_softmax_columns(const Eigen::MatrixBase<Derived>& m, double tau) {
    Mat s = log_softmax_columns(m, tau);
    s = s.array().exp();
    // Renormalize away the residual rounding of exp(log q).
    for (Index j = 0; j < s.cols(); ++j) s.col(j) /= s.col(j).sum();
    return s;
}

// Row-wise counterpart; stable_softmax_rows(m) == stable_softmax_columns(m^T)^T.
template <typename Derived>
Mat stable_softmax_rows(const Eigen::MatrixBase<Derived>& m, double tau) {
    Mat s = log_softmax_rows(m, tau);
    s = s.array().exp();
    for (Index i = 0; i < s.rows(); ++i) s.row(i) /= s.row(i).sum();
    return s;
}

// Compares an analytic gradient against central finite differences of f at
// `point`. Returns max over coordinates of
// |analytic - central_difference| / max(1, |analytic|).
double grad_check(const std::function<double(const Vec&)>& f, const Vec& point,
                  const Vec& analytic, double epsilon);

}  // namespace duet
