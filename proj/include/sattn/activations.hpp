#pragma once

// Column-wise activations. Columns are tokens throughout the library, so
// softmax and hardmax normalize each column independently.

#include <cmath>
#include <cstddef>
#include <vector>

#include "sattn/matrix.hpp"

namespace sattn {

/// Numerically stable softmax of a contiguous score vector, in place.
/// Subtracts the maximum before exponentiating so large scores cannot overflow.
inline void softmax_inplace(double* s, std::size_t n) {
    double mx = s[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, s[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        s[i] = std::exp(s[i] - mx);
        sum += s[i];
    }
    for (std::size_t i = 0; i < n; ++i) s[i] /= sum;
}

/// Softmax applied to every column. Each output column sums to 1.
inline MatrixD softmax_cols(const MatrixD& m) {
    detail::require(m.rows() >= 1 && m.cols() >= 1, "softmax_cols: empty matrix");
    MatrixD out = transpose(m);  // row-major: work on contiguous rows of the transpose
    for (std::size_t j = 0; j < out.rows(); ++j) softmax_inplace(out.row_ptr(j), out.cols());
    return transpose(out);
}

/// One-hot argmax per column. Ties resolve to the lowest row index.
/// Works for any totally ordered scalar, including Rational.
template <class T>
Matrix<T> hardmax_cols(const Matrix<T>& m) {
    detail::require(m.rows() >= 1 && m.cols() >= 1, "hardmax_cols: empty matrix");
    Matrix<T> out(m.rows(), m.cols());
    for (std::size_t j = 0; j < m.cols(); ++j) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < m.rows(); ++i)
            if (m(i, j) > m(best, j)) best = i;
        out(best, j) = T(1);
    }
    return out;
}

template <class T>
Matrix<T> relu(const Matrix<T>& m) {
    Matrix<T> out = m;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (out.data()[i] < T(0)) out.data()[i] = T(0);
    return out;
}

}  // namespace sattn
