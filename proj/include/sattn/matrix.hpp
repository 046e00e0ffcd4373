#pragma once

// Dense row-major matrix template. Instantiated with double on the numeric
// path and with Rational on the exact path, so the same containers and
// shape checks serve both.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sattn {

template <class T>
class Matrix {
  public:
    Matrix() : rows_(0), cols_(0) {}

    /// rows x cols, value-initialized entries (0 for arithmetic types).
    Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols) {}

    Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_)
            throw std::invalid_argument("Matrix: data size does not match rows*cols");
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    const T& operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    T& at(std::size_t i, std::size_t j) {
        check_index(i, j);
        return data_[i * cols_ + j];
    }
    const T& at(std::size_t i, std::size_t j) const {
        check_index(i, j);
        return data_[i * cols_ + j];
    }

    T* row_ptr(std::size_t i) { return data_.data() + i * cols_; }
    const T* row_ptr(std::size_t i) const { return data_.data() + i * cols_; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    bool operator==(const Matrix& other) const {
        return same_shape(other) && data_ == other.data_;
    }

  private:
    void check_index(std::size_t i, std::size_t j) const {
        if (i >= rows_ || j >= cols_)
            throw std::out_of_range("Matrix: index (" + std::to_string(i) + "," +
                                    std::to_string(j) + ") out of " + std::to_string(rows_) + "x" +
                                    std::to_string(cols_));
    }

    std::size_t rows_, cols_;
    std::vector<T> data_;
};

using MatrixD = Matrix<double>;

namespace detail {
inline void require(bool cond, const char* what) {
    if (!cond) throw std::invalid_argument(what);
}
}  // namespace detail

/// C = A * B. Shapes (p x q) * (q x r) -> (p x r).
template <class T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
    detail::require(a.cols() == b.rows(), "matmul: inner dimensions differ");
    Matrix<T> c(a.rows(), b.cols());
    const std::size_t q = a.cols(), r = b.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const T* arow = a.row_ptr(i);
        T* crow = c.row_ptr(i);
        for (std::size_t k = 0; k < q; ++k) {
            const T aik = arow[k];
            const T* brow = b.row_ptr(k);
            for (std::size_t j = 0; j < r; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

template <class T>
Matrix<T> add(const Matrix<T>& a, const Matrix<T>& b) {
    detail::require(a.same_shape(b), "add: shape mismatch");
    Matrix<T> c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] += b.data()[i];
    return c;
}

template <class T>
Matrix<T> sub(const Matrix<T>& a, const Matrix<T>& b) {
    detail::require(a.same_shape(b), "sub: shape mismatch");
    Matrix<T> c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] -= b.data()[i];
    return c;
}

template <class T>
Matrix<T> scale(const Matrix<T>& a, const T& s) {
    Matrix<T> c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] *= s;
    return c;
}

template <class T>
Matrix<T> transpose(const Matrix<T>& a) {
    Matrix<T> t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

/// New matrix made of the given columns of a, in the given order.
/// Repeated indices are allowed.
template <class T>
Matrix<T> gather_columns(const Matrix<T>& a, const std::vector<std::size_t>& idx) {
    for (std::size_t j : idx) detail::require(j < a.cols(), "gather_columns: index out of range");
    Matrix<T> g(a.rows(), idx.size());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < idx.size(); ++j) g(i, j) = a(i, idx[j]);
    return g;
}

/// Copies column src_col of src into column dst_col of dst.
template <class T>
void set_column(Matrix<T>& dst, std::size_t dst_col, const Matrix<T>& src, std::size_t src_col) {
    detail::require(dst.rows() == src.rows(), "set_column: row count mismatch");
    detail::require(dst_col < dst.cols() && src_col < src.cols(), "set_column: column out of range");
    for (std::size_t i = 0; i < dst.rows(); ++i) dst(i, dst_col) = src(i, src_col);
}

/// Permutes columns: result column j = a column perm[j].
template <class T>
Matrix<T> permute_columns(const Matrix<T>& a, const std::vector<std::size_t>& perm) {
    detail::require(perm.size() == a.cols(), "permute_columns: permutation length mismatch");
    return gather_columns(a, perm);
}

inline double max_abs(const MatrixD& a) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a.data()[i]));
    return m;
}

inline double max_abs_diff(const MatrixD& a, const MatrixD& b) {
    detail::require(a.same_shape(b), "max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
    return m;
}

inline bool all_finite(const MatrixD& a) {
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!std::isfinite(a.data()[i])) return false;
    return true;
}

}  // namespace sattn
