// SPDX-License-Identifier: Apache-2.0
#include "svfit/matrix.hpp"

#include <cmath>
#include <cstdlib>
#include <string>

#include "svfit/errors.hpp"

namespace svfit {

namespace {

std::string shape_str(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionMismatch(std::string(op) + ": shape mismatch " + shape_str(a) +
                                " vs " + shape_str(b));
    }
}

} // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw DimensionMismatch("Matrix: data length " + std::to_string(data_.size()) +
                                " does not match " + shape_str(*this));
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t nr = rows.size();
    const std::size_t nc = nr == 0 ? 0 : rows.begin()->size();
    Matrix m(nr, nc);
    std::size_t i = 0;
    for (const auto& r : rows) {
        if (r.size() != nc) throw DimensionMismatch("from_rows: ragged rows");
        std::size_t j = 0;
        for (double v : r) m(i, j++) = v;
        ++i;
    }
    return m;
}

Matrix Matrix::column(std::span<const double> values) {
    Matrix m(values.size(), 1);
    for (std::size_t i = 0; i < values.size(); ++i) m(i, 0) = values[i];
    return m;
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
}

Matrix Matrix::columns(std::size_t first, std::size_t count) const {
    if (first + count > cols_) throw DimensionMismatch("columns: slice out of range");
    Matrix out(rows_, count);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = 0; j < count; ++j) out(i, j) = (*this)(i, first + j);
    return out;
}

std::vector<double> Matrix::column_vector(std::size_t c) const {
    std::vector<double> v(rows_);
    for (std::size_t i = 0; i < rows_; ++i) v[i] = (*this)(i, c);
    return v;
}

void Matrix::set_column(std::size_t c, std::span<const double> values) {
    if (values.size() != rows_) throw DimensionMismatch("set_column: length mismatch");
    for (std::size_t i = 0; i < rows_; ++i) (*this)(i, c) = values[i];
}

Matrix& Matrix::operator+=(const Matrix& other) {
    require_same_shape(*this, other, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
    require_same_shape(*this, other, "operator-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
}

Matrix& Matrix::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(double s, Matrix a) { return a *= s; }

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw DimensionMismatch("matmul: " + shape_str(a) + " * " + shape_str(b));
    }
    Matrix out(a.rows(), b.cols());
    const std::size_t n = b.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto out_row = out.row(i);
        auto a_row = a.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a_row[k];
            auto b_row = b.row(k);
            for (std::size_t j = 0; j < n; ++j) out_row[j] += aik * b_row[j];
        }
    }
    return out;
}

Matrix matmul_at(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw DimensionMismatch("matmul_at: " + shape_str(a) + "^T * " + shape_str(b));
    }
    Matrix out(a.cols(), b.cols());
    const std::size_t n = b.cols();
    for (std::size_t k = 0; k < a.rows(); ++k) {
        auto a_row = a.row(k);
        auto b_row = b.row(k);
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double aki = a_row[i];
            auto out_row = out.row(i);
            for (std::size_t j = 0; j < n; ++j) out_row[j] += aki * b_row[j];
        }
    }
    return out;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw DimensionMismatch("matmul_bt: " + shape_str(a) + " * " + shape_str(b) + "^T");
    }
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto a_row = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a_row, b.row(j));
    }
    return out;
}

Matrix scale_columns(const Matrix& a, std::span<const double> d) {
    if (d.size() != a.cols()) throw DimensionMismatch("scale_columns: length mismatch");
    Matrix out = a;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto r = out.row(i);
        for (std::size_t j = 0; j < a.cols(); ++j) r[j] *= d[j];
    }
    return out;
}

Matrix scale_rows(const Matrix& a, std::span<const double> d) {
    if (d.size() != a.rows()) throw DimensionMismatch("scale_rows: length mismatch");
    Matrix out = a;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto r = out.row(i);
        for (double& v : r) v *= d[i];
    }
    return out;
}

double frobenius_norm(const Matrix& m) { return norm2(m.data()); }

double max_abs(const Matrix& m) {
    double mx = 0.0;
    for (double v : m.data()) mx = std::max(mx, std::abs(v));
    return mx;
}

bool all_finite(const Matrix& m) {
    for (double v : m.data())
        if (!std::isfinite(v)) return false;
    return true;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(std::span<const double> v) {
    // Scaled accumulation so very large/small entries do not overflow.
    double mx = 0.0;
    for (double x : v) mx = std::max(mx, std::abs(x));
    if (mx == 0.0) return 0.0;
    double s = 0.0;
    for (double x : v) {
        const double t = x / mx;
        s += t * t;
    }
    return mx * std::sqrt(s);
}

} // namespace svfit
