// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace svfit {

/// Dense row-major matrix of 64-bit floats. The universal tensor of this
/// library: weight matrices, batches (one sample per column), adapters and
/// images all live in this type.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix identity(std::size_t n);
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
    /// Column vector from a flat list.
    static Matrix column(std::span<const double> values);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    Matrix transposed() const;
    /// Columns [first, first+count) as a rows() x count matrix.
    Matrix columns(std::size_t first, std::size_t count) const;
    std::vector<double> column_vector(std::size_t c) const;
    void set_column(std::size_t c, std::span<const double> values);

    Matrix& operator+=(const Matrix& other);
    Matrix& operator-=(const Matrix& other);
    Matrix& operator*=(double s);

    friend bool operator==(const Matrix& a, const Matrix& b) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(double s, Matrix a);

/// a * b. Throws DimensionMismatch on shape errors (as do the variants below).
Matrix matmul(const Matrix& a, const Matrix& b);
/// a^T * b without materializing the transpose.
Matrix matmul_at(const Matrix& a, const Matrix& b);
/// a * b^T without materializing the transpose.
Matrix matmul_bt(const Matrix& a, const Matrix& b);
/// a * diag(d); d.size() must equal a.cols().
Matrix scale_columns(const Matrix& a, std::span<const double> d);
/// diag(d) * a; d.size() must equal a.rows().
Matrix scale_rows(const Matrix& a, std::span<const double> d);

double frobenius_norm(const Matrix& m);
double max_abs(const Matrix& m);
bool all_finite(const Matrix& m);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);

} // namespace svfit
