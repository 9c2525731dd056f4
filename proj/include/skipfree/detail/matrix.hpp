#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace skipfree::detail {

// Dense row-major matrix. Scale tables use only the upper triangle
// (entries below the diagonal stay zero), but a full layout keeps row
// access contiguous and lets validation inspect every entry.
template <class T>
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, T fill = T{})
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    T& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    const T& operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    T& at(std::size_t i, std::size_t j) {
        if (i >= rows_ || j >= cols_) throw std::out_of_range("Matrix::at");
        return data_[i * cols_ + j];
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    T* row(std::size_t i) { return data_.data() + i * cols_; }
    const T* row(std::size_t i) const { return data_.data() + i * cols_; }

private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<T> data_;
};

}  // namespace skipfree::detail
