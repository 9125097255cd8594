#include "retforge/matrix.hpp"

#include <cmath>
#include <cstring>

#include "retforge/error.hpp"

namespace retforge {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ArgumentError("matrix data has " + std::to_string(data_.size()) + " values, expected " +
                            std::to_string(rows_ * cols_));
    }
}

Matrix Matrix::gather_rows(std::span<const std::size_t> rows) const {
    Matrix out(rows.size(), cols_);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= rows_) throw ArgumentError("row index out of range");
        std::memcpy(out.data_.data() + i * cols_, data_.data() + rows[i] * cols_, cols_ * sizeof(float));
    }
    return out;
}

double squared_distance(std::span<const float> a, std::span<const float> b) noexcept {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return acc;
}

double dot(std::span<const float> a, std::span<const float> b) noexcept {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
    return acc;
}

double l2_norm(std::span<const float> a) noexcept { return std::sqrt(dot(a, a)); }

}  // namespace retforge
