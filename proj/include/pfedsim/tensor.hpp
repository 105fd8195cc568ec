#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "pfedsim/errors.hpp"

namespace pfedsim {

// Row-major dense tensor of doubles. The protocol only ever needs rank 1 and
// rank 2 (feature matrices, logit matrices), so the 2-D accessors are the
// workhorses.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> values;

    Tensor() = default;

    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
        : shape{rows, cols}, values(rows * cols, fill) {}

    static Tensor from_rows(const std::vector<std::vector<double>>& rows) {
        Tensor t(rows.size(), rows.empty() ? 0 : rows.front().size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != t.cols())
                throw DimensionError("from_rows: ragged row " + std::to_string(i));
            for (std::size_t j = 0; j < t.cols(); ++j) t.at(i, j) = rows[i][j];
        }
        return t;
    }

    std::size_t size() const { return values.size(); }
    std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? (shape.empty() ? 0 : 1) : shape[1]; }

    double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

    const double* row(std::size_t r) const { return values.data() + r * cols(); }
    double* row(std::size_t r) { return values.data() + r * cols(); }

    // Copy of row r as a 1 x cols tensor.
    Tensor row_tensor(std::size_t r) const {
        Tensor t(1, cols());
        for (std::size_t j = 0; j < cols(); ++j) t.at(0, j) = at(r, j);
        return t;
    }

    // Rows picked by index, in order.
    Tensor gather_rows(const std::vector<std::size_t>& idx) const {
        Tensor t(idx.size(), cols());
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < cols(); ++j) t.at(i, j) = at(idx[i], j);
        return t;
    }

    bool consistent() const {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        return n == values.size();
    }

    bool all_finite() const {
        for (double v : values)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline void require_finite(const Tensor& t, const char* where) {
    if (!t.all_finite()) throw NumericError(std::string("non-finite values in ") + where);
}

}  // namespace pfedsim
