#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace ecnet {

// Dense row-major matrix of doubles; a batch is rows = samples, cols = features.
struct Tensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    static Tensor row_vector(std::vector<double> v) {
        Tensor t;
        t.rows = 1;
        t.cols = v.size();
        t.data = std::move(v);
        return t;
    }

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::vector<double> row(std::size_t i) const {
        return {data.begin() + static_cast<std::ptrdiff_t>(i * cols),
                data.begin() + static_cast<std::ptrdiff_t>((i + 1) * cols)};
    }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
};

inline void require_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) throw std::invalid_argument(std::string("shape mismatch in ") + what);
}

// C = A(r x k) * B(k x c)
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dimensions differ");
    Tensor c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += aik * b(k, j);
        }
    return c;
}

// C = A(r x k) * B(c x k)^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.cols != b.cols) throw std::invalid_argument("matmul_nt: inner dimensions differ");
    Tensor c(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < b.rows; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) s += a(i, k) * b(j, k);
            c(i, j) = s;
        }
    return c;
}

// C = A(k x r)^T * B(k x c)
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    if (a.rows != b.rows) throw std::invalid_argument("matmul_tn: inner dimensions differ");
    Tensor c(a.cols, b.cols);
    for (std::size_t k = 0; k < a.rows; ++k)
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double aki = a(k, i);
            if (aki == 0.0) continue;
            for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += aki * b(k, j);
        }
    return c;
}

}  // namespace ecnet
