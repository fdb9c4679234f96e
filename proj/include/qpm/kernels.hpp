#pragma once

// Dense row-major kernels used by the neural networks. The production
// versions are cache-friendly and OpenMP-parallel over output rows; every
// output element accumulates over the inner dimension in index order, so the
// serial and parallel paths agree bit for bit. `reference::` holds the plain
// textbook loops the tests compare against.

#include <cstddef>
#include <span>

#include "qpm/parallel.hpp"

namespace qpm::kernels {

/// C(m x n) = A(m x k) * B(k x n)
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n, Exec exec = Exec::parallel);

/// C(m x n) = A(k x m)^T * B(k x n)
void matmul_at(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n, Exec exec = Exec::parallel);

/// out(cols x rows) = in(rows x cols)^T
void transpose(std::span<const double> in, std::span<double> out, std::size_t rows, std::size_t cols);

/// Adds `bias` (length cols) to every row of `x`.
void add_row_vector(std::span<double> x, std::span<const double> bias, std::size_t rows, std::size_t cols);

/// out[j] = sum_i x(i, j)
void column_sums(std::span<const double> x, std::span<double> out, std::size_t rows, std::size_t cols);

namespace reference {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n);
void matmul_at(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n);

}  // namespace reference

}  // namespace qpm::kernels
