#include "qpm/kernels.hpp"

#include <algorithm>

namespace qpm::kernels {

namespace {

// Rows of B processed per pass so a block of B stays in cache while it is
// streamed against a group of rows of A.
constexpr std::size_t kBlockK = 64;
constexpr std::size_t kBlockN = 512;

// C rows [i0, i0 + R) = A rows * B. Every C element accumulates its products
// in increasing p order starting from 0, exactly like the reference loop.
// With TransA, A is stored k x m and element (i, p) lives at a[p * m + i].
template <std::size_t R, bool TransA>
void matmul_rows(const double* a, const double* b, double* c, std::size_t i0, std::size_t m, std::size_t k,
                 std::size_t n) {
    for (std::size_t r = 0; r < R; ++r) std::fill(c + (i0 + r) * n, c + (i0 + r + 1) * n, 0.0);
    for (std::size_t jj = 0; jj < n; jj += kBlockN) {
        const std::size_t jend = std::min(n, jj + kBlockN);
        for (std::size_t kk = 0; kk < k; kk += kBlockK) {
            const std::size_t kend = std::min(k, kk + kBlockK);
            for (std::size_t p = kk; p < kend; ++p) {
                const double* b_row = b + p * n;
                double av[R];
                double* cr[R];
                for (std::size_t r = 0; r < R; ++r) {
                    av[r] = TransA ? a[p * m + i0 + r] : a[(i0 + r) * k + p];
                    cr[r] = c + (i0 + r) * n;
                }
                for (std::size_t j = jj; j < jend; ++j) {
                    const double bv = b_row[j];
                    for (std::size_t r = 0; r < R; ++r) cr[r][j] += av[r] * bv;
                }
            }
        }
    }
}

constexpr std::size_t kRowGroup = 4;

template <bool TransA>
void matmul_group(const double* a, const double* b, double* c, std::size_t g, std::size_t m, std::size_t k,
                  std::size_t n) {
    const std::size_t i0 = g * kRowGroup;
    if (i0 + kRowGroup <= m) {
        matmul_rows<kRowGroup, TransA>(a, b, c, i0, m, k, n);
    } else {
        for (std::size_t i = i0; i < m; ++i) matmul_rows<1, TransA>(a, b, c, i, m, k, n);
    }
}

template <bool TransA>
void matmul_dispatch(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
                     Exec exec) {
    const std::size_t groups = (m + kRowGroup - 1) / kRowGroup;
    if (exec == Exec::serial || groups < 2) {
        for (std::size_t g = 0; g < groups; ++g) matmul_group<TransA>(a, b, c, g, m, k, n);
        return;
    }
    const long long count = static_cast<long long>(groups);
#pragma omp parallel for schedule(static)
    for (long long g = 0; g < count; ++g) matmul_group<TransA>(a, b, c, static_cast<std::size_t>(g), m, k, n);
}

}  // namespace

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n, Exec exec) {
    matmul_dispatch<false>(a.data(), b.data(), c.data(), m, k, n, exec);
}

void matmul_at(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n, Exec exec) {
    matmul_dispatch<true>(a.data(), b.data(), c.data(), m, k, n, exec);
}

void transpose(std::span<const double> in, std::span<double> out, std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = in[i * cols + j];
}

void add_row_vector(std::span<double> x, std::span<const double> bias, std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) {
        double* r = x.data() + i * cols;
        for (std::size_t j = 0; j < cols; ++j) r[j] += bias[j];
    }
}

void column_sums(std::span<const double> x, std::span<double> out, std::size_t rows, std::size_t cols) {
    std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(cols), 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
        const double* r = x.data() + i * cols;
        for (std::size_t j = 0; j < cols; ++j) out[j] += r[j];
    }
}

namespace reference {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
            c[i * n + j] = acc;
        }
}

void matmul_at(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
            c[i * n + j] = acc;
        }
}

}  // namespace reference

}  // namespace qpm::kernels
