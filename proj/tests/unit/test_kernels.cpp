#include <doctest.h>

#include <algorithm>
#include <array>
#include <random>
#include <stdexcept>
#include <string>

#include "qpm/kernels.hpp"

using namespace qpm;

namespace {

std::vector<double> random_matrix(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d;
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

}  // namespace

TEST_CASE("matmul agrees with the reference loops bit for bit") {
    using Shape = std::array<std::size_t, 3>;
    for (auto [m, k, n] : {Shape{1, 1, 1}, Shape{3, 70, 5}, Shape{17, 129, 33}, Shape{64, 256, 31}}) {
        const auto a = random_matrix(m * k, 1), b = random_matrix(k * n, 2);
        std::vector<double> c_ref(m * n), c_ser(m * n), c_par(m * n);
        kernels::reference::matmul(a, b, c_ref, m, k, n);
        kernels::matmul(a, b, c_ser, m, k, n, Exec::serial);
        kernels::matmul(a, b, c_par, m, k, n, Exec::parallel);
        CHECK(c_ser == c_ref);
        CHECK(c_par == c_ref);
    }
}

TEST_CASE("matmul_at agrees with the reference loops") {
    using Shape = std::array<std::size_t, 3>;
    for (auto [m, k, n] : {Shape{2, 3, 4}, Shape{40, 64, 9}, Shape{12, 1, 300}}) {
        const auto a = random_matrix(k * m, 3), b = random_matrix(k * n, 4);
        std::vector<double> c_ref(m * n), c_ser(m * n), c_par(m * n);
        kernels::reference::matmul_at(a, b, c_ref, m, k, n);
        kernels::matmul_at(a, b, c_ser, m, k, n, Exec::serial);
        kernels::matmul_at(a, b, c_par, m, k, n, Exec::parallel);
        CHECK(c_ser == c_ref);
        CHECK(c_par == c_ref);
    }
}

TEST_CASE("transpose, bias and column sums") {
    const std::vector<double> x{1, 2, 3, 4, 5, 6};  // 2 x 3
    std::vector<double> t(6);
    kernels::transpose(x, t, 2, 3);
    CHECK(t == std::vector<double>{1, 4, 2, 5, 3, 6});
    std::vector<double> y = x;
    kernels::add_row_vector(y, std::vector<double>{10, 20, 30}, 2, 3);
    CHECK(y == std::vector<double>{11, 22, 33, 14, 25, 36});
    std::vector<double> s(3);
    kernels::column_sums(x, s, 2, 3);
    CHECK(s == std::vector<double>{5, 7, 9});
}

TEST_CASE("parallel_for rethrows the lowest failing index") {
    std::vector<int> hit(100, 0);
    try {
        parallel_for(100, Exec::parallel, [&](std::size_t i) {
            hit[i] = 1;
            if (i == 37 || i == 81) throw std::runtime_error(std::to_string(i));
        });
        FAIL("expected exception");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()) == "37");
    }
    CHECK(std::count(hit.begin(), hit.end(), 1) == 100);
}
