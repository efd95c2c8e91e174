#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "rudra/rng.hpp"
#include "rudra/tensor.hpp"

using namespace rudra;

namespace {

// Independent oracle: textbook i-j-k triple loop with a local accumulator.
Matrix gemm_naive(const Matrix& a, const Matrix& b) {
    REQUIRE(a.cols == b.rows);
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < b.cols; ++j) {
            double sum = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) sum += a.at(i, k) * b.at(k, j);
            c.at(i, j) = sum;
        }
    return c;
}

Matrix random_matrix(RngStream& rng, std::size_t r, std::size_t c) {
    Matrix m(r, c);
    for (auto& v : m.data) v = rng.next_uniform(-2.0, 2.0);
    return m;
}

}  // namespace

TEST_CASE("gemm matches the naive oracle bit for bit") {
    RngStream rng(42, 7);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t m = 1 + rng.next_below(8);
        const std::size_t k = 1 + rng.next_below(8);
        const std::size_t n = 1 + rng.next_below(8);
        const Matrix a = random_matrix(rng, m, k);
        const Matrix b = random_matrix(rng, k, n);
        const Matrix got = gemm(a, b);
        const Matrix want = gemm_naive(a, b);
        REQUIRE(got.rows == want.rows);
        REQUIRE(got.cols == want.cols);
        for (std::size_t i = 0; i < got.data.size(); ++i) CHECK(got.data[i] == want.data[i]);
    }
}

TEST_CASE("gemm hand values") {
    // [1 2 3; 4 5 6] * [7 8; 9 10; 11 12] = [58 64; 139 154]
    const Matrix a(2, 3, {1, 2, 3, 4, 5, 6});
    const Matrix b(3, 2, {7, 8, 9, 10, 11, 12});
    const Matrix c = gemm(a, b);
    CHECK(c.at(0, 0) == 58.0);
    CHECK(c.at(0, 1) == 64.0);
    CHECK(c.at(1, 0) == 139.0);
    CHECK(c.at(1, 1) == 154.0);
}

TEST_CASE("identity is a gemm fixed point") {
    RngStream rng(3, 1);
    const Matrix a = random_matrix(rng, 5, 5);
    const Matrix left = gemm(Matrix::identity(5), a);
    const Matrix right = gemm(a, Matrix::identity(5));
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        CHECK(left.data[i] == a.data[i]);
        CHECK(right.data[i] == a.data[i]);
    }
}

TEST_CASE("gemm rejects mismatched inner dimensions") {
    const Matrix a(2, 3);
    const Matrix b(2, 2);
    CHECK_THROWS_AS(gemm(a, b), ShapeError);
}

TEST_CASE("matrix constructor validates data length") {
    CHECK_THROWS_AS(Matrix(2, 2, Vector{1.0, 2.0, 3.0}), ShapeError);
}

TEST_CASE("saxpy hand values and shape check") {
    const Vector x = {1.0, 2.0, 3.0};
    const Vector y = {10.0, 20.0, 30.0};
    const Vector z = saxpy(0.5, x, y);
    CHECK(z == Vector{10.5, 21.0, 31.5});
    CHECK_THROWS_AS(saxpy(1.0, Vector{1.0}, Vector{1.0, 2.0}), ShapeError);
}

TEST_CASE("all_finite flags inf and nan") {
    CHECK(all_finite({0.0, -1.5, 1e300}));
    CHECK_FALSE(all_finite({0.0, std::numeric_limits<double>::infinity()}));
    CHECK_FALSE(all_finite({std::nan(""), 1.0}));
}

TEST_CASE("rng streams are deterministic and distinct") {
    RngStream a(9, 1), b(9, 1), c(9, 2);
    for (int i = 0; i < 100; ++i) {
        const std::uint64_t va = a.next_u64();
        CHECK(va == b.next_u64());
    }
    // different stream id diverges immediately
    RngStream a2(9, 1);
    CHECK(a2.next_u64() != c.next_u64());
}

TEST_CASE("rng uniform and bounded draws stay in range") {
    RngStream rng(1, 1);
    for (int i = 0; i < 1000; ++i) {
        const double d = rng.next_double();
        CHECK(d >= 0.0);
        CHECK(d < 1.0);
        const double o = rng.next_double_open();
        CHECK(o > 0.0);
        CHECK(o <= 1.0);
        CHECK(rng.next_below(7) < 7);
    }
    CHECK_THROWS_AS(rng.next_below(0), PreconditionError);
}

TEST_CASE("gaussian draws have plausible moments") {
    RngStream rng(5, streams::kWeightInit);
    const auto xs = draw_gaussian(rng, 20000, 1.0, 2.0);
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size() - 1);
    CHECK(mean == doctest::Approx(1.0).epsilon(0.05));
    CHECK(var == doctest::Approx(4.0).epsilon(0.08));
}
