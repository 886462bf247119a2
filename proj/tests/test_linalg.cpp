/*
 * Copyright 2026 The decaf authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License"). You may not use this file except in compliance
 * with the License. A copy of the License is located at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * or in the "license" file accompanying this file. This file is distributed on an "AS IS" BASIS, WITHOUT WARRANTIES
 * OR CONDITIONS OF ANY KIND, either express or implied. See the License for the specific language governing permissions
 * and limitations under the License.
 */

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "decaf/linalg.hpp"
#include "decaf/rng.hpp"

using namespace decaf;

namespace {

// Independent spectral-norm oracle: cyclic Jacobi eigensolver on A^T A, then
// sqrt of the largest eigenvalue.
double svd_sigma_max(const DenseMatrixT<double>& a) {
    const std::size_t n = a.rows();
    DenseMatrixT<double> s(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double sum = 0.0;
            for (std::size_t k = 0; k < n; ++k) sum += a(k, i) * a(k, j);
            s(i, j) = sum;
        }
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += s(p, q) * s(p, q);
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(s(p, q)) < 1e-30) continue;
                const double theta = 0.5 * std::atan2(2.0 * s(p, q), s(q, q) - s(p, p));
                const double c = std::cos(theta), sn = std::sin(theta);
                for (std::size_t k = 0; k < n; ++k) {
                    const double skp = s(k, p), skq = s(k, q);
                    s(k, p) = c * skp - sn * skq;
                    s(k, q) = sn * skp + c * skq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double spk = s(p, k), sqk = s(q, k);
                    s(p, k) = c * spk - sn * sqk;
                    s(q, k) = sn * spk + c * sqk;
                }
            }
        }
    }
    double max_eig = 0.0;
    for (std::size_t i = 0; i < n; ++i) max_eig = std::max(max_eig, s(i, i));
    return std::sqrt(std::max(0.0, max_eig));
}

DenseMatrixT<double> to_double(const DenseMatrix& m) { return m.cast<double>(); }

} // namespace

TEST_CASE("sigmoid at zero, saturation, and symmetry") {
    CHECK(sigmoid(0.0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(sigmoid(50.0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(sigmoid(-50.0) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(std::isfinite(sigmoid(1000.0)));
    CHECK(std::isfinite(sigmoid(-1000.0)));
    Rng rng(1);
    for (int i = 0; i < 100; ++i) {
        const double x = (rng.next_unit() - 0.5) * 40.0;
        CHECK(sigmoid(-x) == doctest::Approx(1.0 - sigmoid(x)).epsilon(1e-12));
    }
    // vector form stays in (0,1) componentwise
    const auto v = sigmoid(std::vector<double>{-3.0, 0.0, 3.0});
    CHECK(v[1] == doctest::Approx(0.5));
    for (const auto y : v) {
        CHECK(y > 0.0);
        CHECK(y < 1.0);
    }
}

TEST_CASE("relu clamps negatives and keeps nonnegatives") {
    const std::vector<float> x = {-1.0f, 0.0f, 2.0f};
    const auto r = relu(x);
    CHECK(r[0] == 0.0f);
    CHECK(r[1] == 0.0f);
    CHECK(r[2] == 2.0f);
    const std::vector<float> nonneg = {0.5f, 3.0f};
    CHECK(relu(nonneg) == nonneg);
}

TEST_CASE("adam single step matches the closed form from zero moments") {
    // From zero moments: m = (1-b1) g, v = (1-b2) g^2, both bias corrections
    // cancel, so the step is -lr * g / (|g| + eps).
    AdamConfig cfg;
    cfg.lr = 0.1;
    DenseMatrix param(2, 2, 1.0f);
    DenseMatrixT<double> grad(2, 2);
    grad(0, 0) = 0.5;
    grad(0, 1) = -2.0;
    grad(1, 0) = 1e-3;
    grad(1, 1) = 0.0;
    AdamStateT<float> state(2, 2, cfg);
    adam_step(param, grad, state);
    CHECK(state.step_count == 1);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            const double g = grad(i, j);
            const double expect = 1.0 - cfg.lr * g / (std::abs(g) + cfg.epsilon);
            CHECK(param(i, j) == doctest::Approx(expect).epsilon(1e-6));
        }
}

TEST_CASE("adam zero gradient leaves the parameter unchanged, moments decay") {
    AdamConfig cfg;
    DenseMatrix param(1, 3, 2.5f);
    AdamStateT<float> state(1, 3, cfg);
    state.first_moment(0, 0) = 0.8f;
    state.second_moment(0, 0) = 0.4f;
    DenseMatrixT<double> zero(1, 3);
    DenseMatrix before = param;
    adam_step(param, zero, state);
    CHECK(state.first_moment(0, 0) == doctest::Approx(0.8 * cfg.beta1));
    CHECK(state.second_moment(0, 0) == doctest::Approx(0.4 * cfg.beta2));
    // Columns with zero moments stay exactly put.
    CHECK(param(0, 1) == before(0, 1));
    CHECK(param(0, 2) == before(0, 2));
}

TEST_CASE("adam is deterministic: identical inputs, identical updates") {
    AdamConfig cfg;
    DenseMatrix p1(4, 4, 0.5f), p2(4, 4, 0.5f);
    DenseMatrixT<double> g(4, 4);
    Rng rng(3);
    for (auto& v : g.data()) v = rng.next_gaussian();
    AdamStateT<float> s1(4, 4, cfg), s2(4, 4, cfg);
    for (int it = 0; it < 5; ++it) {
        adam_step(p1, g, s1);
        adam_step(p2, g, s2);
    }
    CHECK(p1 == p2);
}

TEST_CASE("adam rejects non-finite gradients") {
    AdamConfig cfg;
    DenseMatrix param(1, 1, 0.0f);
    DenseMatrixT<double> grad(1, 1);
    grad(0, 0) = std::numeric_limits<double>::quiet_NaN();
    AdamStateT<float> state(1, 1, cfg);
    CHECK_THROWS_AS(adam_step(param, grad, state), DomainError);
}

TEST_CASE("spectral normalization: 2I scales to I, 0.5I is untouched") {
    Rng rng(11);
    DenseMatrix r(4, 4);
    for (std::size_t i = 0; i < 4; ++i) r(i, i) = 2.0f;
    spectral_normalize(r, 20, rng);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            CHECK(static_cast<double>(r(i, j)) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-3));

    DenseMatrix half(4, 4);
    for (std::size_t i = 0; i < 4; ++i) half(i, i) = 0.5f;
    DenseMatrix copy = half;
    spectral_normalize(half, 20, rng);
    CHECK(half == copy);
}

TEST_CASE("spectral normalization vs the Jacobi SVD oracle on random matrices") {
    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        DenseMatrix r(8, 8);
        for (auto& v : r.data()) v = static_cast<float>(rng.next_gaussian());
        spectral_normalize(r, 20, rng);
        const double sigma = svd_sigma_max(to_double(r));
        CHECK(sigma <= 1.0 + 1e-3);
    }
}

TEST_CASE("spectral normalization is idempotent within tolerance") {
    Rng rng(23);
    DenseMatrix r(6, 6);
    for (auto& v : r.data()) v = static_cast<float>(rng.next_gaussian());
    spectral_normalize(r, 20, rng);
    DenseMatrix once = r;
    spectral_normalize(r, 20, rng);
    for (std::size_t i = 0; i < r.data().size(); ++i)
        CHECK(std::abs(r.data()[i] - once.data()[i]) <= 1e-6 * std::max(1.0f, std::abs(once.data()[i])));
}

TEST_CASE("spectral normalization leaves the zero matrix unchanged") {
    Rng rng(29);
    DenseMatrix zero(5, 5);
    spectral_normalize(zero, 20, rng);
    for (const auto v : zero.data()) CHECK(v == 0.0f);
}

TEST_CASE("dropout: rate 0 is all ones, keep fraction concentrates, seeds reproduce") {
    Rng rng(31);
    const auto ones = dropout_mask(16, 0.0, rng);
    for (const auto v : ones) CHECK(v == 1.0f);

    Rng big(33);
    const std::size_t n = 1000000;
    const auto mask = dropout_mask(n, 0.5, big);
    std::size_t kept = 0;
    for (const auto v : mask)
        if (v != 0.0f) ++kept;
    const double frac = static_cast<double>(kept) / static_cast<double>(n);
    CHECK(frac == doctest::Approx(0.5).epsilon(0.004)); // binomial concentration
    for (const auto v : mask) CHECK((v == 0.0f || v == 2.0f));

    Rng a(77), b(77);
    CHECK(dropout_mask(64, 0.3, a) == dropout_mask(64, 0.3, b));

    Rng bad(1);
    CHECK_THROWS_AS(dropout_mask(4, 1.0, bad), DomainError);
}

TEST_CASE("dropout preserves the expectation of a masked vector") {
    Rng rng(41);
    const std::size_t n = 200000;
    const double rate = 0.2;
    const auto mask = dropout_mask(n, rate, rng);
    double sum = 0.0;
    for (const auto v : mask) sum += v;
    CHECK(sum / static_cast<double>(n) == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("rng streams are reproducible and children are independent of parent use") {
    Rng a(99), b(99);
    for (int i = 0; i < 16; ++i) CHECK(a.next_u64() == b.next_u64());
    // A child stream does not depend on how much the parent was consumed.
    Rng p1(5), p2(5);
    p2.next_u64();
    p2.next_u64();
    Rng c1 = p1.derive(3), c2 = p2.derive(3);
    for (int i = 0; i < 8; ++i) CHECK(c1.next_u64() == c2.next_u64());
}

TEST_CASE("dot products accumulate in double") {
    // 1e8 + many small values would be lost in float accumulation.
    const std::size_t n = 4096;
    std::vector<float> a(n, 1.0f), b(n, 1.0f);
    a[0] = 1e8f;
    const double expect = 1e8 + static_cast<double>(n - 1);
    CHECK(dot(a, b) == doctest::Approx(expect).epsilon(1e-12));
}
