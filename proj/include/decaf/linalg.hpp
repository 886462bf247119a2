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

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "decaf/common.hpp"
#include "decaf/rng.hpp"

namespace decaf {

/// Row-major dense matrix. Storage is T (float in the trained model, double
/// in gradient-check shadows); every reduction accumulates in double.
template <typename T>
class DenseMatrixT {
  public:
    DenseMatrixT() = default;
    DenseMatrixT(std::size_t rows, std::size_t cols, T fill = T(0))
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static DenseMatrixT identity(std::size_t n) {
        DenseMatrixT m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1);
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<T>& data() { return data_; }
    const std::vector<T>& data() const { return data_; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (const T& v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    bool operator==(const DenseMatrixT&) const = default;

    template <typename U>
    DenseMatrixT<U> cast() const {
        DenseMatrixT<U> out(rows_, cols_);
        for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<U>(data_[i]);
        return out;
    }

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

using DenseMatrix = DenseMatrixT<float>;

template <typename A, typename B>
double dot(std::span<A> a, std::span<B> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return s;
}

template <typename A, typename B>
double dot(const std::vector<A>& a, const std::vector<B>& b) {
    return dot(std::span<const A>(a), std::span<const B>(b));
}

template <typename T, typename S>
void axpy(double alpha, std::span<const T> x, std::span<S> y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += static_cast<S>(alpha * static_cast<double>(x[i]));
}

/// Numerically stable logistic sigmoid.
inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

template <typename T>
std::vector<T> sigmoid(const std::vector<T>& x) {
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<T>(sigmoid(static_cast<double>(x[i])));
    return out;
}

template <typename T>
std::vector<T> relu(const std::vector<T>& x) {
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
    return out;
}

/// ln(1 + exp(-m)) without overflow.
inline double log1p_exp_neg(double m) {
    if (m >= 0.0) return std::log1p(std::exp(-m));
    return -m + std::log1p(std::exp(m));
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// First/second moment estimates for one parameter matrix. step_count is
/// shared across rows; with sparse (lazy) updates only touched rows decay,
/// bias correction still uses the global step.
template <typename T>
struct AdamStateT {
    DenseMatrixT<T> first_moment;
    DenseMatrixT<T> second_moment;
    std::int64_t step_count = 0;
    AdamConfig cfg;

    AdamStateT() = default;
    AdamStateT(std::size_t rows, std::size_t cols, const AdamConfig& c)
        : first_moment(rows, cols), second_moment(rows, cols), cfg(c) {}
};

namespace detail {

template <typename T>
void adam_apply_row(std::span<T> param, std::span<const double> grad, std::span<T> m1, std::span<T> m2,
                    const AdamConfig& cfg, double bc1, double bc2) {
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        if (!std::isfinite(g)) throw DomainError("adam: non-finite gradient");
        const double m = cfg.beta1 * static_cast<double>(m1[i]) + (1.0 - cfg.beta1) * g;
        const double v = cfg.beta2 * static_cast<double>(m2[i]) + (1.0 - cfg.beta2) * g * g;
        m1[i] = static_cast<T>(m);
        m2[i] = static_cast<T>(v);
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        param[i] = static_cast<T>(static_cast<double>(param[i]) - cfg.lr * mhat / (std::sqrt(vhat) + cfg.epsilon));
    }
}

} // namespace detail

/// Standard Adam update with bias correction over the whole matrix.
template <typename T>
void adam_step(DenseMatrixT<T>& param, const DenseMatrixT<double>& grad, AdamStateT<T>& state) {
    require(param.rows() == grad.rows() && param.cols() == grad.cols(), "adam: shape mismatch");
    ++state.step_count;
    const double bc1 = 1.0 - std::pow(state.cfg.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(state.cfg.beta2, static_cast<double>(state.step_count));
    for (std::size_t r = 0; r < param.rows(); ++r)
        detail::adam_apply_row(param.row(r), grad.row(r), state.first_moment.row(r), state.second_moment.row(r),
                               state.cfg, bc1, bc2);
}

/// Adam for a flat vector parameter (gate vectors); state holds 1 x n moments.
template <typename T>
void adam_step_vec(std::vector<T>& param, const std::vector<double>& grad, AdamStateT<T>& state) {
    require(param.size() == grad.size() && state.first_moment.cols() == param.size(),
            "adam: vector shape mismatch");
    ++state.step_count;
    const double bc1 = 1.0 - std::pow(state.cfg.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(state.cfg.beta2, static_cast<double>(state.step_count));
    detail::adam_apply_row(std::span<T>(param), std::span<const double>(grad), state.first_moment.row(0),
                           state.second_moment.row(0), state.cfg, bc1, bc2);
}

/// Lazy Adam over a subset of rows (token embeddings, refinement vectors):
/// moments of untouched rows are left alone.
template <typename T>
void adam_step_rows(DenseMatrixT<T>& param, const std::vector<std::uint32_t>& rows,
                    const DenseMatrixT<double>& row_grads, AdamStateT<T>& state) {
    require(row_grads.rows() == rows.size() && row_grads.cols() == param.cols(), "adam: row grad shape mismatch");
    ++state.step_count;
    const double bc1 = 1.0 - std::pow(state.cfg.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(state.cfg.beta2, static_cast<double>(state.step_count));
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const std::size_t r = rows[k];
        detail::adam_apply_row(param.row(r), row_grads.row(k), state.first_moment.row(r),
                               state.second_moment.row(r), state.cfg, bc1, bc2);
    }
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

/// Inverted dropout mask: kept units carry 1/(1-rate) so the masked vector has
/// the input as its expectation. rate == 0 returns all ones without consuming
/// randomness.
inline std::vector<float> dropout_mask(std::size_t len, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw DomainError("dropout: rate must be in [0, 1)");
    std::vector<float> mask(len, 1.0f);
    if (rate == 0.0) return mask;
    const float keep_scale = static_cast<float>(1.0 / (1.0 - rate));
    for (std::size_t i = 0; i < len; ++i) mask[i] = rng.next_unit() >= rate ? keep_scale : 0.0f;
    return mask;
}

// ---------------------------------------------------------------------------
// Spectral normalization
// ---------------------------------------------------------------------------

/// One power-iteration pass refining the persistent right vector u, returning
/// the spectral norm estimate. u is resized/initialized from rng on first use.
template <typename T>
double power_iteration(const DenseMatrixT<T>& mat, std::vector<double>& u, int iters, Rng& rng) {
    require(mat.rows() == mat.cols(), "power iteration: square matrix expected");
    const std::size_t n = mat.rows();
    if (n == 0) return 0.0;
    if (u.size() != n) {
        u.assign(n, 0.0);
        for (auto& x : u) x = rng.next_gaussian();
    }
    std::vector<double> v(n);
    double sigma = 0.0;
    for (int it = 0; it < iters; ++it) {
        // v = normalize(M u)
        for (std::size_t r = 0; r < n; ++r) v[r] = dot(mat.row(r), std::span<const double>(u));
        double vn = std::sqrt(dot(v, v));
        if (vn == 0.0) return 0.0;
        for (auto& x : v) x /= vn;
        // u = normalize(M^T v)
        std::fill(u.begin(), u.end(), 0.0);
        for (std::size_t r = 0; r < n; ++r) {
            const auto row = mat.row(r);
            for (std::size_t c = 0; c < n; ++c) u[c] += static_cast<double>(row[c]) * v[r];
        }
        double un = std::sqrt(dot(u, u));
        if (un == 0.0) return 0.0;
        for (auto& x : u) x /= un;
        // sigma = v^T M u
        sigma = 0.0;
        for (std::size_t r = 0; r < n; ++r) sigma += v[r] * dot(mat.row(r), std::span<const double>(u));
    }
    return sigma;
}

/// Scales the matrix by 1/sigma_max when the power-iteration estimate exceeds
/// one; otherwise leaves it (and a zero matrix) unchanged. Returns the
/// estimate.
template <typename T>
double spectral_normalize(DenseMatrixT<T>& mat, std::vector<double>& u, int iters, Rng& rng) {
    const double sigma = power_iteration(mat, u, iters, rng);
    if (sigma > 1.0) {
        const double inv = 1.0 / sigma;
        for (auto& x : mat.data()) x = static_cast<T>(static_cast<double>(x) * inv);
    }
    return sigma;
}

template <typename T>
double spectral_normalize(DenseMatrixT<T>& mat, int iters, Rng& rng) {
    std::vector<double> u;
    return spectral_normalize(mat, u, iters, rng);
}

} // namespace decaf
