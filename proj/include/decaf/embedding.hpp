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

#include <cstdint>
#include <map>
#include <span>
#include <unordered_map>
#include <vector>

#include "decaf/linalg.hpp"
#include "decaf/rng.hpp"
#include "decaf/sparse.hpp"

namespace decaf {

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Per-token embedding table, one D-dim row per vocabulary token.
template <typename T>
struct TokenEmbeddingsT {
    DenseMatrixT<T> table; // V x D

    TokenEmbeddingsT() = default;
    TokenEmbeddingsT(std::size_t vocab, std::size_t dim) : table(vocab, dim) {}

    std::size_t vocab() const { return table.rows(); }
    std::size_t dim() const { return table.cols(); }

    /// He-style init: zero-mean Gaussian with std sqrt(2/D) per entry.
    void init_random(Rng& rng) {
        const double std_dev = std::sqrt(2.0 / static_cast<double>(dim()));
        for (auto& v : table.data()) v = static_cast<T>(rng.next_gaussian() * std_dev);
    }
};

/// Residual text-embedding block: out = sig(alpha) .* r0 + sig(beta) .* (R * relu(r0)).
template <typename T>
struct EmbeddingBlockT {
    DenseMatrixT<T> residual;   // D x D
    std::vector<T> alpha, beta; // gate pre-activations, length D

    EmbeddingBlockT() = default;
    explicit EmbeddingBlockT(std::size_t dim)
        : residual(DenseMatrixT<T>::identity(dim)), alpha(dim, T(0)), beta(dim, T(0)) {}

    std::size_t dim() const { return alpha.size(); }

    void reinit_identity() {
        residual = DenseMatrixT<T>::identity(dim());
        std::fill(alpha.begin(), alpha.end(), T(0));
        std::fill(beta.begin(), beta.end(), T(0));
    }
};

/// Gated combination of two representations: sig(alpha) .* a + sig(beta) .* b.
template <typename T>
struct CombinationBlockT {
    std::vector<T> alpha, beta;

    CombinationBlockT() = default;
    explicit CombinationBlockT(std::size_t dim) : alpha(dim, T(0)), beta(dim, T(0)) {}

    std::size_t dim() const { return alpha.size(); }
};

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

/// r0 = sum_t weight * e_t; empty input gives the zero vector.
template <typename T>
std::vector<T> bag_embed(const TokenEmbeddingsT<T>& emb, const SparseVector& r) {
    std::vector<double> acc(emb.dim(), 0.0);
    for (const auto& e : r) {
        const auto row = emb.table.row(e.id);
        for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += static_cast<double>(e.weight) * row[j];
    }
    std::vector<T> out(acc.size());
    for (std::size_t j = 0; j < acc.size(); ++j) out[j] = static_cast<T>(acc[j]);
    return out;
}

/// Saved intermediates of one block application, enough for the backward pass.
template <typename T>
struct BlockCacheT {
    std::vector<T> input;        // r0
    std::vector<T> hidden;       // drop_mask .* relu(r0), the residual branch input
    std::vector<float> drop_mask; // empty when run without dropout
    std::vector<T> residual_out; // R * hidden
    std::vector<T> output;
};

template <typename T>
void block_forward(const EmbeddingBlockT<T>& blk, std::vector<T> r0, BlockCacheT<T>& cache,
                   const std::vector<float>* inner_dropout = nullptr) {
    const std::size_t d = blk.dim();
    cache.input = std::move(r0);
    cache.hidden.resize(d);
    for (std::size_t j = 0; j < d; ++j) cache.hidden[j] = cache.input[j] > T(0) ? cache.input[j] : T(0);
    if (inner_dropout != nullptr) {
        cache.drop_mask = *inner_dropout;
        for (std::size_t j = 0; j < d; ++j) cache.hidden[j] = static_cast<T>(cache.hidden[j] * cache.drop_mask[j]);
    } else {
        cache.drop_mask.clear();
    }
    cache.residual_out.resize(d);
    for (std::size_t j = 0; j < d; ++j)
        cache.residual_out[j] = static_cast<T>(dot(blk.residual.row(j), std::span<const T>(cache.hidden)));
    cache.output.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
        const double ga = sigmoid(static_cast<double>(blk.alpha[j]));
        const double gb = sigmoid(static_cast<double>(blk.beta[j]));
        cache.output[j] = static_cast<T>(ga * static_cast<double>(cache.input[j]) +
                                         gb * static_cast<double>(cache.residual_out[j]));
    }
}

template <typename T>
std::vector<T> block_forward(const EmbeddingBlockT<T>& blk, std::vector<T> r0) {
    BlockCacheT<T> cache;
    block_forward(blk, std::move(r0), cache);
    return std::move(cache.output);
}

template <typename T>
std::vector<T> combine(const CombinationBlockT<T>& cb, std::span<const T> a, std::span<const T> b) {
    std::vector<T> out(cb.dim());
    for (std::size_t j = 0; j < out.size(); ++j) {
        const double ga = sigmoid(static_cast<double>(cb.alpha[j]));
        const double gb = sigmoid(static_cast<double>(cb.beta[j]));
        out[j] = static_cast<T>(ga * static_cast<double>(a[j]) + gb * static_cast<double>(b[j]));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Gradient sinks
// ---------------------------------------------------------------------------

/// Accumulates dense gradients rows for a sparsely-touched matrix (token
/// embeddings, refinement vectors). Rows are materialized on first touch;
/// merging and export walk rows in ascending id order so results do not
/// depend on touch order.
class SparseRowGrads {
  public:
    SparseRowGrads() = default;
    explicit SparseRowGrads(std::size_t dim) : dim_(dim) {}

    std::size_t dim() const { return dim_; }
    std::size_t touched() const { return index_.size(); }

    std::span<double> row(std::uint32_t id) {
        auto [it, inserted] = index_.try_emplace(id, static_cast<std::uint32_t>(index_.size()));
        if (inserted) data_.resize(data_.size() + dim_, 0.0);
        return {data_.data() + static_cast<std::size_t>(it->second) * dim_, dim_};
    }

    void merge(const SparseRowGrads& other) {
        std::vector<std::uint32_t> ids;
        ids.reserve(other.index_.size());
        for (const auto& [id, slot] : other.index_) ids.push_back(id);
        std::sort(ids.begin(), ids.end());
        for (const auto id : ids) {
            const auto src = other.crow(id);
            auto dst = row(id);
            for (std::size_t j = 0; j < dim_; ++j) dst[j] += src[j];
        }
    }

    /// Rows in ascending id order plus the matching grad matrix.
    std::pair<std::vector<std::uint32_t>, DenseMatrixT<double>> sorted() const {
        std::vector<std::uint32_t> ids;
        ids.reserve(index_.size());
        for (const auto& [id, slot] : index_) ids.push_back(id);
        std::sort(ids.begin(), ids.end());
        DenseMatrixT<double> grads(ids.size(), dim_);
        for (std::size_t k = 0; k < ids.size(); ++k) {
            const auto src = crow(ids[k]);
            auto dst = grads.row(k);
            for (std::size_t j = 0; j < dim_; ++j) dst[j] = src[j];
        }
        return {std::move(ids), std::move(grads)};
    }

    void clear() {
        index_.clear();
        data_.clear();
    }

  private:
    std::span<const double> crow(std::uint32_t id) const {
        const auto it = index_.find(id);
        return {data_.data() + static_cast<std::size_t>(it->second) * dim_, dim_};
    }

    std::size_t dim_ = 0;
    std::unordered_map<std::uint32_t, std::uint32_t> index_;
    std::vector<double> data_;
};

template <typename T>
struct BlockGradsT {
    DenseMatrixT<double> residual;
    std::vector<double> alpha, beta;

    BlockGradsT() = default;
    explicit BlockGradsT(std::size_t dim) : residual(dim, dim), alpha(dim, 0.0), beta(dim, 0.0) {}

    void merge(const BlockGradsT& other) {
        for (std::size_t i = 0; i < residual.data().size(); ++i) residual.data()[i] += other.residual.data()[i];
        for (std::size_t j = 0; j < alpha.size(); ++j) alpha[j] += other.alpha[j];
        for (std::size_t j = 0; j < beta.size(); ++j) beta[j] += other.beta[j];
    }
};

struct CombinationGrads {
    std::vector<double> alpha, beta;

    CombinationGrads() = default;
    explicit CombinationGrads(std::size_t dim) : alpha(dim, 0.0), beta(dim, 0.0) {}

    void merge(const CombinationGrads& other) {
        for (std::size_t j = 0; j < alpha.size(); ++j) alpha[j] += other.alpha[j];
        for (std::size_t j = 0; j < beta.size(); ++j) beta[j] += other.beta[j];
    }
};

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

/// Chain rule through the block. The ReLU subgradient at 0 is 0. Returns the
/// gradient w.r.t. the block input r0.
template <typename T>
std::vector<double> block_backward(const EmbeddingBlockT<T>& blk, const BlockCacheT<T>& cache,
                                   std::span<const double> upstream, BlockGradsT<T>& sink) {
    const std::size_t d = blk.dim();
    std::vector<double> q(d); // upstream gated by sig(beta), feeds the residual branch
    std::vector<double> d_input(d);
    for (std::size_t j = 0; j < d; ++j) {
        const double ga = sigmoid(static_cast<double>(blk.alpha[j]));
        const double gb = sigmoid(static_cast<double>(blk.beta[j]));
        const double g = upstream[j];
        sink.alpha[j] += g * static_cast<double>(cache.input[j]) * ga * (1.0 - ga);
        sink.beta[j] += g * static_cast<double>(cache.residual_out[j]) * gb * (1.0 - gb);
        q[j] = g * gb;
        d_input[j] = g * ga;
    }
    // dR[i][j] = q_i * hidden_j ; d_hidden = R^T q
    std::vector<double> d_hidden(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        const auto r_row = blk.residual.row(i);
        auto g_row = sink.residual.row(i);
        const double qi = q[i];
        for (std::size_t j = 0; j < d; ++j) {
            g_row[j] += qi * static_cast<double>(cache.hidden[j]);
            d_hidden[j] += static_cast<double>(r_row[j]) * qi;
        }
    }
    for (std::size_t j = 0; j < d; ++j) {
        double m = cache.input[j] > T(0) ? 1.0 : 0.0;
        if (!cache.drop_mask.empty()) m *= cache.drop_mask[j];
        d_input[j] += d_hidden[j] * m;
    }
    return d_input;
}

/// Gradients of the combination output w.r.t. gates and both inputs.
template <typename T>
void combine_backward(const CombinationBlockT<T>& cb, std::span<const T> a, std::span<const T> b,
                      std::span<const double> upstream, CombinationGrads& sink, std::span<double> d_a,
                      std::span<double> d_b) {
    for (std::size_t j = 0; j < cb.dim(); ++j) {
        const double ga = sigmoid(static_cast<double>(cb.alpha[j]));
        const double gb = sigmoid(static_cast<double>(cb.beta[j]));
        const double g = upstream[j];
        sink.alpha[j] += g * static_cast<double>(a[j]) * ga * (1.0 - ga);
        sink.beta[j] += g * static_cast<double>(b[j]) * gb * (1.0 - gb);
        if (!d_a.empty()) d_a[j] += g * ga;
        if (!d_b.empty()) d_b[j] += g * gb;
    }
}

/// Scatter d_r0 into the rows of E touched by the bag r.
inline void bag_embed_backward(const SparseVector& r, std::span<const double> d_r0, SparseRowGrads& e_grads) {
    for (const auto& e : r) {
        auto row = e_grads.row(e.id);
        for (std::size_t j = 0; j < row.size(); ++j) row[j] += static_cast<double>(e.weight) * d_r0[j];
    }
}

} // namespace decaf
