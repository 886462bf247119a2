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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "decaf/common.hpp"

namespace decaf {

/// Bag-of-tokens vector: (token id, weight) entries with token ids strictly
/// increasing and weights finite and positive. Zero entries are omitted.
struct SparseVector {
    struct Entry {
        std::uint32_t id;
        float weight;
        bool operator==(const Entry&) const = default;
    };

    std::vector<Entry> entries;

    std::size_t nnz() const { return entries.size(); }
    bool empty() const { return entries.empty(); }
    auto begin() const { return entries.begin(); }
    auto end() const { return entries.end(); }
    bool operator==(const SparseVector&) const = default;

    void push_back(std::uint32_t id, float weight) { entries.push_back({id, weight}); }

    /// Checks the ordering/finiteness invariants. max_id bounds token ids when
    /// nonzero.
    void validate(std::uint64_t max_id = 0) const {
        std::uint64_t prev = 0;
        bool first = true;
        for (const auto& e : entries) {
            if (!first && e.id <= prev) throw DomainError("sparse vector: token ids not strictly increasing");
            if (max_id != 0 && e.id >= max_id) throw DomainError("sparse vector: token id out of range");
            if (!std::isfinite(e.weight) || e.weight <= 0.0f)
                throw DomainError("sparse vector: weight must be finite and > 0");
            prev = e.id;
            first = false;
        }
    }

    double squared_norm() const {
        double s = 0.0;
        for (const auto& e : entries) s += static_cast<double>(e.weight) * e.weight;
        return s;
    }

    double norm() const { return std::sqrt(squared_norm()); }

    /// In-place L2 normalization; empty vectors stay empty.
    void l2_normalize() {
        const double n = norm();
        if (n == 0.0) return;
        const float inv = static_cast<float>(1.0 / n);
        for (auto& e : entries) e.weight *= inv;
    }
};

/// Merge-join dot product over sorted token ids, 64-bit accumulation.
inline double sparse_dot(const SparseVector& a, const SparseVector& b) {
    double sum = 0.0;
    auto ia = a.entries.begin();
    auto ib = b.entries.begin();
    while (ia != a.entries.end() && ib != b.entries.end()) {
        if (ia->id < ib->id) {
            ++ia;
        } else if (ib->id < ia->id) {
            ++ib;
        } else {
            sum += static_cast<double>(ia->weight) * ib->weight;
            ++ia;
            ++ib;
        }
    }
    return sum;
}

/// Merged sum of sparse vectors; weights of shared tokens add. Entries whose
/// sum cancels to exactly zero are dropped.
inline SparseVector sparse_sum(const std::vector<const SparseVector*>& parts) {
    std::size_t total = 0;
    for (const auto* p : parts) total += p->nnz();
    std::vector<SparseVector::Entry> all;
    all.reserve(total);
    for (const auto* p : parts) all.insert(all.end(), p->entries.begin(), p->entries.end());
    std::sort(all.begin(), all.end(), [](const auto& x, const auto& y) { return x.id < y.id; });
    SparseVector out;
    out.entries.reserve(all.size());
    for (std::size_t i = 0; i < all.size();) {
        std::uint32_t id = all[i].id;
        double w = 0.0;
        while (i < all.size() && all[i].id == id) w += all[i++].weight;
        if (w != 0.0) out.push_back(id, static_cast<float>(w));
    }
    return out;
}

inline SparseVector sparse_sum(const SparseVector& a, const SparseVector& b) {
    return sparse_sum(std::vector<const SparseVector*>{&a, &b});
}

} // namespace decaf
