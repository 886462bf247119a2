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
#include <queue>
#include <vector>

#include "decaf/clustering.hpp"
#include "decaf/linalg.hpp"
#include "decaf/sparse.hpp"

namespace decaf {

/// The auxiliary multi-label problem induced by a label clustering: each
/// cluster becomes a meta-label whose text is the token-wise sum of its
/// member label texts, and a document is positive for a meta-label iff it is
/// positive for at least one member.
struct MetaProblem {
    LabelClustering clustering;
    std::vector<SparseVector> meta_texts;                    // u_m, K rows
    std::vector<std::vector<std::uint32_t>> meta_ground_truth; // per document, sorted
};

MetaProblem build_meta_problem(const Dataset& d, LabelClustering clustering);

/// Cluster-level candidates for one document plus the union of member labels.
struct Shortlist {
    std::vector<std::pair<std::uint32_t, double>> cluster_ids; // (id, score), scores non-increasing
    std::vector<std::uint32_t> label_ids;                      // sorted, duplicate-free
};

/// Frozen cluster scorer: a balanced clustering plus one D-dim classifier per
/// cluster.
template <typename T>
struct ShortlisterT {
    LabelClustering clustering;
    DenseMatrixT<T> cluster_classifiers; // K x D, row m = h_m
    std::uint32_t default_beam = 0;

    std::size_t num_clusters() const { return clustering.num_clusters(); }
    std::size_t dim() const { return cluster_classifiers.cols(); }

    /// <h_m, x> for all clusters.
    std::vector<double> scores(std::span<const T> doc_embedding) const {
        std::vector<double> s(num_clusters());
        for (std::size_t m = 0; m < s.size(); ++m)
            s[m] = dot(cluster_classifiers.row(m), doc_embedding);
        return s;
    }
};

using Shortlister = ShortlisterT<float>;

/// Exact top-B clusters by score via a bounded heap, ties broken by ascending
/// cluster id. Returned label_ids are the union of member labels.
template <typename T>
Shortlist shortlist(const ShortlisterT<T>& s, std::span<const T> doc_embedding, std::uint32_t beam) {
    const std::size_t k = s.num_clusters();
    require(beam >= 1 && beam <= k, "shortlist: beam out of range");

    using Item = std::pair<double, std::uint32_t>;
    // Worst kept item on top: lowest score, then highest id.
    const auto worse = [](const Item& a, const Item& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    };
    std::priority_queue<Item, std::vector<Item>, decltype(worse)> heap(worse);
    for (std::size_t m = 0; m < k; ++m) {
        const double score = dot(s.cluster_classifiers.row(m), doc_embedding);
        const Item item{score, static_cast<std::uint32_t>(m)};
        if (heap.size() < beam) {
            heap.push(item);
        } else if (worse(item, heap.top())) {
            heap.pop();
            heap.push(item);
        }
    }

    Shortlist out;
    out.cluster_ids.resize(heap.size());
    for (std::size_t i = heap.size(); i-- > 0;) {
        out.cluster_ids[i] = {heap.top().second, heap.top().first};
        heap.pop();
    }
    std::size_t total = 0;
    for (const auto& [m, score] : out.cluster_ids) total += s.clustering.clusters[m].size();
    out.label_ids.reserve(total);
    for (const auto& [m, score] : out.cluster_ids)
        out.label_ids.insert(out.label_ids.end(), s.clustering.clusters[m].begin(), s.clustering.clusters[m].end());
    std::sort(out.label_ids.begin(), out.label_ids.end());
    return out;
}

/// Per-document rank of each positive pair's cluster in the score ordering.
/// recall(B) is the prefix sum of this histogram over ranks < B divided by
/// the number of positive pairs; computing it once makes every beam size
/// cheap.
struct RecallCurve {
    std::vector<std::uint64_t> covered_at; // covered_at[b] = positives covered with beam b+1
    std::uint64_t total_positives = 0;

    double recall(std::uint32_t beam) const {
        if (total_positives == 0) return 1.0;
        return static_cast<double>(covered_at[beam - 1]) / static_cast<double>(total_positives);
    }
};

/// doc_embeddings holds one evaluation-mode embedding per document, row i for
/// document i.
template <typename T>
RecallCurve recall_curve(const ShortlisterT<T>& s, const Dataset& d, const DenseMatrixT<T>& doc_embeddings) {
    const std::size_t k = s.num_clusters();
    const auto label_cluster = s.clustering.label_to_cluster(d.num_labels);
    RecallCurve curve;
    std::vector<std::uint64_t> hist(k, 0);

    std::vector<std::uint32_t> order(k), rank(k);
    for (std::uint64_t i = 0; i < d.num_points; ++i) {
        if (d.ground_truth[i].empty()) continue;
        const auto scores = s.scores(doc_embeddings.row(i));
        for (std::size_t m = 0; m < k; ++m) order[m] = static_cast<std::uint32_t>(m);
        std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
            if (scores[a] != scores[b]) return scores[a] > scores[b];
            return a < b;
        });
        for (std::size_t r = 0; r < k; ++r) rank[order[r]] = static_cast<std::uint32_t>(r);
        for (const auto l : d.ground_truth[i]) {
            ++hist[rank[label_cluster[l]]];
            ++curve.total_positives;
        }
    }
    curve.covered_at.resize(k);
    std::uint64_t acc = 0;
    for (std::size_t b = 0; b < k; ++b) {
        acc += hist[b];
        curve.covered_at[b] = acc;
    }
    return curve;
}

/// Fraction of positive (document, label) pairs whose label lands in the
/// top-B clusters.
template <typename T>
double recall_at_shortlist(const ShortlisterT<T>& s, const Dataset& d, const DenseMatrixT<T>& doc_embeddings,
                           std::uint32_t beam) {
    require(beam >= 1 && beam <= s.num_clusters(), "recall_at_shortlist: beam out of range");
    return recall_curve(s, d, doc_embeddings).recall(beam);
}

/// Smallest B whose training-set recall reaches the target (recall is
/// non-decreasing in B and hits 1 at B = K).
template <typename T>
std::uint32_t select_beam(const ShortlisterT<T>& s, const Dataset& d, const DenseMatrixT<T>& doc_embeddings,
                          double target_recall) {
    const auto curve = recall_curve(s, d, doc_embeddings);
    const std::uint32_t k = static_cast<std::uint32_t>(s.num_clusters());
    for (std::uint32_t b = 1; b <= k; ++b)
        if (curve.recall(b) >= target_recall) return b;
    return k;
}

} // namespace decaf
