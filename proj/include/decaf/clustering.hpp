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
#include <string>
#include <vector>

#include "decaf/corpus.hpp"
#include "decaf/embedding.hpp"
#include "decaf/linalg.hpp"
#include "decaf/rng.hpp"
#include "decaf/sparse.hpp"

namespace decaf {

/// One L2-normalized centroid per label, either sparse bag-of-tokens rows
/// (aggregated document features) or dense D-dim rows (aggregated token
/// embeddings). Labels with no positives keep a zero centroid and are flagged
/// for random side assignment during splits.
struct LabelCentroids {
    std::size_t dim = 0;
    bool dense = false;
    std::vector<SparseVector> sparse_rows;
    DenseMatrix dense_rows;
    std::vector<std::uint8_t> zero_norm;

    std::size_t count() const { return dense ? dense_rows.rows() : sparse_rows.size(); }
};

/// Flat set of K disjoint sorted label-id lists covering [0, L).
struct LabelClustering {
    std::vector<std::vector<std::uint32_t>> clusters;
    std::uint32_t levels = 0;

    std::size_t num_clusters() const { return clusters.size(); }

    /// cluster id for each label.
    std::vector<std::uint32_t> label_to_cluster(std::uint64_t num_labels) const;
};

/// c_l = sum of x_i over positive documents of l, L2-normalized.
LabelCentroids centroids_sparse(const Dataset& d);

/// c_l = sum of E x_i over positive documents, L2-normalized.
LabelCentroids centroids_dense(const Dataset& d, const TokenEmbeddingsT<float>& emb);

struct SplitResult {
    std::vector<std::uint32_t> side1; // ceil(n/2) members
    std::vector<std::uint32_t> side2; // floor(n/2) members
    int iterations = 0;
    std::vector<double> objective_trace; // sum of within-side similarities per iteration
};

/// Constrained spherical 2-means over the given member labels: centers start
/// at two distinct random members, then alternate (sort by similarity
/// difference, assign top ceil(n/2) to side 1, recompute normalized means)
/// until the assignment is fixed, the objective's relative change drops below
/// 1e-4, or 20 iterations. Ties in the similarity difference break by
/// ascending label id; zero-norm members are distributed at random within the
/// balance constraint.
SplitResult balanced_split(const LabelCentroids& centroids, const std::vector<std::uint32_t>& members, Rng rng);

/// Recursive balanced splitting num_levels deep; returns the 2^num_levels
/// leaf clusters (the hierarchy itself is discarded). Deterministic given the
/// seed: each node derives its own stream from (parent stream, child index).
LabelClustering hierarchical_cluster(const LabelCentroids& centroids, std::uint32_t num_levels, Rng rng);

void write_clusters_file(const LabelClustering& c, const std::string& path);
LabelClustering read_clusters_file(const std::string& path);

} // namespace decaf
