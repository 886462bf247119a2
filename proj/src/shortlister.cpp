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

#include "decaf/shortlister.hpp"

#include <algorithm>

#include "decaf/common.hpp"

namespace decaf {

MetaProblem build_meta_problem(const Dataset& d, LabelClustering clustering) {
    MetaProblem meta;
    const std::size_t k = clustering.num_clusters();
    require(d.has_label_texts(), "build_meta_problem: dataset has no label texts");

    meta.meta_texts.resize(k);
    for (std::size_t m = 0; m < k; ++m) {
        std::vector<const SparseVector*> parts;
        parts.reserve(clustering.clusters[m].size());
        for (const auto l : clustering.clusters[m]) parts.push_back(&d.label_texts[l]);
        meta.meta_texts[m] = sparse_sum(parts);
    }

    const auto label_cluster = clustering.label_to_cluster(d.num_labels);
    meta.meta_ground_truth.resize(d.num_points);
    for (std::uint64_t i = 0; i < d.num_points; ++i) {
        auto& mg = meta.meta_ground_truth[i];
        for (const auto l : d.ground_truth[i]) mg.push_back(label_cluster[l]);
        std::sort(mg.begin(), mg.end());
        mg.erase(std::unique(mg.begin(), mg.end()), mg.end());
    }
    meta.clustering = std::move(clustering);
    return meta;
}

} // namespace decaf
