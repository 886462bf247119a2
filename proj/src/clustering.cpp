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

#include "decaf/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "decaf/common.hpp"

namespace decaf {

namespace {

constexpr double kObjectiveTol = 1e-4;
constexpr int kMaxSplitIters = 20;

double centroid_dot(const LabelCentroids& c, std::uint32_t label, const std::vector<double>& mean) {
    if (c.dense) return dot(c.dense_rows.row(label), std::span<const double>(mean));
    double s = 0.0;
    for (const auto& e : c.sparse_rows[label]) s += static_cast<double>(e.weight) * mean[e.id];
    return s;
}

void centroid_add(const LabelCentroids& c, std::uint32_t label, std::vector<double>& mean) {
    if (c.dense) {
        const auto row = c.dense_rows.row(label);
        for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += row[j];
    } else {
        for (const auto& e : c.sparse_rows[label]) mean[e.id] += e.weight;
    }
}

void normalize(std::vector<double>& v) {
    const double n = std::sqrt(dot(v, v));
    if (n == 0.0) return;
    for (auto& x : v) x /= n;
}

} // namespace

std::vector<std::uint32_t> LabelClustering::label_to_cluster(std::uint64_t num_labels) const {
    std::vector<std::uint32_t> map(num_labels, 0);
    for (std::size_t m = 0; m < clusters.size(); ++m)
        for (const auto l : clusters[m]) map[l] = static_cast<std::uint32_t>(m);
    return map;
}

LabelCentroids centroids_sparse(const Dataset& d) {
    LabelCentroids out;
    out.dim = d.num_tokens;
    out.dense = false;
    out.zero_norm.assign(d.num_labels, 0);

    std::vector<std::vector<const SparseVector*>> per_label(d.num_labels);
    for (std::uint64_t i = 0; i < d.num_points; ++i)
        for (const auto l : d.ground_truth[i]) per_label[l].push_back(&d.documents[i]);

    out.sparse_rows.resize(d.num_labels);
    for (std::uint64_t l = 0; l < d.num_labels; ++l) {
        SparseVector c = sparse_sum(per_label[l]);
        c.l2_normalize();
        if (c.empty()) out.zero_norm[l] = 1;
        out.sparse_rows[l] = std::move(c);
    }
    return out;
}

LabelCentroids centroids_dense(const Dataset& d, const TokenEmbeddingsT<float>& emb) {
    LabelCentroids out;
    out.dim = emb.dim();
    out.dense = true;
    out.zero_norm.assign(d.num_labels, 0);
    out.dense_rows = DenseMatrix(d.num_labels, emb.dim());

    std::vector<std::vector<double>> acc(d.num_labels);
    for (std::uint64_t i = 0; i < d.num_points; ++i) {
        if (d.ground_truth[i].empty()) continue;
        const auto x0 = bag_embed(emb, d.documents[i]);
        for (const auto l : d.ground_truth[i]) {
            if (acc[l].empty()) acc[l].assign(emb.dim(), 0.0);
            for (std::size_t j = 0; j < x0.size(); ++j) acc[l][j] += x0[j];
        }
    }
    for (std::uint64_t l = 0; l < d.num_labels; ++l) {
        if (acc[l].empty()) {
            out.zero_norm[l] = 1;
            continue;
        }
        const double n = std::sqrt(dot(acc[l], acc[l]));
        if (n == 0.0) {
            out.zero_norm[l] = 1;
            continue;
        }
        auto row = out.dense_rows.row(l);
        for (std::size_t j = 0; j < row.size(); ++j) row[j] = static_cast<float>(acc[l][j] / n);
    }
    return out;
}

SplitResult balanced_split(const LabelCentroids& centroids, const std::vector<std::uint32_t>& members, Rng rng) {
    const std::size_t n = members.size();
    require(n >= 2, "balanced_split: need at least 2 members");

    std::vector<std::uint32_t> live; // members with a usable direction
    std::vector<std::uint32_t> zero;
    for (const auto l : members)
        (centroids.zero_norm[l] ? zero : live).push_back(l);

    const std::size_t quota1 = (n + 1) / 2;
    SplitResult res;

    // Zero-norm members are placed at random, respecting the quota.
    std::vector<std::uint32_t> zero_side1, zero_side2;
    if (!zero.empty()) {
        rng.shuffle(zero);
        std::size_t z1 = std::min<std::size_t>(zero.size() / 2 + (zero.size() % 2 ? rng.next_below(2) : 0),
                                               quota1);
        // Never assign more zeros to a side than it has room for live members.
        z1 = std::min(z1, quota1);
        const std::size_t z2_cap = n - quota1;
        if (zero.size() - z1 > z2_cap) z1 = zero.size() - z2_cap;
        zero_side1.assign(zero.begin(), zero.begin() + z1);
        zero_side2.assign(zero.begin() + z1, zero.end());
    }
    const std::size_t live_quota1 = quota1 - zero_side1.size();

    if (live.size() < 2) {
        // Degenerate geometry; only the balance contract applies.
        std::vector<std::uint32_t> all = live;
        all.insert(all.end(), zero_side1.begin(), zero_side1.end());
        all.insert(all.end(), zero_side2.begin(), zero_side2.end());
        res.side1.assign(all.begin(), all.begin() + quota1);
        res.side2.assign(all.begin() + quota1, all.end());
        std::sort(res.side1.begin(), res.side1.end());
        std::sort(res.side2.begin(), res.side2.end());
        return res;
    }

    // Two distinct random members seed the centers.
    const std::size_t c0 = rng.next_below(live.size());
    std::size_t c1 = c0;
    while (c1 == c0) c1 = rng.next_below(live.size());

    std::vector<double> mean1(centroids.dim, 0.0), mean2(centroids.dim, 0.0);
    centroid_add(centroids, live[c0], mean1);
    centroid_add(centroids, live[c1], mean2);
    normalize(mean1);
    normalize(mean2);

    struct Scored {
        double delta;
        std::uint32_t label;
    };
    std::vector<Scored> scored(live.size());
    std::vector<std::uint8_t> assign(live.size(), 0), prev_assign;
    double prev_objective = -std::numeric_limits<double>::infinity();

    for (int iter = 0; iter < kMaxSplitIters; ++iter) {
        for (std::size_t k = 0; k < live.size(); ++k) {
            const double d1 = centroid_dot(centroids, live[k], mean1);
            const double d2 = centroid_dot(centroids, live[k], mean2);
            scored[k] = {d1 - d2, live[k]};
        }
        std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
            if (a.delta != b.delta) return a.delta > b.delta;
            return a.label < b.label;
        });

        prev_assign = assign;
        std::fill(mean1.begin(), mean1.end(), 0.0);
        std::fill(mean2.begin(), mean2.end(), 0.0);
        for (std::size_t k = 0; k < scored.size(); ++k) {
            const bool to_side1 = k < live_quota1;
            const auto label = scored[k].label;
            const auto pos = static_cast<std::size_t>(std::lower_bound(live.begin(), live.end(), label) - live.begin());
            assign[pos] = to_side1 ? 0 : 1;
            centroid_add(centroids, label, to_side1 ? mean1 : mean2);
        }
        normalize(mean1);
        normalize(mean2);

        double objective = 0.0;
        for (std::size_t k = 0; k < live.size(); ++k)
            objective += centroid_dot(centroids, live[k], assign[k] == 0 ? mean1 : mean2);
        res.objective_trace.push_back(objective);
        res.iterations = iter + 1;

        const bool fixed = iter > 0 && assign == prev_assign;
        const bool converged =
            iter > 0 && std::abs(objective - prev_objective) <= kObjectiveTol * std::max(1.0, std::abs(prev_objective));
        prev_objective = objective;
        if (fixed || converged) break;
    }

    for (std::size_t k = 0; k < live.size(); ++k)
        (assign[k] == 0 ? res.side1 : res.side2).push_back(live[k]);
    res.side1.insert(res.side1.end(), zero_side1.begin(), zero_side1.end());
    res.side2.insert(res.side2.end(), zero_side2.begin(), zero_side2.end());
    std::sort(res.side1.begin(), res.side1.end());
    std::sort(res.side2.begin(), res.side2.end());
    return res;
}

namespace {

void split_recursive(const LabelCentroids& centroids, std::vector<std::uint32_t> members, std::uint32_t level,
                     const Rng& node_rng, std::vector<std::vector<std::uint32_t>>& leaves) {
    if (level == 0) {
        leaves.push_back(std::move(members));
        return;
    }
    auto split = balanced_split(centroids, members, node_rng.derive(0));
    split_recursive(centroids, std::move(split.side1), level - 1, node_rng.derive(1), leaves);
    split_recursive(centroids, std::move(split.side2), level - 1, node_rng.derive(2), leaves);
}

} // namespace

LabelClustering hierarchical_cluster(const LabelCentroids& centroids, std::uint32_t num_levels, Rng rng) {
    const std::uint64_t num_labels = centroids.count();
    const std::uint64_t k = 1ull << num_levels;
    require(num_labels >= k, "hierarchical_cluster: fewer labels than leaf clusters");

    std::vector<std::uint32_t> all(num_labels);
    for (std::uint64_t l = 0; l < num_labels; ++l) all[l] = static_cast<std::uint32_t>(l);

    LabelClustering out;
    out.levels = num_levels;
    if (num_levels == 0) {
        out.clusters.push_back(std::move(all));
        return out;
    }
    out.clusters.reserve(k);
    split_recursive(centroids, std::move(all), num_levels, rng, out.clusters);
    return out;
}

void write_clusters_file(const LabelClustering& c, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    for (const auto& cluster : c.clusters) {
        for (std::size_t i = 0; i < cluster.size(); ++i) out << (i ? "," : "") << cluster[i];
        out << "\n";
    }
}

LabelClustering read_clusters_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    LabelClustering c;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::vector<std::uint32_t> cluster;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ','))
            if (!tok.empty()) cluster.push_back(static_cast<std::uint32_t>(std::stoul(tok)));
        c.clusters.push_back(std::move(cluster));
    }
    std::size_t k = c.clusters.size();
    while (k > 1) {
        require(k % 2 == 0, "clusters file: count is not a power of two");
        k /= 2;
        ++c.levels;
    }
    return c;
}

} // namespace decaf
