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

#include <set>

#include "decaf/gradients.hpp"
#include "decaf/rng.hpp"
#include "decaf/shortlister.hpp"

using namespace decaf;

namespace {

LabelClustering even_clustering(std::uint64_t num_labels, std::size_t k) {
    LabelClustering c;
    c.clusters.resize(k);
    for (std::uint64_t l = 0; l < num_labels; ++l)
        c.clusters[l % k].push_back(static_cast<std::uint32_t>(l));
    for (auto& cluster : c.clusters) std::sort(cluster.begin(), cluster.end());
    std::size_t lv = 0;
    for (std::size_t x = k; x > 1; x >>= 1) ++lv;
    c.levels = static_cast<std::uint32_t>(lv);
    return c;
}

Dataset dataset_with_labels(std::uint64_t n, std::uint64_t v, std::uint64_t l, Rng& rng) {
    Dataset d;
    d.num_points = n;
    d.num_tokens = v;
    d.num_labels = l;
    d.documents.resize(n);
    d.ground_truth.resize(n);
    d.label_texts.resize(l);
    for (std::uint64_t i = 0; i < n; ++i) {
        std::uint32_t id = 0;
        for (int t = 0; t < 3; ++t) {
            id += 1 + static_cast<std::uint32_t>(rng.next_below(v / 4));
            if (id >= v) break;
            d.documents[i].push_back(id, static_cast<float>(rng.next_unit() + 0.1));
        }
        const int gt = 1 + static_cast<int>(rng.next_below(3));
        for (int g = 0; g < gt; ++g) d.ground_truth[i].push_back(static_cast<std::uint32_t>(rng.next_below(l)));
        std::sort(d.ground_truth[i].begin(), d.ground_truth[i].end());
        d.ground_truth[i].erase(std::unique(d.ground_truth[i].begin(), d.ground_truth[i].end()),
                                d.ground_truth[i].end());
    }
    for (std::uint64_t lab = 0; lab < l; ++lab) {
        d.label_texts[lab].push_back(static_cast<std::uint32_t>(lab % v), 1.0f);
        if ((lab + 7) % v != lab % v && (lab + 7) % v > lab % v)
            d.label_texts[lab].push_back(static_cast<std::uint32_t>((lab + 7) % v), 0.5f);
    }
    return d;
}

Shortlister random_shortlister(std::uint64_t num_labels, std::size_t k, std::size_t dim, Rng& rng) {
    Shortlister s;
    s.clustering = even_clustering(num_labels, k);
    s.cluster_classifiers = DenseMatrix(k, dim);
    for (auto& v : s.cluster_classifiers.data()) v = static_cast<float>(rng.next_gaussian());
    return s;
}

DenseMatrix random_embeddings(std::size_t n, std::size_t dim, Rng& rng) {
    DenseMatrix e(n, dim);
    for (auto& v : e.data()) v = static_cast<float>(rng.next_unit());
    return e;
}

} // namespace

TEST_CASE("build_meta_problem: texts merge and ground truth lifts") {
    Rng rng(3);
    auto d = dataset_with_labels(4, 16, 6, rng);
    // Labels 0 and 1 with disjoint tokens, forced into one cluster.
    d.label_texts[0] = SparseVector{};
    d.label_texts[0].push_back(1, 1.0f);
    d.label_texts[1] = SparseVector{};
    d.label_texts[1].push_back(5, 2.0f);
    // Shared token between labels 2 and 3 (same cluster below).
    d.label_texts[2] = SparseVector{};
    d.label_texts[2].push_back(7, 1.0f);
    d.label_texts[3] = SparseVector{};
    d.label_texts[3].push_back(7, 0.25f);

    LabelClustering clustering;
    clustering.levels = 1;
    clustering.clusters = {{0, 1}, {2, 3, 4, 5}};
    d.ground_truth[0] = {1};
    d.ground_truth[1] = {2, 5};
    d.ground_truth[2] = {0, 3};
    d.ground_truth[3] = {};

    const auto meta = build_meta_problem(d, clustering);
    // Disjoint tokens both present.
    REQUIRE(meta.meta_texts[0].nnz() == 2);
    CHECK(meta.meta_texts[0].entries[0].id == 1);
    CHECK(meta.meta_texts[0].entries[1].id == 5);
    // Shared token weight is the sum.
    bool found = false;
    for (const auto& e : meta.meta_texts[1])
        if (e.id == 7) {
            CHECK(e.weight == doctest::Approx(1.25));
            found = true;
        }
    CHECK(found);
    // Meta ground truth: cluster of each positive label.
    CHECK(meta.meta_ground_truth[0] == std::vector<std::uint32_t>{0});
    CHECK(meta.meta_ground_truth[1] == std::vector<std::uint32_t>{1});
    CHECK(meta.meta_ground_truth[2] == std::vector<std::uint32_t>{0, 1});
    CHECK(meta.meta_ground_truth[3].empty());
}

TEST_CASE("meta ground truth consistency property on random instances") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        auto d = dataset_with_labels(20, 24, 16, rng);
        LabelClustering clustering = even_clustering(16, 4);
        const auto meta = build_meta_problem(d, clustering);
        const auto label_cluster = clustering.label_to_cluster(d.num_labels);
        for (std::uint64_t i = 0; i < d.num_points; ++i) {
            std::set<std::uint32_t> expect;
            for (const auto l : d.ground_truth[i]) expect.insert(label_cluster[l]);
            const std::set<std::uint32_t> got(meta.meta_ground_truth[i].begin(),
                                              meta.meta_ground_truth[i].end());
            CHECK(got == expect);
        }
    }
}

TEST_CASE("module-one meta classifier is the label block applied to the meta text") {
    Rng rng(7);
    auto d = dataset_with_labels(4, 16, 4, rng);
    ModelT<float> m;
    m.dim = 5;
    m.num_tokens = d.num_tokens;
    m.num_labels = d.num_labels;
    m.tokens = TokenEmbeddingsT<float>(d.num_tokens, m.dim);
    m.tokens.init_random(rng);
    m.doc_block = EmbeddingBlockT<float>(m.dim);
    m.label_block = EmbeddingBlockT<float>(m.dim);
    for (auto& v : m.label_block.residual.data()) v = static_cast<float>(rng.next_gaussian() * 0.3);
    m.classifier_gates = CombinationBlockT<float>(m.dim);
    m.meta_gates = CombinationBlockT<float>(m.dim);
    m.refinement = DenseMatrix(d.num_labels, m.dim);
    m.label_texts = d.label_texts;

    LabelClustering clustering = even_clustering(4, 2);
    auto meta = build_meta_problem(d, clustering);
    m.meta_refinement = DenseMatrix(2, m.dim);

    const auto h = materialize_meta_classifiers(m, meta, MetaForm::text_constrained);
    for (std::size_t c = 0; c < 2; ++c) {
        const auto expect = block_forward(m.label_block, bag_embed(m.tokens, meta.meta_texts[c]));
        for (std::size_t j = 0; j < m.dim; ++j) CHECK(h(c, j) == expect[j]);
    }

    // Single-label cluster: h equals the label embedding of that label text.
    LabelClustering single;
    single.levels = 2;
    single.clusters = {{0}, {1}, {2}, {3}};
    auto meta_single = build_meta_problem(d, single);
    m.meta_refinement = DenseMatrix(4, m.dim);
    const auto h_single = materialize_meta_classifiers(m, meta_single, MetaForm::text_constrained);
    const auto expect = m.embed_label(d.label_texts[2]);
    for (std::size_t j = 0; j < m.dim; ++j) CHECK(h_single(2, j) == expect[j]);

    // Empty meta text: block applied to the zero vector. Cluster 0 holds
    // labels {0, 2} under the even clustering.
    auto d_empty = d;
    d_empty.label_texts[0] = SparseVector{};
    d_empty.label_texts[2] = SparseVector{};
    auto meta_empty = build_meta_problem(d_empty, clustering);
    ModelT<float> m_empty = m;
    m_empty.label_texts = d_empty.label_texts;
    m_empty.meta_refinement = DenseMatrix(2, m.dim);
    const auto h_empty = materialize_meta_classifiers(m_empty, meta_empty, MetaForm::text_constrained);
    const auto zero_out = block_forward(m.label_block, std::vector<float>(m.dim, 0.0f));
    for (std::size_t j = 0; j < m.dim; ++j) CHECK(h_empty(0, j) == zero_out[j]);
}

TEST_CASE("module-two meta classifier gates refinement and text parts") {
    Rng rng(11);
    auto d = dataset_with_labels(4, 16, 4, rng);
    ModelT<float> m;
    m.dim = 4;
    m.num_tokens = d.num_tokens;
    m.num_labels = d.num_labels;
    m.tokens = TokenEmbeddingsT<float>(d.num_tokens, m.dim);
    m.tokens.init_random(rng);
    m.doc_block = EmbeddingBlockT<float>(m.dim);
    m.label_block = EmbeddingBlockT<float>(m.dim);
    m.classifier_gates = CombinationBlockT<float>(m.dim);
    m.meta_gates = CombinationBlockT<float>(m.dim); // gates at 0
    m.refinement = DenseMatrix(d.num_labels, m.dim);
    m.label_texts = d.label_texts;

    LabelClustering clustering = even_clustering(4, 2);
    auto meta = build_meta_problem(d, clustering);
    m.meta_refinement = DenseMatrix(2, m.dim);
    Rng r2(13);
    for (auto& v : m.meta_refinement.data()) v = static_cast<float>(r2.next_gaussian());

    // u1_c = sum of member label embeddings.
    std::vector<std::vector<float>> u1(2, std::vector<float>(m.dim, 0.0f));
    for (std::size_t c = 0; c < 2; ++c)
        for (const auto l : clustering.clusters[c]) {
            const auto z1 = m.embed_label(d.label_texts[l]);
            for (std::size_t j = 0; j < m.dim; ++j) u1[c][j] += z1[j];
        }

    // Gates at 0: h = 0.5 (u2 + u1).
    const auto h = materialize_meta_classifiers(m, meta, MetaForm::refined);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t j = 0; j < m.dim; ++j)
            CHECK(h(c, j) == doctest::Approx(0.5 * (m.meta_refinement(c, j) + u1[c][j])).epsilon(1e-6));

    // u2 = 0: pure text part scaled by sig(beta).
    ModelT<float> m_zero = m;
    m_zero.meta_refinement.fill(0.0f);
    std::fill(m_zero.meta_gates.beta.begin(), m_zero.meta_gates.beta.end(), 1.5f);
    const auto h_zero = materialize_meta_classifiers(m_zero, meta, MetaForm::refined);
    const double gb = sigmoid(1.5);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t j = 0; j < m.dim; ++j)
            CHECK(h_zero(c, j) == doctest::Approx(gb * u1[c][j]).epsilon(1e-5));
}

TEST_CASE("shortlist: B=K returns every label; sign selects the cluster; ties break by id") {
    Rng rng(17);
    const std::uint64_t num_labels = 24;
    auto s = random_shortlister(num_labels, 8, 6, rng);
    std::vector<float> x(6);
    for (auto& v : x) v = static_cast<float>(rng.next_gaussian());

    const auto full = shortlist(s, std::span<const float>(x), 8);
    CHECK(full.label_ids.size() == num_labels);
    for (std::size_t i = 1; i < full.cluster_ids.size(); ++i)
        CHECK(full.cluster_ids[i - 1].second >= full.cluster_ids[i].second);

    // Two clusters, h1 = x, h2 = -x: beam 1 picks cluster 0.
    Shortlister two;
    two.clustering = even_clustering(4, 2);
    two.cluster_classifiers = DenseMatrix(2, 6);
    for (std::size_t j = 0; j < 6; ++j) {
        two.cluster_classifiers(0, j) = x[j];
        two.cluster_classifiers(1, j) = -x[j];
    }
    const auto one = shortlist(two, std::span<const float>(x), 1);
    REQUIRE(one.cluster_ids.size() == 1);
    CHECK(one.cluster_ids[0].first == 0);

    // All-zero classifiers: every score ties, ascending cluster ids win.
    Shortlister zero;
    zero.clustering = even_clustering(12, 4);
    zero.cluster_classifiers = DenseMatrix(4, 6);
    const auto tied = shortlist(zero, std::span<const float>(x), 2);
    REQUIRE(tied.cluster_ids.size() == 2);
    CHECK(tied.cluster_ids[0].first == 0);
    CHECK(tied.cluster_ids[1].first == 1);

    CHECK_THROWS_AS(shortlist(s, std::span<const float>(x), 0), DomainError);
    CHECK_THROWS_AS(shortlist(s, std::span<const float>(x), 9), DomainError);
}

TEST_CASE("recall: full beam reaches 1, matches brute force, monotone in B") {
    Rng rng(19);
    for (int trial = 0; trial < 10; ++trial) {
        auto d = dataset_with_labels(30, 20, 16, rng);
        auto s = random_shortlister(16, 8, 5, rng);
        const auto embeddings = random_embeddings(30, 5, rng);

        CHECK(recall_at_shortlist(s, d, embeddings, 8) == 1.0);

        double prev = 0.0;
        for (std::uint32_t b = 1; b <= 8; ++b) {
            // Brute force: count positives inside the shortlisted clusters.
            std::uint64_t covered = 0, total = 0;
            for (std::uint64_t i = 0; i < d.num_points; ++i) {
                const auto sl = shortlist(s, std::span<const float>(embeddings.row(i)), b);
                for (const auto l : d.ground_truth[i]) {
                    ++total;
                    if (std::binary_search(sl.label_ids.begin(), sl.label_ids.end(), l)) ++covered;
                }
            }
            const double brute = total > 0 ? static_cast<double>(covered) / total : 1.0;
            const double got = recall_at_shortlist(s, d, embeddings, b);
            CHECK(got == doctest::Approx(brute).epsilon(1e-12));
            CHECK(got >= prev - 1e-12);
            prev = got;
        }
    }
}

TEST_CASE("select_beam returns the minimal beam, verified by exhaustive scan") {
    Rng rng(23);
    for (int trial = 0; trial < 10; ++trial) {
        auto d = dataset_with_labels(25, 20, 16, rng);
        auto s = random_shortlister(16, 8, 5, rng);
        const auto embeddings = random_embeddings(25, 5, rng);
        for (const double target : {0.0, 0.3, 0.6, 0.85, 1.0}) {
            const auto b = select_beam(s, d, embeddings, target);
            // exhaustive scan
            std::uint32_t expect = 8;
            for (std::uint32_t cand = 1; cand <= 8; ++cand) {
                if (recall_at_shortlist(s, d, embeddings, cand) >= target) {
                    expect = cand;
                    break;
                }
            }
            CHECK(b == expect);
            if (target == 0.0) CHECK(b == 1);
        }
    }
}

TEST_CASE("shortlist size equals the sum of chosen cluster sizes") {
    Rng rng(29);
    auto s = random_shortlister(21, 4, 5, rng); // uneven clusters: 21 over 4
    std::vector<float> x(5);
    for (auto& v : x) v = static_cast<float>(rng.next_gaussian());
    for (std::uint32_t b = 1; b <= 4; ++b) {
        const auto sl = shortlist(s, std::span<const float>(x), b);
        std::size_t expect = 0;
        for (const auto& [c, score] : sl.cluster_ids) expect += s.clustering.clusters[c].size();
        CHECK(sl.label_ids.size() == expect);
        const auto dup = std::adjacent_find(sl.label_ids.begin(), sl.label_ids.end());
        CHECK(dup == sl.label_ids.end());
    }
}
