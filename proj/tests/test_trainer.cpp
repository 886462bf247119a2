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
#include <filesystem>
#include <fstream>

#include "decaf/gradients.hpp"
#include "decaf/inference.hpp"
#include "decaf/trainer.hpp"

using namespace decaf;

namespace {

// Two token groups with disjoint supports; labels split across the groups.
// Documents draw tokens from their label's group only, so the 2-cluster meta
// problem is linearly separable.
Dataset separable_dataset(std::uint64_t n, Rng rng) {
    const std::uint64_t v = 32, l = 8;
    Dataset d;
    d.num_points = n;
    d.num_tokens = v;
    d.num_labels = l;
    d.documents.resize(n);
    d.ground_truth.resize(n);
    d.label_texts.resize(l);
    for (std::uint64_t lab = 0; lab < l; ++lab) {
        const std::uint32_t base = lab < 4 ? 0 : 16;
        d.label_texts[lab].push_back(base + static_cast<std::uint32_t>(lab) % 4 * 2, 1.0f);
        d.label_texts[lab].push_back(base + static_cast<std::uint32_t>(lab) % 4 * 2 + 1, 0.7f);
    }
    for (std::uint64_t i = 0; i < n; ++i) {
        const std::uint32_t lab = static_cast<std::uint32_t>(rng.next_below(l));
        const std::uint32_t base = lab < 4 ? 0 : 16;
        std::vector<std::uint32_t> toks;
        toks.push_back(base + lab % 4 * 2);
        toks.push_back(base + lab % 4 * 2 + 1);
        toks.push_back(base + static_cast<std::uint32_t>(rng.next_below(16)));
        std::sort(toks.begin(), toks.end());
        toks.erase(std::unique(toks.begin(), toks.end()), toks.end());
        for (const auto t : toks) d.documents[i].push_back(t, static_cast<float>(0.4 + rng.next_unit()));
        d.ground_truth[i] = {lab};
    }
    return d;
}

// Desk-scale settings: small batches buy enough optimizer steps per epoch.
TrainConfig small_config() {
    TrainConfig cfg;
    cfg.dim = 8;
    cfg.clusters = 2;
    cfg.batch_size = 16;
    cfg.module1_epochs = 15;
    cfg.module1_lr = 0.02;
    cfg.module2_epochs = 8;
    cfg.module2_lr = 0.02;
    cfg.module4_epochs = 25;
    cfg.module4_lr = 0.02;
    cfg.dropout_module1 = 0.2;
    cfg.dropout_rest = 0.1;
    cfg.ensemble = 1;
    cfg.threads = 1;
    cfg.seed = 1234;
    return cfg;
}

double meta_p_at_1(const Model& m, const Dataset& d) {
    const auto meta = build_meta_problem(d, m.shortlister.clustering);
    std::uint64_t hits = 0, total = 0;
    for (std::uint64_t i = 0; i < d.num_points; ++i) {
        if (meta.meta_ground_truth[i].empty()) continue;
        ++total;
        const auto x = m.embed_document(d.documents[i]);
        const auto scores = m.shortlister.scores(std::span<const float>(x));
        const std::size_t best = static_cast<std::size_t>(
            std::max_element(scores.begin(), scores.end()) - scores.begin());
        if (std::binary_search(meta.meta_ground_truth[i].begin(), meta.meta_ground_truth[i].end(),
                               static_cast<std::uint32_t>(best)))
            ++hits;
    }
    return total > 0 ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

std::string file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

} // namespace

TEST_CASE("logistic loss: ln 2 at zero, saturation, finite-difference gradient") {
    CHECK(logistic_loss_and_grad(0.0, +1).first == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(logistic_loss_and_grad(50.0, +1).first == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(logistic_loss_and_grad(-50.0, -1).first == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(std::isfinite(logistic_loss_and_grad(-1000.0, +1).first));

    Rng rng(3);
    const double h = 1e-6;
    for (int trial = 0; trial < 20; ++trial) {
        const double score = (rng.next_unit() - 0.5) * 20.0;
        const int y = rng.next_below(2) == 0 ? -1 : +1;
        const auto [loss, grad] = logistic_loss_and_grad(score, y);
        const double fd =
            (logistic_loss_and_grad(score + h, y).first - logistic_loss_and_grad(score - h, y).first) / (2 * h);
        CHECK(std::abs(grad - fd) / std::max({1e-9, std::abs(grad), std::abs(fd)}) < 1e-6);
        CHECK(loss >= 0.0);
    }
}

TEST_CASE("module one: degenerate single-cluster problem reaches meta P@1 = 1") {
    auto cfg = small_config();
    cfg.clusters = 1;
    cfg.module1_epochs = 4;
    const auto d = separable_dataset(80, Rng(5));
    const auto m = train_module1(d, cfg, stage_rng_module1(cfg));
    CHECK(m.num_clusters() == 1);
    CHECK(meta_p_at_1(m, d) == 1.0);
}

TEST_CASE("module one: separable two-cluster synthetic trains to high meta P@1") {
    auto cfg = small_config();
    const auto d = separable_dataset(200, Rng(7));
    const auto m = train_module1(d, cfg, stage_rng_module1(cfg));
    CHECK(meta_p_at_1(m, d) >= 0.95);

    // Spectral contract on the residual blocks after training.
    Rng probe(1);
    std::vector<double> u_doc, u_label;
    CHECK(power_iteration(m.doc_block.residual, u_doc, 20, probe) <= 1.0 + 1e-3);
    CHECK(power_iteration(m.label_block.residual, u_label, 20, probe) <= 1.0 + 1e-3);
}

TEST_CASE("module one loss decreases over the first epochs (median over seeds)") {
    int improved = 0;
    for (std::uint64_t seed : {11ull, 22ull, 33ull}) {
        auto cfg = small_config();
        cfg.seed = seed;
        cfg.module1_epochs = 5;
        StageLog log;
        const auto d = separable_dataset(150, Rng(seed + 1));
        train_module1(d, cfg, stage_rng_module1(cfg), &log);
        REQUIRE(log.epoch_mean_loss.size() == 5);
        if (log.epoch_mean_loss.back() < log.epoch_mean_loss.front()) ++improved;
    }
    CHECK(improved >= 2);
}

TEST_CASE("module two: cache recall meets the target and always contains positives") {
    auto cfg = small_config();
    cfg.target_recall = 0.85;
    const auto d = separable_dataset(150, Rng(9));
    auto m = train_module1(d, cfg, stage_rng_module1(cfg));
    const auto cache = train_module2(m, d, cfg, instance_rng(cfg, 0));

    CHECK(m.shortlister.default_beam >= 1);
    // Recall of the pure shortlists at the chosen beam meets the target.
    const auto embeddings = embed_all_documents(m, d, 1);
    CHECK(recall_at_shortlist(m.shortlister, d, embeddings, m.shortlister.default_beam) >= cfg.target_recall);

    // Cached lists contain every positive and are sorted/unique.
    for (std::uint64_t i = 0; i < d.num_points; ++i) {
        for (const auto l : d.ground_truth[i])
            CHECK(std::binary_search(cache[i].begin(), cache[i].end(), l));
        CHECK(std::is_sorted(cache[i].begin(), cache[i].end()));
    }
}

TEST_CASE("module two with beam = K caches every label") {
    auto cfg = small_config();
    cfg.beam = 2; // == clusters
    const auto d = separable_dataset(60, Rng(11));
    auto m = train_module1(d, cfg, stage_rng_module1(cfg));
    const auto cache = train_module2(m, d, cfg, instance_rng(cfg, 0));
    for (const auto& ids : cache) CHECK(ids.size() == d.num_labels);
}

TEST_CASE("dense centroids reorder the clustering relative to sparse centroids") {
    // Sparse view: labels {0,1} share token 4, labels {2,3} share token 5.
    Dataset d;
    d.num_points = 8;
    d.num_tokens = 6;
    d.num_labels = 4;
    d.documents.resize(8);
    d.ground_truth.resize(8);
    d.label_texts.resize(4);
    const std::vector<std::vector<std::uint32_t>> doc_tokens = {
        {0, 4}, {0, 4}, {1, 4}, {1, 4}, {2, 5}, {2, 5}, {3, 5}, {3, 5}};
    for (std::size_t i = 0; i < 8; ++i) {
        for (const auto t : doc_tokens[i]) d.documents[i].push_back(t, 1.0f);
        d.ground_truth[i] = {static_cast<std::uint32_t>(i / 2)};
    }

    const auto sparse = hierarchical_cluster(centroids_sparse(d), 1, Rng(3));
    const auto sparse_map = sparse.label_to_cluster(4);
    CHECK(sparse_map[0] == sparse_map[1]);
    CHECK(sparse_map[2] == sparse_map[3]);
    CHECK(sparse_map[0] != sparse_map[2]);

    // Embeddings that pair tokens across the groups: e0 = e2, e1 = e3.
    TokenEmbeddingsT<float> emb(6, 2);
    emb.table(0, 0) = 1.0f;
    emb.table(2, 0) = 1.0f;
    emb.table(1, 1) = 1.0f;
    emb.table(3, 1) = 1.0f;
    const auto dense = hierarchical_cluster(centroids_dense(d, emb), 1, Rng(0));
    const auto dense_map = dense.label_to_cluster(4);
    CHECK(dense_map[0] == dense_map[2]);
    CHECK(dense_map[1] == dense_map[3]);
    CHECK(dense_map[0] != dense_map[1]);
}

TEST_CASE("module three: identity blocks, zero gates, text-based refinement init") {
    auto cfg = small_config();
    const auto d = separable_dataset(80, Rng(13));
    auto m = train_module1(d, cfg, stage_rng_module1(cfg));
    train_module2(m, d, cfg, instance_rng(cfg, 0));
    init_module3(m, d, cfg, instance_rng(cfg, 0).derive(1));

    for (std::size_t i = 0; i < m.dim; ++i)
        for (std::size_t j = 0; j < m.dim; ++j) {
            CHECK(m.doc_block.residual(i, j) == (i == j ? 1.0f : 0.0f));
            CHECK(m.label_block.residual(i, j) == (i == j ? 1.0f : 0.0f));
        }
    for (const auto v : m.classifier_gates.alpha) CHECK(v == 0.0f);
    for (const auto v : m.classifier_gates.beta) CHECK(v == 0.0f);

    // z2 = E z_l.
    for (std::uint64_t lab = 0; lab < d.num_labels; ++lab) {
        const auto expect = bag_embed(m.tokens, d.label_texts[lab]);
        for (std::size_t j = 0; j < m.dim; ++j) CHECK(m.refinement(lab, j) == expect[j]);
    }

    // Zero gates: w = 0.5 (z1 + z2).
    const auto z1 = m.embed_label(d.label_texts[0]);
    const auto w = m.classifier_vector(0);
    for (std::size_t j = 0; j < m.dim; ++j)
        CHECK(w[j] == doctest::Approx(0.5 * (z1[j] + m.refinement(0, j))).epsilon(1e-6));

    // Empty label text: zero refinement vector.
    Dataset d_empty = d;
    d_empty.label_texts[2] = SparseVector{};
    Model m2 = m;
    m2.label_texts = d_empty.label_texts;
    init_module3(m2, d_empty, cfg, instance_rng(cfg, 0).derive(1));
    for (std::size_t j = 0; j < m.dim; ++j) CHECK(m2.refinement(2, j) == 0.0f);
}

TEST_CASE("no-init configuration draws random refinement vectors instead") {
    auto cfg = small_config();
    cfg.random_refinement_init = true;
    const auto d = separable_dataset(60, Rng(17));
    auto m = train_module1(d, cfg, stage_rng_module1(cfg));
    train_module2(m, d, cfg, instance_rng(cfg, 0));
    init_module3(m, d, cfg, instance_rng(cfg, 0).derive(1));
    // Not equal to E z_l for at least one label.
    bool differs = false;
    for (std::uint64_t lab = 0; lab < d.num_labels && !differs; ++lab) {
        const auto text_init = bag_embed(m.tokens, d.label_texts[lab]);
        for (std::size_t j = 0; j < m.dim; ++j)
            if (m.refinement(lab, j) != text_init[j]) differs = true;
    }
    CHECK(differs);
}

TEST_CASE("full pipeline trains to high P@1 on the separable synthetic") {
    auto cfg = small_config();
    // Full-beam shortlists: every label trains as a negative, so prediction
    // quality isolates the classifier itself at this tiny scale.
    cfg.beam = 2;
    const auto d = separable_dataset(200, Rng(19));
    const auto models = train_ensemble(d, cfg);
    REQUIRE(models.size() == 1);

    PredictOptions opts;
    opts.top_k = 1;
    std::uint64_t hits = 0;
    for (std::uint64_t i = 0; i < d.num_points; ++i) {
        const auto pred = predict(models[0], d.documents[i], opts);
        REQUIRE(!pred.ranked.empty());
        if (pred.ranked[0].first == d.ground_truth[i][0]) ++hits;
    }
    CHECK(static_cast<double>(hits) / d.num_points >= 0.9);
}

TEST_CASE("ensemble instances share Module I but diverge afterwards") {
    auto cfg = small_config();
    cfg.ensemble = 2;
    cfg.module2_epochs = 3;
    cfg.module4_epochs = 3;
    const auto d = separable_dataset(100, Rng(23));
    const auto models = train_ensemble(d, cfg);
    REQUIRE(models.size() == 2);
    CHECK(models[0].refinement.data() != models[1].refinement.data());

    // n = 1 equals running the stages once by hand with the same streams.
    auto cfg1 = small_config();
    const auto d1 = separable_dataset(100, Rng(29));
    const auto ens = train_ensemble(d1, cfg1);
    Model manual = train_module1(d1, cfg1, stage_rng_module1(cfg1));
    const Rng root = instance_rng(cfg1, 0);
    const auto cache = train_module2(manual, d1, cfg1, root.derive(0));
    init_module3(manual, d1, cfg1, root.derive(1));
    train_module4(manual, d1, cache, cfg1, root.derive(2));
    CHECK(manual.refinement.data() == ens[0].refinement.data());
    CHECK(manual.tokens.table.data() == ens[0].tokens.table.data());
}

TEST_CASE("fixed-seed training is bit-reproducible and survives save/load byte-identically") {
    auto cfg = small_config();
    cfg.module1_epochs = 4;
    cfg.module2_epochs = 3;
    cfg.module4_epochs = 3;
    const auto d = separable_dataset(80, Rng(31));
    const auto a = train_ensemble(d, cfg);
    const auto b = train_ensemble(d, cfg);
    REQUIRE(a.size() == b.size());
    CHECK(a[0].tokens.table.data() == b[0].tokens.table.data());
    CHECK(a[0].refinement.data() == b[0].refinement.data());

    const std::string p1 = "/tmp/decaf_test_model_a.bin", p2 = "/tmp/decaf_test_model_b.bin";
    save_models(a, p1);
    save_models(b, p2);
    CHECK(file_bytes(p1) == file_bytes(p2));

    // Round-trip: re-serialized bytes are identical, predictions unchanged.
    const auto loaded = load_models(p1);
    const std::string p3 = "/tmp/decaf_test_model_c.bin";
    save_models(loaded, p3);
    CHECK(file_bytes(p1) == file_bytes(p3));

    PredictOptions opts;
    opts.top_k = 3;
    for (std::uint64_t i = 0; i < 10; ++i) {
        const auto before = predict(a[0], d.documents[i], opts);
        const auto after = predict(loaded[0], d.documents[i], opts);
        REQUIRE(before.ranked.size() == after.ranked.size());
        for (std::size_t j = 0; j < before.ranked.size(); ++j) {
            CHECK(before.ranked[j].first == after.ranked[j].first);
            CHECK(before.ranked[j].second == after.ranked[j].second);
        }
    }
}

TEST_CASE("model file loader rejects corrupted magic and truncation") {
    auto cfg = small_config();
    cfg.module1_epochs = 2;
    cfg.module2_epochs = 2;
    cfg.module4_epochs = 2;
    const auto d = separable_dataset(50, Rng(37));
    const auto models = train_ensemble(d, cfg);
    const std::string path = "/tmp/decaf_test_model_corrupt.bin";
    save_models(models, path);

    auto bytes = file_bytes(path);
    bytes[0] = 'X';
    {
        std::ofstream out(path, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_AS(load_models(path), ParseError);

    {
        std::ofstream out(path, std::ios::binary);
        out.write(file_bytes("/tmp/decaf_test_model_a.bin").data(), 64);
    }
    CHECK_THROWS_AS(load_models(path), ParseError);
}

TEST_CASE("config round-trips through key=value form and rejects bad input") {
    TrainConfig cfg = small_config();
    cfg.classifier_mode = ClassifierMode::z2_only;
    cfg.freeze_tokens_after_module1 = true;
    const auto kv = cfg.to_kv();
    const auto back = TrainConfig::from_kv(kv);
    CHECK(back.to_kv() == kv);

    TrainConfig bad;
    CHECK_THROWS_AS(bad.set("clusters", "windmill"), DomainError);
    CHECK_THROWS_AS(bad.set("no_such_key", "1"), DomainError);
    bad.clusters = 3;
    CHECK_THROWS_AS(bad.levels(), DomainError);
}

TEST_CASE("z1-only configuration trains through the text path alone") {
    auto cfg = small_config();
    cfg.classifier_mode = ClassifierMode::z1_only;
    cfg.beam = 2;
    const auto d = separable_dataset(200, Rng(47));
    const auto models = train_ensemble(d, cfg);
    const auto& m = models.front();

    // Classifiers are exactly the label-text embeddings.
    const auto w = precompute_classifiers(m);
    for (std::uint32_t l = 0; l < d.num_labels; ++l) {
        const auto z1 = m.embed_label(d.label_texts[l]);
        for (std::size_t j = 0; j < m.dim; ++j) CHECK(w(l, j) == z1[j]);
    }

    // The label texts identify the labels on this corpus, so the text path
    // alone should still rank well.
    PredictOptions opts;
    opts.top_k = 1;
    std::uint64_t hits = 0;
    for (std::uint64_t i = 0; i < d.num_points; ++i) {
        const auto pred = predict(m, d.documents[i], opts);
        if (!pred.ranked.empty() && pred.ranked[0].first == d.ground_truth[i][0]) ++hits;
    }
    CHECK(static_cast<double>(hits) / d.num_points >= 0.8);
}

TEST_CASE("lite configuration freezes token embeddings after Module I") {
    auto cfg = small_config();
    cfg.freeze_tokens_after_module1 = true;
    cfg.module2_epochs = 3;
    cfg.module4_epochs = 3;
    const auto d = separable_dataset(80, Rng(41));
    Model m = train_module1(d, cfg, stage_rng_module1(cfg));
    const auto tokens_after_m1 = m.tokens.table.data();
    const Rng root = instance_rng(cfg, 0);
    const auto cache = train_module2(m, d, cfg, root.derive(0));
    init_module3(m, d, cfg, root.derive(1));
    train_module4(m, d, cache, cfg, root.derive(2));
    CHECK(m.tokens.table.data() == tokens_after_m1);

    // Without the freeze they must move.
    auto cfg2 = small_config();
    cfg2.module2_epochs = 3;
    cfg2.module4_epochs = 3;
    Model m2 = train_module1(d, cfg2, stage_rng_module1(cfg2));
    const auto tokens2 = m2.tokens.table.data();
    const auto cache2 = train_module2(m2, d, cfg2, instance_rng(cfg2, 0).derive(0));
    CHECK(m2.tokens.table.data() != tokens2);
}
