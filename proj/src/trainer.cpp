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

#include "decaf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "decaf/clustering.hpp"
#include "decaf/gradients.hpp"
#include "decaf/inference.hpp"
#include "decaf/parallel.hpp"

namespace decaf {

namespace {

constexpr std::uint64_t kStreamInit = train_streams::kInit;
constexpr std::uint64_t kStreamCluster = train_streams::kCluster;
constexpr std::uint64_t kStreamShuffle = train_streams::kShuffle;
constexpr std::uint64_t kStreamMasks = train_streams::kMasks;
constexpr std::uint64_t kStreamSpectral = train_streams::kSpectral;
constexpr std::uint64_t kStreamRefineInit = train_streams::kRefineInit;

// Pipeline roots under the master seed.
constexpr std::uint64_t kRootModule1 = 1;
constexpr std::uint64_t kRootEnsemble = 2;
constexpr std::uint64_t kRootModule2 = 0;
constexpr std::uint64_t kRootModule3 = 1;
constexpr std::uint64_t kRootModule4 = 2;

/// Adam states plus spectral-normalization vectors for one training stage.
/// Each stage starts from fresh moments.
struct OptState {
    AdamStateT<float> tokens;
    AdamStateT<float> doc_residual, doc_alpha, doc_beta;
    AdamStateT<float> label_residual, label_alpha, label_beta;
    AdamStateT<float> gates_alpha, gates_beta;
    AdamStateT<float> meta_gates_alpha, meta_gates_beta;
    AdamStateT<float> refinement;
    AdamStateT<float> meta_refinement;
    std::vector<double> u_doc, u_label;
    Rng spectral_rng;

    OptState(const Model& m, const AdamConfig& adam, Rng spectral)
        : tokens(m.tokens.vocab(), m.dim, adam), doc_residual(m.dim, m.dim, adam), doc_alpha(1, m.dim, adam),
          doc_beta(1, m.dim, adam), label_residual(m.dim, m.dim, adam), label_alpha(1, m.dim, adam),
          label_beta(1, m.dim, adam), gates_alpha(1, m.dim, adam), gates_beta(1, m.dim, adam),
          meta_gates_alpha(1, m.dim, adam), meta_gates_beta(1, m.dim, adam),
          refinement(m.refinement.rows(), m.dim, adam),
          meta_refinement(m.meta_refinement.rows(), m.dim, adam), spectral_rng(spectral) {}

    void set_lr(double lr) {
        for (AdamStateT<float>* s : {&tokens, &doc_residual, &doc_alpha, &doc_beta, &label_residual, &label_alpha,
                                     &label_beta, &gates_alpha, &gates_beta, &meta_gates_alpha, &meta_gates_beta,
                                     &refinement, &meta_refinement})
            s->cfg.lr = lr;
    }
};

struct UpdateSet {
    bool tokens = false;
    bool doc_block = false;
    bool label_block = false;
    bool classifier_gates = false;
    bool meta_gates = false;
    bool refinement = false;
    bool meta_refinement = false;
};

void apply_gradients(Model& m, GradAccum<float>& grads, OptState& opt, const UpdateSet& upd) {
    if (upd.tokens && grads.tokens.touched() > 0) {
        auto [rows, mat] = grads.tokens.sorted();
        adam_step_rows(m.tokens.table, rows, mat, opt.tokens);
    }
    if (upd.doc_block) {
        adam_step(m.doc_block.residual, grads.doc_block.residual, opt.doc_residual);
        adam_step_vec(m.doc_block.alpha, grads.doc_block.alpha, opt.doc_alpha);
        adam_step_vec(m.doc_block.beta, grads.doc_block.beta, opt.doc_beta);
        spectral_normalize(m.doc_block.residual, opt.u_doc, 1, opt.spectral_rng);
    }
    if (upd.label_block) {
        adam_step(m.label_block.residual, grads.label_block.residual, opt.label_residual);
        adam_step_vec(m.label_block.alpha, grads.label_block.alpha, opt.label_alpha);
        adam_step_vec(m.label_block.beta, grads.label_block.beta, opt.label_beta);
        spectral_normalize(m.label_block.residual, opt.u_label, 1, opt.spectral_rng);
    }
    if (upd.classifier_gates) {
        adam_step_vec(m.classifier_gates.alpha, grads.classifier_gates.alpha, opt.gates_alpha);
        adam_step_vec(m.classifier_gates.beta, grads.classifier_gates.beta, opt.gates_beta);
    }
    if (upd.meta_gates) {
        adam_step_vec(m.meta_gates.alpha, grads.meta_gates.alpha, opt.meta_gates_alpha);
        adam_step_vec(m.meta_gates.beta, grads.meta_gates.beta, opt.meta_gates_beta);
    }
    if (upd.refinement && grads.refinement.touched() > 0) {
        auto [rows, mat] = grads.refinement.sorted();
        adam_step_rows(m.refinement, rows, mat, opt.refinement);
    }
    if (upd.meta_refinement && grads.meta_refinement.touched() > 0) {
        auto [rows, mat] = grads.meta_refinement.sorted();
        adam_step_rows(m.meta_refinement, rows, mat, opt.meta_refinement);
    }
}

double stage_lr(const TrainConfig& cfg, double base_lr, int epoch, int total_epochs) {
    const int half = std::max(1, (total_epochs + 1) / 2);
    return base_lr * std::pow(cfg.lr_decay, static_cast<double>(epoch / half));
}

// Numeric failures abort with the stage/epoch/batch position attached.
template <typename Fn>
auto batch_step(const char* stage, int epoch, std::size_t batch, Fn&& fn) {
    try {
        return fn();
    } catch (const DomainError& e) {
        throw DomainError(std::string(stage) + " epoch " + std::to_string(epoch) + " batch " +
                          std::to_string(batch) + ": " + e.what());
    }
}

std::vector<std::uint32_t> epoch_order(std::uint64_t n, Rng rng) {
    std::vector<std::uint32_t> order(n);
    for (std::uint64_t i = 0; i < n; ++i) order[i] = static_cast<std::uint32_t>(i);
    rng.shuffle(order);
    return order;
}

void random_rows(DenseMatrixT<float>& mat, double std_dev, Rng& rng) {
    for (auto& v : mat.data()) v = static_cast<float>(rng.next_gaussian() * std_dev);
}

} // namespace

// ---------------------------------------------------------------------------
// TrainConfig
// ---------------------------------------------------------------------------

std::uint32_t TrainConfig::levels() const {
    require(clusters > 0 && (clusters & (clusters - 1)) == 0, "config: clusters must be a power of two");
    std::uint32_t lv = 0;
    for (std::uint64_t k = clusters; k > 1; k >>= 1) ++lv;
    return lv;
}

void TrainConfig::validate(const Dataset& d) const {
    levels();
    require(batch_size >= 1, "config: batch_size must be >= 1");
    require(dim >= 1, "config: dim must be >= 1");
    require(ensemble >= 1, "config: ensemble must be >= 1");
    require(clusters <= d.num_labels, "config: clusters exceeds the number of labels");
    require(beam <= clusters, "config: beam exceeds the number of clusters");
    require(dropout_module1 >= 0.0 && dropout_module1 < 1.0, "config: dropout_module1 out of range");
    require(dropout_rest >= 0.0 && dropout_rest < 1.0, "config: dropout_rest out of range");
    require(target_recall >= 0.0 && target_recall <= 1.0, "config: target_recall out of range");
    require(d.has_label_texts(), "training requires label texts");
}

std::map<std::string, std::string> TrainConfig::to_kv() const {
    std::map<std::string, std::string> kv;
    const auto put = [&](const std::string& k, auto v) {
        std::ostringstream ss;
        ss << v;
        kv[k] = ss.str();
    };
    put("dim", dim);
    put("clusters", clusters);
    put("beam", beam);
    put("target_recall", target_recall);
    put("batch_size", batch_size);
    put("module1_epochs", module1_epochs);
    put("module1_lr", module1_lr);
    put("module2_epochs", module2_epochs);
    put("module2_lr", module2_lr);
    put("module4_epochs", module4_epochs);
    put("module4_lr", module4_lr);
    put("dropout_module1", dropout_module1);
    put("dropout_rest", dropout_rest);
    put("lr_decay", lr_decay);
    put("adam_beta1", adam_beta1);
    put("adam_beta2", adam_beta2);
    put("adam_epsilon", adam_epsilon);
    put("seed", seed);
    put("threads", threads);
    put("ensemble", ensemble);
    kv["classifier_mode"] = classifier_mode_name(classifier_mode);
    put("random_refinement_init", random_refinement_init ? 1 : 0);
    put("freeze_tokens_after_module1", freeze_tokens_after_module1 ? 1 : 0);
    return kv;
}

void TrainConfig::set(const std::string& key, const std::string& value) {
    const auto as_u64 = [&] { return std::stoull(value); };
    const auto as_int = [&] { return std::stoi(value); };
    const auto as_double = [&] { return std::stod(value); };
    const auto as_bool = [&] { return value == "1" || value == "true" || value == "yes"; };
    try {
        if (key == "dim") dim = as_u64();
        else if (key == "clusters") clusters = as_u64();
        else if (key == "beam") beam = static_cast<std::uint32_t>(as_u64());
        else if (key == "target_recall") target_recall = as_double();
        else if (key == "batch_size") batch_size = as_u64();
        else if (key == "module1_epochs") module1_epochs = as_int();
        else if (key == "module1_lr") module1_lr = as_double();
        else if (key == "module2_epochs") module2_epochs = as_int();
        else if (key == "module2_lr") module2_lr = as_double();
        else if (key == "module4_epochs") module4_epochs = as_int();
        else if (key == "module4_lr") module4_lr = as_double();
        else if (key == "dropout_module1") dropout_module1 = as_double();
        else if (key == "dropout_rest") dropout_rest = as_double();
        else if (key == "lr_decay") lr_decay = as_double();
        else if (key == "adam_beta1") adam_beta1 = as_double();
        else if (key == "adam_beta2") adam_beta2 = as_double();
        else if (key == "adam_epsilon") adam_epsilon = as_double();
        else if (key == "seed") seed = as_u64();
        else if (key == "threads") threads = as_int();
        else if (key == "ensemble") ensemble = as_int();
        else if (key == "classifier_mode") classifier_mode = classifier_mode_from_name(value);
        else if (key == "random_refinement_init") random_refinement_init = as_bool();
        else if (key == "freeze_tokens_after_module1") freeze_tokens_after_module1 = as_bool();
        else throw DomainError("config: unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
        throw DomainError("config: bad value '" + value + "' for key '" + key + "'");
    } catch (const std::out_of_range&) {
        throw DomainError("config: out-of-range value '" + value + "' for key '" + key + "'");
    }
}

TrainConfig TrainConfig::from_kv(const std::map<std::string, std::string>& kv) {
    TrainConfig cfg;
    for (const auto& [k, v] : kv) cfg.set(k, v);
    return cfg;
}

std::map<std::string, std::string> read_kv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto strip = [](std::string s) {
            const auto b = s.find_first_not_of(" \t");
            if (b == std::string::npos) return std::string();
            const auto e = s.find_last_not_of(" \t");
            return s.substr(b, e - b + 1);
        };
        line = strip(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError(path + ":" + std::to_string(line_no) + ": expected key=value");
        kv[strip(line.substr(0, eq))] = strip(line.substr(eq + 1));
    }
    return kv;
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

Rng stage_rng_module1(const TrainConfig& cfg) { return Rng(cfg.seed).derive(kRootModule1); }

Rng instance_rng(const TrainConfig& cfg, int instance) {
    return Rng(cfg.seed).derive(kRootEnsemble).derive(static_cast<std::uint64_t>(instance));
}

Model train_module1(const Dataset& data, const TrainConfig& cfg, Rng rng, StageLog* log) {
    cfg.validate(data);
    const std::size_t d = cfg.dim;

    Model m;
    m.dim = d;
    m.num_tokens = data.num_tokens;
    m.num_labels = data.num_labels;
    m.tokens = TokenEmbeddingsT<float>(data.num_tokens, d);
    {
        Rng init = rng.derive(kStreamInit);
        m.tokens.init_random(init);
    }
    m.doc_block = EmbeddingBlockT<float>(d);
    m.label_block = EmbeddingBlockT<float>(d);
    m.classifier_gates = CombinationBlockT<float>(d);
    m.meta_gates = CombinationBlockT<float>(d);
    m.refinement = DenseMatrix(data.num_labels, d);
    m.label_texts = data.label_texts;
    m.classifier_mode = cfg.classifier_mode;

    const auto centroids = centroids_sparse(data);
    auto clustering = hierarchical_cluster(centroids, cfg.levels(), rng.derive(kStreamCluster));
    auto meta = build_meta_problem(data, std::move(clustering));
    m.meta_refinement = DenseMatrix(meta.clustering.num_clusters(), d);

    AdamConfig adam{cfg.module1_lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon};
    OptState opt(m, adam, rng.derive(kStreamSpectral));
    UpdateSet upd;
    upd.tokens = true;
    upd.doc_block = true;
    upd.label_block = true;

    for (int epoch = 0; epoch < cfg.module1_epochs; ++epoch) {
        opt.set_lr(stage_lr(cfg, cfg.module1_lr, epoch, cfg.module1_epochs));
        const auto order = epoch_order(data.num_points, rng.derive(kStreamShuffle).derive(epoch));
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t at = 0; at < order.size(); at += cfg.batch_size, ++batches) {
            const std::size_t end = std::min(order.size(), at + cfg.batch_size);
            const Rng mask_rng = rng.derive(kStreamMasks).derive(epoch).derive(batches);
            epoch_loss += batch_step("module1", epoch, batches, [&] {
                GradAccum<float> grads(d);
                const double loss =
                    meta_batch_grads(m, data, meta, std::span(order.data() + at, end - at),
                                     MetaForm::text_constrained, cfg.dropout_module1, mask_rng,
                                     /*update_tokens=*/true, cfg.threads, grads);
                apply_gradients(m, grads, opt, upd);
                return loss;
            });
        }
        if (log != nullptr) log->epoch_mean_loss.push_back(batches ? epoch_loss / batches : 0.0);
    }

    // Keep the Module I shortlister on the model so checkpoints are
    // self-contained; Module II replaces it.
    m.shortlister.cluster_classifiers = materialize_meta_classifiers(m, meta, MetaForm::text_constrained);
    m.shortlister.clustering = std::move(meta.clustering);
    return m;
}

ShortlistCache train_module2(Model& m, const Dataset& data, const TrainConfig& cfg, Rng rng, StageLog* log) {
    const std::size_t d = m.dim;

    const auto centroids = centroids_dense(data, m.tokens);
    auto clustering = hierarchical_cluster(centroids, cfg.levels(), rng.derive(kStreamCluster));
    auto meta = build_meta_problem(data, std::move(clustering));
    const std::size_t k = meta.clustering.num_clusters();

    // Fresh combination block and refinement vectors; u2 starts from the
    // meta-label text embedding (or randomly when the text path is ablated).
    m.meta_gates = CombinationBlockT<float>(d);
    m.meta_refinement = DenseMatrix(k, d);
    if (m.classifier_mode == ClassifierMode::z2_only) {
        Rng init = rng.derive(kStreamRefineInit);
        random_rows(m.meta_refinement, std::sqrt(2.0 / static_cast<double>(d)), init);
    } else {
        for (std::size_t c = 0; c < k; ++c) {
            std::vector<float> u1(d, 0.0f);
            for (const auto l : meta.clustering.clusters[c]) {
                const auto z1 = m.embed_label(m.label_texts[l]);
                for (std::size_t j = 0; j < d; ++j) u1[j] += z1[j];
            }
            std::copy(u1.begin(), u1.end(), m.meta_refinement.row(c).begin());
        }
    }

    AdamConfig adam{cfg.module2_lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon};
    OptState opt(m, adam, rng.derive(kStreamSpectral));
    UpdateSet upd;
    upd.tokens = !cfg.freeze_tokens_after_module1;
    upd.doc_block = true;
    upd.label_block = m.classifier_mode != ClassifierMode::z2_only;
    upd.meta_gates = m.classifier_mode == ClassifierMode::combined;
    upd.meta_refinement = m.classifier_mode != ClassifierMode::z1_only;

    for (int epoch = 0; epoch < cfg.module2_epochs; ++epoch) {
        opt.set_lr(stage_lr(cfg, cfg.module2_lr, epoch, cfg.module2_epochs));
        const auto order = epoch_order(data.num_points, rng.derive(kStreamShuffle).derive(epoch));
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t at = 0; at < order.size(); at += cfg.batch_size, ++batches) {
            const std::size_t end = std::min(order.size(), at + cfg.batch_size);
            const Rng mask_rng = rng.derive(kStreamMasks).derive(epoch).derive(batches);
            epoch_loss += batch_step("module2", epoch, batches, [&] {
                GradAccum<float> grads(d);
                const double loss = meta_batch_grads(m, data, meta, std::span(order.data() + at, end - at),
                                                     MetaForm::refined, cfg.dropout_rest, mask_rng,
                                                     !cfg.freeze_tokens_after_module1, cfg.threads, grads);
                apply_gradients(m, grads, opt, upd);
                return loss;
            });
        }
        if (log != nullptr) log->epoch_mean_loss.push_back(batches ? epoch_loss / batches : 0.0);
    }

    // Freeze the shortlister: materialized classifiers plus the chosen beam.
    m.shortlister.clustering = meta.clustering;
    m.shortlister.cluster_classifiers = materialize_meta_classifiers(m, meta, MetaForm::refined);

    const auto embeddings = embed_all_documents(m, data, cfg.threads);
    std::uint32_t beam = cfg.beam;
    if (beam == 0) beam = select_beam(m.shortlister, data, embeddings, cfg.target_recall);
    m.shortlister.default_beam = beam;

    ShortlistCache cache(data.num_points);
    parallel_for(data.num_points, cfg.threads, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            auto sl = shortlist(m.shortlister, std::span<const float>(embeddings.row(i)), beam);
            auto& ids = sl.label_ids;
            ids.insert(ids.end(), data.ground_truth[i].begin(), data.ground_truth[i].end());
            std::sort(ids.begin(), ids.end());
            ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
            cache[i] = std::move(ids);
        }
    });
    return cache;
}

ShortlistCache build_shortlist_cache(const Model& m, const Dataset& data, std::uint32_t beam, int threads) {
    const auto embeddings = embed_all_documents(m, data, threads);
    ShortlistCache cache(data.num_points);
    parallel_for(data.num_points, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            auto sl = shortlist(m.shortlister, std::span<const float>(embeddings.row(i)), beam);
            auto& ids = sl.label_ids;
            ids.insert(ids.end(), data.ground_truth[i].begin(), data.ground_truth[i].end());
            std::sort(ids.begin(), ids.end());
            ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
            cache[i] = std::move(ids);
        }
    });
    return cache;
}

void init_module3(Model& m, const Dataset& data, const TrainConfig& cfg, Rng rng) {
    m.doc_block.reinit_identity();
    m.label_block.reinit_identity();
    m.classifier_gates = CombinationBlockT<float>(m.dim);
    const bool random_init = cfg.random_refinement_init || m.classifier_mode == ClassifierMode::z2_only;
    if (random_init) {
        Rng init = rng.derive(kStreamRefineInit);
        random_rows(m.refinement, std::sqrt(2.0 / static_cast<double>(m.dim)), init);
        return;
    }
    for (std::uint64_t l = 0; l < m.num_labels; ++l) {
        const auto z2 = bag_embed(m.tokens, data.label_texts[l]);
        std::copy(z2.begin(), z2.end(), m.refinement.row(l).begin());
    }
}

void train_module4(Model& m, const Dataset& data, const ShortlistCache& cache, const TrainConfig& cfg, Rng rng,
                   StageLog* log) {
    require(cache.size() == data.num_points, "module4: cache size mismatch");
    const std::size_t d = m.dim;

    AdamConfig adam{cfg.module4_lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon};
    OptState opt(m, adam, rng.derive(kStreamSpectral));
    UpdateSet upd;
    upd.tokens = !cfg.freeze_tokens_after_module1;
    upd.doc_block = true;
    upd.label_block = m.classifier_mode != ClassifierMode::z2_only;
    upd.classifier_gates = m.classifier_mode == ClassifierMode::combined;
    upd.refinement = m.classifier_mode != ClassifierMode::z1_only;

    for (int epoch = 0; epoch < cfg.module4_epochs; ++epoch) {
        opt.set_lr(stage_lr(cfg, cfg.module4_lr, epoch, cfg.module4_epochs));
        const auto order = epoch_order(data.num_points, rng.derive(kStreamShuffle).derive(epoch));
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t at = 0; at < order.size(); at += cfg.batch_size, ++batches) {
            const std::size_t end = std::min(order.size(), at + cfg.batch_size);
            const Rng mask_rng = rng.derive(kStreamMasks).derive(epoch).derive(batches);
            epoch_loss += batch_step("module4", epoch, batches, [&] {
                GradAccum<float> grads(d);
                const double loss =
                    ova_batch_grads(m, data, cache, std::span(order.data() + at, end - at), cfg.dropout_rest,
                                    mask_rng, !cfg.freeze_tokens_after_module1, cfg.threads, grads);
                apply_gradients(m, grads, opt, upd);
                return loss;
            });
        }
        if (log != nullptr) log->epoch_mean_loss.push_back(batches ? epoch_loss / batches : 0.0);
    }
}

std::vector<Model> train_ensemble(const Dataset& data, const TrainConfig& cfg, std::vector<StageLog>* logs) {
    if (logs != nullptr) logs->assign(static_cast<std::size_t>(cfg.ensemble) * 3 + 1, StageLog{});
    StageLog* log1 = logs != nullptr ? &(*logs)[0] : nullptr;
    Model base = train_module1(data, cfg, stage_rng_module1(cfg), log1);

    std::vector<Model> instances;
    instances.reserve(cfg.ensemble);
    for (int i = 0; i < cfg.ensemble; ++i) {
        Model m = base;
        const Rng root = instance_rng(cfg, i);
        StageLog* log2 = logs != nullptr ? &(*logs)[1 + 3 * i] : nullptr;
        StageLog* log4 = logs != nullptr ? &(*logs)[3 + 3 * i] : nullptr;
        const auto cache = train_module2(m, data, cfg, root.derive(kRootModule2), log2);
        init_module3(m, data, cfg, root.derive(kRootModule3));
        train_module4(m, data, cache, cfg, root.derive(kRootModule4), log4);
        m.config_snapshot = cfg.to_kv();
        instances.push_back(std::move(m));
    }
    return instances;
}

} // namespace decaf
