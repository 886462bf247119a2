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
#include <cstdint>
#include <span>
#include <vector>

#include "decaf/corpus.hpp"
#include "decaf/model.hpp"
#include "decaf/parallel.hpp"

namespace decaf {

/// Logistic loss ln(1 + exp(-y * score)) in a stable form, plus its gradient
/// w.r.t. the score: -y * sigmoid(-y * score).
inline std::pair<double, double> logistic_loss_and_grad(double score, int y) {
    const double margin = static_cast<double>(y) * score;
    const double loss = log1p_exp_neg(margin);
    const double grad = -static_cast<double>(y) * sigmoid(-margin);
    return {loss, grad};
}

/// Gradient accumulator covering every trainable group. Per-thread instances
/// are merged in thread-index order, all sums in double.
template <typename T>
struct GradAccum {
    SparseRowGrads tokens;       // rows of E
    BlockGradsT<T> doc_block;
    BlockGradsT<T> label_block;
    CombinationGrads classifier_gates;
    CombinationGrads meta_gates;
    SparseRowGrads refinement;      // rows of z2
    SparseRowGrads meta_refinement; // rows of u2
    double loss_sum = 0.0;
    std::uint64_t pair_count = 0;

    GradAccum() = default;
    explicit GradAccum(std::size_t dim)
        : tokens(dim), doc_block(dim), label_block(dim), classifier_gates(dim), meta_gates(dim), refinement(dim),
          meta_refinement(dim) {}

    void merge(const GradAccum& other) {
        tokens.merge(other.tokens);
        doc_block.merge(other.doc_block);
        label_block.merge(other.label_block);
        classifier_gates.merge(other.classifier_gates);
        meta_gates.merge(other.meta_gates);
        refinement.merge(other.refinement);
        meta_refinement.merge(other.meta_refinement);
        loss_sum += other.loss_sum;
        pair_count += other.pair_count;
    }
};

/// Training-mode document embedding with saved intermediates.
template <typename T>
struct DocTrainCache {
    BlockCacheT<T> block;
    std::vector<float> outer_mask; // empty when run without dropout
    std::vector<T> embedding;      // x_hat
};

// Dropout stream roles under the per-batch mask rng.
inline constexpr std::uint64_t kMaskDocInner = 0;
inline constexpr std::uint64_t kMaskDocOuter = 1;
inline constexpr std::uint64_t kMaskLabelInner = 2;

template <typename T>
void embed_document_train(const ModelT<T>& m, const SparseVector& x, double dropout_rate, const Rng& mask_rng,
                          std::uint64_t doc_key, DocTrainCache<T>& cache) {
    const std::size_t d = m.dim;
    if (dropout_rate > 0.0) {
        Rng inner = mask_rng.derive(kMaskDocInner).derive(doc_key);
        Rng outer = mask_rng.derive(kMaskDocOuter).derive(doc_key);
        const auto inner_mask = dropout_mask(d, dropout_rate, inner);
        cache.outer_mask = dropout_mask(d, dropout_rate, outer);
        block_forward(m.doc_block, bag_embed(m.tokens, x), cache.block, &inner_mask);
    } else {
        cache.outer_mask.clear();
        block_forward(m.doc_block, bag_embed(m.tokens, x), cache.block);
    }
    cache.embedding.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
        T v = cache.block.output[j] > T(0) ? cache.block.output[j] : T(0);
        if (!cache.outer_mask.empty()) v = static_cast<T>(v * cache.outer_mask[j]);
        cache.embedding[j] = v;
    }
}

template <typename T>
void embed_document_backward(const ModelT<T>& m, const SparseVector& x, const DocTrainCache<T>& cache,
                             std::span<const double> d_embedding, BlockGradsT<T>& block_sink,
                             SparseRowGrads* token_sink) {
    const std::size_t d = m.dim;
    std::vector<double> d_out(d);
    for (std::size_t j = 0; j < d; ++j) {
        double g = d_embedding[j];
        if (!cache.outer_mask.empty()) g *= cache.outer_mask[j];
        d_out[j] = cache.block.output[j] > T(0) ? g : 0.0;
    }
    const auto d_r0 = block_backward(m.doc_block, cache.block, std::span<const double>(d_out), block_sink);
    if (token_sink != nullptr) bag_embed_backward(x, std::span<const double>(d_r0), *token_sink);
}

template <typename T>
void embed_label_train(const ModelT<T>& m, const SparseVector& z, double dropout_rate, const Rng& mask_rng,
                       std::uint64_t label_key, BlockCacheT<T>& cache) {
    if (dropout_rate > 0.0) {
        Rng inner = mask_rng.derive(kMaskLabelInner).derive(label_key);
        const auto mask = dropout_mask(m.dim, dropout_rate, inner);
        block_forward(m.label_block, bag_embed(m.tokens, z), cache, &mask);
    } else {
        block_forward(m.label_block, bag_embed(m.tokens, z), cache);
    }
}

/// Which meta-classifier shape a training stage uses.
enum class MetaForm : std::uint8_t {
    text_constrained = 0, // h_m = E_L(u_m), no refinement vector
    refined = 1,          // h_m mixes u2_m and u1_m = sum E_L(z_l); honors classifier_mode ablations
};

namespace detail {

template <typename T>
std::vector<T> meta_classifier_refined(const ModelT<T>& m, std::span<const T> u2, std::span<const T> u1) {
    switch (m.classifier_mode) {
        case ClassifierMode::z1_only: return std::vector<T>(u1.begin(), u1.end());
        case ClassifierMode::z2_only: return std::vector<T>(u2.begin(), u2.end());
        case ClassifierMode::combined: break;
    }
    return combine(m.meta_gates, u2, u1); // alpha gates the refinement, beta gates the text
}

} // namespace detail

/// Evaluation-mode meta classifiers H, one row per cluster.
template <typename T>
DenseMatrixT<T> materialize_meta_classifiers(const ModelT<T>& m, const MetaProblem& meta, MetaForm form) {
    const std::size_t k = meta.clustering.num_clusters();
    DenseMatrixT<T> h(k, m.dim);
    if (form == MetaForm::text_constrained) {
        for (std::size_t c = 0; c < k; ++c) {
            const auto hm = block_forward(m.label_block, bag_embed(m.tokens, meta.meta_texts[c]));
            std::copy(hm.begin(), hm.end(), h.row(c).begin());
        }
        return h;
    }
    // u1_m = sum of member label embeddings (skipped entirely for z2-only).
    for (std::size_t c = 0; c < k; ++c) {
        std::vector<T> u1(m.dim, T(0));
        if (m.classifier_mode != ClassifierMode::z2_only) {
            for (const auto l : meta.clustering.clusters[c]) {
                const auto z1 = m.embed_label(m.label_texts[l]);
                for (std::size_t j = 0; j < u1.size(); ++j) u1[j] += z1[j];
            }
        }
        const auto hm = detail::meta_classifier_refined(m, m.meta_refinement.row(c), std::span<const T>(u1));
        std::copy(hm.begin(), hm.end(), h.row(c).begin());
    }
    return h;
}

/// One mini-batch of the meta multi-label problem (Modules I and II): every
/// cluster is scored against every batch document with the logistic loss,
/// normalized by the number of (document, cluster) pairs. Returns the mean
/// loss and accumulates gradients for every group the stage trains.
template <typename T>
double meta_batch_grads(const ModelT<T>& model, const Dataset& data, const MetaProblem& meta,
                        std::span<const std::uint32_t> batch_docs, MetaForm form, double dropout_rate,
                        const Rng& mask_rng, bool update_tokens, int threads, GradAccum<T>& out) {
    const std::size_t d = model.dim;
    const std::size_t k = meta.clustering.num_clusters();
    const std::size_t mb = batch_docs.size();
    const std::size_t num_labels = model.num_labels;
    const bool z2_only = model.classifier_mode == ClassifierMode::z2_only;
    const bool z1_only = model.classifier_mode == ClassifierMode::z1_only;

    // Document forward.
    std::vector<DocTrainCache<T>> docs(mb);
    parallel_for(mb, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i)
            embed_document_train(model, data.documents[batch_docs[i]], dropout_rate, mask_rng, batch_docs[i],
                                 docs[i]);
    });

    // Meta classifier forward.
    std::vector<BlockCacheT<T>> label_caches; // per label (refined) or per cluster (text form)
    DenseMatrixT<T> u1;                       // refined form only
    DenseMatrixT<T> h(k, d);
    if (form == MetaForm::text_constrained) {
        label_caches.resize(k);
        parallel_for(k, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
            for (std::size_t c = begin; c < end; ++c) {
                embed_label_train(model, meta.meta_texts[c], dropout_rate, mask_rng, c, label_caches[c]);
                std::copy(label_caches[c].output.begin(), label_caches[c].output.end(), h.row(c).begin());
            }
        });
    } else {
        if (!z2_only) {
            label_caches.resize(num_labels);
            parallel_for(num_labels, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
                for (std::size_t l = begin; l < end; ++l)
                    embed_label_train(model, data.label_texts[l], dropout_rate, mask_rng, l, label_caches[l]);
            });
            u1 = DenseMatrixT<T>(k, d);
            for (std::size_t c = 0; c < k; ++c) {
                auto row = u1.row(c);
                for (const auto l : meta.clustering.clusters[c])
                    for (std::size_t j = 0; j < d; ++j) row[j] += label_caches[l].output[j];
            }
        }
        for (std::size_t c = 0; c < k; ++c) {
            const std::vector<T> zero(d, T(0));
            const auto hm = detail::meta_classifier_refined(
                model, model.meta_refinement.row(c),
                z2_only ? std::span<const T>(zero) : std::span<const T>(u1.row(c).data(), d));
            std::copy(hm.begin(), hm.end(), h.row(c).begin());
        }
    }

    // Scores, losses, and upstream gradients.
    const std::uint64_t pairs = static_cast<std::uint64_t>(mb) * k;
    const double inv_pairs = pairs > 0 ? 1.0 / static_cast<double>(pairs) : 0.0;
    DenseMatrixT<double> dscore(mb, k);
    DenseMatrixT<double> d_doc(mb, d);
    std::vector<double> loss_parts(mb, 0.0);
    parallel_for(mb, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
        std::vector<std::uint8_t> positive(k);
        for (std::size_t i = begin; i < end; ++i) {
            std::fill(positive.begin(), positive.end(), 0);
            for (const auto c : meta.meta_ground_truth[batch_docs[i]]) positive[c] = 1;
            auto ds_row = dscore.row(i);
            auto dd_row = d_doc.row(i);
            for (std::size_t c = 0; c < k; ++c) {
                const double s = dot(h.row(c), std::span<const T>(docs[i].embedding));
                const auto [loss, g] = logistic_loss_and_grad(s, positive[c] ? +1 : -1);
                loss_parts[i] += loss;
                const double gs = g * inv_pairs;
                ds_row[c] = gs;
                const auto h_row = h.row(c);
                for (std::size_t j = 0; j < d; ++j) dd_row[j] += gs * static_cast<double>(h_row[j]);
            }
        }
    });

    // dh_c = sum_i dscore[i][c] * x_hat_i.
    DenseMatrixT<double> dh(k, d);
    parallel_for(k, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t c = begin; c < end; ++c) {
            auto dh_row = dh.row(c);
            for (std::size_t i = 0; i < mb; ++i) {
                const double g = dscore(i, c);
                if (g == 0.0) continue;
                const auto& x = docs[i].embedding;
                for (std::size_t j = 0; j < d; ++j) dh_row[j] += g * static_cast<double>(x[j]);
            }
        }
    });

    // Backward through the meta classifiers and documents with per-thread
    // accumulators merged in thread order.
    const int t = resolve_threads(threads);
    std::vector<GradAccum<T>> locals(static_cast<std::size_t>(t), GradAccum<T>(d));

    if (form == MetaForm::text_constrained) {
        parallel_for(k, t, [&](std::size_t tid, std::size_t begin, std::size_t end) {
            auto& acc = locals[tid];
            for (std::size_t c = begin; c < end; ++c) {
                const auto d_r0 = block_backward(model.label_block, label_caches[c], dh.row(c), acc.label_block);
                if (update_tokens) bag_embed_backward(meta.meta_texts[c], std::span<const double>(d_r0), acc.tokens);
            }
        });
    } else {
        DenseMatrixT<double> d_u1; // upstream for the text part, per cluster
        if (!z2_only) d_u1 = DenseMatrixT<double>(k, d);
        {
            auto& acc = locals[0];
            std::vector<double> d_u2(d);
            for (std::size_t c = 0; c < k; ++c) {
                std::fill(d_u2.begin(), d_u2.end(), 0.0);
                if (z1_only) {
                    auto row = d_u1.row(c);
                    for (std::size_t j = 0; j < d; ++j) row[j] = dh(c, j);
                } else if (z2_only) {
                    auto g2 = acc.meta_refinement.row(static_cast<std::uint32_t>(c));
                    for (std::size_t j = 0; j < d; ++j) g2[j] += dh(c, j);
                } else {
                    const std::span<const T> u1_row(u1.row(c).data(), d);
                    combine_backward(model.meta_gates, std::span<const T>(model.meta_refinement.row(c)), u1_row,
                                     dh.row(c), acc.meta_gates, std::span<double>(d_u2), d_u1.row(c));
                    auto g2 = acc.meta_refinement.row(static_cast<std::uint32_t>(c));
                    for (std::size_t j = 0; j < d; ++j) g2[j] += d_u2[j];
                }
            }
        }
        if (!z2_only) {
            const auto label_cluster = meta.clustering.label_to_cluster(num_labels);
            parallel_for(num_labels, t, [&](std::size_t tid, std::size_t begin, std::size_t end) {
                auto& acc = locals[tid];
                for (std::size_t l = begin; l < end; ++l) {
                    const auto d_r0 =
                        block_backward(model.label_block, label_caches[l], d_u1.row(label_cluster[l]), acc.label_block);
                    if (update_tokens)
                        bag_embed_backward(data.label_texts[l], std::span<const double>(d_r0), acc.tokens);
                }
            });
        }
    }

    parallel_for(mb, t, [&](std::size_t tid, std::size_t begin, std::size_t end) {
        auto& acc = locals[tid];
        for (std::size_t i = begin; i < end; ++i)
            embed_document_backward(model, data.documents[batch_docs[i]], docs[i], d_doc.row(i), acc.doc_block,
                                    update_tokens ? &acc.tokens : nullptr);
    });

    for (auto& local : locals) out.merge(local);
    double loss = 0.0;
    for (const double lp : loss_parts) loss += lp;
    out.loss_sum += loss;
    out.pair_count += pairs;
    return pairs > 0 ? loss * inv_pairs : 0.0;
}

/// One mini-batch of OvA training (Module IV): each document is paired with
/// the labels in its shortlist cache, classifiers are assembled on the fly
/// from (z1, z2, gates), and the loss is the mean logistic loss over the
/// present pairs.
template <typename T>
double ova_batch_grads(const ModelT<T>& model, const Dataset& data,
                       const std::vector<std::vector<std::uint32_t>>& shortlist_cache,
                       std::span<const std::uint32_t> batch_docs, double dropout_rate, const Rng& mask_rng,
                       bool update_tokens, int threads, GradAccum<T>& out) {
    const std::size_t d = model.dim;
    const std::size_t mb = batch_docs.size();
    const bool z2_only = model.classifier_mode == ClassifierMode::z2_only;
    const bool z1_only = model.classifier_mode == ClassifierMode::z1_only;

    // Union of shortlisted labels across the batch.
    std::vector<std::uint32_t> labels;
    {
        std::size_t total = 0;
        for (const auto doc : batch_docs) total += shortlist_cache[doc].size();
        labels.reserve(total);
        for (const auto doc : batch_docs)
            labels.insert(labels.end(), shortlist_cache[doc].begin(), shortlist_cache[doc].end());
        std::sort(labels.begin(), labels.end());
        labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    }
    std::vector<std::uint32_t> slot_of_label(model.num_labels, 0);
    for (std::size_t s = 0; s < labels.size(); ++s) slot_of_label[labels[s]] = static_cast<std::uint32_t>(s);

    std::uint64_t pairs = 0;
    for (const auto doc : batch_docs) pairs += shortlist_cache[doc].size();
    const double inv_pairs = pairs > 0 ? 1.0 / static_cast<double>(pairs) : 0.0;

    // Forward: labels once per batch, then documents.
    std::vector<BlockCacheT<T>> label_caches;
    DenseMatrixT<T> w(labels.size(), d);
    if (!z2_only) label_caches.resize(labels.size());
    parallel_for(labels.size(), threads, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t s = begin; s < end; ++s) {
            const std::uint32_t l = labels[s];
            std::vector<T> wl;
            if (z2_only) {
                const auto z2 = model.refinement.row(l);
                wl.assign(z2.begin(), z2.end());
            } else {
                embed_label_train(model, data.label_texts[l], dropout_rate, mask_rng, l, label_caches[s]);
                wl = model.classifier_vector(std::span<const T>(label_caches[s].output), model.refinement.row(l));
            }
            std::copy(wl.begin(), wl.end(), w.row(s).begin());
        }
    });

    std::vector<DocTrainCache<T>> docs(mb);
    parallel_for(mb, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i)
            embed_document_train(model, data.documents[batch_docs[i]], dropout_rate, mask_rng, batch_docs[i],
                                 docs[i]);
    });

    // Scores and upstream gradients; dW accumulated per thread over label slots.
    const int t = resolve_threads(threads);
    std::vector<GradAccum<T>> locals(static_cast<std::size_t>(t), GradAccum<T>(d));
    std::vector<DenseMatrixT<double>> dw_locals(static_cast<std::size_t>(t));
    std::vector<double> loss_parts(static_cast<std::size_t>(t), 0.0);

    parallel_for(mb, t, [&](std::size_t tid, std::size_t begin, std::size_t end) {
        auto& acc = locals[tid];
        auto& dw = dw_locals[tid];
        if (dw.rows() == 0) dw = DenseMatrixT<double>(labels.size(), d);
        std::vector<double> d_doc(d);
        for (std::size_t i = begin; i < end; ++i) {
            const std::uint32_t doc_id = batch_docs[i];
            const auto& gt = data.ground_truth[doc_id];
            std::fill(d_doc.begin(), d_doc.end(), 0.0);
            for (const auto l : shortlist_cache[doc_id]) {
                const std::uint32_t s = slot_of_label[l];
                const double score = dot(w.row(s), std::span<const T>(docs[i].embedding));
                const bool pos = std::binary_search(gt.begin(), gt.end(), l);
                const auto [loss, g] = logistic_loss_and_grad(score, pos ? +1 : -1);
                loss_parts[tid] += loss;
                const double gs = g * inv_pairs;
                auto dw_row = dw.row(s);
                const auto w_row = w.row(s);
                const auto& x = docs[i].embedding;
                for (std::size_t j = 0; j < d; ++j) {
                    dw_row[j] += gs * static_cast<double>(x[j]);
                    d_doc[j] += gs * static_cast<double>(w_row[j]);
                }
            }
            embed_document_backward(model, data.documents[doc_id], docs[i], std::span<const double>(d_doc),
                                    acc.doc_block, update_tokens ? &acc.tokens : nullptr);
        }
    });

    DenseMatrixT<double> dw(labels.size(), d);
    for (const auto& local : dw_locals) {
        if (local.rows() == 0) continue;
        for (std::size_t i = 0; i < dw.data().size(); ++i) dw.data()[i] += local.data()[i];
    }

    // Backward through classifier assembly and label embeddings.
    parallel_for(labels.size(), t, [&](std::size_t tid, std::size_t begin, std::size_t end) {
        auto& acc = locals[tid];
        std::vector<double> d_z1(d);
        for (std::size_t s = begin; s < end; ++s) {
            const std::uint32_t l = labels[s];
            const auto up = dw.row(s);
            if (z2_only) {
                auto g2 = acc.refinement.row(l);
                for (std::size_t j = 0; j < d; ++j) g2[j] += up[j];
                continue;
            }
            std::fill(d_z1.begin(), d_z1.end(), 0.0);
            if (z1_only) {
                for (std::size_t j = 0; j < d; ++j) d_z1[j] = up[j];
            } else {
                auto g2 = acc.refinement.row(l);
                combine_backward(model.classifier_gates, std::span<const T>(label_caches[s].output),
                                 std::span<const T>(model.refinement.row(l)), up, acc.classifier_gates,
                                 std::span<double>(d_z1), std::span<double>(g2.data(), d));
            }
            const auto d_r0 =
                block_backward(model.label_block, label_caches[s], std::span<const double>(d_z1), acc.label_block);
            if (update_tokens) bag_embed_backward(data.label_texts[l], std::span<const double>(d_r0), acc.tokens);
        }
    });

    for (auto& local : locals) out.merge(local);
    double loss = 0.0;
    for (const double lp : loss_parts) loss += lp;
    out.loss_sum += loss;
    out.pair_count += pairs;
    return pairs > 0 ? loss * inv_pairs : 0.0;
}

} // namespace decaf
