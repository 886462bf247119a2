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
#include <vector>

#include "decaf/corpus.hpp"
#include "decaf/model.hpp"

namespace decaf {

/// Ranked (label, score) pairs, scores strictly in (0,1) and non-increasing.
struct Prediction {
    std::vector<std::pair<std::uint32_t, double>> ranked;
};

/// Exact count of D-dim inner products spent on one prediction, split into
/// the cluster-scoring (always K) and label-scoring parts.
struct OpCounter {
    std::uint64_t shortlister_dots = 0;
    std::uint64_t ranker_dots = 0;
};

enum class EnsembleCombine : std::uint8_t {
    mean = 0,     // arithmetic mean of scores, absent labels count as 0
    rank_sum = 1, // sum of per-instance ranks, absent labels get worst+1
};

struct PredictOptions {
    std::uint32_t beam = 0; // 0 = the model's stored beam
    int top_k = 5;
    EnsembleCombine combine = EnsembleCombine::mean;
};

/// Evaluation-mode embeddings for every document, row i = x_hat_i.
DenseMatrix embed_all_documents(const Model& m, const Dataset& d, int threads);

/// w_l for every label as an L x D matrix; predictions through this matrix
/// are identical to on-the-fly classifier materialization.
DenseMatrix precompute_classifiers(const Model& m);

/// The frugal pipeline: embed, shortlist the top-B clusters, score the member
/// labels as sigmoid(<w_l, x>) * sigmoid(<h_m, x>), return the top-k.
Prediction predict(const Model& m, const SparseVector& x, const PredictOptions& opts,
                   OpCounter* counter = nullptr, const DenseMatrix* precomputed = nullptr);

/// Ensemble prediction over instances that share the label space.
Prediction predict_ensemble(const std::vector<Model>& instances, const SparseVector& x,
                            const PredictOptions& opts);

std::vector<Prediction> predict_all(const std::vector<Model>& instances, const Dataset& d,
                                    const PredictOptions& opts, int threads);

/// Shortlister-only op count for one document.
OpCounter count_ops(const Model& m, const SparseVector& x, std::uint32_t beam);

void write_predictions_file(const std::vector<Prediction>& preds, const std::string& path,
                            const std::vector<OpCounter>* counters = nullptr);
std::vector<Prediction> read_predictions_file(const std::string& path);

} // namespace decaf
