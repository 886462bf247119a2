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
#include <map>
#include <string>
#include <vector>

#include "decaf/embedding.hpp"
#include "decaf/shortlister.hpp"
#include "decaf/sparse.hpp"

namespace decaf {

/// How the per-label classifier w_l is assembled.
enum class ClassifierMode : std::uint8_t {
    combined = 0, // gated mix of the label-text embedding and the refinement vector
    z1_only = 1,  // label-text embedding alone
    z2_only = 2,  // refinement vector alone
};

const char* classifier_mode_name(ClassifierMode m);
ClassifierMode classifier_mode_from_name(const std::string& name);

/// Full classifier state: token embeddings, the two text-embedding blocks,
/// classifier combination gates, per-label refinement vectors, the frozen
/// shortlister, plus the meta-classifier parameters kept for checkpointing.
template <typename T>
struct ModelT {
    std::size_t dim = 0;
    std::uint64_t num_tokens = 0;
    std::uint64_t num_labels = 0;

    TokenEmbeddingsT<T> tokens;
    EmbeddingBlockT<T> doc_block;   // E_D
    EmbeddingBlockT<T> label_block; // E_L
    CombinationBlockT<T> classifier_gates; // C_L
    DenseMatrixT<T> refinement;             // L x D, row l = z2_l

    CombinationBlockT<T> meta_gates;   // C_P
    DenseMatrixT<T> meta_refinement;   // K x D, row m = u2_m
    ShortlisterT<T> shortlister;

    std::vector<SparseVector> label_texts; // needed to rebuild z1_l
    ClassifierMode classifier_mode = ClassifierMode::combined;
    std::map<std::string, std::string> config_snapshot;

    std::size_t num_clusters() const { return shortlister.num_clusters(); }

    /// z1_l, the label-text embedding (no outer ReLU).
    std::vector<T> embed_label(const SparseVector& z) const {
        return block_forward(label_block, bag_embed(tokens, z));
    }

    /// Evaluation-mode document embedding: ReLU(E_D(x)).
    std::vector<T> embed_document(const SparseVector& x) const {
        auto e = block_forward(doc_block, bag_embed(tokens, x));
        for (auto& v : e)
            if (v < T(0)) v = T(0);
        return e;
    }

    /// Assembles w_l from its parts according to classifier_mode.
    std::vector<T> classifier_vector(std::span<const T> z1, std::span<const T> z2) const {
        switch (classifier_mode) {
            case ClassifierMode::z1_only: return std::vector<T>(z1.begin(), z1.end());
            case ClassifierMode::z2_only: return std::vector<T>(z2.begin(), z2.end());
            case ClassifierMode::combined: break;
        }
        return combine(classifier_gates, z1, z2);
    }

    std::vector<T> classifier_vector(std::uint32_t label) const {
        const auto z1 = embed_label(label_texts[label]);
        return classifier_vector(std::span<const T>(z1), refinement.row(label));
    }
};

using Model = ModelT<float>;

/// Container file with one or more ensemble instances: a JSON manifest
/// (versions, dims, config snapshot, array directory) followed by raw
/// little-endian arrays. Loading a saved file reproduces every array
/// bit-for-bit.
void save_models(const std::vector<Model>& instances, const std::string& path);
std::vector<Model> load_models(const std::string& path);

inline void save_model(const Model& m, const std::string& path) { save_models({m}, path); }
Model load_model(const std::string& path);

} // namespace decaf
