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

#include "decaf/corpus.hpp"
#include "decaf/model.hpp"
#include "decaf/rng.hpp"

namespace decaf {

/// All training hyperparameters. Defaults follow the reference configuration;
/// desk-scale runs override dim/clusters/epochs.
struct TrainConfig {
    std::size_t dim = 300;
    std::uint64_t clusters = 1ull << 15; // K, must be a power of two
    std::uint32_t beam = 0;              // 0 = pick the smallest B reaching target_recall
    double target_recall = 0.85;
    std::size_t batch_size = 255;

    int module1_epochs = 20;
    double module1_lr = 0.01;
    int module2_epochs = 10;
    double module2_lr = 0.008;
    int module4_epochs = 20;
    double module4_lr = 0.008;

    double dropout_module1 = 0.5;
    double dropout_rest = 0.2;
    double lr_decay = 0.5; // applied once per half of a stage's epochs

    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;

    std::uint64_t seed = 42;
    int threads = 0; // 0 = all cores; any fixed count is bit-reproducible
    int ensemble = 3;

    ClassifierMode classifier_mode = ClassifierMode::combined;
    bool random_refinement_init = false;     // init z2 randomly instead of E z_l
    bool freeze_tokens_after_module1 = false; // "lite": E fixed from Module II on

    std::uint32_t levels() const;
    void validate(const Dataset& d) const;

    std::map<std::string, std::string> to_kv() const;
    static TrainConfig from_kv(const std::map<std::string, std::string>& kv);
    /// Applies a single "key=value" assignment (used by config files and flag
    /// overrides).
    void set(const std::string& key, const std::string& value);
};

/// Parses a flat key=value file ('#' starts a comment).
std::map<std::string, std::string> read_kv_file(const std::string& path);

/// Child stream indices under a stage's rng root, fixed as a public contract
/// so an external reimplementation can reproduce a trajectory exactly:
///   init        - parameter initialization draws
///   cluster     - balanced clustering node seeds
///   shuffle     - per-epoch document order, derive(epoch)
///   masks       - dropout masks, derive(epoch).derive(batch_index)
///   spectral    - power-iteration vector init (document block first)
///   refine_init - random refinement-vector draws
namespace train_streams {
inline constexpr std::uint64_t kInit = 0;
inline constexpr std::uint64_t kCluster = 1;
inline constexpr std::uint64_t kShuffle = 2;
inline constexpr std::uint64_t kMasks = 3;
inline constexpr std::uint64_t kSpectral = 4;
inline constexpr std::uint64_t kRefineInit = 5;
} // namespace train_streams

struct StageLog {
    std::vector<double> epoch_mean_loss;
};

using ShortlistCache = std::vector<std::vector<std::uint32_t>>;

/// Module I: sparse label centroids, balanced clustering, and the
/// text-constrained meta problem that jointly trains E, E_D, E_L.
Model train_module1(const Dataset& data, const TrainConfig& cfg, Rng rng, StageLog* log = nullptr);

/// Module II: re-cluster on dense centroids, fine-tune the refined meta
/// classifiers, freeze the shortlister, pick the beam, and cache per-document
/// shortlists (union of shortlisted labels and all positives).
ShortlistCache train_module2(Model& m, const Dataset& data, const TrainConfig& cfg, Rng rng,
                             StageLog* log = nullptr);

/// Module III: re-initialize the embedding blocks to identity, zero the
/// classifier gates, and initialize the refinement vectors (z2 = E z_l, or
/// randomly for the no-init and z2-only configurations).
void init_module3(Model& m, const Dataset& data, const TrainConfig& cfg, Rng rng);

/// Module IV: joint OvA training over the cached shortlists.
void train_module4(Model& m, const Dataset& data, const ShortlistCache& cache, const TrainConfig& cfg, Rng rng,
                   StageLog* log = nullptr);

/// Rebuilds the Module II shortlist cache from a frozen model (used when
/// resuming from a checkpoint).
ShortlistCache build_shortlist_cache(const Model& m, const Dataset& data, std::uint32_t beam, int threads);

/// Full pipeline: Module I once, Modules II-IV per ensemble instance with
/// derived sub-seeds.
std::vector<Model> train_ensemble(const Dataset& data, const TrainConfig& cfg,
                                  std::vector<StageLog>* logs = nullptr);

/// Root rng streams per pipeline stage; instance streams derive from
/// (ensemble root, instance index).
Rng stage_rng_module1(const TrainConfig& cfg);
Rng instance_rng(const TrainConfig& cfg, int instance);

} // namespace decaf
